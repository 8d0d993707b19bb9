"""Brunovsky-form agent vector fields and bounded disturbance signals.

An agent state is an ``(n, p)`` array: row ``k`` is the k-th derivative block
(position, velocity, acceleration, ...).  Only the top block is driven by the
drift, the control input and the disturbance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import BoundViolation, DimensionMismatch, ValidationError
from .expr import Expression, compile_expression

Array = NDArray[np.float64]
Drift = Callable[[Array, float], Array]

TWO_PI = 2.0 * math.pi


def as_state(x, n: int, p: int) -> Array:
    """Coerce ``x`` to a finite ``(n, p)`` float array."""
    arr = np.asarray(x, dtype=float)
    if arr.shape != (n, p):
        if arr.size == n * p and arr.ndim == 1:
            arr = arr.reshape(n, p)
        else:
            raise DimensionMismatch(f"expected state of shape ({n}, {p}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("finite state", "state entries must be finite")
    return arr


# Builtin drifts of the five-follower example.  Each acts axis-wise on the
# position, velocity and acceleration rows of a third-order state.  They are
# evaluated with scalar math per axis, which is several times cheaper than
# numpy ufuncs on two-element rows.


def _axiswise(axis_fn: Callable[[float, float, float], float]) -> Drift:
    def drift(x: Array, t: float) -> Array:
        rows = np.asarray(x, dtype=float).tolist()
        try:
            return np.array([axis_fn(a, b, c) for a, b, c in zip(*rows)])
        except (OverflowError, ValueError):
            # Divergent or non-finite input: report it as a non-finite value.
            return np.full(len(rows[0]), np.nan)

    drift.__doc__ = axis_fn.__doc__
    drift.rows = lambda rows: [axis_fn(a, b, c) for a, b, c in zip(*rows)]
    return drift


def _leader_axis(x1: float, x2: float, x3: float) -> float:
    return (
        -x2 - 2.0 * x3 + 1.0 + 3.0 * math.sin(TWO_PI * x1)
        - (x1 + x2 - 1.0) ** 2 * (x1 + 4.0 * x2 + 3.0 * x3 - 1.0) / 3.0
    )


def _agent1_axis(x1: float, x2: float, x3: float) -> float:
    return -x2 * math.sin(x2) - math.cos(x3) ** 2 - 0.1 * x2 * x2 - 0.05 * x3 * x3


def _agent2_axis(x1: float, x2: float, x3: float) -> float:
    return -x2 * x2 + 0.01 * x3 - 0.01 * x2**3 - 0.1 * x3 * x3 - 0.1 * x2


def _agent3_axis(x1: float, x2: float, x3: float) -> float:
    return x2 + math.sin(x3) - 0.05 * x2 * x2 - 0.05 * x3 * x3


def _agent4_axis(x1: float, x2: float, x3: float) -> float:
    return (
        -3.0 * (x1 + x2 - 1.0) ** 2 * (x1 + x2 + x3 - 1.0)
        - x2 - x3 + 0.5 * math.sin(TWO_PI * x1) + math.cos(TWO_PI * x1)
    )


def _agent5_axis(x1: float, x2: float, x3: float) -> float:
    return -x2 - 0.05 * x3 * x3


_leader = _axiswise(_leader_axis)
_agent1 = _axiswise(_agent1_axis)
_agent2 = _axiswise(_agent2_axis)
_agent3 = _axiswise(_agent3_axis)
_agent4 = _axiswise(_agent4_axis)
_agent5_base = _axiswise(_agent5_axis)


def _agent5(x: Array, t: float) -> Array:
    # The first axis carries an extra position feedback term as printed in
    # the reference example.
    out = _agent5_base(x, t)
    out[0] += float(x[0][0])
    return out


def _agent5_rows(rows: list) -> list:
    out = _agent5_base.rows(rows)
    out[0] += rows[0][0]
    return out


_agent5.rows = _agent5_rows


BUILTIN_DRIFTS: dict[str, Drift] = {
    "builtin-leader": _leader,
    "builtin-agent-1": _agent1,
    "builtin-agent-2": _agent2,
    "builtin-agent-3": _agent3,
    "builtin-agent-4": _agent4,
    "builtin-agent-5": _agent5,
}


@dataclass(frozen=True)
class DynamicsModel:
    """Top-block drift ``f(x, t)`` of an ``n``-th order, ``p``-dimensional agent.

    ``input_mask`` scales the control input per axis (1 = actuated).  It
    exists for the fifth builtin follower, whose printed first-axis equation
    has no input term; the default keeps the input on every axis.
    """

    kind: str
    n: int = 3
    p: int = 2
    expressions: tuple[str, ...] = ()
    input_mask: tuple[float, ...] | None = None
    drift: Drift = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 1 or self.p < 1:
            raise DimensionMismatch(f"need n, p >= 1, got n={self.n}, p={self.p}")
        if self.kind in BUILTIN_DRIFTS:
            if self.n != 3:
                raise DimensionMismatch(f"{self.kind} is third order, got n={self.n}")
            drift: Drift = BUILTIN_DRIFTS[self.kind]
        elif self.kind == "user-defined":
            exprs = tuple(self.expressions)
            if len(exprs) != self.p:
                raise DimensionMismatch(f"user-defined drift needs {self.p} expressions, got {len(exprs)}")
            compiled = [compile_expression(s, self.n, self.p) for s in exprs]
            object.__setattr__(self, "expressions", exprs)
            drift = _expression_drift(compiled)
        else:
            raise ValidationError("dynamics kind", f"unknown dynamics kind {self.kind!r}")
        if self.input_mask is not None:
            mask = tuple(float(v) for v in self.input_mask)
            if len(mask) != self.p:
                raise DimensionMismatch(f"input_mask needs {self.p} entries, got {len(mask)}")
            object.__setattr__(self, "input_mask", mask)
        object.__setattr__(self, "drift", drift)

    @property
    def is_leader(self) -> bool:
        return self.kind == "builtin-leader"

    def mask_array(self) -> Array:
        if self.input_mask is None:
            return np.ones(self.p)
        return np.asarray(self.input_mask, dtype=float)


def _expression_drift(compiled: Sequence[Expression]) -> Drift:
    def drift(x: Array, t: float) -> Array:
        return np.array([e.fn(x, t) for e in compiled])

    return drift


def _chain(model: DynamicsModel, x: Array, top: Array) -> Array:
    dx = np.empty_like(x)
    dx[:-1] = x[1:]
    dx[-1] = top
    return dx


def follower_derivative(model: DynamicsModel, x, u, w, t: float = 0.0) -> Array:
    """Time derivative of a follower state: shift the chain, drive the top block."""
    x = as_state(x, model.n, model.p)
    u = np.asarray(u, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if u.shape != (model.p,) or w.shape != (model.p,):
        raise DimensionMismatch(f"u and w must have length {model.p}, got {u.shape} and {w.shape}")
    top = model.drift(x, t)
    if model.input_mask is not None:
        u = u * model.mask_array()
    return _chain(model, x, top + u + w)


def leader_derivative(model: DynamicsModel, x0, t: float = 0.0) -> Array:
    """Time derivative of the autonomous leader state."""
    x0 = as_state(x0, model.n, model.p)
    return _chain(model, x0, model.drift(x0, t))


def stacked_drifts(models: Sequence[DynamicsModel], X: Array, t: float) -> Array:
    """Top-block drifts of a stack of followers ``(N, n, p)`` -> ``(N, p)``.

    Builtin models take a scalar fast path over one ``tolist`` conversion.
    """
    fns = [getattr(m.drift, "rows", None) for m in models]
    if all(fns):
        try:
            return np.array([f(rows) for f, rows in zip(fns, X.tolist())])
        except (OverflowError, ValueError):
            return np.full((X.shape[0], X.shape[2]), np.nan)
    return np.stack([m.drift(X[i], t) for i, m in enumerate(models)])


@dataclass(frozen=True)
class SinusoidTerm:
    amplitude: float
    omega: float
    phase: float = 0.0
    kind: str = "sin"

    def __post_init__(self) -> None:
        if self.kind not in ("sin", "cos"):
            raise ValidationError("disturbance term", f"kind must be sin or cos, got {self.kind!r}")


DEFAULT_TERMS = (SinusoidTerm(0.1, 1.0, 0.0, "sin"), SinusoidTerm(0.05, 2.0, 0.0, "cos"))


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded exogenous input ``w(t)`` applied to the top state block.

    ``sinusoidal-mix`` applies the same sum of sinusoids to every axis, and
    its bound defaults to ``sum|a| * sqrt(p)``.  ``user-defined`` takes one
    expression in ``t`` per axis and must declare its bound.
    """

    kind: str = "zero"
    p: int = 2
    terms: tuple[SinusoidTerm, ...] = ()
    expressions: tuple[str, ...] = ()
    bound: float | None = None
    _fn: Callable[[float], Array] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        p = self.p
        if self.kind == "zero":
            zero = np.zeros(p)
            fn = lambda t: zero.copy()  # noqa: E731
            bound = 0.0 if self.bound is None else self.bound
        elif self.kind == "sinusoidal-mix":
            terms = tuple(self.terms)
            object.__setattr__(self, "terms", terms)
            coeffs = [(tm.amplitude, tm.omega, tm.phase, math.sin if tm.kind == "sin" else math.cos)
                      for tm in terms]

            def fn(t: float) -> Array:
                return np.full(p, sum(a * f(w * t + ph) for a, w, ph, f in coeffs))

            natural = sum(abs(tm.amplitude) for tm in terms) * math.sqrt(p)
            bound = natural if self.bound is None else self.bound
        elif self.kind == "user-defined":
            exprs = tuple(self.expressions)
            if len(exprs) != p:
                raise DimensionMismatch(f"user-defined disturbance needs {p} expressions, got {len(exprs)}")
            if self.bound is None:
                raise ValidationError("disturbance bound", "user-defined disturbances must declare a bound")
            compiled = [compile_expression(s, 0, 0) for s in exprs]
            object.__setattr__(self, "expressions", exprs)
            fn = lambda t: np.array([e.fn(None, t) for e in compiled])  # noqa: E731
            bound = self.bound
        else:
            raise ValidationError("disturbance kind", f"unknown disturbance kind {self.kind!r}")
        if not bound >= 0:
            raise ValidationError("disturbance bound", "bound must be nonnegative")
        object.__setattr__(self, "bound", float(bound))
        object.__setattr__(self, "_fn", fn)

    @classmethod
    def default_mix(cls, p: int = 2) -> "DisturbanceModel":
        """Per-axis ``0.1 sin t + 0.05 cos 2t``, bound ``0.15 sqrt(p)``."""
        return cls("sinusoidal-mix", p, DEFAULT_TERMS)

    def signal(self, t: float) -> Array:
        return self._fn(t)


def disturbance(model: DisturbanceModel, t: float) -> Array:
    """Evaluate ``w(t)`` and enforce the declared bound."""
    if t < 0:
        raise ValueError(f"disturbance time must be nonnegative, got {t}")
    w = model.signal(t)
    norm = math.sqrt(float(np.dot(w, w)))
    if not norm <= model.bound * (1.0 + 1e-12) + 1e-300:
        raise BoundViolation(f"|w({t})| = {norm:.6g} exceeds declared bound {model.bound:.6g}")
    return w
