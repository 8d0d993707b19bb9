"""Linear-in-parameters approximators and their leakage tuning laws.

Every estimator is ``f_hat = theta_hat.T @ phi`` with a fixed basis ``phi``
of length ``q`` and an adapted ``(q, p)`` weight matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatch, NonFiniteState, ValidationError
from .expr import compile_expression

Array = NDArray[np.float64]
BASIS_KINDS = ("state-12dim", "disturbance-12dim", "leader-12dim", "user-defined")


def eval_state_basis(x) -> Array:
    """Constant, the six state components, then squares of the first five.

    Only defined for third-order planar states (shape ``(3, 2)``).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (3, 2):
        if x.shape == (6,):
            x = x.reshape(3, 2)
        else:
            raise DimensionMismatch(f"the 12-term state basis needs a (3, 2) state, got {x.shape}")
    flat = x.reshape(-1)
    out = np.empty(12)
    out[0] = 1.0
    out[1:7] = flat
    out[7:12] = flat[:5] ** 2
    return out


def eval_disturbance_basis(t: float) -> Array:
    """Twelve bounded time functions used to absorb the disturbance."""
    s, c = math.sin(t), math.cos(t)
    e = math.exp(-t)
    return np.array([
        1.0, s, c, math.sin(2 * t), math.cos(2 * t), math.sin(3 * t), math.cos(3 * t),
        s * s, c * c, s * c, e, t * e,
    ])


@dataclass(frozen=True)
class BasisSpec:
    """A basis family.  ``user-defined`` takes expressions in ``x[k][d]`` and ``t``."""

    kind: str
    expressions: tuple[str, ...] = ()
    n: int = 3
    p: int = 2
    _fn: Callable[[Array, float], Array] = field(init=False, repr=False, compare=False)
    _time_only: bool = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        time_only = self.kind == "disturbance-12dim"
        if self.kind in ("state-12dim", "leader-12dim"):
            if (self.n, self.p) != (3, 2):
                raise DimensionMismatch(f"{self.kind} requires n=3, p=2")
            fn = lambda x, t: eval_state_basis(x)  # noqa: E731
        elif self.kind == "disturbance-12dim":
            fn = lambda x, t: eval_disturbance_basis(t)  # noqa: E731
        elif self.kind == "user-defined":
            exprs = tuple(self.expressions)
            if not exprs:
                raise ValidationError("basis dimension", "a user-defined basis needs at least one function")
            compiled = [compile_expression(s, self.n, self.p) for s in exprs]
            object.__setattr__(self, "expressions", exprs)
            time_only = all(e.max_block == 0 for e in compiled)
            fn = lambda x, t: np.array([e.fn(x, t) for e in compiled])  # noqa: E731
        else:
            raise ValidationError("basis kind", f"unknown basis kind {self.kind!r}")
        object.__setattr__(self, "_fn", fn)
        object.__setattr__(self, "_time_only", time_only)

    @property
    def time_only(self) -> bool:
        """True when the basis ignores the state argument."""
        return self._time_only

    @property
    def dimension(self) -> int:
        return len(self.expressions) if self.kind == "user-defined" else 12

    def __call__(self, x, t: float = 0.0) -> Array:
        return self._fn(x, t)

    def batch(self, X: Array, t: float = 0.0) -> Array:
        """Evaluate on a stack of states ``(N, n, p)``; returns ``(N, q)``."""
        if self.kind in ("state-12dim", "leader-12dim"):
            flat = X.reshape(X.shape[0], -1)
            out = np.empty((X.shape[0], 12))
            out[:, 0] = 1.0
            out[:, 1:7] = flat
            out[:, 7:12] = flat[:, :5] ** 2
            return out
        if self.kind == "disturbance-12dim":
            return np.broadcast_to(eval_disturbance_basis(t), (X.shape[0], 12))
        return np.stack([self._fn(x, t) for x in X])


@dataclass(frozen=True)
class BasisSet:
    """The three bases used by every follower: own drift, leader drift, disturbance."""

    state: BasisSpec = field(default_factory=lambda: BasisSpec("state-12dim"))
    leader: BasisSpec = field(default_factory=lambda: BasisSpec("leader-12dim"))
    disturbance: BasisSpec = field(default_factory=lambda: BasisSpec("disturbance-12dim"))

    def dims(self) -> tuple[int, int, int]:
        return self.state.dimension, self.leader.dimension, self.disturbance.dimension

    def evaluate(self, x, x0, t: float) -> tuple[Array, Array, Array]:
        return self.state(x, t), self.leader(x0, t), self.disturbance(x, t)


def estimate(weights, basis) -> Array:
    """Return ``theta_hat.T @ phi``."""
    W = np.asarray(weights, dtype=float)
    phi = np.asarray(basis, dtype=float).reshape(-1)
    if W.ndim != 2 or W.shape[0] != phi.shape[0]:
        raise DimensionMismatch(f"weights {W.shape} do not match basis length {phi.shape[0]}")
    return W.T @ phi


def _check_spd(name: str, G: Array) -> Array:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape[0] != G.shape[1] or not np.allclose(G, G.T, atol=1e-12):
        raise ValidationError("gain matrix", f"{name} must be square and symmetric")
    if np.linalg.eigvalsh(G)[0] <= 0:
        raise ValidationError("gain matrix", f"{name} must be positive definite")
    return G


@dataclass
class NNBank:
    """Adapted weights of one follower plus its tuning gains.

    ``theta0_hat`` is this follower's local copy of the leader-drift weights.
    """

    theta_hat: Array
    theta0_hat: Array
    thetaw_hat: Array
    G: Array
    G0: Array
    Gw: Array
    kappa: float
    kappa0: float
    kappaw: float

    def __post_init__(self) -> None:
        self.theta_hat = np.array(self.theta_hat, dtype=float)
        self.theta0_hat = np.array(self.theta0_hat, dtype=float)
        self.thetaw_hat = np.array(self.thetaw_hat, dtype=float)
        self.G = _check_spd("G", self.G)
        self.G0 = _check_spd("G0", self.G0)
        self.Gw = _check_spd("Gw", self.Gw)
        for name, W, G in (("theta", self.theta_hat, self.G), ("theta0", self.theta0_hat, self.G0),
                           ("thetaw", self.thetaw_hat, self.Gw)):
            if W.ndim != 2 or W.shape[0] != G.shape[0]:
                raise DimensionMismatch(f"{name} weights {W.shape} vs gain {G.shape}")
        if min(self.kappa, self.kappa0, self.kappaw) <= 0:
            raise ValidationError("leakage gains", "kappa, kappa0 and kappaw must be positive")
        self.check_finite()

    @classmethod
    def zeros(cls, q: int, q0: int, qw: int, p: int, gain: float = 5.0, kappa: float = 0.1) -> "NNBank":
        return cls(np.zeros((q, p)), np.zeros((q0, p)), np.zeros((qw, p)),
                   gain * np.eye(q), gain * np.eye(q0), gain * np.eye(qw), kappa, kappa, kappa)

    def check_finite(self) -> None:
        for W in (self.theta_hat, self.theta0_hat, self.thetaw_hat):
            if not np.all(np.isfinite(W)):
                raise NonFiniteState("neural-network weights became non-finite")

    def weights(self) -> tuple[Array, Array, Array]:
        return self.theta_hat, self.theta0_hat, self.thetaw_hat


def tuning_derivatives(
    bank: NNBank,
    bases: Sequence[Array],
    r_i,
    p_i: float,
    degree_sum: float,
) -> tuple[Array, Array, Array]:
    """Right-hand sides of the three weight update laws.

    The agent and disturbance laws descend along ``phi r^T`` while the leader
    law ascends, because the leader estimate enters the control with a plus
    sign.  All three carry ``kappa`` leakage toward zero.
    """
    phi, phi0, phiw = (np.asarray(b, dtype=float).reshape(-1) for b in bases)
    r = np.asarray(r_i, dtype=float).reshape(-1)
    p = bank.theta_hat.shape[1]
    if r.shape != (p,):
        raise DimensionMismatch(f"r_i must have length {p}, got {r.shape}")
    if (phi.size, phi0.size, phiw.size) != (bank.G.shape[0], bank.G0.shape[0], bank.Gw.shape[0]):
        raise DimensionMismatch("basis lengths do not match the gain matrices")
    s = p_i * degree_sum
    d_theta = -bank.G @ (s * np.outer(phi, r) + bank.kappa * bank.theta_hat)
    d_theta0 = bank.G0 @ (s * np.outer(phi0, r) - bank.kappa0 * bank.theta0_hat)
    d_thetaw = -bank.Gw @ (s * np.outer(phiw, r) + bank.kappaw * bank.thetaw_hat)
    return d_theta, d_theta0, d_thetaw
