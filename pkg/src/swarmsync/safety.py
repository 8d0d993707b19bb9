"""Barrier functions, relative-degree checks, the repulsion gain rule and a separation monitor.

A pair barrier is ``h = |x_i^1 - x_j^1| - psi``.  Its Lie derivatives along a
Brunovsky chain are the time derivatives of the separation ``s = |l|``, which
follow from ``2 s s^(k) = (l.l)^(k) - sum_{m=1}^{k-1} C(k,m) s^(m) s^(k-m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .controller import FormationSpec, ObstacleSet
from .dynamics import DynamicsModel
from .errors import AdmissibilityViolation, RuleInapplicable, ValidationError

Array = NDArray[np.float64]
VectorField = Callable[[Array], Array]


@dataclass(frozen=True)
class Barrier:
    """``kind`` is ``pair`` (i, j), ``leader`` (i) or ``obstacle`` (i, c); indices are 0-based."""

    kind: str
    i: int
    j: int = -1
    threshold: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("pair", "leader", "obstacle"):
            raise ValidationError("barrier kind", f"unknown barrier kind {self.kind!r}")
        if not self.threshold > 0:
            raise ValidationError("barrier threshold", "threshold must be positive")


def barrier_value(barrier: Barrier, states, leader, obstacles: ObstacleSet | None = None) -> float:
    """Signed margin to the safety threshold; nonnegative means safe."""
    X = np.asarray(states, dtype=float)
    xi = X[barrier.i, 0]
    if barrier.kind == "pair":
        other = X[barrier.j, 0]
    elif barrier.kind == "leader":
        other = np.asarray(leader, dtype=float)[0]
    else:
        if obstacles is None:
            raise ValidationError("obstacle barrier", "no obstacle set given")
        other = obstacles.centers[barrier.j]
    return float(np.linalg.norm(xi - other)) - barrier.threshold


def separation_derivatives(dl: Sequence[Array]) -> Array:
    """Time derivatives ``s, s', ..., s^(K)`` of ``s = |l|`` from ``l, l', ..., l^(K)``."""
    K = len(dl) - 1
    sq = np.array([sum(math.comb(k, m) * float(dl[m] @ dl[k - m]) for m in range(k + 1)) for k in range(K + 1)])
    s = np.zeros(K + 1)
    s[0] = math.sqrt(sq[0])
    if s[0] <= 0:
        raise AdmissibilityViolation("barrier gradient undefined at zero separation")
    for k in range(1, K + 1):
        acc = sq[k] - sum(math.comb(k, m) * s[m] * s[k - m] for m in range(1, k))
        s[k] = acc / (2.0 * s[0])
    return s


def pair_lie_derivatives(xi: Array, xj: Array, fi: Array, fj: Array, psi: float) -> Array:
    """Analytic ``[h, L_F h, ..., L_F^n h]`` for two Brunovsky agents of order ``n``.

    ``fi``, ``fj`` are the top-block accelerations (drift plus any input).
    """
    n = xi.shape[0]
    dl = [xi[k] - xj[k] for k in range(n)] + [np.asarray(fi) - np.asarray(fj)]
    out = separation_derivatives(dl)
    out[0] -= psi
    return out


def lf_h(xi: Array, xj: Array) -> float:
    """First Lie derivative ``n^T (v_i - v_j)``."""
    l = xi[0] - xj[0]
    return float(l @ (xi[1] - xj[1]) / np.linalg.norm(l))


def lf2_h(xi: Array, xj: Array) -> float:
    """Second Lie derivative: tangential speed term plus the projected relative acceleration."""
    l = xi[0] - xj[0]
    s = float(np.linalg.norm(l))
    nv = l / s
    dv = xi[1] - xj[1]
    proj = np.eye(l.size) - np.outer(nv, nv)
    return float(dv @ proj @ dv / s + nv @ (xi[2] - xj[2]))


def projector(nvec: Array) -> Array:
    nvec = np.asarray(nvec, dtype=float)
    return np.eye(nvec.size) - np.outer(nvec, nvec)


def directional_lie(fun: Callable[[Array], float], fields: Sequence[VectorField], x: Array,
                    step: float | None = None) -> float:
    """Nested central differences ``L_{V_k} ... L_{V_1} fun`` with Richardson refinement.

    ``fields[0]`` is applied first (innermost).  Each level uses steps ``e``
    and ``e/2`` and combines them as ``(4 D(e/2) - D(e)) / 3``.  The default
    step ``1e-5 ** (1/depth)`` balances truncation against the roundoff that
    nested differencing amplifies.
    """
    depth = len(fields)
    if depth == 0:
        return float(fun(x))
    if step is None:
        step = 1e-5 ** (1.0 / depth)
    inner = fields[:-1]
    V = fields[-1](x)

    def g(y: Array) -> float:
        return directional_lie(fun, inner, y, step)

    def central(e: float) -> float:
        return (g(x + e * V) - g(x - e * V)) / (2.0 * e)

    return (4.0 * central(step / 2) - central(step)) / 3.0


@dataclass(frozen=True)
class PairSystem:
    """Open-loop pair of Brunovsky agents used for the relative-degree checks.

    The joint state is ``(2, n, p)``; ``drift`` advances the chain with zero
    input and zero disturbance.
    """

    model_i: DynamicsModel
    model_j: DynamicsModel
    t: float = 0.0

    def drift(self, y: Array) -> Array:
        out = np.empty_like(y)
        for a, m in enumerate((self.model_i, self.model_j)):
            out[a, :-1] = y[a, 1:]
            out[a, -1] = m.drift(y[a], self.t)
        return out

    def input_field(self, direction: Array, agent: int = 0) -> VectorField:
        def g(y: Array) -> Array:
            out = np.zeros_like(y)
            out[agent, -1] = direction
            return out

        return g


@dataclass(frozen=True)
class LieChainReport:
    orders: tuple[int, ...]
    input_derivatives: tuple[float, ...]
    relative_degree_ok: bool
    lf_numeric: float
    lf_analytic: float
    lf2_numeric: float
    lf2_analytic: float

    @property
    def lf_rel_error(self) -> float:
        return abs(self.lf_numeric - self.lf_analytic) / max(1.0, abs(self.lf_analytic))

    @property
    def lf2_rel_error(self) -> float:
        return abs(self.lf2_numeric - self.lf2_analytic) / max(1.0, abs(self.lf2_analytic))


def lie_chain_check(system: PairSystem, barrier: Barrier, y: Array, low_tol: float = 1e-6,
                    high_tol: float = 1e-3) -> LieChainReport:
    """Check that the input first appears in the ``(n-1)``-th Lie derivative.

    The input direction is the current unit separation vector on agent ``i``,
    so the top-order input derivative should be exactly one.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[1]
    l = y[0, 0] - y[1, 0]
    s = float(np.linalg.norm(l))
    if s <= barrier.threshold:
        raise AdmissibilityViolation(f"sample separation {s:.6g} is not above the threshold {barrier.threshold:g}")

    def h(z: Array) -> float:
        return float(np.linalg.norm(z[0, 0] - z[1, 0])) - barrier.threshold

    F = system.drift
    g = system.input_field(l / s)
    vals = []
    for v in range(n):
        vals.append(directional_lie(h, [F] * v + [g], y))
    low_ok = all(abs(val) < low_tol for val in vals[:-1])
    high_ok = abs(vals[-1]) > high_tol
    return LieChainReport(
        tuple(range(n)), tuple(vals), low_ok and high_ok,
        directional_lie(h, [F], y), lf_h(y[0], y[1]),
        directional_lie(h, [F, F], y) if n >= 3 else float("nan"),
        lf2_h(y[0], y[1]) if n >= 3 else float("nan"),
    )


@dataclass(frozen=True)
class GainRuleInputs:
    w_bound: float
    rest_bound: float
    drift_bound: float
    cross_bound: float
    psi: float
    varpi: float
    w_measured: float = float("nan")

    def __post_init__(self) -> None:
        for name in ("w_bound", "rest_bound", "drift_bound", "cross_bound"):
            if not getattr(self, name) >= 0:
                raise ValidationError("gain rule inputs", f"{name} must be nonnegative")
        if not (self.psi > 0 and self.varpi > 0):
            raise ValidationError("gain rule inputs", "psi and varpi must be positive")


def gain_rule(inputs: GainRuleInputs) -> float:
    """Smallest pair gain at which repulsion beats the other channels on the boundary."""
    denom = 2.0 * inputs.varpi - inputs.cross_bound * inputs.psi
    if not denom > 0:
        raise RuleInapplicable(
            f"2*varpi - cross_bound*psi = {denom:.6g} <= 0; increase varpi for this threshold"
        )
    return (inputs.w_bound + inputs.rest_bound + inputs.drift_bound) * inputs.psi / denom


def estimate_bounds(trace, pair: tuple[int, int], formation: FormationSpec,
                    declared_w: Sequence[float] | None = None) -> GainRuleInputs:
    """Measure the gain-rule envelopes of one pair along a trace.

    The "rest" channel is everything in ``u`` except the pair repulsion.  The
    cross term is recomputed from positions and thresholds.  ``w_bound``
    is the sum of the two declared disturbance bounds (the Cauchy-Schwarz
    projection bound); the measured projection is kept in ``w_measured``.
    """
    i, j = pair
    X = trace.X
    l = X[:, i, 0] - X[:, j, 0]
    s = np.linalg.norm(l, axis=1)
    nv = l / s[:, None]
    rest = trace.U - trace.U_pair
    E = np.abs(np.einsum("tp,tp->t", nv, rest[:, i] - rest[:, j]))
    dn = np.empty(len(s))
    for t in range(len(s)):
        fi = trace.F[t, i]
        fj = trace.F[t, j]
        dn[t] = abs(pair_lie_derivatives(X[t, i], X[t, j], fi, fj, 0.0)[-1])
    cross = np.zeros(len(s))
    pos = X[:, :, 0]
    N = pos.shape[1]
    psi = formation.pair_thresholds
    for t in range(len(s)):
        acc = np.zeros(pos.shape[2])
        for q in range(N):
            for a, sign in ((i, 1.0), (j, -1.0)):
                if q in (i, j):
                    continue
                d = pos[t, a] - pos[t, q]
                dd = float(np.linalg.norm(d))
                if dd <= psi[a, q]:
                    acc += sign * formation.varpi / dd * d / dd
        cross[t] = np.linalg.norm(acc)
    wproj = np.abs(np.einsum("tp,tp->t", nv, trace.W[:, i] - trace.W[:, j]))
    if declared_w is None:
        w_bound = float(wproj.max())
    else:
        w_bound = float(declared_w[i] + declared_w[j])
    return GainRuleInputs(w_bound, float(E.max()), float(dn.max()), float(cross.max()),
                          float(psi[i, j]), formation.varpi, float(wproj.max()))


@dataclass
class SafetyReport:
    safe: bool
    min_pair: Array
    min_leader: Array
    min_obstacle: Array
    min_obstacle_inner_margin: float
    worst_kind: str = ""
    worst_ids: tuple[int, ...] = ()
    worst_time: float = float("nan")
    worst_margin: float = float("inf")
    violations: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "safe": self.safe,
            "worst": {"kind": self.worst_kind, "ids": list(self.worst_ids), "time": self.worst_time,
                      "margin": self.worst_margin},
            "min_pair_separation": self.min_pair.tolist(),
            "min_leader_separation": self.min_leader.tolist(),
            "min_obstacle_distance": self.min_obstacle.tolist(),
            "min_obstacle_inner_margin": self.min_obstacle_inner_margin,
            "violations": self.violations,
        }


def safety_monitor(trace, formation: FormationSpec, obstacles: ObstacleSet | None = None) -> SafetyReport:
    """Minimum separations over the whole trace and an all-safe verdict.

    Pairs must stay at or above their thresholds, followers at or above the
    leader thresholds and at or beyond the outer obstacle radius.
    """
    pos = trace.X[:, :, 0, :]
    lead = trace.X0[:, 0, :]
    times = trace.times
    T, N, _ = pos.shape
    worst = (math.inf, "", (), math.nan)
    violations: list[str] = []
    min_pair = np.full((N, N), np.inf)
    for i in range(N):
        for j in range(i + 1, N):
            d = np.linalg.norm(pos[:, i] - pos[:, j], axis=1)
            k = int(np.argmin(d))
            min_pair[i, j] = min_pair[j, i] = d[k]
            margin = d[k] - formation.pair_thresholds[i, j]
            if margin < worst[0]:
                worst = (margin, "pair", (i + 1, j + 1), float(times[k]))
            if margin < 0:
                violations.append(f"agents {i + 1},{j + 1} at t={times[k]:.4f}: separation {d[k]:.6g}")
    d0 = np.linalg.norm(pos - lead[:, None, :], axis=2)
    min_leader = d0.min(axis=0)
    for i in range(N):
        k = int(np.argmin(d0[:, i]))
        margin = d0[k, i] - formation.leader_thresholds[i]
        if margin < worst[0]:
            worst = (margin, "leader", (i + 1,), float(times[k]))
        if margin < 0:
            violations.append(f"agent {i + 1} and leader at t={times[k]:.4f}: separation {d0[k, i]:.6g}")
    inner_margin = math.inf
    if obstacles is not None and len(obstacles):
        do = np.linalg.norm(pos[:, :, None, :] - obstacles.centers[None, None], axis=3)
        min_obs = do.min(axis=0)
        inner_margin = float(do.min() - obstacles.inner_radius)
        for i in range(N):
            for c in range(len(obstacles)):
                k = int(np.argmin(do[:, i, c]))
                margin = do[k, i, c] - obstacles.outer_radius
                if margin < worst[0]:
                    worst = (margin, "obstacle", (i + 1, c + 1), float(times[k]))
                if margin < 0:
                    violations.append(f"agent {i + 1} and obstacle {c + 1} at t={times[k]:.4f}: distance {do[k, i, c]:.6g}")
    else:
        min_obs = np.zeros((N, 0))
    margin, kind, ids, when = worst
    return SafetyReport(not violations, min_pair, min_leader, min_obs, inner_margin, kind, ids, when, margin,
                        violations)
