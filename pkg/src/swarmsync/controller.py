"""Synchronization errors, repulsive potentials and the distributed control law.

States are stacked as ``X[i, k, :]`` (follower ``i``, derivative order ``k``)
and ``X0[k, :]`` for the leader.  Offsets ``psi`` shift every state so that the
formation is reached when all shifted states coincide with the leader's.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import (
    DimensionMismatch,
    InnerRadiusBreach,
    IsolatedAgent,
    ValidationError,
    ZeroSeparation,
)
from .graph import GraphLyapunov, Topology, coupling_matrix
from .nn import BasisSet, NNBank

Array = NDArray[np.float64]

SEPARATION_FLOOR = 1e-9


@dataclass(frozen=True)
class FormationSpec:
    """Desired offsets plus collision thresholds.

    ``offsets`` has shape ``(N, n, p)``, ``leader_offset`` ``(n, p)``.
    ``pair_thresholds`` is a symmetric ``(N, N)`` matrix with zero diagonal.
    """

    offsets: Array
    leader_offset: Array
    pair_thresholds: Array
    leader_thresholds: Array
    varpi: float

    def __post_init__(self) -> None:
        off = np.array(self.offsets, dtype=float)
        lead = np.array(self.leader_offset, dtype=float)
        psi = np.array(self.pair_thresholds, dtype=float)
        psi0 = np.array(self.leader_thresholds, dtype=float).reshape(-1)
        if off.ndim != 3 or lead.shape != off.shape[1:]:
            raise DimensionMismatch(f"offsets {off.shape} and leader offset {lead.shape} disagree")
        N = off.shape[0]
        if psi.shape != (N, N) or psi0.shape != (N,):
            raise DimensionMismatch("threshold shapes must be (N, N) and (N,)")
        off_diag = ~np.eye(N, dtype=bool)
        if not np.allclose(psi, psi.T) or np.any(np.diag(psi) != 0) or np.any(psi[off_diag] <= 0):
            raise ValidationError("pair thresholds", "must be symmetric, zero on the diagonal, positive elsewhere")
        if np.any(psi0 <= 0):
            raise ValidationError("leader thresholds", "must be positive")
        if not self.varpi > 0:
            raise ValidationError("repulsion strength", "varpi must be positive")
        for a in (off, lead, psi, psi0):
            a.setflags(write=False)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "leader_offset", lead)
        object.__setattr__(self, "pair_thresholds", psi)
        object.__setattr__(self, "leader_thresholds", psi0)
        object.__setattr__(self, "varpi", float(self.varpi))

    @property
    def n_agents(self) -> int:
        return self.offsets.shape[0]

    @functools.cached_property
    def relative_offsets(self) -> Array:
        """Follower offsets measured from the leader offset, ``(N, n, p)``."""
        return self.offsets - self.leader_offset

    @classmethod
    def uniform(cls, positions: Array, n: int, psi: float, psi0: float, varpi: float) -> "FormationSpec":
        """Position-only offsets with scalar thresholds."""
        pos = np.asarray(positions, dtype=float)
        N, p = pos.shape
        off = np.zeros((N, n, p))
        off[:, 0, :] = pos
        pair = np.full((N, N), psi)
        np.fill_diagonal(pair, 0.0)
        return cls(off, np.zeros((n, p)), pair, np.full(N, psi0), varpi)


@dataclass(frozen=True)
class ObstacleSet:
    centers: Array
    outer_radius: float
    inner_radius: float

    def __post_init__(self) -> None:
        c = np.array(self.centers, dtype=float)
        if c.size == 0:
            c = c.reshape(0, c.shape[-1] if c.ndim == 2 else 0)
        elif c.ndim != 2:
            raise DimensionMismatch(f"obstacle centers must be (count, p), got {c.shape}")
        if not (0 < self.inner_radius < self.outer_radius):
            raise ValidationError("inner radius", "need 0 < inner radius < outer radius")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)

    @classmethod
    def empty(cls, p: int = 2) -> "ObstacleSet":
        return cls(np.zeros((0, p)), 1.0, 0.5)

    def __len__(self) -> int:
        return self.centers.shape[0]


@dataclass(frozen=True)
class ControlParams:
    """Controller gains.

    ``lambda_bar`` holds the Hurwitz weights for orders ``1..n-1``; the top
    order has unit weight.  ``c_gain`` is ``(N, p, n*p)``.
    """

    nu1: float
    nu2: float
    lambda_bar: Array
    c_gain: Array
    Gamma0: Array
    Gamma1: Array
    Gamma2: Array

    def __post_init__(self) -> None:
        if not (self.nu1 > 0 and self.nu2 > 0):
            raise ValidationError("coupling gains", "nu1 and nu2 must be positive")
        lam = np.array(self.lambda_bar, dtype=float).reshape(-1)
        if np.any(lam <= 0):
            raise ValidationError("hurwitz weights", "lambda_bar entries must be positive")
        c = np.array(self.c_gain, dtype=float)
        if c.ndim != 3:
            raise DimensionMismatch(f"c_gain must be (N, p, n*p), got {c.shape}")
        n = lam.size + 1
        if c.shape[2] != n * c.shape[1]:
            raise DimensionMismatch(f"c_gain {c.shape} does not match n={n}")
        gammas = []
        for name in ("Gamma0", "Gamma1", "Gamma2"):
            G = np.atleast_2d(np.array(getattr(self, name), dtype=float))
            if G.shape != (c.shape[1], c.shape[1]):
                raise DimensionMismatch(f"{name} must be {c.shape[1]}x{c.shape[1]}")
            if np.linalg.eigvalsh(0.5 * (G + G.T))[0] <= 0:
                raise ValidationError("repulsion gains", f"{name} must be positive definite")
            gammas.append(G)
        object.__setattr__(self, "lambda_bar", lam)
        object.__setattr__(self, "_lambdas", np.append(lam, 1.0))
        object.__setattr__(self, "c_gain", c)
        for name, G in zip(("Gamma0", "Gamma1", "Gamma2"), gammas):
            object.__setattr__(self, name, G)

    @property
    def n(self) -> int:
        return self.lambda_bar.size + 1

    @property
    def lambdas(self) -> Array:
        """All n weights, with the implicit unit weight on the top order."""
        return self._lambdas

    @classmethod
    def build(
        cls, N: int, n: int, p: int, nu1: float = 1.0, nu2: float = 1.0, lambda_bar: Sequence[float] = (2.0, 3.0),
        c: float = 0.5, gamma0: float = 1.0, gamma1: float = 1.0, gamma2: float = 1.0,
    ) -> "ControlParams":
        """Scalar gains expanded to matrices; ``c_i = c [I, ..., I]``."""
        cg = np.tile(c * np.hstack([np.eye(p)] * n), (N, 1, 1))
        I = np.eye(p)
        return cls(nu1, nu2, np.asarray(lambda_bar, dtype=float), cg, gamma0 * I, gamma1 * I, gamma2 * I)


def _shifted(states: Array, leader: Array, formation: FormationSpec) -> tuple[Array, Array]:
    X = np.asarray(states, dtype=float)
    X0 = np.asarray(leader, dtype=float)
    if X.shape != formation.offsets.shape or X0.shape != formation.leader_offset.shape:
        raise DimensionMismatch(f"states {X.shape} / leader {X0.shape} vs offsets {formation.offsets.shape}")
    return X - formation.offsets, X0 - formation.leader_offset


def leader_relative(states: Array, leader: Array, formation: FormationSpec) -> Array:
    """``E_i0`` blocks: shifted follower minus shifted leader, shape ``(N, n, p)``."""
    states = np.asarray(states, dtype=float)
    leader = np.asarray(leader, dtype=float)
    if states.shape != formation.offsets.shape or leader.shape != formation.leader_offset.shape:
        raise DimensionMismatch(f"states {states.shape} / leader {leader.shape} vs offsets {formation.offsets.shape}")
    return states - leader - formation.relative_offsets


def sync_error(i: int, k: int, states, leader, topology: Topology, params: ControlParams,
               formation: FormationSpec) -> Array:
    """Neighbourhood error of follower ``i`` at order ``k`` (1-based)."""
    Xb, X0b = _shifted(states, leader, formation)
    n = Xb.shape[1]
    if not 1 <= k <= n:
        raise DimensionMismatch(f"order k={k} outside 1..{n}")
    a = topology.adjacency[i]
    b = topology.leader_weights[i]
    xi = Xb[i, k - 1]
    e = -params.nu1 * np.sum(a[:, None] * (xi[None, :] - Xb[:, k - 1]), axis=0)
    return e - params.nu2 * b * (xi - X0b[k - 1])


def global_sync_error(k: int, states, leader, topology: Topology, params: ControlParams,
                      formation: FormationSpec) -> Array:
    """Stacked ``-(nu1 L + nu2 B)(xbar^k - xbar0^k)`` of length ``N*p``."""
    M = params.nu1 * (np.diag(topology.adjacency.sum(axis=1)) - topology.adjacency)
    M = M + params.nu2 * np.diag(topology.leader_weights)
    delta = leader_relative(states, leader, formation)[:, k - 1, :]
    return -(M @ delta).reshape(-1)


def all_sync_errors(delta: Array, M: Array) -> Array:
    """Every ``e_i^k`` at once from leader-relative blocks; shape ``(N, n, p)``."""
    N = delta.shape[0]
    return -(M @ delta.reshape(N, -1)).reshape(delta.shape)


def weighted_errors(E: Array, lambdas: Array) -> tuple[Array, Array]:
    """``r = sum_k lambda_k e^k`` and ``rho = sum_{k>=2} lambda_{k-1} e^k`` per agent."""
    r = np.matmul(lambdas, E)
    rho = np.matmul(lambdas[:-1], E[:, 1:, :])
    return r, rho


def stability_error(i: int, states, leader, topology: Topology, params: ControlParams,
                    formation: FormationSpec) -> tuple[Array, Array]:
    """Return ``(r_i, rho_i)`` for follower ``i``."""
    E = np.stack([sync_error(i, k, states, leader, topology, params, formation) for k in range(1, params.n + 1)])
    r, rho = weighted_errors(E[None], params.lambdas)
    return r[0], rho[0]


def potential_agent(xi1, xj1, psi: float, varpi: float) -> float:
    """Agent-agent (or agent-leader) repulsion magnitude; active at and inside ``psi``."""
    d = float(np.linalg.norm(np.asarray(xi1, dtype=float) - np.asarray(xj1, dtype=float)))
    if d < SEPARATION_FLOOR:
        raise ZeroSeparation(f"separation {d:.3e} is below the {SEPARATION_FLOOR:g} floor")
    return varpi / d if d <= psi else 0.0


def potential_obstacle(xi1, center, R: float, inner: float) -> float:
    """Obstacle repulsion magnitude: zero beyond ``R``, pole at the inner radius."""
    d2 = float(np.sum((np.asarray(xi1, dtype=float) - np.asarray(center, dtype=float)) ** 2))
    if d2 <= inner * inner:
        raise InnerRadiusBreach(f"distance {np.sqrt(d2):.6g} to obstacle is within the inner radius {inner:g}")
    if d2 > R * R:
        return 0.0
    return ((R * R - d2) / (d2 - inner * inner)) ** 2


@dataclass
class Repulsion:
    """Per-agent repulsion vectors (already multiplied by the Gamma gains)."""

    pair: Array
    leader: Array
    obstacle: Array
    pair_m: Array
    leader_m: Array
    obstacle_m: Array
    pair_dist: Array
    leader_dist: Array
    obstacle_dist: Array

    @property
    def total(self) -> Array:
        return self.pair + self.leader + self.obstacle


@functools.lru_cache(maxsize=None)
def _diag(N: int) -> tuple[Array, Array]:
    return np.diag_indices(N)


def repulsion(positions: Array, leader_pos: Array, params: ControlParams, formation: FormationSpec,
              obstacles: ObstacleSet | None) -> Repulsion:
    """Evaluate all repulsive terms, each pushing agent ``i`` away from its hazard.

    Vectors are stored as rows, so ``v @ G.T`` applies gain ``G`` per agent.
    """
    Y = np.asarray(positions, dtype=float)
    N, p = Y.shape
    diff = Y[:, None, :] - Y[None, :, :]
    dist = np.sqrt(np.einsum("ijp,ijp->ij", diff, diff))
    dist[_diag(N)] = np.inf
    if dist.min() < SEPARATION_FLOOR:
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        raise ZeroSeparation(f"agents {i + 1} and {j + 1} coincide (separation {dist[i, j]:.3e})")
    active = dist <= formation.pair_thresholds
    if active.any():
        m = np.where(active, formation.varpi / dist, 0.0)
        pair = np.einsum("ij,ijp->ip", m / dist, diff) @ params.Gamma1.T
    else:
        m = np.zeros((N, N))
        pair = np.zeros((N, p))

    d0v = Y - leader_pos
    d0 = np.sqrt(np.einsum("ip,ip->i", d0v, d0v))
    if d0.min() < SEPARATION_FLOOR:
        raise ZeroSeparation(f"agent {int(np.argmin(d0)) + 1} coincides with the leader")
    active0 = d0 <= formation.leader_thresholds
    if active0.any():
        m0 = np.where(active0, formation.varpi / d0, 0.0)
        lead = ((m0 / d0)[:, None] * d0v) @ params.Gamma2.T
    else:
        m0 = np.zeros(N)
        lead = np.zeros((N, p))

    if obstacles is not None and len(obstacles):
        dov = Y[:, None, :] - obstacles.centers[None, :, :]
        d2 = np.einsum("icp,icp->ic", dov, dov)
        L2, R2 = obstacles.inner_radius**2, obstacles.outer_radius**2
        if d2.min() <= L2:
            i, c = np.unravel_index(np.argmin(d2), d2.shape)
            raise InnerRadiusBreach(
                f"agent {i + 1} is within the inner radius of obstacle {c + 1} (distance {np.sqrt(d2[i, c]):.6g})"
            )
        do = np.sqrt(d2)
        inside = d2 <= R2
        if inside.any():
            mo = np.where(inside, ((R2 - d2) / (d2 - L2)) ** 2, 0.0)
            obs = np.einsum("ic,icp->ip", mo / do, dov) @ params.Gamma0.T
        else:
            mo = np.zeros_like(d2)
            obs = np.zeros((N, p))
    else:
        do = np.zeros((N, 0))
        mo = np.zeros((N, 0))
        obs = np.zeros((N, p))
    return Repulsion(pair, lead, obs, m, m0, mo, dist, d0, do)


def degree_sums(topology: Topology) -> Array:
    return topology.adjacency.sum(axis=1) + topology.leader_weights


@dataclass
class ControlEval:
    """Everything the controller computed for one snapshot."""

    E: Array
    r: Array
    rho: Array
    delta: Array
    u: Array
    u_rest: Array
    rep: Repulsion
    phi: Array
    phi0: Array
    phiw: Array
    # phi is (N, q); phi0 is a shared (q0,) row and phiw is (qw,) when the
    # disturbance basis depends on time only, else (N, qw).


def _apply(W: Array, phi: Array) -> Array:
    """Row-wise ``W[i].T @ phi[i]`` for stacked ``(N, q, p)`` weights.

    A 1-D ``phi`` is shared by every agent.
    """
    if phi.ndim == 1:
        return np.matmul(phi, W)
    return np.matmul(phi[:, None, :], W)[:, 0, :]


def evaluate_control(
    X: Array,
    X0: Array,
    t: float,
    M: Array,
    deg: Array,
    params: ControlParams,
    formation: FormationSpec,
    obstacles: ObstacleSet | None,
    bases: BasisSet,
    theta: Array,
    theta0: Array,
    thetaw: Array,
) -> ControlEval:
    """Batched control law for all followers.

    ``theta*`` are stacked weights ``(N, q, p)``; ``M`` is the coupling
    matrix and ``deg`` the per-agent ``d_i + b_i0`` of the active topology.
    """
    delta = leader_relative(X, X0, formation)
    E = all_sync_errors(delta, M)
    r, rho = weighted_errors(E, params.lambdas)
    N = X.shape[0]
    phi = bases.state.batch(X, t)
    # The leader basis only sees the leader state, so one row serves everyone.
    phi0 = bases.leader(X0, t)
    phiw = bases.disturbance(X[0], t) if bases.disturbance.time_only else bases.disturbance.batch(X, t)
    u_rest = (
        rho / deg[:, None]
        - _apply(theta, phi)
        - _apply(thetaw, phiw)
        + _apply(theta0, phi0)
        + r
        - _apply(params.c_gain.transpose(0, 2, 1), delta.reshape(N, -1))
    )
    rep = repulsion(X[:, 0, :], X0[0], params, formation, obstacles)
    return ControlEval(E, r, rho, delta, u_rest + rep.total, u_rest, rep, phi, phi0, phiw)


def control_input(
    i: int,
    states,
    leader,
    topology: Topology,
    params: ControlParams,
    formation: FormationSpec,
    obstacles: ObstacleSet | None,
    bank: NNBank | Sequence[NNBank],
    graph_lyap: GraphLyapunov | None = None,
    t: float = 0.0,
    bases: BasisSet | None = None,
) -> Array:
    """Control input of follower ``i``.

    ``bank`` is either follower ``i``'s own bank or the list of all banks.
    Only follower ``i``'s weights are used either way.
    """
    X = np.asarray(states, dtype=float)
    X0 = np.asarray(leader, dtype=float)
    deg = degree_sums(topology)
    if deg[i] <= 0:
        raise IsolatedAgent(f"follower {i + 1} has no in-neighbours and no leader link")
    M = graph_lyap.coupling if graph_lyap is not None else coupling_matrix(topology, params.nu1, params.nu2)
    own = bank[i] if isinstance(bank, (list, tuple)) else bank
    N = X.shape[0]
    stack = [np.zeros((N,) + w.shape) for w in own.weights()]
    for S, w in zip(stack, own.weights()):
        S[i] = w
    safe_deg = np.where(deg > 0, deg, 1.0)
    ev = evaluate_control(X, X0, t, M, safe_deg, params, formation, obstacles, bases or BasisSet(), *stack)
    return ev.u[i]
