"""Communication topologies, switching schedules and graph-derived matrices.

Agents are indexed ``0..N-1`` internally; the leader is a separate node whose
couplings live in ``leader_weights`` (``b_i0``).  ``adjacency[i, j] > 0`` means
follower ``i`` receives information from follower ``j``.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import NonPositiveQ, SingularCoupling, ValidationError

Array = NDArray[np.float64]


@dataclass(frozen=True)
class Topology:
    adjacency: Array
    leader_weights: Array
    name: str = ""

    def __post_init__(self) -> None:
        A = np.array(self.adjacency, dtype=float)
        b = np.array(self.leader_weights, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0] or b.size == 0:
            raise ValidationError("topology shape", f"adjacency {A.shape} vs leader weights {b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValidationError("topology weights", "entries must be finite")
        if np.any(A < 0) or np.any(b < 0):
            raise ValidationError("topology weights", "entries must be nonnegative")
        if np.any(np.diag(A) != 0):
            raise ValidationError("topology weights", "self loops (a_ii != 0) are not allowed")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "leader_weights", b)

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(
        cls,
        n_agents: int,
        directed: Sequence[tuple[int, int]] = (),
        undirected: Sequence[tuple[int, int]] = (),
        weight: float = 1.0,
        name: str = "",
    ) -> "Topology":
        """Build a topology from 1-based edge lists where node 0 is the leader.

        A directed edge ``(j, i)`` lets ``i`` receive from ``j``; undirected
        edges go both ways.  Edges touching the leader are always treated as
        leader -> follower.
        """
        A = np.zeros((n_agents, n_agents))
        b = np.zeros(n_agents)

        def add(src: int, dst: int) -> None:
            if src == 0:
                b[dst - 1] = weight
            elif dst != 0:
                A[dst - 1, src - 1] = weight

        for j, i in directed:
            add(j, i)
        for j, i in undirected:
            add(j, i)
            add(i, j)
        return cls(A, b, name)


def build_matrices(topology: Topology) -> tuple[Array, Array, Array]:
    """Return the in-degree matrix D, the Laplacian L = D - A and B = diag(b_i0)."""
    A = topology.adjacency
    D = np.diag(A.sum(axis=1))
    return D, D - A, np.diag(topology.leader_weights)


def check_leader_rooted(topology: Topology) -> bool:
    """True iff every follower is reachable from the leader (breadth-first search)."""
    A = topology.adjacency
    reached = set(np.flatnonzero(topology.leader_weights > 0).tolist())
    queue = deque(reached)
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(A[:, j] > 0):
            if i not in reached:
                reached.add(int(i))
                queue.append(int(i))
    return len(reached) == topology.n_agents


def coupling_matrix(topology: Topology, nu1: float, nu2: float) -> Array:
    """Return nu1 * L + nu2 * B, rejecting (near-)singular couplings.

    The guard is scale aware: ``|det| > 1e-12 * ||M||_inf ** N``.
    """
    _, L, B = build_matrices(topology)
    M = nu1 * L + nu2 * B
    scale = np.linalg.norm(M, ord=np.inf)
    det = np.linalg.det(M)
    if not abs(det) > 1e-12 * scale ** M.shape[0]:
        raise SingularCoupling(
            f"coupling matrix is singular (|det|={abs(det):.3e}); is every follower reachable from the leader?"
        )
    return M


@dataclass(frozen=True)
class GraphLyapunov:
    q: Array
    P: Array
    Q: Array
    eig_min: float
    eig_max: float
    coupling: Array = field(repr=False)

    @property
    def p_diag(self) -> Array:
        return np.diag(self.P)


def graph_lyapunov(topology: Topology, nu1: float, nu2: float) -> GraphLyapunov:
    """Solve ``M q = 1`` and form ``P = diag(1/q)``, ``Q = P M + M^T P``.

    Raises :class:`NonPositiveQ` when ``q`` has a non-positive entry or ``Q``
    is not positive definite.  The latter does happen for directed graphs whose
    coupling matrix has negative column sums; ``Q`` is guaranteed positive
    definite when ``M^T 1 >= 0`` (undirected or weight-balanced graphs).
    """
    M = coupling_matrix(topology, nu1, nu2)
    q = np.linalg.solve(M, np.ones(M.shape[0]))
    if np.any(q <= 0):
        raise NonPositiveQ(f"q = M^-1 1 has non-positive entries: {q}")
    P = np.diag(1.0 / q)
    Q = P @ M + M.T @ P
    Q = 0.5 * (Q + Q.T)
    eig = np.linalg.eigvalsh(Q)
    if eig[0] <= 0:
        raise NonPositiveQ(f"Q is not positive definite (min eigenvalue {eig[0]:.3e})")
    return GraphLyapunov(q=q, P=P, Q=Q, eig_min=float(eig[0]), eig_max=float(eig[-1]), coupling=M)


@dataclass(frozen=True)
class SwitchingSchedule:
    """Piecewise-constant topology signal.

    ``switch_times[0]`` is the start time; ``topology_ids[s]`` is active on
    ``[switch_times[s], switch_times[s+1])``.
    """

    switch_times: tuple[float, ...]
    topology_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        times = tuple(float(t) for t in self.switch_times)
        ids = tuple(int(i) for i in self.topology_ids)
        if not times or len(times) != len(ids):
            raise ValidationError("schedule", "need one topology id per switch time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("schedule", "switch times must be strictly increasing")
        if any(i < 0 for i in ids):
            raise ValidationError("schedule", "topology ids must be nonnegative")
        object.__setattr__(self, "switch_times", times)
        object.__setattr__(self, "topology_ids", ids)

    @property
    def t0(self) -> float:
        return self.switch_times[0]

    @classmethod
    def periodic(cls, period: float, order: Sequence[int], horizon: float, t0: float = 0.0) -> "SwitchingSchedule":
        """Cycle through ``order`` every ``period`` seconds up to ``horizon``."""
        if period <= 0:
            raise ValidationError("schedule", "switching period must be positive")
        count = int(np.floor((horizon - t0) / period + 1e-9)) + 1
        times = [t0 + s * period for s in range(count)]
        ids = [order[s % len(order)] for s in range(count)]
        return cls(tuple(times), tuple(ids))

    def validate_ids(self, n_topologies: int) -> None:
        bad = [i for i in self.topology_ids if i >= n_topologies]
        if bad:
            raise ValidationError("schedule", f"topology ids {bad} out of range (have {n_topologies})")


def active_index(schedule: SwitchingSchedule, t: float) -> tuple[int, int]:
    """Return the active topology id at ``t`` and the switch count on ``(t0, t]``."""
    if t < schedule.t0:
        raise ValueError(f"t={t} precedes schedule start {schedule.t0}")
    k = bisect.bisect_right(schedule.switch_times, t) - 1
    return schedule.topology_ids[k], k


def algebraic_connectivity(topology: Topology) -> float:
    """Second-smallest eigenvalue of the symmetrised Laplacian (a diagnostic only)."""
    _, L, _ = build_matrices(topology)
    if topology.n_agents < 2:
        return 0.0
    ev = np.linalg.eigvalsh(0.5 * (L + L.T))
    return float(ev[1])


# Figure-1 switching set of the five-follower example.  Leader links and the
# arrow-styled follower links are one-way; the remaining links carry
# information both ways.
FIG1_EDGES: tuple[dict[str, list[tuple[int, int]]], ...] = (
    {
        "directed": [(0, 1), (0, 5)],
        "undirected": [(1, 2), (1, 5), (1, 3), (2, 3), (4, 5), (5, 3), (2, 4)],
    },
    {
        "directed": [(0, 1), (1, 2), (0, 5), (5, 3)],
        "undirected": [(3, 2), (1, 4), (1, 5), (5, 4), (2, 4)],
    },
    {
        "directed": [(0, 1), (0, 5)],
        "undirected": [(1, 5), (1, 2), (3, 5), (4, 5), (2, 3), (2, 4)],
    },
    {
        "directed": [(0, 1), (0, 5), (2, 4), (5, 4)],
        "undirected": [(1, 2), (3, 4), (1, 5), (1, 3), (2, 5), (2, 3)],
    },
)


def fig1_topologies(weight: float = 1.0) -> list[Topology]:
    return [
        Topology.from_edges(5, e["directed"], e["undirected"], weight, name=f"T{k + 1}")
        for k, e in enumerate(FIG1_EDGES)
    ]
