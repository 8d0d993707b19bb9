from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmsync.errors import NonPositiveQ, SingularCoupling, ValidationError
from swarmsync.graph import (
    SwitchingSchedule,
    Topology,
    active_index,
    build_matrices,
    check_leader_rooted,
    coupling_matrix,
    fig1_topologies,
    graph_lyapunov,
)


def chain(N: int) -> Topology:
    return Topology.from_edges(N, directed=[(0, 1)] + [(k, k + 1) for k in range(1, N)])


def test_laplacian_rows_sum_to_zero():
    T = fig1_topologies()[0]
    D, L, B = build_matrices(T)
    assert np.allclose(L.sum(axis=1), 0)
    assert np.allclose(np.diag(D), T.adjacency.sum(axis=1))
    assert np.allclose(np.diag(B), [1, 0, 0, 0, 1])


def test_from_edges_semantics():
    T = Topology.from_edges(3, directed=[(0, 1), (1, 2)], undirected=[(2, 3)], weight=2.0)
    assert T.leader_weights.tolist() == [2.0, 0.0, 0.0]
    assert T.adjacency[1, 0] == 2.0 and T.adjacency[0, 1] == 0.0
    assert T.adjacency[1, 2] == T.adjacency[2, 1] == 2.0


def test_topology_rejects_bad_weights():
    with pytest.raises(ValidationError):
        Topology(np.array([[0.0, -1.0], [1.0, 0.0]]), [1.0, 0.0])
    with pytest.raises(ValidationError):
        Topology(np.array([[1.0, 0.0], [1.0, 0.0]]), [1.0, 0.0])
    with pytest.raises(ValidationError):
        Topology(np.zeros((2, 2)), [1.0])


def test_leader_rooted():
    assert check_leader_rooted(chain(4))
    T = Topology.from_edges(3, directed=[(0, 1), (1, 2)])
    assert not check_leader_rooted(T)
    assert all(check_leader_rooted(T) for T in fig1_topologies())


def test_unrooted_coupling_is_singular():
    T = Topology.from_edges(3, directed=[(0, 1), (1, 2)])
    with pytest.raises(SingularCoupling):
        coupling_matrix(T, 1.0, 1.0)


def test_graph_lyapunov_on_figure_set():
    for T in fig1_topologies():
        gl = graph_lyapunov(T, 1.0, 1.0)
        M = gl.coupling
        assert np.allclose(M @ gl.q, 1.0)
        assert np.allclose(gl.P @ M + M.T @ gl.P, gl.Q, atol=1e-12)
        assert gl.eig_min > 0


def test_small_digraph_q_not_pd():
    # Rooted, unit weights, yet Q = P M + M^T P is indefinite; the first
    # column of M sums to -1.
    A = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    T = Topology(A, [0.0, 1.0, 0.0])
    assert check_leader_rooted(T)
    with pytest.raises(NonPositiveQ):
        graph_lyapunov(T, 1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000), st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_undirected_graphs_give_pd_q(N, seed, nu1, nu2):
    rng = np.random.default_rng(seed)
    A = np.triu((rng.random((N, N)) < 0.5) * rng.uniform(0.1, 2, (N, N)), 1)
    A = A + A.T
    b = np.zeros(N)
    b[rng.integers(N)] = rng.uniform(0.1, 2)
    T = Topology(A, b)
    if not check_leader_rooted(T):
        return
    gl = graph_lyapunov(T, nu1, nu2)
    assert np.all(gl.q > 0)
    assert gl.eig_min > 1e-10


def test_periodic_schedule_and_lookup():
    s = SwitchingSchedule.periodic(5.0, [0, 1, 2, 3], 40.0)
    assert s.switch_times == tuple(5.0 * k for k in range(9))
    assert s.topology_ids[:5] == (0, 1, 2, 3, 0)
    assert active_index(s, 0.0) == (0, 0)
    assert active_index(s, 4.999) == (0, 0)
    assert active_index(s, 5.0) == (1, 1)
    assert active_index(s, 17.0) == (3, 3)
    with pytest.raises(ValueError):
        active_index(s, -1.0)


def test_schedule_validation():
    with pytest.raises(ValidationError):
        SwitchingSchedule((0.0, 0.0), (0, 1))
    with pytest.raises(ValidationError):
        SwitchingSchedule((0.0,), (0, 1))
    s = SwitchingSchedule((0.0, 1.0), (0, 4))
    with pytest.raises(ValidationError):
        s.validate_ids(4)
