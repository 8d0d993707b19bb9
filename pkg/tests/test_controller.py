from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmsync.controller import (
    ControlParams,
    FormationSpec,
    ObstacleSet,
    control_input,
    evaluate_control,
    leader_relative,
    potential_agent,
    potential_obstacle,
    repulsion,
    stability_error,
    sync_error,
)
from swarmsync.errors import DimensionMismatch, InnerRadiusBreach, IsolatedAgent, ValidationError, ZeroSeparation
from swarmsync.graph import Topology, coupling_matrix, fig1_topologies
from swarmsync.nn import BasisSet, NNBank


def setup(N=5, n=3, p=2, seed=0):
    rng = np.random.default_rng(seed)
    T = fig1_topologies()[0] if N == 5 else Topology.from_edges(N, directed=[(0, 1)] + [(k, k + 1) for k in range(1, N)])
    params = ControlParams.build(N, n, p)
    form = FormationSpec.uniform(rng.normal(size=(N, p)), n, 0.5, 0.5, 1.0)
    X = rng.normal(size=(N, n, p)) * 3
    X0 = rng.normal(size=(n, p))
    return T, params, form, X, X0


def test_sync_error_by_hand():
    T = Topology.from_edges(2, directed=[(0, 1), (1, 2)])
    params = ControlParams.build(2, 1, 1, nu1=2.0, nu2=3.0, lambda_bar=())
    form = FormationSpec.uniform(np.zeros((2, 1)), 1, 0.1, 0.1, 1.0)
    X = np.array([[[1.0]], [[4.0]]])
    X0 = np.array([[0.5]])
    assert np.allclose(sync_error(0, 1, X, X0, T, params, form), -3.0 * 0.5)
    assert np.allclose(sync_error(1, 1, X, X0, T, params, form), -2.0 * 3.0)


def test_stability_error_weights():
    T, params, form, X, X0 = setup()
    r, rho = stability_error(2, X, X0, T, params, form)
    e = [sync_error(2, k, X, X0, T, params, form) for k in (1, 2, 3)]
    assert np.allclose(r, 2 * e[0] + 3 * e[1] + e[2])
    assert np.allclose(rho, 2 * e[1] + 3 * e[2])


def test_formation_reached_means_zero_error():
    T, params, form, _, X0 = setup()
    X = X0[None] + form.relative_offsets
    assert np.allclose(leader_relative(X, X0, form), 0.0)
    for i in range(5):
        assert np.allclose(sync_error(i, 1, X, X0, T, params, form), 0.0)


def test_potentials():
    assert potential_agent([0, 0], [0.3, 0.4], 0.5, 2.0) == pytest.approx(4.0)
    assert potential_agent([0, 0], [3, 4], 0.5, 2.0) == 0.0
    with pytest.raises(ZeroSeparation):
        potential_agent([0, 0], [0, 0], 0.5, 1.0)
    assert potential_obstacle([1.0, 0.0], [0, 0], 0.9, 0.5) == 0.0
    assert potential_obstacle([0.7, 0.0], [0, 0], 0.9, 0.5) == pytest.approx(((0.81 - 0.49) / (0.49 - 0.25)) ** 2)
    with pytest.raises(InnerRadiusBreach):
        potential_obstacle([0.5, 0.0], [0, 0], 0.9, 0.5)


def test_repulsion_points_away():
    params = ControlParams.build(2, 3, 2)
    form = FormationSpec.uniform(np.zeros((2, 2)), 3, 0.5, 0.5, 1.0)
    obs = ObstacleSet(np.array([[0.0, 1.0]]), 0.6, 0.2)
    pos = np.array([[0.0, 0.0], [0.3, 0.0]])
    rep = repulsion(pos, np.array([-0.4, 0.0]), params, form, obs)
    assert rep.pair[0, 0] < 0 < rep.pair[1, 0]
    assert np.allclose(rep.pair[0], -rep.pair[1])
    assert rep.leader[0, 0] > 0 and rep.leader[1].tolist() == [0.0, 0.0]
    assert np.allclose(rep.obstacle, 0.0)
    rep2 = repulsion(np.array([[0.0, 0.5], [3.0, 3.0]]), np.array([9.0, 9.0]), params, form, obs)
    assert rep2.obstacle[0, 1] < 0


def test_evaluate_control_matches_single_agent():
    T, params, form, X, X0 = setup(seed=3)
    rng = np.random.default_rng(4)
    banks = [NNBank(rng.normal(size=(12, 2)), rng.normal(size=(12, 2)), rng.normal(size=(12, 2)),
                    np.eye(12), np.eye(12), np.eye(12), 0.1, 0.1, 0.1) for _ in range(5)]
    M = coupling_matrix(T, 1, 1)
    deg = T.adjacency.sum(axis=1) + T.leader_weights
    th = [np.stack([b.weights()[k] for b in banks]) for k in range(3)]
    ev = evaluate_control(X, X0, 0.3, M, deg, params, form, None, BasisSet(), *th)
    for i in range(5):
        assert np.allclose(ev.u[i], control_input(i, X, X0, T, params, form, None, banks, t=0.3))


def test_isolated_agent():
    T = Topology.from_edges(2, directed=[(0, 1)])
    params = ControlParams.build(2, 3, 2)
    form = FormationSpec.uniform(np.array([[0, 0], [5, 5]]), 3, 0.5, 0.5, 1.0)
    with pytest.raises(IsolatedAgent):
        control_input(1, np.ones((2, 3, 2)) * [[[1]], [[9]]], np.zeros((3, 2)), T, params, form, None,
                      NNBank.zeros(12, 12, 12, 2))


def test_param_validation():
    with pytest.raises(ValidationError):
        ControlParams.build(2, 3, 2, nu1=0.0)
    with pytest.raises(ValidationError):
        ControlParams.build(2, 3, 2, lambda_bar=(1.0, -1.0))
    with pytest.raises(DimensionMismatch):
        ControlParams.build(2, 3, 2, lambda_bar=(1.0,))
    with pytest.raises(ValidationError):
        ControlParams.build(2, 3, 2, gamma1=0.0)
    with pytest.raises(ValidationError):
        FormationSpec.uniform(np.zeros((2, 2)), 3, -0.5, 0.5, 1.0)
    with pytest.raises(ValidationError):
        ObstacleSet(np.zeros((1, 2)), 0.3, 0.4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_errors_invariant_to_common_translation(seed, shift):
    # Moving every follower and the leader by the same amount leaves all errors unchanged.
    T, params, form, X, X0 = setup(seed=seed)
    M = coupling_matrix(T, 1, 1)
    deg = np.ones(5)
    zeros = [np.zeros((5, 12, 2))] * 3
    a = evaluate_control(X, X0, 0.0, M, deg, params, form, None, BasisSet(), *zeros)
    b = evaluate_control(X + shift, X0 + shift, 0.0, M, deg, params, form, None, BasisSet(), *zeros)
    assert np.allclose(a.E, b.E) and np.allclose(a.r, b.r)
