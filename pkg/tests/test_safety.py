from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmsync.controller import FormationSpec, ObstacleSet
from swarmsync.dynamics import DynamicsModel
from swarmsync.errors import AdmissibilityViolation, RuleInapplicable, ValidationError
from swarmsync.safety import (
    Barrier,
    GainRuleInputs,
    PairSystem,
    barrier_value,
    directional_lie,
    gain_rule,
    lf2_h,
    lf_h,
    lie_chain_check,
    pair_lie_derivatives,
    separation_derivatives,
)


def test_barrier_values():
    X = np.zeros((2, 3, 2))
    X[1, 0] = [3.0, 4.0]
    X0 = np.zeros((3, 2))
    X0[0] = [0.0, 1.0]
    obs = ObstacleSet(np.array([[3.0, 0.0]]), 1.0, 0.5)
    assert barrier_value(Barrier("pair", 0, 1, 0.5), X, X0) == pytest.approx(4.5)
    assert barrier_value(Barrier("leader", 0, threshold=0.5), X, X0) == pytest.approx(0.5)
    assert barrier_value(Barrier("obstacle", 1, 0, 1.0), X, X0, obs) == pytest.approx(3.0)
    with pytest.raises(ValidationError):
        Barrier("wall", 0)


def test_separation_derivatives_against_polynomial():
    # l(t) = (1 + t, t + t^2): compare s^(k)(0) with finite differences of |l(t)|.
    s = separation_derivatives([np.array([1.0, 0.0]), np.array([1.0, 1.0]), np.array([0.0, 2.0]),
                                np.array([0.0, 0.0])])

    def sep(t):
        return math.hypot(1 + t, t + t * t)

    e = 1e-3
    fd1 = (sep(e) - sep(-e)) / (2 * e)
    fd2 = (sep(e) - 2 * sep(0) + sep(-e)) / e**2
    fd3 = (sep(2 * e) - 2 * sep(e) + 2 * sep(-e) - sep(-2 * e)) / (2 * e**3)
    assert s[0] == pytest.approx(1.0)
    assert s[1] == pytest.approx(fd1, abs=1e-5)
    assert s[2] == pytest.approx(fd2, abs=1e-5)
    assert s[3] == pytest.approx(fd3, abs=1e-4)


vals = st.floats(-2.0, 2.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(vals, min_size=12, max_size=12))
def test_analytic_lie_matches_chain(v):
    y = np.array(v).reshape(2, 3, 2)
    if np.linalg.norm(y[0, 0] - y[1, 0]) < 0.2:
        return
    fi, fj = np.array([0.3, -0.1]), np.array([0.0, 0.2])
    d = pair_lie_derivatives(y[0], y[1], fi, fj, 0.5)
    assert d[1] == pytest.approx(lf_h(y[0], y[1]), abs=1e-12)
    assert d[2] == pytest.approx(lf2_h(y[0], y[1]), abs=1e-10)


def test_directional_lie_linear_function():
    f = lambda x: float(x[0] * 2 + x[1])  # noqa: E731
    V = lambda x: np.array([1.0, 1.0])  # noqa: E731
    assert directional_lie(f, [V], np.zeros(2)) == pytest.approx(3.0)
    assert directional_lie(f, [V, V], np.zeros(2)) == pytest.approx(0.0, abs=1e-6)


def test_lie_chain_relative_degree():
    sys_ = PairSystem(DynamicsModel("builtin-agent-1"), DynamicsModel("builtin-agent-4"))
    y = np.random.default_rng(0).uniform(-1, 1, (2, 3, 2))
    y[1, 0] = y[0, 0] + [1.0, 0.5]
    rep = lie_chain_check(sys_, Barrier("pair", 0, 1, 0.5), y)
    assert rep.relative_degree_ok
    assert rep.input_derivatives[-1] == pytest.approx(1.0, abs=1e-4)
    assert rep.lf_rel_error < 1e-6 and rep.lf2_rel_error < 1e-6
    y[1, 0] = y[0, 0] + [0.1, 0.0]
    with pytest.raises(AdmissibilityViolation):
        lie_chain_check(sys_, Barrier("pair", 0, 1, 0.5), y)


def test_gain_rule():
    inp = GainRuleInputs(w_bound=0.2, rest_bound=3.0, drift_bound=0.8, cross_bound=0.0, psi=0.5, varpi=1.0)
    assert gain_rule(inp) == pytest.approx(4.0 * 0.5 / 2.0)
    with pytest.raises(RuleInapplicable):
        gain_rule(GainRuleInputs(0.2, 3.0, 0.8, cross_bound=4.0, psi=0.5, varpi=1.0))
    with pytest.raises(ValidationError):
        GainRuleInputs(-1.0, 0.0, 0.0, 0.0, 0.5, 1.0)


def test_formation_thresholds_symmetric():
    with pytest.raises(ValidationError):
        FormationSpec(np.zeros((2, 3, 2)), np.zeros((3, 2)), np.array([[0.0, 0.5], [0.4, 0.0]]), [0.5, 0.5], 1.0)
