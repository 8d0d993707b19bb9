from __future__ import annotations

import math

import numpy as np
import pytest

from swarmsync.config import config_from_dict
from swarmsync.errors import NonFiniteState, ValidationError
from swarmsync.sim import ClosedLoop, delta1_norm, metrics, rk4_step, simulate


def test_rk4_scalar_decay():
    y = rk4_step(lambda t, y: -y, 0.0, np.array([1.0]), 0.1)
    assert y[0] == pytest.approx(0.9048375, abs=1e-7)
    assert abs(y[0] - math.exp(-0.1)) < 1e-7


def test_rk4_fourth_order():
    errs = []
    for h in (0.1, 0.05):
        y, t = np.array([1.0]), 0.0
        for _ in range(int(round(1 / h))):
            y = rk4_step(lambda s, v: np.cos(s) * v, t, y, h)
            t += h
        errs.append(abs(y[0] - math.exp(math.sin(1.0))))
    assert 12 < errs[0] / errs[1] < 20


def test_sample_count(short_raw):
    short_raw["simulation"]["horizon"] = 1.0
    short_raw["graph"]["schedule"] = {"switch_times": [0.0], "topology_ids": [0]}
    cfg = config_from_dict(short_raw)
    assert cfg.n_steps == 1000
    tr = simulate(cfg)
    assert len(tr) == 1001
    assert tr.times[-1] == pytest.approx(1.0)


def test_deterministic(short_raw):
    short_raw["simulation"]["init_jitter"] = 0.01
    cfg = config_from_dict(short_raw)
    a, b = simulate(cfg), simulate(cfg)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.U, b.U)
    short_raw["simulation"]["seed"] = 5
    c = simulate(config_from_dict(short_raw))
    assert not np.array_equal(a.X, c.X)


def test_step_size_robustness(short_raw):
    short_raw["simulation"]["horizon"] = 0.2
    short_raw["simulation"]["step"] = 0.001
    fine = simulate(config_from_dict(short_raw))
    short_raw["simulation"]["step"] = 0.002
    coarse = simulate(config_from_dict(short_raw))
    gap = np.abs(fine.X[::2] - coarse.X).max()
    assert gap < 1e-4


def test_switch_samples_recorded_with_left_value(short_raw):
    short_raw["simulation"].update(horizon=0.1, stride=7)
    short_raw["graph"]["schedule"] = {"period": 0.05, "order": [0, 1]}
    cfg = config_from_dict(short_raw)
    tr = simulate(cfg)
    mask = ~np.isnan(tr.V_left)
    assert tr.times[mask] == pytest.approx([0.05, 0.1])
    assert tr.topology[mask].tolist() == [1, 0]
    m = metrics(tr, cfg.formation)
    assert len(m.jump_ratios) == 2 and all(r > 0 for r in m.jump_ratios)


def test_rhs_chain_and_leader(short_raw):
    cfg = config_from_dict(short_raw)
    loop = ClosedLoop(cfg)
    y = loop.initial()
    dy, ev, F, W, u = loop.rhs(0.0, y, 0, full=True)
    X, X0, *_ = loop.unpack(y)
    dX, dX0, *_ = loop.unpack(dy)
    assert np.allclose(dX[:, :-1], X[:, 1:])
    assert np.allclose(dX[:, -1], F + u + W)
    assert np.allclose(dX0[-1], cfg.leader.drift(X0, 0.0))
    assert np.allclose(loop.pack(*loop.unpack(y)), y)


def test_nonfinite_detection(short_raw):
    short_raw["agents"]["followers"][0]["kind"] = "user-defined"
    short_raw["agents"]["followers"][0]["expressions"] = ["exp(exp(exp(t*100)))", "0"]
    cfg = config_from_dict(short_raw)
    with pytest.raises(NonFiniteState):
        simulate(cfg)


def test_validation_errors(short_raw):
    short_raw["simulation"]["step"] = 0.003
    with pytest.raises(ValidationError, match="step"):
        config_from_dict(short_raw)
    short_raw["simulation"]["step"] = 0.001
    short_raw["graph"]["schedule"] = {"switch_times": [0.0, 0.0205], "topology_ids": [0, 1]}
    with pytest.raises(ValidationError, match="switch alignment"):
        config_from_dict(short_raw)


def test_delta1_norm_zero_in_formation(short_raw):
    cfg = config_from_dict(short_raw)
    tr = simulate(cfg)
    tr.X[:] = tr.X0[:, None] + cfg.formation.relative_offsets[None]
    assert np.allclose(delta1_norm(tr, cfg.formation), 0.0)
