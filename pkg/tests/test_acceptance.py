"""Acceptance criteria 1-10.

Each test records one ``criterion k: PASS|FAIL - detail`` line (echoed in the
pytest terminal summary) and then asserts the criterion.  Tolerances are the
pinned values of the acceptance list; nothing is relaxed.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import replace

import numpy as np
import pytest
import yaml

from conftest import ACCEPTANCE_LINES
from swarmsync.config import config_from_dict, parse_config
from swarmsync.controller import ControlParams, FormationSpec, all_sync_errors, global_sync_error, sync_error
from swarmsync.dynamics import DynamicsModel
from swarmsync.errors import NonFiniteState, NonPositiveQ
from swarmsync.graph import Topology, check_leader_rooted, coupling_matrix, graph_lyapunov
from swarmsync.lyapunov import hurwitz_from_poles, jump_factor, min_dwell_time
from swarmsync.reports import analysis_report, safety_report
from swarmsync.safety import Barrier, PairSystem, lie_chain_check
from swarmsync.sim import delta1_norm, metrics, simulate


def report(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def sec5_run(base_cfg_path):
    cfg = parse_config(base_cfg_path)
    t0 = time.perf_counter()
    try:
        trace = simulate(cfg)
        err = None
    except NonFiniteState as exc:  # pragma: no cover - reported by criterion 1
        trace, err = None, exc
    return cfg, trace, time.perf_counter() - t0, err


def test_criterion_1_sec5_reproduction(sec5_run):
    cfg, trace, elapsed, err = sec5_run
    if err is not None:
        report(1, False, f"NonFiniteState: {err}")
        pytest.fail(str(err))
    d1 = delta1_norm(trace, cfg.formation)
    ratio = d1[-1] / d1[0]
    umax = float(np.linalg.norm(trace.U, axis=2).max())
    ok = (ratio <= 0.10) and math.isfinite(umax) and umax < 1e3 and elapsed < 60.0
    report(1, ok, f"|delta1(40)|/|delta1(0)| = {ratio:.4g} (<= 0.1), max|u| = {umax:.4g} (< 1e3), "
                  f"runtime {elapsed:.1f} s (< 60 s), {len(trace)} samples at h = {cfg.step}")
    assert ratio <= 0.10
    assert math.isfinite(umax) and umax < 1e3
    assert elapsed < 60.0


def test_criterion_2_safety(safety_cfg_path):
    cfg = parse_config(safety_cfg_path)
    pos = cfg.x0[:, 0, :]
    sep0 = float(np.linalg.norm(pos[0] - pos[1]))
    trace = simulate(cfg)
    verdict = safety_report(cfg, trace)
    psi = cfg.formation.pair_thresholds
    N = cfg.n_agents
    pair_margin = min(float((np.linalg.norm(trace.X[:, i, 0] - trace.X[:, j, 0], axis=1) - psi[i, j]).min())
                      for i, j in itertools.combinations(range(N), 2))
    R = cfg.obstacles.outer_radius
    obs_min = float(trace.min_obstacle.min())
    lead_obs = float(np.min(np.linalg.norm(trace.X0[:, 0, None, :] - cfg.obstacles.centers[None], axis=2)))
    ok = verdict["safe"] and pair_margin >= 0 and obs_min >= R
    report(2, ok, f"initial pair separation {sep0:.4g} = {sep0 / psi[0, 1]:.3g} psi; min pair separation "
                  f"{float(trace.min_pair.min()):.4g} (>= {psi[0, 1]:g}); min obstacle distance {obs_min:.4g} "
                  f"(>= R = {R:g}); obstacle within {lead_obs:.3g} of the leader path; verdict "
                  f"{'safe' if verdict['safe'] else 'unsafe'} over {len(trace)} samples")
    assert abs(sep0 / psi[0, 1] - 1.05) < 1e-3
    assert lead_obs < R
    assert verdict["safe"]
    assert pair_margin >= 0
    assert obs_min >= R


def random_rooted_digraph(rng: np.random.Generator, undirected: bool = False) -> Topology:
    while True:
        N = int(rng.integers(2, 9))
        A = (rng.random((N, N)) < rng.uniform(0.2, 0.7)) * rng.uniform(0.1, 2.0, (N, N))
        if undirected:
            A = np.triu(A, 1)
            A = A + A.T
        np.fill_diagonal(A, 0.0)
        b = (rng.random(N) < 0.4) * rng.uniform(0.1, 2.0, N)
        if not b.any():
            b[rng.integers(N)] = rng.uniform(0.1, 2.0)
        T = Topology(A, b)
        if check_leader_rooted(T):
            return T


def lyapunov_pair_check(T: Topology, nu1: float, nu2: float) -> tuple[bool, float, float]:
    """(ok, min eig Q, residual) computed from scratch without graph_lyapunov."""
    M = coupling_matrix(T, nu1, nu2)
    q = np.linalg.solve(M, np.ones(M.shape[0]))
    P = np.diag(1.0 / q)
    Q = P @ M + M.T @ P
    sym = float(np.max(np.abs(Q - Q.T)))
    eig = float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0])
    try:
        gl = graph_lyapunov(T, nu1, nu2)
        resid = float(np.max(np.abs(gl.P @ M + M.T @ gl.P - gl.Q)))
    except NonPositiveQ:
        resid = float("nan")
    return (np.all(q > 0) and eig > 1e-10 and sym < 1e-10 and resid < 1e-10), eig, resid


def test_criterion_3_graph_lyapunov():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    results = [lyapunov_pair_check(random_rooted_digraph(rng), 1.0, 1.0) for _ in range(500)]
    elapsed = time.perf_counter() - t0
    n_ok = sum(r[0] for r in results)
    worst = min(r[1] for r in results)
    undirected = [lyapunov_pair_check(random_rooted_digraph(rng, True), 1.0, 1.0) for _ in range(500)]
    n_und = sum(r[0] for r in undirected)
    ok = n_ok == 500 and elapsed < 5.0
    report(3, ok, f"{n_ok}/500 random leader-rooted digraphs give PD Q with residual < 1e-10 "
                  f"(worst min eig {worst:.3g}); undirected subclass {n_und}/500; runtime {elapsed:.2f} s")
    assert n_und == 500
    assert elapsed < 5.0
    assert n_ok == 500, f"Q not positive definite on {500 - n_ok} of 500 digraphs"


def kron_lyapunov(D: np.ndarray, beta: float) -> np.ndarray:
    """Independent oracle: vec(D^T P + P D) = (I kron D^T + D^T kron I) vec(P)."""
    m = D.shape[0]
    I = np.eye(m)
    K = np.kron(I, D.T) + np.kron(D.T, I)
    return np.linalg.solve(K, (-beta * I).reshape(-1, order="F")).reshape(m, m, order="F")


def test_criterion_4_lyapunov_equation():
    rng = np.random.default_rng(7)
    worst_res = 0.0
    worst_oracle = 0.0
    pd = True
    for _ in range(200):
        m = int(rng.integers(1, 6))
        design = hurwitz_from_poles(rng.uniform(0.2, 5.0, m), beta=float(rng.uniform(0.5, 2.0)))
        worst_res = max(worst_res, design.residual())
        pd &= bool(np.linalg.eigvalsh(design.P1)[0] > 0)
        ref = kron_lyapunov(design.companion, design.beta)
        worst_oracle = max(worst_oracle, float(np.max(np.abs(ref - design.P1)) / max(1.0, np.abs(ref).max())))
    ok = worst_res < 1e-10 and pd
    report(4, ok, f"200 pole sets (n-1 <= 5): max residual {worst_res:.3g} (< 1e-10), all P1 PD: {pd}, "
                  f"max rel. gap to Kronecker oracle {worst_oracle:.3g}")
    assert worst_res < 1e-10
    assert pd
    assert worst_oracle < 1e-8


def test_criterion_5_dwell_time_law():
    exact = min_dwell_time(2.0, 0.5)
    grid_mu = np.linspace(1.0, 20.0, 20)
    grid_rho = np.linspace(0.01, 0.99, 20)
    tau = np.array([[min_dwell_time(m, r) for r in grid_rho] for m in grid_mu])
    inc_mu = bool(np.all(np.diff(tau, axis=0) >= 0))
    dec_rho = bool(np.all(np.diff(tau[1:], axis=1) < 0))
    ok = abs(exact - 1.0) <= 1e-12 and inc_mu and dec_rho
    report(5, ok, f"tau(mu=2, rho0=0.5) = {exact!r} (|err| {abs(exact - 1):.1e}); nondecreasing in mu: {inc_mu}; "
                  f"decreasing in rho0 for mu > 1: {dec_rho} (20x20 grid)")
    assert abs(exact - 1.0) <= 1e-12
    assert inc_mu and dec_rho


def test_criterion_6_switch_jump(sec5_run):
    cfg, trace, _, err = sec5_run
    assert err is None
    an = analysis_report(cfg)
    mu = an["dwell_time"]["mu"]
    m = metrics(trace, cfg.formation)
    V = trace.V.sum(axis=1)
    mask = ~np.isnan(trace.V_left)
    lhs, rhs = V[mask], mu * trace.V_left[mask] * (1 + 1e-6)
    ok = mask.sum() == len(cfg.schedule.switch_times) - 1 and bool(np.all(lhs <= rhs))
    report(6, ok, f"{int(mask.sum())} switches; max V(ts)/V(ts-) = {max(m.jump_ratios):.4g} <= mu = {mu:.4g}")
    assert mask.sum() == len(cfg.schedule.switch_times) - 1
    assert np.all(lhs <= rhs)


def test_criterion_7_descent(base_cfg_path):
    raw = yaml.safe_load(base_cfg_path.read_text())
    raw["simulation"]["horizon"] = 5.0
    raw["disturbance"] = {"kind": "zero"}
    raw["graph"]["schedule"] = {"switch_times": [0.0], "topology_ids": [0]}
    cfg = config_from_dict(raw)
    an = analysis_report(cfg)
    B_d = an["k_matrix"][0]["B_d"]
    trace = simulate(cfg)
    V = trace.V.sum(axis=1)
    sel = trace.z_norm[:-1] > B_d
    rises = np.diff(V)
    n_window = int(sel.sum())
    descent = bool(np.all(rises[sel] <= 1e-6)) if n_window else False
    n_up = int(np.sum(rises > 1e-6))
    km = an["k_matrix"][0]
    ok = n_window > 0 and descent
    report(7, ok, f"K-matrix (topology {km['topology']}) Sylvester test {'passes' if km['sylvester_ok'] else 'fails'} "
                  f"at minor {km['failing_minor']} (mu1 = {km['mu1']:.4g}), so B_d = {B_d}; {n_window} samples "
                  f"with |z| > B_d; unconditionally V rises on {n_up}/{rises.size} steps of the 5 s window")
    assert n_window > 0, "no sample satisfies |z| > B_d: the descent premise cannot be exercised"
    assert descent


def test_criterion_8_hocbf_structure():
    rng = np.random.default_rng(11)
    kinds = [f"builtin-agent-{i}" for i in range(1, 6)]
    models = {k: DynamicsModel(k) for k in kinds}
    barrier = Barrier("pair", 0, 1, 0.5)
    worst_low, worst_high, worst_lf, worst_lf2 = 0.0, math.inf, 0.0, 0.0
    failures = 0
    for k in kinds:
        for _ in range(200):
            other = models[kinds[int(rng.integers(5))]]
            y = rng.uniform(-1.5, 1.5, (2, 3, 2))
            while np.linalg.norm(y[0, 0] - y[1, 0]) <= 0.6:
                y = rng.uniform(-1.5, 1.5, (2, 3, 2))
            rep = lie_chain_check(PairSystem(models[k], other), barrier, y)
            failures += not rep.relative_degree_ok
            worst_low = max(worst_low, max(abs(v) for v in rep.input_derivatives[:-1]))
            worst_high = min(worst_high, abs(rep.input_derivatives[-1]))
            worst_lf = max(worst_lf, rep.lf_rel_error)
            worst_lf2 = max(worst_lf2, rep.lf2_rel_error)
    ok = failures == 0 and worst_low < 1e-6 and worst_high > 1e-3 and worst_lf < 1e-6 and worst_lf2 < 1e-6
    report(8, ok, f"5 models x 200 safe states: max low-order input Lie derivative {worst_low:.2g} (< 1e-6), "
                  f"min order-(n-1) {worst_high:.4g} (> 1e-3), Lf h rel. err {worst_lf:.2g}, "
                  f"Lf^2 h rel. err {worst_lf2:.2g} (< 1e-6)")
    assert failures == 0
    assert worst_low < 1e-6 and worst_high > 1e-3
    assert worst_lf < 1e-6 and worst_lf2 < 1e-6


def test_criterion_9_error_dynamics(base_cfg_path):
    raw = yaml.safe_load(base_cfg_path.read_text())
    raw["simulation"]["horizon"] = 10.0
    cfg = config_from_dict(raw)
    trace = simulate(cfg)
    h = cfg.step
    t, E, R = trace.times, trace.E, trace.R
    n = E.shape[2]
    M = np.stack([coupling_matrix(T, cfg.params.nu1, cfg.params.nu2) for T in cfg.topologies])[trace.topology]
    f0 = np.array([cfg.leader.drift(x0, tt) for x0, tt in zip(trace.X0, t)])
    rho = np.einsum("k,tikp->tip", cfg.params.lambdas[:-1], E[:, :, 1:])
    r_dot = rho - np.einsum("tij,tjp->tip", M, trace.F + trace.U + trace.W - f0[:, None, :])

    # Fourth-order central differences; stencils touching a switch are skipped.
    def d5(Y):
        return (-Y[4:] + 8 * Y[3:-1] - 8 * Y[1:-3] + Y[:-4]) / (12 * h)

    mid = slice(2, -2)
    ok_mask = np.ones(t.size - 4, dtype=bool)
    for ts in trace.switch_times:
        ok_mask &= np.abs(t[mid] - ts) > 2.5 * h
    err_e = float(np.abs(d5(E)[:, :, : n - 1] - E[mid][:, :, 1:])[ok_mask].max())
    err_r = float(np.abs(d5(R) - r_dot[mid])[ok_mask].max())
    # Second-order central differences, for the record.
    ok3 = np.ones(t.size - 2, dtype=bool)
    for ts in trace.switch_times:
        ok3 &= np.abs(t[1:-1] - ts) > 1.5 * h
    err_r3 = float(np.abs((R[2:] - R[:-2]) / (2 * h) - r_dot[1:-1])[ok3].max())
    tol = 5 * h
    ok = err_e <= tol and err_r <= tol
    report(9, ok, f"max |d/dt e^k - e^(k+1)| = {err_e:.3g}, max |r' - (rho - M(F+U+W-f0))| = {err_r:.3g} "
                  f"(tol 5h = {tol:g}, 5-point stencil, {int(ok_mask.sum())} samples, 10 s); "
                  f"3-point stencil r' gap {err_r3:.3g}")
    assert err_e <= tol
    assert err_r <= tol


def test_criterion_10_local_global():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        T = random_rooted_digraph(rng)
        N = T.n_agents
        n, p = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        lam = rng.uniform(0.5, 3.0, n - 1)
        params = ControlParams.build(N, n, p, nu1=float(rng.uniform(0.2, 3)), nu2=float(rng.uniform(0.2, 3)),
                                     lambda_bar=lam)
        pos = rng.normal(size=(N, p)) * 3
        form = FormationSpec(rng.normal(size=(N, n, p)), rng.normal(size=(n, p)),
                             np.where(np.eye(N) > 0, 0.0, 0.1), np.full(N, 0.1), 1.0)
        X = rng.normal(size=(N, n, p))
        X[:, 0] = pos
        X0 = rng.normal(size=(n, p))
        M = coupling_matrix(T, params.nu1, params.nu2)
        batch = all_sync_errors(X - X0 - form.relative_offsets, M)
        for k in range(1, n + 1):
            local = np.concatenate([sync_error(i, k, X, X0, T, params, form) for i in range(N)])
            glob = global_sync_error(k, X, X0, T, params, form)
            worst = max(worst, float(np.max(np.abs(local - glob))),
                        float(np.max(np.abs(batch[:, k - 1].reshape(-1) - glob))))
    ok = worst <= 1e-12
    report(10, ok, f"100 random instances: max |stacked local - global| = {worst:.3g} (<= 1e-12)")
    assert worst <= 1e-12
