"""Report builders shared by the CLI and the test-suite."""

from __future__ import annotations

import numpy as np

from .errors import RuleInapplicable
from .graph import graph_lyapunov
from .lyapunov import dwell_time_report, k_matrix_report
from .safety import estimate_bounds, gain_rule, safety_monitor
from .sim import SimConfig, SimTrace


def basis_bounds(cfg: SimConfig, trace: SimTrace | None = None) -> tuple[float, float, float]:
    """Largest basis norms (agent, disturbance, leader) seen along a trace.

    Without a trace the agent and leader bounds come from the initial states
    and the disturbance bound from a 0.01 s grid over the horizon.
    """
    b = cfg.bases
    if trace is not None:
        X, X0, times = trace.X, trace.X0, trace.times
    else:
        X = np.asarray(cfg.x0, dtype=float)[None]
        X0 = np.asarray(cfg.leader0, dtype=float)[None]
        times = np.arange(0.0, cfg.horizon + 1e-9, 0.01)
    phi = max(float(np.linalg.norm(b.state.batch(Xt, t), axis=1).max()) for Xt, t in zip(X, times))
    phi0 = max(float(np.linalg.norm(b.leader(x0, t))) for x0, t in zip(X0, times))
    x_ref = np.asarray(cfg.x0, dtype=float)
    phiw = max(float(np.linalg.norm(b.disturbance.batch(x_ref, t), axis=1).max()) for t in times)
    return phi, phiw, phi0


def analysis_report(cfg: SimConfig, trace: SimTrace | None = None) -> dict:
    """Dwell-time bound and per-topology K-matrix for a config."""
    design = cfg.design()
    q, q0, qw = cfg.bases.dims()
    nn = cfg.nn
    dwell = dwell_time_report(cfg.topologies, cfg.params.nu1, cfg.params.nu2, design,
                              nn.gain * np.eye(q), nn.gain0 * np.eye(q0), nn.gainw * np.eye(qw))
    Phi = basis_bounds(cfg, trace)
    kmats = []
    for T in cfg.topologies:
        gl = graph_lyapunov(T, cfg.params.nu1, cfg.params.nu2)
        rep = k_matrix_report(T, cfg.params.nu1, cfg.params.nu2, design, nn.kappa, nn.kappaw, nn.kappa0, Phi, gl=gl)
        kmats.append(rep.as_dict())
    return {
        "dwell_time": dwell.as_dict(),
        "hurwitz": {"lambda_bar": design.lambda_bar.tolist(), "P1": design.P1.tolist(), "beta": design.beta,
                    "residual": design.residual()},
        "basis_bounds": {"agent": Phi[0], "disturbance": Phi[1], "leader": Phi[2],
                         "source": "trace" if trace is not None else "initial states"},
        "k_matrix": kmats,
    }


def safety_report(cfg: SimConfig, trace: SimTrace) -> dict:
    return safety_monitor(trace, cfg.formation, cfg.obstacles).as_dict()


def gain_rule_report(cfg: SimConfig, trace: SimTrace) -> dict:
    """Minimum pair gain per follower pair and the recommendation over all pairs."""
    declared = [d.bound for d in cfg.disturbances]
    N = cfg.n_agents
    pairs = []
    worst = 0.0
    applicable = True
    for i in range(N):
        for j in range(i + 1, N):
            inp = estimate_bounds(trace, (i, j), cfg.formation, declared)
            entry = {"pair": [i + 1, j + 1], "w_bound": inp.w_bound, "w_measured": inp.w_measured,
                     "rest_bound": inp.rest_bound, "drift_bound": inp.drift_bound,
                     "cross_bound": inp.cross_bound, "psi": inp.psi, "varpi": inp.varpi}
            try:
                g = gain_rule(inp)
                entry["min_gamma1"] = g
                worst = max(worst, g)
            except RuleInapplicable as exc:
                entry["min_gamma1"] = None
                entry["note"] = str(exc)
                applicable = False
            pairs.append(entry)
    current = float(np.linalg.eigvalsh(0.5 * (cfg.params.Gamma1 + cfg.params.Gamma1.T))[0])
    return {"pairs": pairs, "recommended_min_gamma1": worst if applicable else None,
            "current_gamma1_min_eig": current,
            "current_exceeds_rule": bool(applicable and current > worst)}
