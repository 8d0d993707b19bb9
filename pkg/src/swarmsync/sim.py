"""Fixed-step RK4 integration of the closed loop under switching topologies.

The integrated vector stacks follower states, the leader state and the three
weight sets of every follower.  Topology is frozen within a step and switch
instants are required to sit on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np
from numpy.typing import NDArray

from .controller import ControlParams, FormationSpec, ObstacleSet, degree_sums, evaluate_control
from .dynamics import DisturbanceModel, DynamicsModel, disturbance, stacked_drifts
from .errors import NonFiniteState, ValidationError
from .graph import (
    GraphLyapunov,
    SwitchingSchedule,
    Topology,
    active_index,
    check_leader_rooted,
    graph_lyapunov,
)
from .lyapunov import HurwitzDesign, TrueWeights, composite_V, design_from_lambda
from .nn import BasisSet

Array = NDArray[np.float64]


@dataclass(frozen=True)
class NNSettings:
    """Adaptation gains; scalars mean ``gain * I`` for every follower."""

    gain: float = 5.0
    gain0: float = 5.0
    gainw: float = 5.0
    kappa: float = 0.1
    kappa0: float = 0.1
    kappaw: float = 0.1

    def __post_init__(self) -> None:
        if min(self.gain, self.gain0, self.gainw) <= 0:
            raise ValidationError("gain matrix", "adaptation gains must be positive")
        if min(self.kappa, self.kappa0, self.kappaw) <= 0:
            raise ValidationError("leakage gains", "kappa values must be positive")


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    step: float
    topologies: tuple[Topology, ...]
    schedule: SwitchingSchedule
    formation: FormationSpec
    obstacles: ObstacleSet
    params: ControlParams
    followers: tuple[DynamicsModel, ...]
    leader: DynamicsModel
    disturbances: tuple[DisturbanceModel, ...]
    x0: Array
    leader0: Array
    nn: NNSettings = field(default_factory=NNSettings)
    bases: BasisSet = field(default_factory=BasisSet)
    beta: float = 1.0
    stride: int = 1
    seed: int = 0
    init_jitter: float = 0.0
    true_weights: TrueWeights | None = None
    name: str = ""

    @property
    def n_agents(self) -> int:
        return len(self.followers)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    def design(self) -> HurwitzDesign:
        return design_from_lambda(self.params.lambda_bar, self.beta)

    def validate(self) -> None:
        """Check every invariant the simulator relies on."""
        if not self.horizon > 0:
            raise ValidationError("horizon", "horizon must be positive")
        if not 0 < self.step <= 0.01:
            raise ValidationError("step", "need 0 < h <= 0.01")
        if abs(self.n_steps * self.step - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValidationError("step", "the step must divide the horizon")
        if self.stride < 1:
            raise ValidationError("stride", "stride must be a positive integer")
        N = self.n_agents
        n, p = self.formation.offsets.shape[1:]
        if len(self.disturbances) != N or self.formation.n_agents != N or self.params.c_gain.shape[0] != N:
            raise ValidationError("agent count", "followers, disturbances, formation and gains disagree on N")
        if np.shape(self.x0) != (N, n, p) or np.shape(self.leader0) != (n, p):
            raise ValidationError("initial state", f"expected ({N}, {n}, {p}) followers and ({n}, {p}) leader")
        if self.params.n != n:
            raise ValidationError("hurwitz weights", f"lambda_bar has {self.params.n - 1} entries, need {n - 1}")
        for m in self.followers + (self.leader,):
            if (m.n, m.p) != (n, p):
                raise ValidationError("dynamics", f"model {m.kind} has shape ({m.n}, {m.p}), need ({n}, {p})")
        self.design()
        if not self.topologies:
            raise ValidationError("topologies", "at least one topology is required")
        for T in self.topologies:
            if T.n_agents != N:
                raise ValidationError("topologies", f"topology {T.name} has {T.n_agents} followers, need {N}")
            if not check_leader_rooted(T):
                raise ValidationError("leader rooted", f"topology {T.name or '?'} leaves a follower unreachable")
        self.schedule.validate_ids(len(self.topologies))
        for ts in self.schedule.switch_times:
            k = (ts - self.schedule.t0) / self.step
            if abs(k - round(k)) > 1e-6:
                raise ValidationError("switch alignment", f"switch time {ts} is not on the {self.step} grid")
        pos = np.asarray(self.x0)[:, 0, :]
        lead = np.asarray(self.leader0)[0]
        for i in range(N):
            for j in range(i + 1, N):
                d = float(np.linalg.norm(pos[i] - pos[j]))
                if not d > self.formation.pair_thresholds[i, j]:
                    raise ValidationError("initial separation", f"followers {i + 1},{j + 1} start {d:.4g} apart")
            d0 = float(np.linalg.norm(pos[i] - lead))
            if not d0 > self.formation.leader_thresholds[i]:
                raise ValidationError("initial separation", f"follower {i + 1} starts {d0:.4g} from the leader")
            for c, O in enumerate(self.obstacles.centers):
                dc = float(np.linalg.norm(pos[i] - O))
                if not dc > self.obstacles.outer_radius:
                    raise ValidationError("initial separation", f"follower {i + 1} starts inside obstacle {c + 1}")
        q, q0, qw = self.bases.dims()
        if self.true_weights is not None:
            tw = self.true_weights
            if tw.theta.shape != (N, q, p) or tw.theta0.shape != (q0, p) or tw.thetaw.shape != (N, qw, p):
                raise ValidationError("true weights", "shapes do not match the bases")


@dataclass
class SimTrace:
    """Sampled record of a run.  Arrays are indexed by sample first."""

    times: Array
    topology: Array
    X: Array
    X0: Array
    U: Array
    E: Array
    R: Array
    V: Array
    V_left: Array
    min_pair: Array
    min_leader: Array
    min_obstacle: Array
    weight_norms: Array
    F: Array
    W: Array
    U_pair: Array
    step: float
    stride: int
    switch_times: tuple[float, ...] = ()
    z_norm: Array | None = None
    theta: Array | None = None

    def __len__(self) -> int:
        return self.times.size


def delta1_norm(trace: SimTrace, formation: FormationSpec) -> Array:
    """Stacked leader-relative position error norm at every sample."""
    d = (trace.X[:, :, 0, :] - formation.offsets[None, :, 0, :]) - (
        trace.X0[:, None, 0, :] - formation.leader_offset[None, None, 0, :]
    )
    return np.sqrt(np.sum(d * d, axis=(1, 2)))


class ClosedLoop:
    """Right-hand side of the joint ODE plus its bookkeeping."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.N = cfg.n_agents
        self.n, self.p = cfg.formation.offsets.shape[1:]
        self.q, self.q0, self.qw = cfg.bases.dims()
        N, n, p = self.N, self.n, self.p
        sizes = [N * n * p, n * p, N * self.q * p, N * self.q0 * p, N * self.qw * p]
        self.offsets = np.cumsum([0] + sizes)
        self.gl: list[GraphLyapunov] = [graph_lyapunov(T, cfg.params.nu1, cfg.params.nu2) for T in cfg.topologies]
        self.deg = [degree_sums(T) for T in cfg.topologies]
        # p_i (d_i + b_i0) scales every tuning law.
        self.s = [(g.p_diag * d)[:, None, None] for g, d in zip(self.gl, self.deg)]
        nn = cfg.nn
        self.G = nn.gain
        self.G0 = nn.gain0
        self.Gw = nn.gainw
        self.masks = np.stack([m.mask_array() for m in cfg.followers])
        self.masked = bool(np.any(self.masks != 1.0))
        self.design = cfg.design()
        # Disturbances are evaluated once per distinct model.
        self._dist_groups: dict[DisturbanceModel, list[int]] = {}
        for i, d in enumerate(cfg.disturbances):
            self._dist_groups.setdefault(d, []).append(i)

    def unpack(self, y: Array) -> tuple[Array, Array, Array, Array, Array]:
        o = self.offsets
        N, n, p = self.N, self.n, self.p
        return (
            y[o[0]:o[1]].reshape(N, n, p),
            y[o[1]:o[2]].reshape(n, p),
            y[o[2]:o[3]].reshape(N, self.q, p),
            y[o[3]:o[4]].reshape(N, self.q0, p),
            y[o[4]:o[5]].reshape(N, self.qw, p),
        )

    def pack(self, X, X0, th, th0, thw) -> Array:
        return np.concatenate([X.ravel(), X0.ravel(), th.ravel(), th0.ravel(), thw.ravel()])

    def initial(self) -> Array:
        cfg = self.cfg
        X = np.array(cfg.x0, dtype=float)
        if cfg.init_jitter > 0:
            rng = np.random.default_rng(cfg.seed)
            X = X + rng.normal(0.0, cfg.init_jitter, X.shape)
        N, p = self.N, self.p
        return self.pack(X, np.asarray(cfg.leader0, dtype=float), np.zeros((N, self.q, p)),
                         np.zeros((N, self.q0, p)), np.zeros((N, self.qw, p)))

    def disturbances(self, t: float) -> Array:
        if len(self._dist_groups) == 1:
            return np.broadcast_to(disturbance(self.cfg.disturbances[0], t), (self.N, self.p))
        W = np.empty((self.N, self.p))
        for idx in self._dist_groups.values():
            W[idx] = disturbance(self.cfg.disturbances[idx[0]], t)
        return W

    def drifts(self, X: Array, t: float) -> Array:
        return stacked_drifts(self.cfg.followers, X, t)

    def rhs(self, t: float, y: Array, k: int, full: bool = False):
        cfg = self.cfg
        X, X0, th, th0, thw = self.unpack(y)
        ev = evaluate_control(X, X0, t, self.gl[k].coupling, self.deg[k], cfg.params, cfg.formation,
                              cfg.obstacles, cfg.bases, th, th0, thw)
        F = self.drifts(X, t)
        W = self.disturbances(t)
        u = ev.u * self.masks if self.masked else ev.u
        dy = np.empty_like(y)
        dX, dX0, d_th, d_th0, d_thw = self.unpack(dy)
        dX[:, :-1] = X[:, 1:]
        dX[:, -1] = F + u + W
        dX0[:-1] = X0[1:]
        dX0[-1] = cfg.leader.drift(X0, t)
        nn = cfg.nn
        sr = self.s[k] * ev.r[:, None, :]
        np.multiply(-self.G, ev.phi[:, :, None] * sr + nn.kappa * th, out=d_th)
        np.multiply(self.G0, ev.phi0[..., None] * sr - nn.kappa0 * th0, out=d_th0)
        np.multiply(-self.Gw, ev.phiw[..., None] * sr + nn.kappaw * thw, out=d_thw)
        if full:
            return dy, ev, F, W, u
        return dy


def rk4_step(f, t: float, y: Array, h: float, k1: Array | None = None) -> Array:
    """One classical Runge-Kutta step of ``y' = f(t, y)``."""
    if k1 is None:
        k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(loop: ClosedLoop, t: float, y: Array, h: float, k: int | None = None) -> Array:
    """Advance the joint state by one step with the topology active at ``t`` frozen."""
    if k is None:
        k = active_index(loop.cfg.schedule, t)[0]
    # Overflow inside a stage is caught by the finiteness check below.
    with np.errstate(over="ignore", invalid="ignore"):
        y_next = rk4_step(lambda tt, yy: loop.rhs(tt, yy, k), t, y, h)
    if not np.all(np.isfinite(y_next)):
        raise NonFiniteState(f"state became non-finite while stepping from t={t:.6g}")
    return y_next


class _Recorder:
    def __init__(self, loop: ClosedLoop, n_samples: int):
        self.loop = loop
        N, n, p = loop.N, loop.n, loop.p
        T = n_samples
        self.times = np.empty(T)
        self.topology = np.empty(T, dtype=int)
        self.X = np.empty((T, N, n, p))
        self.X0 = np.empty((T, n, p))
        self.U = np.empty((T, N, p))
        self.E = np.empty((T, N, n, p))
        self.R = np.empty((T, N, p))
        self.V = np.empty((T, 5))
        self.V_left = np.full(T, np.nan)
        self.min_pair = np.empty(T)
        self.min_leader = np.empty(T)
        self.min_obstacle = np.empty(T)
        self.weight_norms = np.empty((T, N, 3))
        self.F = np.empty((T, N, p))
        self.W = np.empty((T, N, p))
        self.U_pair = np.empty((T, N, p))
        self.z_norm = np.empty(T)
        self.row = 0
        cfg = loop.cfg
        G = np.eye(loop.q) / cfg.nn.gain
        G0 = np.eye(loop.q0) / cfg.nn.gain0
        Gw = np.eye(loop.qw) / cfg.nn.gainw
        self.Ginv = tuple(np.broadcast_to(g, (N,) + g.shape) for g in (G, G0, Gw))

    def weight_errors(self, th, th0, thw):
        tw = self.loop.cfg.true_weights
        if tw is None:
            return -th, -th0, -thw
        return tw.theta - th, tw.theta0[None] - th0, tw.thetaw - thw

    def V_for(self, k: int, ev, errs) -> tuple:
        gl = self.loop.gl[k]
        n = self.loop.n
        return composite_V(ev.r, ev.E[:, : n - 1, :], gl.P, self.loop.design.P1, errs, self.Ginv)

    def record(self, t: float, y: Array, k: int, k_prev: int | None, ev, F, W, u) -> None:
        loop = self.loop
        X, X0, th, th0, thw = loop.unpack(y)
        i = self.row
        self.times[i] = t
        self.topology[i] = k
        self.X[i] = X
        self.X0[i] = X0
        self.U[i] = u
        self.E[i] = ev.E
        self.R[i] = ev.r
        errs = self.weight_errors(th, th0, thw)
        Vb = self.V_for(k, ev, errs)
        self.V[i] = Vb.as_tuple()
        if k_prev is not None:
            cfg = loop.cfg
            ev_prev = evaluate_control(X, X0, t, loop.gl[k_prev].coupling, loop.deg[k_prev], cfg.params,
                                       cfg.formation, cfg.obstacles, cfg.bases, th, th0, thw)
            self.V_left[i] = self.V_for(k_prev, ev_prev, errs).total
        rep = ev.rep
        self.min_pair[i] = float(np.min(rep.pair_dist)) if loop.N > 1 else np.inf
        self.min_leader[i] = float(np.min(rep.leader_dist))
        self.min_obstacle[i] = float(np.min(rep.obstacle_dist)) if rep.obstacle_dist.size else np.inf
        self.weight_norms[i] = np.stack([np.linalg.norm(th, axis=(1, 2)), np.linalg.norm(th0, axis=(1, 2)),
                                         np.linalg.norm(thw, axis=(1, 2))], axis=1)
        self.F[i] = F
        self.W[i] = W
        self.U_pair[i] = rep.pair * (loop.masks if loop.masked else 1.0)
        n = loop.n
        self.z_norm[i] = math.sqrt(
            np.sum(ev.E[:, : n - 1] ** 2) + sum(float(np.sum(e * e)) for e in errs) + np.sum(ev.r**2)
        )
        self.row += 1

    def trace(self, cfg: SimConfig, theta: Array | None = None) -> SimTrace:
        return SimTrace(
            self.times, self.topology, self.X, self.X0, self.U, self.E, self.R, self.V, self.V_left,
            self.min_pair, self.min_leader, self.min_obstacle, self.weight_norms, self.F, self.W,
            self.U_pair, cfg.step, cfg.stride, tuple(cfg.schedule.switch_times[1:]), self.z_norm, theta,
        )


def simulate(cfg: SimConfig, validate: bool = True) -> SimTrace:
    """Integrate ``cfg`` over its horizon and return the sampled trace."""
    if validate:
        cfg.validate()
    loop = ClosedLoop(cfg)
    h = cfg.step
    t0 = cfg.schedule.t0
    n_steps = cfg.n_steps
    sched = cfg.schedule
    switch_steps = {int(round((ts - t0) / h)): s for s, ts in enumerate(sched.switch_times)}
    # Record every stride-th step, the final step and every switch step so
    # that each switch carries its pre-switch V.
    record = set(range(0, n_steps + 1, cfg.stride)) | {n_steps}
    record |= {s for s, seg in switch_steps.items() if seg > 0 and s <= n_steps}
    rec = _Recorder(loop, len(record))
    y = loop.initial()
    seg = 0
    k = sched.topology_ids[0]
    for step_i in range(n_steps + 1):
        t = t0 + step_i * h
        k_prev = None
        if step_i in switch_steps and switch_steps[step_i] > 0:
            seg = switch_steps[step_i]
            k_prev, k = k, sched.topology_ids[seg]
        dy, ev, F, W, u = loop.rhs(t, y, k, full=True)
        if step_i in record:
            rec.record(t, y, k, k_prev, ev, F, W, u)
        if step_i == n_steps:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            y = rk4_step(lambda tt, yy: loop.rhs(tt, yy, k), t, y, h, k1=dy)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"state became non-finite in the step starting at t={t:.6g}")
    _, _, th, _, _ = loop.unpack(y)
    return rec.trace(cfg, th.copy())


@dataclass(frozen=True)
class Metrics:
    max_u: float
    delta1_initial: float
    delta1_final: float
    ultimate_bound: float
    settling_time: float
    min_pair: float
    min_leader: float
    min_obstacle: float
    jump_ratios: tuple[float, ...]

    def as_dict(self) -> dict:
        return {
            "max_u": self.max_u,
            "delta1_initial": self.delta1_initial,
            "delta1_final": self.delta1_final,
            "ultimate_bound": self.ultimate_bound,
            "settling_time": self.settling_time,
            "min_pair_separation": self.min_pair,
            "min_leader_separation": self.min_leader,
            "min_obstacle_distance": self.min_obstacle,
            "switch_jump_ratios": list(self.jump_ratios),
        }


def metrics(trace: SimTrace, formation: FormationSpec) -> Metrics:
    """Summary numbers of a run: input peak, ultimate bound, separations, jump ratios."""
    d1 = delta1_norm(trace, formation)
    unorm = np.linalg.norm(trace.U, axis=2)
    t = trace.times
    tail = t >= t[0] + 0.8 * (t[-1] - t[0])
    B1 = float(d1[tail].max())
    above = np.flatnonzero(d1 > B1 * (1 + 1e-12))
    settle = float(t[above[-1] + 1]) if above.size and above[-1] + 1 < t.size else float(t[0])
    V = trace.V.sum(axis=1)
    mask = ~np.isnan(trace.V_left)
    ratios = tuple(float(v / vl) if vl > 0 else (1.0 if v == 0 else math.inf)
                   for v, vl in zip(V[mask], trace.V_left[mask]))
    return Metrics(float(unorm.max()), float(d1[0]), float(d1[-1]), B1, settle,
                   float(trace.min_pair.min()), float(trace.min_leader.min()), float(trace.min_obstacle.min()),
                   ratios)
