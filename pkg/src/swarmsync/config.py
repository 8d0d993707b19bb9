"""YAML run configuration: parsing, validation and serialization.

A config is a mapping with the sections ``simulation``, ``agents``,
``disturbance``, ``graph``, ``formation``, ``obstacles``, ``control`` and
``adaptation``.  Every key is optional except the follower list; defaults are
listed in ``DEFAULTS`` and in the README.  ``dump_config`` writes a fully
explicit config that parses back to an identical ``SimConfig``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .controller import ControlParams, FormationSpec, ObstacleSet
from .dynamics import DisturbanceModel, DynamicsModel, SinusoidTerm
from .errors import ParseError, SwarmSyncError, ValidationError
from .graph import SwitchingSchedule, Topology, fig1_topologies
from .lyapunov import hurwitz_from_poles
from .nn import BasisSet, BasisSpec
from .sim import NNSettings, SimConfig

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulation": {"horizon": 40.0, "step": 0.001, "stride": 1, "seed": 0, "init_jitter": 0.0},
    "graph": {"nu1": 1.0, "nu2": 1.0, "weight": 1.0, "t0": 0.0},
    "formation": {"pair_threshold": 0.5, "leader_threshold": 0.5, "varpi": 1.0},
    "control": {"beta": 1.0, "c": 0.5, "gamma0": 1.0, "gamma1": 1.0, "gamma2": 1.0},
    "adaptation": {"gain": 5.0, "gain0": 5.0, "gainw": 5.0, "kappa": 0.1, "kappa0": 0.1, "kappaw": 0.1},
}

_SECTIONS = {
    "simulation": {"horizon", "step", "stride", "seed", "init_jitter"},
    "agents": {"n", "p", "leader", "followers"},
    "disturbance": {"kind", "terms", "expressions", "bound"},
    "graph": {"nu1", "nu2", "weight", "topologies", "schedule", "t0"},
    "formation": {"pair_threshold", "leader_threshold", "varpi"},
    "obstacles": {"outer_radius", "inner_radius", "centers"},
    "control": {"poles", "lambda_bar", "beta", "c", "c_gain", "gamma0", "gamma1", "gamma2"},
    "adaptation": {"gain", "gain0", "gainw", "kappa", "kappa0", "kappaw", "bases"},
}
_AGENT_KEYS = {"kind", "expressions", "input_mask", "initial", "offset", "disturbance"}


def _section(raw: Mapping, name: str) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, Mapping):
        raise ValidationError("schema", f"section {name!r} must be a mapping")
    unknown = set(sec) - _SECTIONS[name]
    if unknown:
        raise ValidationError("schema", f"unknown keys in {name!r}: {sorted(unknown)}")
    merged = dict(DEFAULTS.get(name, {}))
    merged.update(sec)
    return merged


def _float(value: Any, what: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError("schema", f"{what} must be a number, got {value!r}") from None


def _array(value: Any, what: str) -> np.ndarray:
    try:
        return np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError("schema", f"{what} must be numeric, got {value!r}") from None


def _blocks(value: Any, n: int, p: int, what: str) -> np.ndarray:
    """An ``(n, p)`` state from a list of up to ``n`` rows; missing rows are zero."""
    out = np.zeros((n, p))
    if value is None:
        return out
    arr = _array(value, what)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.ndim != 2 or arr.shape[1] != p or arr.shape[0] > n:
        raise ValidationError("dimension", f"{what} must have at most {n} rows of length {p}, got {arr.shape}")
    out[: arr.shape[0]] = arr
    return out


def _matrix(value: Any, size: int, what: str) -> np.ndarray:
    arr = _array(value, what)
    if arr.ndim == 0:
        return float(arr) * np.eye(size)
    if arr.shape != (size, size):
        raise ValidationError("dimension", f"{what} must be a scalar or {size}x{size}")
    return arr


def _disturbance(spec: Mapping | None, p: int) -> DisturbanceModel:
    if spec is None:
        return DisturbanceModel.default_mix(p)
    unknown = set(spec) - _SECTIONS["disturbance"]
    if unknown:
        raise ValidationError("schema", f"unknown disturbance keys: {sorted(unknown)}")
    kind = spec.get("kind", "sinusoidal-mix")
    bound = spec.get("bound")
    bound = None if bound is None else _float(bound, "disturbance bound")
    if kind == "sinusoidal-mix" and "terms" not in spec:
        return DisturbanceModel("sinusoidal-mix", p, DisturbanceModel.default_mix(p).terms, bound=bound)
    terms = []
    for tm in spec.get("terms") or ():
        terms.append(SinusoidTerm(_float(tm.get("amplitude"), "amplitude"), _float(tm.get("omega"), "omega"),
                                  _float(tm.get("phase", 0.0), "phase"), str(tm.get("kind", "sin"))))
    return DisturbanceModel(kind, p, tuple(terms), tuple(spec.get("expressions") or ()), bound)


def _dynamics(spec: Mapping, n: int, p: int, what: str) -> DynamicsModel:
    if not isinstance(spec, Mapping) or "kind" not in spec:
        raise ValidationError("schema", f"{what} needs a 'kind'")
    unknown = set(spec) - _AGENT_KEYS
    if unknown:
        raise ValidationError("schema", f"unknown keys in {what}: {sorted(unknown)}")
    mask = spec.get("input_mask")
    return DynamicsModel(str(spec["kind"]), n, p, tuple(spec.get("expressions") or ()),
                         None if mask is None else tuple(mask))


def _topologies(value: Any, N: int, weight: float) -> list[Topology]:
    if value is None or value == "figure-1":
        if N != 5:
            raise ValidationError("topologies", "the figure-1 set needs exactly 5 followers")
        return fig1_topologies(weight)
    if not isinstance(value, list) or not value:
        raise ValidationError("topologies", "give 'figure-1' or a non-empty list")
    out = []
    for k, t in enumerate(value):
        name = str(t.get("name", f"T{k + 1}"))
        if "adjacency" in t:
            out.append(Topology(_array(t["adjacency"], "adjacency"),
                                _array(t.get("leader_weights", np.zeros(N)), "leader_weights"), name))
        else:
            w = _float(t.get("weight", weight), "edge weight")
            out.append(Topology.from_edges(N, [tuple(e) for e in t.get("directed", [])],
                                           [tuple(e) for e in t.get("undirected", [])], w, name))
    return out


def _schedule(value: Any, n_topologies: int, horizon: float, t0: float) -> SwitchingSchedule:
    value = value or {"period": 5.0, "order": list(range(n_topologies))}
    if "switch_times" in value:
        return SwitchingSchedule(tuple(value["switch_times"]), tuple(value["topology_ids"]))
    order = value.get("order", list(range(n_topologies)))
    return SwitchingSchedule.periodic(_float(value.get("period", 5.0), "switching period"), order, horizon, t0)


def _bases(value: Mapping | None, n: int, p: int) -> BasisSet:
    value = value or {}
    defaults = {"state": "state-12dim", "leader": "leader-12dim", "disturbance": "disturbance-12dim"}
    specs = {}
    for role, default in defaults.items():
        b = value.get(role, default)
        if isinstance(b, str):
            specs[role] = BasisSpec(b, (), n, p)
        else:
            specs[role] = BasisSpec(str(b.get("kind", "user-defined")), tuple(b.get("expressions") or ()), n, p)
    return BasisSet(specs["state"], specs["leader"], specs["disturbance"])


def config_from_dict(raw: Mapping) -> SimConfig:
    """Build and validate a ``SimConfig`` from a parsed mapping.

    Malformed values that slip past the schema checks (wrong nesting, a
    string where a mapping belongs) surface as ``ValidationError("schema")``.
    """
    try:
        return _build(raw)
    except SwarmSyncError:
        raise
    except (TypeError, KeyError, AttributeError, ValueError, IndexError) as exc:
        raise ValidationError("schema", f"{type(exc).__name__}: {exc}") from exc


def _build(raw: Mapping) -> SimConfig:
    if not isinstance(raw, Mapping):
        raise ValidationError("schema", "top level must be a mapping")
    unknown = set(raw) - set(_SECTIONS) - {"name"}
    if unknown:
        raise ValidationError("schema", f"unknown sections: {sorted(unknown)}")
    sim = _section(raw, "simulation")
    agents = raw.get("agents") or {}
    unknown = set(agents) - _SECTIONS["agents"]
    if unknown:
        raise ValidationError("schema", f"unknown keys in 'agents': {sorted(unknown)}")
    n = int(agents.get("n", 3))
    p = int(agents.get("p", 2))
    followers = agents.get("followers")
    if not followers:
        raise ValidationError("agent count", "at least one follower is required")
    N = len(followers)
    leader_spec = agents.get("leader") or {"kind": "builtin-leader"}

    default_dist = raw.get("disturbance")
    models = tuple(_dynamics(f, n, p, f"follower {i + 1}") for i, f in enumerate(followers))
    dists = tuple(_disturbance(f.get("disturbance", default_dist), p) for f in followers)
    leader = _dynamics(leader_spec, n, p, "leader")
    x0 = np.stack([_blocks(f.get("initial"), n, p, f"follower {i + 1} initial") for i, f in enumerate(followers)])
    offsets = np.stack([_blocks(f.get("offset"), n, p, f"follower {i + 1} offset") for i, f in enumerate(followers)])
    leader0 = _blocks(leader_spec.get("initial"), n, p, "leader initial")
    leader_off = _blocks(leader_spec.get("offset"), n, p, "leader offset")

    form = _section(raw, "formation")
    pair = _array(form["pair_threshold"], "pair_threshold")
    if pair.ndim == 0:
        pair = np.full((N, N), float(pair))
        np.fill_diagonal(pair, 0.0)
    lead_thr = np.broadcast_to(_array(form["leader_threshold"], "leader_threshold"), (N,)).copy()
    formation = FormationSpec(offsets, leader_off, pair, lead_thr, _float(form["varpi"], "varpi"))

    obs = raw.get("obstacles")
    if obs:
        unknown = set(obs) - _SECTIONS["obstacles"]
        if unknown:
            raise ValidationError("schema", f"unknown keys in 'obstacles': {sorted(unknown)}")
        centers = _array(obs.get("centers", []), "obstacle centers").reshape(-1, p)
        obstacles = ObstacleSet(centers, _float(obs.get("outer_radius", 1.0), "outer_radius"),
                                _float(obs.get("inner_radius", 0.5), "inner_radius"))
    else:
        obstacles = ObstacleSet.empty(p)

    ctl = _section(raw, "control")
    beta = _float(ctl["beta"], "beta")
    if ctl.get("poles") is not None:
        lam = hurwitz_from_poles([_float(v, "pole") for v in ctl["poles"]], beta).lambda_bar
    else:
        lam = _array(ctl.get("lambda_bar", [2.0, 3.0]), "lambda_bar").reshape(-1)
    if lam.size != n - 1:
        raise ValidationError("hurwitz weights", f"need {n - 1} Hurwitz weights for n={n}, got {lam.size}")
    if ctl.get("c_gain") is not None:
        c_gain = _array(ctl["c_gain"], "c_gain")
    else:
        c_gain = np.tile(_float(ctl["c"], "c") * np.hstack([np.eye(p)] * n), (N, 1, 1))
    grph = _section(raw, "graph")
    params = ControlParams(_float(grph["nu1"], "nu1"), _float(grph["nu2"], "nu2"), lam, c_gain,
                           _matrix(ctl["gamma0"], p, "gamma0"), _matrix(ctl["gamma1"], p, "gamma1"),
                           _matrix(ctl["gamma2"], p, "gamma2"))

    horizon = _float(sim["horizon"], "horizon")
    topologies = _topologies(grph.get("topologies"), N, _float(grph["weight"], "weight"))
    schedule = _schedule(grph.get("schedule"), len(topologies), horizon, _float(grph["t0"], "t0"))

    ad = _section(raw, "adaptation")
    nn = NNSettings(*(_float(ad[k], k) for k in ("gain", "gain0", "gainw", "kappa", "kappa0", "kappaw")))

    cfg = SimConfig(
        horizon=horizon, step=_float(sim["step"], "step"), topologies=tuple(topologies), schedule=schedule,
        formation=formation, obstacles=obstacles, params=params, followers=models, leader=leader,
        disturbances=dists, x0=x0, leader0=leader0, nn=nn, bases=_bases(ad.get("bases"), n, p), beta=beta,
        stride=int(sim["stride"]), seed=int(sim["seed"]), init_jitter=_float(sim["init_jitter"], "init_jitter"),
        name=str(raw.get("name", "")),
    )
    cfg.validate()
    return cfg


def load_raw(text: str) -> dict:
    """Parse YAML text into the raw config mapping without validating it."""
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ParseError(f"malformed config: {exc.problem or exc.context}", line, col) from None
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed config: {exc}") from None
    if raw is None:
        raise ValidationError("schema", "config is empty")
    if not isinstance(raw, dict):
        raise ValidationError("schema", "top level must be a mapping")
    return raw


def parse_text(text: str) -> SimConfig:
    return config_from_dict(load_raw(text))


def parse_config(path: str | Path) -> SimConfig:
    """Load and fully validate a config file."""
    return parse_text(Path(path).read_text())


def _disturbance_dict(d: DisturbanceModel) -> dict:
    out: dict[str, Any] = {"kind": d.kind, "bound": d.bound}
    if d.terms:
        out["terms"] = [{"amplitude": t.amplitude, "omega": t.omega, "phase": t.phase, "kind": t.kind}
                        for t in d.terms]
    if d.expressions:
        out["expressions"] = list(d.expressions)
    return out


def _dynamics_dict(m: DynamicsModel) -> dict:
    out: dict[str, Any] = {"kind": m.kind}
    if m.expressions:
        out["expressions"] = list(m.expressions)
    if m.input_mask is not None:
        out["input_mask"] = list(m.input_mask)
    return out


def _basis_dict(b: BasisSpec) -> Any:
    if b.kind == "user-defined":
        return {"kind": b.kind, "expressions": list(b.expressions)}
    return b.kind


def config_to_dict(cfg: SimConfig) -> dict:
    """Fully explicit mapping; ``config_from_dict`` of it rebuilds ``cfg``."""
    x0 = np.asarray(cfg.x0, dtype=float)
    followers = []
    for i, m in enumerate(cfg.followers):
        f = _dynamics_dict(m)
        f["initial"] = x0[i].tolist()
        f["offset"] = cfg.formation.offsets[i].tolist()
        f["disturbance"] = _disturbance_dict(cfg.disturbances[i])
        followers.append(f)
    leader = _dynamics_dict(cfg.leader)
    leader["initial"] = np.asarray(cfg.leader0, dtype=float).tolist()
    leader["offset"] = cfg.formation.leader_offset.tolist()
    p = cfg.params
    out: dict[str, Any] = {
        "name": cfg.name,
        "simulation": {"horizon": cfg.horizon, "step": cfg.step, "stride": cfg.stride, "seed": cfg.seed,
                       "init_jitter": cfg.init_jitter},
        "agents": {"n": p.n, "p": cfg.formation.offsets.shape[2], "leader": leader, "followers": followers},
        "graph": {
            "nu1": p.nu1, "nu2": p.nu2,
            "topologies": [{"name": T.name, "adjacency": T.adjacency.tolist(),
                            "leader_weights": T.leader_weights.tolist()} for T in cfg.topologies],
            "schedule": {"switch_times": list(cfg.schedule.switch_times),
                         "topology_ids": list(cfg.schedule.topology_ids)},
        },
        "formation": {"pair_threshold": cfg.formation.pair_thresholds.tolist(),
                      "leader_threshold": cfg.formation.leader_thresholds.tolist(),
                      "varpi": cfg.formation.varpi},
        "control": {"lambda_bar": p.lambda_bar.tolist(), "beta": cfg.beta, "c_gain": p.c_gain.tolist(),
                    "gamma0": p.Gamma0.tolist(), "gamma1": p.Gamma1.tolist(), "gamma2": p.Gamma2.tolist()},
        "adaptation": {"gain": cfg.nn.gain, "gain0": cfg.nn.gain0, "gainw": cfg.nn.gainw,
                       "kappa": cfg.nn.kappa, "kappa0": cfg.nn.kappa0, "kappaw": cfg.nn.kappaw,
                       "bases": {"state": _basis_dict(cfg.bases.state), "leader": _basis_dict(cfg.bases.leader),
                                 "disturbance": _basis_dict(cfg.bases.disturbance)}},
    }
    if len(cfg.obstacles):
        out["obstacles"] = {"outer_radius": cfg.obstacles.outer_radius, "inner_radius": cfg.obstacles.inner_radius,
                            "centers": cfg.obstacles.centers.tolist()}
    return out


def dump_config(cfg: SimConfig, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)
    if path is not None:
        Path(path).write_text(text)
    return text


def configs_equal(a: SimConfig, b: SimConfig) -> bool:
    """Field-by-field equality through the explicit serialized form."""
    return config_to_dict(a) == config_to_dict(b)
