"""Command-line front end: ``swarmsync <subcommand> [config] [options]``.

Exit codes: 0 success, 1 config or input error, 2 numeric divergence,
3 safety violation.  Every failure prints one line
``swarmsync: error[<code>]: <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import __version__
from .config import config_from_dict, dump_config, load_raw
from .errors import (
    InnerRadiusBreach,
    NonFiniteState,
    SwarmSyncError,
    ValidationError,
    ZeroSeparation,
)
from .reports import analysis_report, gain_rule_report, safety_report
from .sim import metrics, simulate
from .traceio import gnuplot_script, read_trace, write_trace, write_weights

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_UNSAFE = 0, 1, 2, 3


def _fail(code: str, detail: str, status: int) -> int:
    print(f"swarmsync: error[{code}]: {detail}", file=sys.stderr)
    return status


def _load_raw(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return load_raw(p.read_text())


def _set_path(raw: dict, dotted: str, value: Any) -> None:
    node = raw
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValidationError("override", f"{dotted}: {k} is not a section")
    node[keys[-1]] = value


def _apply_overrides(raw: dict, args: argparse.Namespace) -> dict:
    raw = json.loads(json.dumps(raw))
    if getattr(args, "horizon_override", None) is not None:
        _set_path(raw, "simulation.horizon", args.horizon_override)
    if getattr(args, "stride", None) is not None:
        _set_path(raw, "simulation.stride", args.stride)
    if getattr(args, "seed", None) is not None:
        _set_path(raw, "simulation.seed", args.seed)
    return raw


def _jsonable(obj: Any) -> Any:
    # Strict JSON: non-finite floats become null.
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, allow_nan=False) + "\n")


def _manifest(args: argparse.Namespace, out: Path) -> dict:
    return {"config": str(args.config_path), "output_dir": str(out), "subcommand": args.command,
            "version": __version__, "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ValidationError("output directory", f"{out} is not writable")
    return out


def _run_simulation(raw: dict, out: Path | None) -> tuple[dict, int]:
    cfg = config_from_dict(raw)
    t0 = time.perf_counter()
    trace = simulate(cfg)
    elapsed = time.perf_counter() - t0
    m = metrics(trace, cfg.formation)
    verdict = safety_report(cfg, trace)
    summary = {"name": cfg.name, "runtime_s": elapsed, "samples": len(trace), **m.as_dict(),
               "safe": verdict["safe"], "violations": verdict["violations"]}
    if out is not None:
        N, n, p = trace.X.shape[1:]
        write_trace(trace, out / "trace.csv")
        write_weights(trace.theta, out / "weights.csv")
        (out / "plot.gp").write_text(gnuplot_script("trace.csv", N, n, p, trace.switch_times))
        dump_config(cfg, out / "config.cfg")
        _write_json(out / "summary.json", summary)
    return summary, EXIT_OK if verdict["safe"] else EXIT_UNSAFE


def cmd_simulate(args: argparse.Namespace) -> int:
    raw = _apply_overrides(_load_raw(args.config_path), args)
    out = _out_dir(args)
    _write_json(out / "manifest.json", _manifest(args, out))
    summary, status = _run_simulation(raw, out)
    print(f"wrote {out / 'trace.csv'} ({summary['samples']} samples, {summary['runtime_s']:.1f} s); "
          f"final |delta1| = {summary['delta1_final']:.4g}, max |u| = {summary['max_u']:.4g}")
    if status == EXIT_UNSAFE:
        return _fail("safety", "; ".join(summary["violations"]), EXIT_UNSAFE)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = config_from_dict(_apply_overrides(_load_raw(args.config_path), args))
    trace = read_trace(args.trace) if args.trace else None
    out = _out_dir(args)
    _write_json(out / "manifest.json", _manifest(args, out))
    report = analysis_report(cfg, trace)
    _write_json(out / "analysis.json", report)
    d = report["dwell_time"]
    tau = "n/a" if d["tau_star"] is None else f"{d['tau_star']:.4g}"
    print(f"rho0 = {d['rho0']:.4g}, mu = {d['mu']:.4g}, tau_a* = {tau}")
    return EXIT_OK


def cmd_check_safety(args: argparse.Namespace) -> int:
    cfg = config_from_dict(_load_raw(args.config_path))
    trace = read_trace(args.trace)
    out = _out_dir(args)
    _write_json(out / "manifest.json", _manifest(args, out))
    verdict = safety_report(cfg, trace)
    _write_json(out / "safety.json", verdict)
    if not verdict["safe"]:
        return _fail("safety", "; ".join(verdict["violations"]), EXIT_UNSAFE)
    w = verdict["worst"]
    print(f"safe; tightest margin {w['margin']:.4g} ({w['kind']} {w['ids']} at t={w['time']:.4g})")
    return EXIT_OK


def cmd_gain_rule(args: argparse.Namespace) -> int:
    cfg = config_from_dict(_load_raw(args.config_path))
    trace = read_trace(args.trace)
    out = _out_dir(args)
    _write_json(out / "manifest.json", _manifest(args, out))
    report = gain_rule_report(cfg, trace)
    _write_json(out / "gain_rule.json", report)
    rec = report["recommended_min_gamma1"]
    print("gain rule inapplicable for some pair; see gain_rule.json" if rec is None
          else f"choose Gamma1 above {rec:.4g} (current smallest eigenvalue {report['current_gamma1_min_eig']:.4g})")
    return EXIT_OK


def _parse_sets(items: Sequence[str]) -> list[tuple[str, list[Any]]]:
    out = []
    for item in items:
        if "=" not in item:
            raise ValidationError("sweep", f"expected key=v1,v2,... got {item!r}")
        key, vals = item.split("=", 1)
        out.append((key.strip(), [yaml.safe_load(v) for v in vals.split(",")]))
    return out


def _sweep_job(job: tuple[int, dict, dict, str]) -> dict:
    index, raw, point, out = job
    row: dict[str, Any] = {"run": index, **point}
    run_dir = Path(out) / f"run-{index:03d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        summary, status = _run_simulation(raw, run_dir)
        row.update({k: summary[k] for k in ("delta1_final", "ultimate_bound", "max_u", "min_pair_separation",
                                            "min_obstacle_distance", "runtime_s", "safe")})
        row["status"] = status
    except SwarmSyncError as exc:
        row.update({"status": _status_for(exc), "error": f"{exc.code}: {exc}"})
    return row


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _apply_overrides(_load_raw(args.config_path), args)
    axes = _parse_sets(args.set or [])
    out = _out_dir(args)
    _write_json(out / "manifest.json", _manifest(args, out))
    keys = [k for k, _ in axes]
    jobs = []
    for idx, combo in enumerate(itertools.product(*[v for _, v in axes])):
        raw = json.loads(json.dumps(base))
        for k, v in zip(keys, combo):
            _set_path(raw, k, v)
        config_from_dict(raw)  # fail fast on invalid points before launching
        jobs.append((idx, raw, dict(zip(keys, combo)), str(out)))
    cap = int(os.environ.get("SWARMSYNC_THREADS", "0") or 0) or (os.cpu_count() or 1)
    workers = max(1, min(cap, len(jobs)))
    if workers == 1:
        rows = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    cols = list(dict.fromkeys(k for r in rows for k in r))
    lines = [",".join(cols)] + [",".join(str(r.get(c, "")) for c in cols) for r in rows]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} runs, {workers} worker(s))")
    return max((r["status"] for r in rows), default=EXIT_OK)


def _status_for(exc: BaseException) -> int:
    if isinstance(exc, (ZeroSeparation, InnerRadiusBreach)):
        return EXIT_UNSAFE
    if isinstance(exc, NonFiniteState):
        return EXIT_DIVERGED
    return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swarmsync", description="Leader-follower swarm synchronization runs.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, overrides: bool = True) -> None:
        p.add_argument("config", nargs="?", help="config file (same as --config)")
        p.add_argument("--config", dest="config_opt", help="config file")
        p.add_argument("--out", default="swarmsync-out", help="output directory (default: %(default)s)")
        if overrides:
            p.add_argument("--stride", type=int, help="record every k-th grid point")
            p.add_argument("--horizon-override", type=float, help="replace the configured horizon [s]")
            p.add_argument("--seed", type=int, help="seed for randomized initial conditions")

    p = sub.add_parser("simulate", help="integrate a config and write trace.csv, weights.csv, plot.gp")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("analyze", help="write the dwell-time and K-matrix reports")
    common(p)
    p.add_argument("--trace", help="prior trace.csv used to bound the basis norms")
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("check-safety", help="safety verdict for a prior trace")
    common(p, overrides=False)
    p.add_argument("--trace", required=True, help="trace.csv from simulate")
    p.set_defaults(func=cmd_check_safety)
    p = sub.add_parser("gain-rule", help="minimum pair repulsion gains from a prior trace")
    common(p, overrides=False)
    p.add_argument("--trace", required=True, help="trace.csv from simulate")
    p.set_defaults(func=cmd_gain_rule)
    p = sub.add_parser("sweep", help="run a grid of config variations in parallel")
    common(p)
    p.add_argument("--set", action="append", metavar="KEY=V1,V2",
                   help="dotted config key and comma-separated values; repeat for a grid")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.config_path = args.config_opt or args.config
    if not args.config_path:
        return _fail("config", "no config file given", EXIT_CONFIG)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except SwarmSyncError as exc:
        return _fail(exc.code, str(exc), _status_for(exc))
    except OSError as exc:
        return _fail("io", str(exc), EXIT_CONFIG)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
