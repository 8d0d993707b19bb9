"""Trace persistence: CSV with a fixed column order, plus a gnuplot script.

Column order (1-based indices ``i`` follower, ``k`` derivative order, ``d``
axis):

    time, topology_id,
    x{i}_{k}_{d}   follower states
    x0_{k}_{d}     leader state
    u{i}_{d}       applied control
    e{i}_{k}_{d}   neighbourhood synchronization errors
    r{i}_{d}       weighted stability error
    V1..V5, V_left composite Lyapunov parts; V_left is the pre-switch value
                   (nan except at switch samples)
    min_sep_pair, min_sep_leader, min_sep_obstacle
    wn{i}_theta, wn{i}_theta0, wn{i}_thetaw   weight Frobenius norms
    f{i}_{d}       drift, w{i}_{d} disturbance, upair{i}_{d} pair repulsion
    z_norm
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ParseError
from .sim import SimTrace


def trace_columns(N: int, n: int, p: int) -> list[str]:
    cols = ["time", "topology_id"]
    cols += [f"x{i}_{k}_{d}" for i in range(1, N + 1) for k in range(1, n + 1) for d in range(1, p + 1)]
    cols += [f"x0_{k}_{d}" for k in range(1, n + 1) for d in range(1, p + 1)]
    cols += [f"u{i}_{d}" for i in range(1, N + 1) for d in range(1, p + 1)]
    cols += [f"e{i}_{k}_{d}" for i in range(1, N + 1) for k in range(1, n + 1) for d in range(1, p + 1)]
    cols += [f"r{i}_{d}" for i in range(1, N + 1) for d in range(1, p + 1)]
    cols += ["V1", "V2", "V3", "V4", "V5", "V_left"]
    cols += ["min_sep_pair", "min_sep_leader", "min_sep_obstacle"]
    cols += [f"wn{i}_{w}" for i in range(1, N + 1) for w in ("theta", "theta0", "thetaw")]
    for tag in ("f", "w", "upair"):
        cols += [f"{tag}{i}_{d}" for i in range(1, N + 1) for d in range(1, p + 1)]
    cols.append("z_norm")
    return cols


def trace_matrix(trace: SimTrace) -> np.ndarray:
    T, N, n, p = trace.X.shape
    z = trace.z_norm if trace.z_norm is not None else np.full(T, np.nan)
    parts = [
        trace.times[:, None], trace.topology[:, None].astype(float),
        trace.X.reshape(T, -1), trace.X0.reshape(T, -1), trace.U.reshape(T, -1),
        trace.E.reshape(T, -1), trace.R.reshape(T, -1), trace.V, trace.V_left[:, None],
        trace.min_pair[:, None], trace.min_leader[:, None], trace.min_obstacle[:, None],
        trace.weight_norms.reshape(T, -1), trace.F.reshape(T, -1), trace.W.reshape(T, -1),
        trace.U_pair.reshape(T, -1), z[:, None],
    ]
    return np.hstack(parts)


def write_trace(trace: SimTrace, path: str | Path) -> Path:
    """Write the trace as CSV at full double precision; missing values are ``nan``."""
    path = Path(path)
    T, N, n, p = trace.X.shape
    np.savetxt(path, trace_matrix(trace), fmt="%.17g", delimiter=",",
               header=",".join(trace_columns(N, n, p)), comments="")
    return path


def _shape_from_header(cols: list[str]) -> tuple[int, int, int]:
    xs = [c for c in cols if c.startswith("x") and not c.startswith("x0_")]
    if not xs:
        raise ParseError("trace header has no follower state columns", 1, 1)
    idx = np.array([[int(v) for v in c[1:].split("_")] for c in xs])
    return int(idx[:, 0].max()), int(idx[:, 1].max()), int(idx[:, 2].max())


def read_trace(path: str | Path) -> SimTrace:
    """Parse a trace CSV written by :func:`write_trace`."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if header == [""]:
        raise ParseError(f"{path} is empty", 1, 1)
    N, n, p = _shape_from_header(header)
    expected = trace_columns(N, n, p)
    if header != expected:
        bad = next((k for k, (a, b) in enumerate(zip(header, expected)) if a != b), min(len(header), len(expected)))
        raise ParseError(f"unexpected trace column {bad + 1}", 1, bad + 1)
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"malformed trace data: {exc}") from None
    if data.shape[1] != len(header):
        raise ParseError(f"rows have {data.shape[1]} fields, expected {len(header)}", 2, 1)
    T = data.shape[0]
    pos = 0

    def take(width: int, shape: tuple[int, ...]) -> np.ndarray:
        nonlocal pos
        block = data[:, pos:pos + width].reshape((T,) + shape)
        pos += width
        return block

    times = take(1, ())
    topology = take(1, ()).astype(int)
    X = take(N * n * p, (N, n, p))
    X0 = take(n * p, (n, p))
    U = take(N * p, (N, p))
    E = take(N * n * p, (N, n, p))
    R = take(N * p, (N, p))
    V = take(5, (5,))
    V_left = take(1, ())
    min_pair, min_leader, min_obstacle = take(1, ()), take(1, ()), take(1, ())
    wn = take(N * 3, (N, 3))
    F, W, U_pair = take(N * p, (N, p)), take(N * p, (N, p)), take(N * p, (N, p))
    z = take(1, ())
    dt = float(times[1] - times[0]) if T > 1 else 0.0
    switches = tuple(float(t) for t in times[~np.isnan(V_left)])
    return SimTrace(times, topology, X, X0, U, E, R, V, V_left, min_pair, min_leader, min_obstacle, wn,
                    F, W, U_pair, dt, 1, switches, z)


def write_weights(theta: np.ndarray, path: str | Path) -> Path:
    """Final agent weight matrices as long-format CSV (agent, row, axis, value)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent", "basis_index", "axis", "value"])
        for i, Wi in enumerate(theta):
            for q, row in enumerate(Wi):
                for d, v in enumerate(row):
                    w.writerow([i + 1, q + 1, d + 1, repr(float(v))])
    return path


def gnuplot_script(trace_csv: str | Path, N: int, n: int, p: int, switch_times=(), out_stem: str = "trace") -> str:
    """Gnuplot commands that plot positions and leader-relative errors from the CSV."""
    cols = {c: k + 1 for k, c in enumerate(trace_columns(N, n, p))}
    name = Path(trace_csv).name
    lines = [
        "# Regenerate the figures with: gnuplot plot.gp",
        "set datafile separator ','",
        "set key outside right",
        "set grid",
        "set terminal pngcairo size 1000,600",
    ]
    marks = [f"set arrow from {t},graph 0 to {t},graph 1 nohead dt 2 lc rgb 'gray'" for t in switch_times]
    lines += marks
    for d, axis in ((1, "x"), (2, "y"))[:p]:
        plots = [f"'{name}' every ::1 using 1:{cols[f'x0_1_{d}']} with lines lw 2 title 'leader'"]
        plots += [f"'' every ::1 using 1:{cols[f'x{i}_1_{d}']} with lines title 'agent {i}'" for i in range(1, N + 1)]
        lines += [f"set output '{out_stem}_position_{axis}.png'", f"set title 'Position, {axis} component'",
                  "set xlabel 't [s]'", f"set ylabel '{axis}'", "plot " + ", \\\n     ".join(plots)]
    for d, axis in ((1, "x"), (2, "y"))[:p]:
        lead = cols[f"x0_1_{d}"]
        plots = [f"'{name}' every ::1 using 1:(${cols[f'x{i}_1_{d}']}-${lead}) with lines title 'agent {i}'"
                 for i in range(1, N + 1)]
        lines += [f"set output '{out_stem}_relative_{axis}.png'",
                  f"set title 'Agent minus leader position, {axis} component'",
                  "set xlabel 't [s]'", f"set ylabel 'relative {axis}'", "plot " + ", \\\n     ".join(plots)]
    return "\n".join(lines) + "\n"
