"""CSV and JSON persistence for densities, Lorenz curves and trajectories.

CSV files carry their grid metadata in ``#`` comment lines so a file can be
read back without any side information.  JSON is written with sorted keys and
fixed indentation, so identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import MissingInput
from .transforms import Density, Grid1D, LorenzCurve


def _grid_comment(side: str, grid: Grid1D) -> list[str]:
    return [f"# side={side}",
            f"# grid lo={grid.lo!r} hi={grid.hi!r} n={grid.n} centered={int(grid.centered)}"]


def _parse_comments(lines) -> tuple[str, Grid1D]:
    meta = {}
    for line in lines:
        for tok in line.lstrip("#").split():
            if "=" in tok:
                k, v = tok.split("=", 1)
                meta[k] = v
    try:
        grid = Grid1D(float(meta["lo"]), float(meta["hi"]), int(meta["n"]), bool(int(meta["centered"])))
        return meta["side"], grid
    except KeyError as err:
        raise MissingInput(f"CSV header lacks {err.args[0]!r}") from None


def _fmt(v) -> str:
    return repr(float(v))


def state_to_csv(state, path) -> Path:
    """Two columns (coordinate, value); Lorenz curves add the anchors f=0 and f=1."""
    path = Path(path)
    if isinstance(state, Density):
        side, coord, vals, name = "density", state.grid.nodes, state.values, "rho"
    else:
        side, name = "lorenz", "L"
        coord = np.concatenate(([0.0], state.grid.nodes, [1.0]))
        vals = np.concatenate(([0.0], state.values, [state.total]))
    with path.open("w", newline="") as fh:
        fh.write("\n".join(_grid_comment(side, state.grid)) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x" if side == "density" else "f", name])
        w.writerows([_fmt(c), _fmt(v)] for c, v in zip(coord, vals))
    return path


def state_to_json(state) -> dict:
    g = state.grid
    out = {"grid": {"lo": g.lo, "hi": g.hi, "n": g.n, "centered": g.centered},
           "values": [float(v) for v in state.values]}
    if isinstance(state, LorenzCurve):
        out["total"] = state.total
    return out


def state_from_json(doc: dict):
    g = Grid1D(**doc["grid"])
    if g.centered:
        return LorenzCurve(g, doc["values"], doc["total"])
    return Density(g, doc["values"], normalize=False)


def trajectory_to_csv(traj, path) -> Path:
    """Wide format: one row per snapshot, time first, then the state values.

    Lorenz rows end with the top anchor L(1) in a ``top`` column.
    """
    path = Path(path)
    grid = traj.states[0].grid
    lorenz = traj.side == "lorenz"
    header = ["time"] + [f"v{j}" for j in range(grid.n)] + (["top"] if lorenz else [])
    with path.open("w", newline="") as fh:
        fh.write("\n".join(_grid_comment(traj.side, grid)) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, s in zip(traj.times, traj.states):
            row = [_fmt(t)] + [_fmt(v) for v in s.values]
            if lorenz:
                row.append(_fmt(s.total))
            w.writerow(row)
    return path


def read_trajectory_csv(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"no trajectory file at {path}")
    with path.open() as fh:
        lines = fh.read().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    side, grid = _parse_comments(comments)
    if not body:
        raise MissingInput(f"{path} has no header row")
    rows = list(csv.reader(body))
    header, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    if header[0] != "time":
        raise MissingInput(f"{path} does not look like a trajectory file")
    out = {"side": side, "grid": grid, "times": data[:, 0], "values": data[:, 1:grid.n + 1]}
    if side == "lorenz":
        out["top"] = data[:, grid.n + 1]
    return out


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path
