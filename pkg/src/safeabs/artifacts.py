"""Run artifacts: delimited trajectory, JSON summaries, binary models.

``trajectory.csv`` and ``batches.json`` are fully determined by the config
and seed (timings live in ``summary.json`` so the deterministic artifacts
stay byte-reproducible).
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .abstraction import save_model
from .explore import ExplorationRun
from .synthesis import save_controller
from .tsys import SafeSet


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory(run: ExplorationRun, path: str) -> None:
    n = run.trajectory_x.shape[1]
    m = run.trajectory_u.shape[1]
    header = (
        ["t"]
        + [f"x{i+1}" for i in range(n)]
        + [f"u{j+1}" for j in range(m)]
        + [f"y{i+1}" for i in range(n)]
    )
    lines = [",".join(header)]
    for k in range(len(run.trajectory_t)):
        row = [str(int(run.trajectory_t[k]))]
        row += [_fmt(v) for v in run.trajectory_x[k]]
        row += [_fmt(v) for v in run.trajectory_u[k]]
        row += [_fmt(v) for v in run.trajectory_y[k]]
        lines.append(",".join(row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectory(path: str) -> dict:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    cols = {name: data[:, i] for i, name in enumerate(header)}
    n = sum(1 for c in header if c.startswith("x"))
    m = sum(1 for c in header if c.startswith("u"))
    return {
        "t": data[:, 0].astype(int),
        "x": data[:, 1 : 1 + n],
        "u": data[:, 1 + n : 1 + n + m],
        "y": data[:, 1 + n + m :],
        "columns": cols,
    }


def write_batches(run: ExplorationRun, path: str) -> None:
    rows = [
        {"N": r.n, "T_N": r.t_n, "winning": r.winning, "transitions": r.transitions}
        for r in run.records
    ]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_summary(run: ExplorationRun, path: str) -> None:
    cfg = dataclasses.asdict(run.config)
    summary = {
        "system": run.config.system,
        "seed": run.config.seed,
        "termination": run.termination,
        "batches": len(run.records) - 1,
        "samples": len(run.dataset),
        "lattice_points": run.state_lattice.size,
        "safe_states": len(run.safe_states),
        "inputs": run.input_lattice.size,
        "winning_final": len(run.controller.winning),
        "timings": [
            {
                "N": r.n,
                "t_abstract_ms": r.t_abstract_ms,
                "t_game_ms": r.t_game_ms,
                "recomputed": r.recomputed,
            }
            for r in run.records
        ],
        "config": cfg,
    }
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_run(run: ExplorationRun, out_dir: str) -> None:
    """Write the full artifact set for a completed run."""
    os.makedirs(out_dir, exist_ok=True)
    write_trajectory(run, os.path.join(out_dir, "trajectory.csv"))
    write_batches(run, os.path.join(out_dir, "batches.json"))
    write_summary(run, os.path.join(out_dir, "summary.json"))
    save_model(run.model, os.path.join(out_dir, "model.bin"))
    save_controller(run.controller, os.path.join(out_dir, "controller.bin"))
    if run.models:
        mdir = os.path.join(out_dir, "models")
        os.makedirs(mdir, exist_ok=True)
        for i, model in enumerate(run.models):
            save_model(model, os.path.join(mdir, f"model_{i}.bin"))


def read_summary(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def strict_safe_set(summary: dict) -> SafeSet:
    cfg = summary["config"]
    box = tuple(tuple(b) for b in cfg["strict_box"])
    excl = tuple((tuple(a), float(b)) for a, b in cfg["exclusions"])
    return SafeSet(box, excl)
