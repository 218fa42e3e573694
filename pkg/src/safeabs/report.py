"""Render run reports: a delimited per-batch table plus matplotlib figures."""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .artifacts import read_summary, read_trajectory


def write_report(out_dir: str) -> list:
    """Read the artifacts in ``out_dir`` and write ``report.csv`` plus PNG
    figures alongside them.  Returns the list of file paths written."""
    with open(os.path.join(out_dir, "batches.json")) as fh:
        batches = json.load(fh)
    summary = read_summary(os.path.join(out_dir, "summary.json"))
    traj = read_trajectory(os.path.join(out_dir, "trajectory.csv"))
    timings = {r["N"]: r for r in summary["timings"]}
    written = []

    report_path = os.path.join(out_dir, "report.csv")
    with open(report_path, "w") as fh:
        fh.write("N,T_N,winning,transitions,t_abstract_ms,t_game_ms\n")
        for row in batches:
            t = timings.get(row["N"], {})
            fh.write(
                f"{row['N']},{row['T_N']},{row['winning']},{row['transitions']},"
                f"{t.get('t_abstract_ms', float('nan')):.3f},"
                f"{t.get('t_game_ms', float('nan')):.3f}\n"
            )
    written.append(report_path)

    ns = [row["N"] for row in batches]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ns, [row["winning"] for row in batches], "o-")
    ax.set_xlabel("batch")
    ax.set_ylabel("winning states")
    ax.set_title(f"{summary['system']}: controlled invariant set growth")
    fig.tight_layout()
    p = os.path.join(out_dir, "winning.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    width = 0.4
    ax.bar([n - width / 2 for n in ns], [timings[n]["t_abstract_ms"] for n in ns],
           width, label="abstraction")
    ax.bar([n + width / 2 for n in ns], [timings[n]["t_game_ms"] for n in ns],
           width, label="safety game")
    ax.set_xlabel("batch")
    ax.set_ylabel("time [ms]")
    ax.legend()
    fig.tight_layout()
    p = os.path.join(out_dir, "timings.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    x = traj["x"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if x.shape[1] == 1:
        ax.plot(traj["t"], x[:, 0], lw=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("x1")
    else:
        ax.plot(x[:, -2], x[:, -1], lw=0.8)
        ax.scatter(x[0, -2], x[0, -1], marker="s", zorder=3)
        ax.set_xlabel(f"x{x.shape[1] - 1}")
        ax.set_ylabel(f"x{x.shape[1]}")
    ax.set_title("exploration trajectory")
    fig.tight_layout()
    p = os.path.join(out_dir, "trajectory.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)
    return written
