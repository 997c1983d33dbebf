"""Deterministic static SVG charts of a run directory."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

SVG_RC = {"svg.fonttype": "none", "svg.hashsalt": "ntm", "path.simplify": False}


def read_trajectory_csv(path: Path):
    """Return ``(times, labels, tau)`` with ``tau`` shaped ``(T, h)``."""
    times, labels, values = [], [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t = float(row["time"])
            if not times or times[-1] != t:
                times.append(t)
            lab = row["region"]
            if lab not in values:
                labels.append(lab)
                values[lab] = []
            values[lab].append(float(row["tau"]))
    tau = np.array([values[lab] for lab in labels]).T
    return np.array(times), labels, tau


def _save(fig, path: Path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_run_directory(run_dir) -> list:
    """Write ``lines_all.svg``, ``lines_unseeded.svg`` and ``heatmap.svg``.

    The heatmap rows follow the arrival-rank order from ``staging.json``.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(run_dir)
    traj_path = run_dir / "trajectory.csv"
    staging_path = run_dir / "staging.json"
    for p in (traj_path, staging_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing run output {p}")
    times, labels, tau = read_trajectory_csv(traj_path)
    staging = json.loads(staging_path.read_text(encoding="utf-8"))
    seed = labels.index(staging["seed"])
    ranks = {r["label"]: r["rank"] for r in staging["regions"]}
    order = sorted(range(len(labels)), key=lambda i: ranks[labels[i]])

    written = []
    with plt.rc_context(SVG_RC):
        for name, keep in (("lines_all.svg", range(len(labels))),
                           ("lines_unseeded.svg", [i for i in range(len(labels)) if i != seed])):
            fig, ax = plt.subplots(figsize=(7, 4))
            for i in keep:
                ax.plot(times, tau[:, i], lw=1.0, label=labels[i])
            ax.set_xlabel("time (days)")
            ax.set_ylabel("total tau")
            if len(labels) <= 12:
                ax.legend(fontsize="small", ncol=2)
            fig.tight_layout()
            _save(fig, run_dir / name)
            plt.close(fig)
            written.append(name)

        fig, ax = plt.subplots(figsize=(7, max(2.5, 0.18 * len(labels) + 1)))
        im = ax.imshow(tau[:, order].T, aspect="auto", interpolation="nearest", origin="upper",
                       extent=(times[0], times[-1], len(labels) - 0.5, -0.5), cmap="viridis")
        ax.set_yticks(range(len(labels)))
        ax.set_yticklabels([labels[i] for i in order], fontsize="x-small")
        ax.set_xlabel("time (days)")
        ax.set_ylabel("region (arrival order)")
        fig.colorbar(im, ax=ax, label="total tau")
        fig.tight_layout()
        _save(fig, run_dir / "heatmap.svg")
        plt.close(fig)
        written.append("heatmap.svg")
    return written
