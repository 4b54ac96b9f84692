"""Matplotlib renderings of run reports (files only, no GUI)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def plot_trajectory(report, path):
    rows = [r for r in report.trajectory if r[-1] != "end"]
    fig, ax = plt.subplots(figsize=(8, 3.2))
    if rows:
        t = np.array([r[0] for r in rows])
        xy = np.array([[r[1], r[2]] for r in rows])
        kinds = np.array([r[-1] for r in rows])
        for kind, color in (("informative", "tab:orange"), ("conservative", "tab:blue"), ("baseline", "tab:gray")):
            m = kinds == kind
            if np.any(m):
                ax.scatter(xy[m, 0], xy[m, 1], s=2, color=color, label=kind)
        ax.plot(xy[0, 0], xy[0, 1], "k^", ms=6)
        del t
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{report.name} {report.mode} (seed {report.seed})")
    ax.legend(loc="best", fontsize=8, markerscale=4)
    ax.set_aspect("equal", adjustable="datalim")
    return _save(fig, path)


def plot_bounds(report, path):
    b = np.array(report.bounds, dtype=float)
    p = (b.shape[1] - 1) // 2
    fig, axes = plt.subplots(p, 1, figsize=(6, 2.4 * p), squeeze=False)
    for i in range(p):
        ax = axes[i, 0]
        ax.step(b[:, 0], b[:, 1 + i], where="post", color="tab:blue")
        ax.step(b[:, 0], b[:, 1 + p + i], where="post", color="tab:blue")
        ax.fill_between(b[:, 0], b[:, 1 + i], b[:, 1 + p + i], step="post", alpha=0.2)
        ax.set_ylabel(f"theta_{i}")
    axes[-1, 0].set_xlabel("t [s]")
    return _save(fig, path)


def plot_mc(reports, path):
    costs = [r.cost_percent for r in reports]
    red = np.array([r.width_reduction_percent for r in reports])
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
    a1.bar(range(len(costs)), costs, color="tab:blue")
    a1.axhline(100.0, color="k", lw=0.8)
    a1.axhline(100.0 * reports[0].budget / reports[0].baseline_cost, color="tab:red", lw=0.8, ls="--")
    a1.set_xlabel("run")
    a1.set_ylabel("cost [% of baseline]")
    a2.boxplot([red[:, i] for i in range(red.shape[1])])
    a2.set_ylabel("width reduction [%]")
    return _save(fig, path)
