"""Figure rendering for run reports.

Every figure is produced from the delimited outputs written next to it, so
reports stay reproducible from the CSVs alone.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_csv(path):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return rows


def _col(rows, name, cast=float):
    return [cast(r[name]) for r in rows]


def plot_optimization_history(history_csv: str, out_png: str) -> str:
    rows = _read_csv(history_csv)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    levels = sorted({int(r["level"]) for r in rows})
    for lev in levels:
        sel = [r for r in rows if int(r["level"]) == lev]
        it = _col(sel, "iteration", int)
        axes[0].semilogy(it, _col(sel, "j"), marker="o", ms=3, label=f"level {lev}")
        axes[1].semilogy(it, _col(sel, "grad_norm"), marker="x", ms=3, label=f"level {lev}")
    axes[0].set_xlabel("optimization step")
    axes[0].set_ylabel("functional j(q)")
    axes[1].set_xlabel("optimization step")
    axes[1].set_ylabel("gradient norm")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=140)
    plt.close(fig)
    return out_png


def plot_control(control_csv: str, out_png: str) -> str:
    rows = _read_csv(control_csv)
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.step(_col(rows, "t"), _col(rows, "q"), where="pre")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("control pressure q [Pa]")
    fig.tight_layout()
    fig.savefig(out_png, dpi=140)
    plt.close(fig)
    return out_png


def plot_tracked_point(point_csv: str, out_png: str) -> str:
    rows = _read_csv(point_csv)
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.plot(_col(rows, "t"), _col(rows, "uy"), label="u_y(B, t)")
    if rows and "target" in rows[0]:
        ax.plot(_col(rows, "t"), _col(rows, "target"), "--", label="target")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("displacement [m]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=140)
    plt.close(fig)
    return out_png


def plot_solver_stats(summary_csv: str, out_png: str) -> str:
    rows = _read_csv(summary_csv)
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    lev = _col(rows, "level", int)
    for key, mark in (("mean_newton", "o"), ("mean_gmres_momentum", "s"),
                      ("mean_gmres_extension", "^"), ("mean_richardson", "x"),
                      ("dual_mean_gmres_momentum", "d")):
        if rows and key in rows[0] and rows[0][key] != "":
            ax.plot(lev, _col(rows, key), marker=mark, label=key.replace("_", " "))
    ax.set_xlabel("mesh level")
    ax.set_ylabel("mean iterations per time step / solve")
    ax.set_xticks(lev)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_png, dpi=140)
    plt.close(fig)
    return out_png


def render_forward_report(out_dir: str) -> list[str]:
    made = []
    summary = os.path.join(out_dir, "forward_summary.csv")
    if os.path.exists(summary):
        made.append(plot_solver_stats(summary, os.path.join(out_dir, "solver_stats.png")))
    for name in sorted(os.listdir(out_dir)):
        if name.startswith("point_level") and name.endswith(".csv"):
            png = os.path.join(out_dir, name[:-4] + ".png")
            made.append(plot_tracked_point(os.path.join(out_dir, name), png))
    return made


def render_optimize_report(out_dir: str) -> list[str]:
    made = []
    hist = os.path.join(out_dir, "history.csv")
    if os.path.exists(hist):
        made.append(plot_optimization_history(hist, os.path.join(out_dir, "history.png")))
    ctrl = os.path.join(out_dir, "control.csv")
    if os.path.exists(ctrl):
        made.append(plot_control(ctrl, os.path.join(out_dir, "control.png")))
    for name in sorted(os.listdir(out_dir)):
        if name.startswith("point_level") and name.endswith(".csv"):
            png = os.path.join(out_dir, name[:-4] + ".png")
            made.append(plot_tracked_point(os.path.join(out_dir, name), png))
    return made
