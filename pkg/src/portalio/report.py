"""Evaluation report rendering: figures plus delimited error tables.

Renders matplotlib figures to files next to a CSV of the per-pose errors so
a run can be inspected without re-running anything.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from portalio.evaluate import AteReport, associate, umeyama_alignment


def _aligned_positions(est_times, est_poses, gt_times, gt_poses, align: str):
    ia, ib = associate(np.asarray(est_times), np.asarray(gt_times))
    est = np.stack([est_poses[k].translation for k in ia])
    gt = np.stack([gt_poses[k].translation for k in ib])
    if align in ("se3-umeyama", "umeyama"):
        t = umeyama_alignment(est, gt)
        est = est @ t.rotation.matrix.T + t.translation
    return np.asarray(est_times)[ia], est, gt


def write_error_csv(path, times, est, gt) -> None:
    err = est - gt
    with open(path, "w", newline="", encoding="ascii") as f:
        w = csv.writer(f)
        w.writerow(["t", "ex", "ey", "ez", "norm"])
        for t, e in zip(times, err):
            w.writerow([f"{t:.6f}", f"{e[0]:.6f}", f"{e[1]:.6f}", f"{e[2]:.6f}",
                        f"{np.linalg.norm(e):.6f}"])


def plot_trajectory_topdown(path, times, est, gt) -> None:
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(gt[:, 0], gt[:, 1], "k-", lw=1.2, label="ground truth")
    ax.plot(est[:, 0], est[:, 1], "-", color="tab:blue", lw=1.0, label="estimate")
    ax.plot(gt[0, 0], gt[0, 1], "go", ms=6, label="start")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_error_over_time(path, times, est, gt) -> None:
    err = np.linalg.norm(est - gt, axis=1)
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(times, err, lw=0.9, color="tab:red")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("position error [m]")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_diagnostics(path, diag_lines: list[dict]) -> None:
    """Matched-point count and degeneracy metric over a session."""
    rows = [d for d in diag_lines if "matched" in d]
    if not rows:
        return
    t = np.array([d["t"] for d in rows])
    matched = np.array([d["matched"] for d in rows])
    min_eig = np.array([max(d["min_eig"], 1e-12) for d in rows])
    degen = np.array([bool(d["degenerate"]) for d in rows])

    fig, axes = plt.subplots(2, 1, figsize=(7, 4.5), sharex=True)
    axes[0].plot(t, matched, lw=0.9)
    axes[0].set_ylabel("matched points")
    axes[1].semilogy(t, min_eig, lw=0.9)
    axes[1].set_ylabel("min eigenvalue")
    axes[1].set_xlabel("time [s]")
    for ax in axes:
        ax.grid(alpha=0.3)
        for t0, t1 in _spans(t, degen):
            ax.axvspan(t0, t1, color="tab:red", alpha=0.15)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _spans(t, flags):
    spans = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = t[i]
        elif not f and start is not None:
            spans.append((start, t[i]))
            start = None
    if start is not None:
        spans.append((start, t[-1]))
    return spans


def render_eval_report(
    out_dir,
    est_times,
    est_poses,
    gt_times,
    gt_poses,
    report: AteReport,
    align: str = "se3-umeyama",
    prefix: str = "",
) -> list[Path]:
    """Write figures + error CSV for one trajectory comparison."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    times, est, gt = _aligned_positions(est_times, est_poses, gt_times, gt_poses, align)
    files = []
    p = out / f"{prefix}errors.csv"
    write_error_csv(p, times, est, gt)
    files.append(p)
    p = out / f"{prefix}trajectory_topdown.png"
    plot_trajectory_topdown(p, times, est, gt)
    files.append(p)
    p = out / f"{prefix}error_over_time.png"
    plot_error_over_time(p, times, est, gt)
    files.append(p)
    return files
