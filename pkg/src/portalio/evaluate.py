"""Trajectory metrics: time association, rigid alignment, ATE and RPE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from portalio.geometry import Pose, Rotation, quat_log, quat_mul, quat_conj

ASSOCIATION_WINDOW = 0.010  # seconds


class EvaluationError(ValueError):
    """Trajectories cannot be compared (too few poses or associations)."""


def associate(times_a: np.ndarray, times_b: np.ndarray, window: float = ASSOCIATION_WINDOW):
    """Nearest-neighbor timestamp association within a window.

    Returns (idx_a, idx_b) index arrays of matched pairs; each pose of `a`
    matches at most one pose of `b`.
    """
    times_a = np.asarray(times_a, dtype=float)
    times_b = np.asarray(times_b, dtype=float)
    if len(times_a) == 0 or len(times_b) == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    pos = np.searchsorted(times_b, times_a)
    lo = np.clip(pos - 1, 0, len(times_b) - 1)
    hi = np.clip(pos, 0, len(times_b) - 1)
    pick = np.where(
        np.abs(times_b[hi] - times_a) < np.abs(times_b[lo] - times_a), hi, lo
    )
    ok = np.abs(times_b[pick] - times_a) <= window
    return np.flatnonzero(ok), pick[ok]


def umeyama_alignment(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Closed-form least-squares rigid transform T with T(src) ~= dst (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.shape[0] < 2:
        raise EvaluationError("alignment needs >= 2 corresponding points")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s) / src.shape[0]
    u, _, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rot = u @ s @ vt
    trans = mu_d - rot @ mu_s
    return Pose(Rotation.from_matrix(rot), trans)


@dataclass
class AteReport:
    """Absolute trajectory error statistics plus 1-second relative errors."""

    rmse: float
    mean: float
    median: float
    max: float
    per_axis_rmse: tuple[float, float, float]
    rpe_trans: float      # RMSE of translational error over ~1 s deltas, m
    rpe_rot_deg: float    # RMSE of rotational error over ~1 s deltas, deg
    n_pairs: int

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mean": self.mean,
            "median": self.median,
            "max": self.max,
            "per_axis_rmse": list(self.per_axis_rmse),
            "rpe_trans": self.rpe_trans,
            "rpe_rot_deg": self.rpe_rot_deg,
            "n_pairs": self.n_pairs,
        }


def _rpe(times, est_pos, est_quat, gt_pos, gt_quat, delta: float = 1.0):
    """Relative pose error over ~delta-second intervals."""
    j = np.searchsorted(times, times + delta)
    valid = j < len(times)
    i = np.flatnonzero(valid)
    j = j[valid]
    close = np.abs(times[j] - (times[i] + delta)) <= 0.5 * delta
    i, j = i[close], j[close]
    if len(i) == 0:
        return float("nan"), float("nan")
    # relative translations expressed in the earlier frame of each track
    def rel(pos, quat):
        q_rel = quat_mul(quat_conj(quat[i]), quat[j])
        dp = pos[j] - pos[i]
        return q_rel, dp

    q_rel_e, dp_e = rel(est_pos, est_quat)
    q_rel_g, dp_g = rel(gt_pos, gt_quat)
    dt_err = np.linalg.norm(dp_e - dp_g, axis=1)
    ang = np.linalg.norm(quat_log(quat_mul(quat_conj(q_rel_g), q_rel_e)), axis=1)
    return float(np.sqrt(np.mean(dt_err**2))), float(np.degrees(np.sqrt(np.mean(ang**2))))


def compute_ate(
    est_times: np.ndarray,
    est_poses: list[Pose],
    gt_times: np.ndarray,
    gt_poses: list[Pose],
    align: str = "se3-umeyama",
) -> AteReport:
    """Trajectory error of an estimate against ground truth.

    align: "none" or "se3-umeyama" (closed-form rigid alignment, no scale,
    applied before the error computation).
    """
    if align not in ("none", "se3-umeyama", "umeyama"):
        raise EvaluationError(f"unknown alignment {align!r}")
    if len(est_poses) < 2 or len(gt_poses) < 2:
        raise EvaluationError("need >= 2 poses in each trajectory")
    ia, ib = associate(np.asarray(est_times), np.asarray(gt_times))
    if len(ia) < 2:
        raise EvaluationError(f"only {len(ia)} associations within the time window")

    est_pos = np.stack([est_poses[k].translation for k in ia])
    gt_pos = np.stack([gt_poses[k].translation for k in ib])
    est_quat = np.stack([est_poses[k].rotation.q for k in ia])
    gt_quat = np.stack([gt_poses[k].rotation.q for k in ib])
    times = np.asarray(est_times)[ia]

    if align in ("se3-umeyama", "umeyama"):
        t_align = umeyama_alignment(est_pos, gt_pos)
        rot = t_align.rotation.matrix
        est_pos = est_pos @ rot.T + t_align.translation
        est_quat = quat_mul(np.broadcast_to(t_align.rotation.q, est_quat.shape), est_quat)

    err = est_pos - gt_pos
    norms = np.linalg.norm(err, axis=1)
    rpe_t, rpe_r = _rpe(times, est_pos, est_quat, gt_pos, gt_quat)
    return AteReport(
        rmse=float(np.sqrt(np.mean(norms**2))),
        mean=float(np.mean(norms)),
        median=float(np.median(norms)),
        max=float(np.max(norms)),
        per_axis_rmse=tuple(np.sqrt(np.mean(err**2, axis=0)).tolist()),
        rpe_trans=rpe_t,
        rpe_rot_deg=rpe_r,
        n_pairs=int(len(ia)),
    )


def final_drift(est_times, est_poses, gt_times, gt_poses) -> tuple[float, float]:
    """Endpoint position error and the ground-truth path length (drift metric)."""
    ia, ib = associate(np.asarray(est_times), np.asarray(gt_times))
    if len(ia) < 2:
        raise EvaluationError("too few associations")
    gt_pos = np.stack([gt_poses[k].translation for k in ib])
    path_len = float(np.sum(np.linalg.norm(np.diff(gt_pos, axis=0), axis=1)))
    end_err = float(
        np.linalg.norm(est_poses[ia[-1]].translation - gt_poses[ib[-1]].translation)
    )
    return end_err, path_len
