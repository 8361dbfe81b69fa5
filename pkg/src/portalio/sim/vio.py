"""Simulated external visual-inertial odometry stream.

The real system consumes relative poses from an external VIO estimator; the
simulator stands in for it by differencing the ground-truth trajectory
between keyframes and perturbing with seeded Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from portalio.geometry import Pose, Rotation, quat_exp, quat_mul
from portalio.sim.trajectory import Trajectory


@dataclass
class VioRecord:
    t_i: float
    t_j: float
    pose: Pose        # measured relative pose: inverse(P(t_i)) o P(t_j)
    cov: np.ndarray   # (6, 6) [translation, rotation] covariance


def relative_pose(traj: Trajectory, t_i: float, t_j: float) -> Pose:
    """Ground-truth relative pose between two times (identity when equal)."""
    return traj.pose(t_i).inverse() @ traj.pose(t_j)


def simulate_vio_stream(
    traj: Trajectory,
    keyframe_period: float = 0.5,
    trans_sigma: float = 0.01,
    rot_sigma_deg: float = 0.2,
    seed: int = 0,
) -> list[VioRecord]:
    """Relative-pose measurements between consecutive keyframes.

    measurement = inverse(P(t_i)) o P(t_j), perturbed by translation noise
    N(0, trans_sigma^2 I) and right-side rotation noise exp(N(0, rot_sigma^2 I)).
    Zero sigmas reproduce ground truth exactly; everything is seeded.
    """
    if keyframe_period <= 0:
        raise ValueError("keyframe period must be > 0")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x710]))
    rot_sigma = np.radians(rot_sigma_deg)
    cov = np.diag(
        np.concatenate([np.full(3, max(trans_sigma, 1e-6) ** 2), np.full(3, max(rot_sigma, 1e-6) ** 2)])
    )
    n_kf = int(np.floor(traj.duration / keyframe_period + 1e-9)) + 1
    times = np.arange(n_kf) * keyframe_period

    records = []
    for t_i, t_j in zip(times[:-1], times[1:]):
        rel = relative_pose(traj, float(t_i), float(t_j))
        t_noise = rng.normal(0.0, trans_sigma, 3) if trans_sigma > 0 else np.zeros(3)
        r_noise = rng.normal(0.0, rot_sigma, 3) if rot_sigma > 0 else np.zeros(3)
        noisy = Pose(
            Rotation(quat_mul(rel.rotation.q, quat_exp(r_noise)), _normalized=False),
            rel.translation + t_noise,
        )
        records.append(VioRecord(float(t_i), float(t_j), noisy, cov.copy()))
    return records
