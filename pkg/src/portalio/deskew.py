"""Scan motion compensation from IMU-propagated incremental poses.

`propagate_imu` runs discrete strapdown integration from a filter state over
an IMU window and records the pose track; `deskew_scan` maps every point of
a scan into the scan-end sensor frame using that track. Depth-camera frames
whose points share one timestamp pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from portalio.geometry import (
    quat_conj,
    quat_exp,
    quat_mul,
    quat_rotate,
    quat_slerp,
)
from portalio.sim.imu import ImuBatch


class CoverageError(RuntimeError):
    """IMU samples do not cover the requested interval densely enough."""


def strapdown_step(p, v, q, gyro, accel, bg, ba, g_world, dt):
    """One discrete strapdown step; rotation applied with the pre-step attitude.

    p <- p + v dt + 0.5 (R a + g) dt^2
    v <- v + (R a + g) dt
    q <- q * exp((gyro - bg) dt)
    """
    a_world = quat_rotate(q, accel - ba) + g_world
    p_new = p + v * dt + 0.5 * a_world * dt * dt
    v_new = v + a_world * dt
    q_new = quat_mul(q, quat_exp((gyro - bg) * dt))
    return p_new, v_new, q_new, a_world


@dataclass
class PropagatedSegment:
    """Strapdown pose track over a scan interval (strictly increasing times)."""

    times: np.ndarray      # (N,)
    positions: np.ndarray  # (N, 3)
    quats: np.ndarray      # (N, 4)
    velocities: np.ndarray  # (N, 3)

    def covers(self, t0: float, t1: float, slack: float = 1e-9) -> bool:
        return self.times[0] <= t0 + slack and self.times[-1] >= t1 - slack

    def pose_arrays_at(self, ts: np.ndarray):
        """Interpolated (positions, quats) at query times inside the track."""
        ts = np.asarray(ts, dtype=float)
        tq = np.clip(ts, self.times[0], self.times[-1])
        hi = np.clip(np.searchsorted(self.times, tq, side="right"), 1, len(self.times) - 1)
        lo = hi - 1
        t_lo, t_hi = self.times[lo], self.times[hi]
        u = (tq - t_lo) / np.maximum(t_hi - t_lo, 1e-15)
        pos = (1.0 - u)[:, None] * self.positions[lo] + u[:, None] * self.positions[hi]
        quat = quat_slerp(self.quats[lo], self.quats[hi], u)
        return pos, quat


def propagate_imu(state, imu: ImuBatch, max_gap_factor: float = 2.0) -> PropagatedSegment:
    """Integrate an IMU window starting from a filter state.

    `state` provides t, p, q, v, bg, ba and the world gravity vector g.
    Samples must be sorted and start at/after state.t; a gap exceeding
    max_gap_factor times the nominal period raises CoverageError.
    """
    n = len(imu)
    times = np.empty(n + 1)
    positions = np.empty((n + 1, 3))
    quats = np.empty((n + 1, 4))
    velocities = np.empty((n + 1, 3))
    times[0] = state.t
    positions[0] = state.p
    quats[0] = state.q
    velocities[0] = state.v

    if n:
        if np.any(np.diff(imu.t) <= 0):
            raise ValueError("IMU timestamps must be strictly increasing")
        nominal = imu.nominal_period()
        if nominal > 0:
            gaps = np.diff(np.concatenate([[state.t], imu.t]))
            if np.any(gaps > max_gap_factor * nominal + 1e-12):
                raise CoverageError(
                    f"IMU gap {gaps.max():.4f}s exceeds {max_gap_factor}x nominal period {nominal:.4f}s"
                )

    p, v, q = state.p.copy(), state.v.copy(), np.array(state.q, dtype=float)
    t_prev = state.t
    for k in range(n):
        dt = imu.t[k] - t_prev
        if dt > 0:
            p, v, q, _ = strapdown_step(p, v, q, imu.gyro[k], imu.accel[k], state.bg, state.ba, state.g, dt)
        t_prev = imu.t[k]
        times[k + 1] = t_prev
        positions[k + 1] = p
        quats[k + 1] = q
        velocities[k + 1] = v

    keep = np.concatenate([[True], np.diff(times) > 0])
    return PropagatedSegment(times[keep], positions[keep], quats[keep], velocities[keep])


def segment_from_trajectory(traj, t0: float, t1: float, rate_hz: float = 200.0) -> PropagatedSegment:
    """Ground-truth pose track sampled from a trajectory (tests, oracles)."""
    n = max(2, int(np.ceil((t1 - t0) * rate_hz)) + 1)
    ts = np.linspace(t0, t1, n)
    pos, quat = traj.poses(ts)
    vel = traj.velocity_world(ts)
    return PropagatedSegment(ts, pos, quat, vel)


def deskew_scan(scan, segment: PropagatedSegment) -> np.ndarray:
    """Map scan points into the scan-end sensor frame.

    Each point captured at time t is transformed by inverse(P(t_end)) o P(t).
    Scans whose point timestamps are all equal (depth-camera frames) are
    returned unchanged.
    """
    pts = np.asarray(scan.points, dtype=float)
    if len(pts) == 0:
        return pts.copy()
    times = np.asarray(scan.times, dtype=float)
    # depth-camera frames: one shared capture instant, already in end frame
    if scan.t0 == scan.t1 and np.all(times == scan.t1):
        return pts.copy()
    if not segment.covers(scan.t0, scan.t1):
        raise CoverageError(
            f"segment [{segment.times[0]:.4f}, {segment.times[-1]:.4f}] does not cover "
            f"scan [{scan.t0:.4f}, {scan.t1:.4f}]"
        )

    pos_t, quat_t = segment.pose_arrays_at(times)
    pos_end, quat_end = segment.pose_arrays_at(np.array([scan.t1]))
    q_end_inv = quat_conj(quat_end[0])
    q_rel = quat_mul(q_end_inv[None, :], quat_t)
    t_rel = quat_rotate(q_end_inv[None, :], pos_t - pos_end[0])
    return quat_rotate(q_rel, pts) + t_rel
