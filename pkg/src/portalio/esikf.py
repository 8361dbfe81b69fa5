"""Error-state iterated Kalman filter for LiDAR-inertial(-relative-pose) odometry.

State: position, attitude quaternion, velocity, gyro bias, accel bias and the
world gravity vector, with an 18x18 error covariance ordered
[dp, dtheta, dv, dbg, dba, dg]. The attitude error is right-multiplicative:
R_true = R_nominal * exp(dtheta).

The LiDAR update is an iterated Gauss-Newton-in-Kalman-form step over
point-to-plane residuals against the shared voxel map; the relative-pose
update consumes measurements from an external odometry source between
keyframe times, treating the stored earlier pose as fixed (loose coupling).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from portalio.deskew import PropagatedSegment, propagate_imu, strapdown_step
from portalio.geometry import (
    Pose,
    Rotation,
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    quat_to_matrix,
    skew,
    so3_right_jacobian,
)
from portalio.sim.imu import ImuBatch
from portalio.voxel_map import VoxelMap, associate_planes, robust_gate

STATE_DIM = 18
DP, DTH, DV, DBG, DBA, DG = 0, 3, 6, 9, 12, 15


@dataclass
class FilterState:
    """Nominal state + error covariance at time t."""

    t: float
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    bg: np.ndarray
    ba: np.ndarray
    g: np.ndarray
    P: np.ndarray

    @property
    def rotation(self) -> Rotation:
        return Rotation(self.q.copy())

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.p.copy())

    def copy(self) -> "FilterState":
        return FilterState(
            self.t, self.p.copy(), self.q.copy(), self.v.copy(),
            self.bg.copy(), self.ba.copy(), self.g.copy(), self.P.copy(),
        )

    def retract(self, dx: np.ndarray) -> "FilterState":
        """Apply an 18-dim error vector (right attitude perturbation)."""
        return FilterState(
            self.t,
            self.p + dx[DP : DP + 3],
            quat_mul(self.q, quat_exp(dx[DTH : DTH + 3])),
            self.v + dx[DV : DV + 3],
            self.bg + dx[DBG : DBG + 3],
            self.ba + dx[DBA : DBA + 3],
            self.g + dx[DG : DG + 3],
            self.P.copy(),
        )

    def error_from(self, other: "FilterState") -> np.ndarray:
        """Error vector e with self = other.retract(e) (to first order)."""
        e = np.empty(STATE_DIM)
        e[DP : DP + 3] = self.p - other.p
        e[DTH : DTH + 3] = quat_log(quat_mul(quat_conj(other.q), self.q))
        e[DV : DV + 3] = self.v - other.v
        e[DBG : DBG + 3] = self.bg - other.bg
        e[DBA : DBA + 3] = self.ba - other.ba
        e[DG : DG + 3] = self.g - other.g
        return e


def make_initial_state(
    t: float,
    pose: Pose,
    velocity=(0.0, 0.0, 0.0),
    gravity=(0.0, 0.0, -9.81),
    pos_std: float = 0.01,
    rot_std: float = 0.01,
    vel_std: float = 0.05,
    gyro_bias_std: float = 0.01,
    accel_bias_std: float = 0.05,
    gravity_std: float = 0.05,
) -> FilterState:
    P = np.diag(
        np.concatenate(
            [
                np.full(3, pos_std**2),
                np.full(3, rot_std**2),
                np.full(3, vel_std**2),
                np.full(3, gyro_bias_std**2),
                np.full(3, accel_bias_std**2),
                np.full(3, gravity_std**2),
            ]
        )
    )
    return FilterState(
        t=float(t),
        p=np.asarray(pose.translation, dtype=float).copy(),
        q=pose.rotation.q.copy(),
        v=np.asarray(velocity, dtype=float).copy(),
        bg=np.zeros(3),
        ba=np.zeros(3),
        g=np.asarray(gravity, dtype=float).copy(),
        P=P,
    )


@dataclass(frozen=True)
class ProcessNoise:
    """Continuous-time IMU noise densities driving covariance growth."""

    gyro_noise: float = 2.0e-4
    accel_noise: float = 2.0e-3
    gyro_bias_walk: float = 1.0e-5
    accel_bias_walk: float = 1.0e-4


@dataclass(frozen=True)
class LidarUpdateConfig:
    meas_sigma: float = 0.02        # per-point range noise, meters
    max_iterations: int = 5
    step_tolerance: float = 1e-6
    outlier_gate: float = 0.5       # reject |residual| above this before stacking
    knn: int = 12                   # neighbors per plane fit; >5 averages range noise
    search_radius: float = 0.5
    plane_rms_threshold: float = 0.1
    min_matches: int = 10
    degeneracy_min_eig: float = 10.0  # on the 6x6 pose block of H^T H


@dataclass
class UpdateReport:
    """Per-scan diagnostics serialized to the JSONL log."""

    t: float
    matched: int
    rms: float
    min_eig: float
    iterations: int
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "matched": self.matched,
            "rms": self.rms,
            "min_eig": self.min_eig,
            "iterations": self.iterations,
            "degenerate": self.degenerate,
        }


@dataclass
class RelPoseResidual:
    """External relative-pose measurement between keyframe times t_i < t_j."""

    t_i: float
    t_j: float
    measured: Pose
    cov: np.ndarray            # (6, 6), [translation, rotation]
    stored_pose_i: Pose        # filter pose recorded when t_i passed

    def __post_init__(self):
        if not self.t_i < self.t_j:
            raise ValueError("relative-pose residual requires t_i < t_j")


def predict(state: FilterState, imu: ImuBatch, noise: ProcessNoise):
    """Propagate nominal state and covariance through an IMU window.

    Returns the advanced state and the strapdown pose track (reused for
    deskewing the scan that ends this window).
    """
    if len(imu) and np.any(np.diff(imu.t) <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")
    if len(imu) and imu.t[0] < state.t - 1e-9:
        raise ValueError("IMU window starts before the filter state time")

    segment = propagate_imu(state, imu)

    P = state.P.copy()
    p, v, q = state.p.copy(), state.v.copy(), state.q.copy()
    t_prev = state.t
    sg2, sa2 = noise.gyro_noise**2, noise.accel_noise**2
    swg2, swa2 = noise.gyro_bias_walk**2, noise.accel_bias_walk**2

    for k in range(len(imu)):
        dt = imu.t[k] - t_prev
        t_prev = imu.t[k]
        if dt <= 0:
            continue
        w = imu.gyro[k] - state.bg
        a = imu.accel[k] - state.ba
        R = quat_to_matrix(q)
        Ra_skew = R @ skew(a)
        jr = so3_right_jacobian(w * dt)

        F = np.eye(STATE_DIM)
        F[DP : DP + 3, DTH : DTH + 3] = -0.5 * Ra_skew * dt * dt
        F[DP : DP + 3, DV : DV + 3] = np.eye(3) * dt
        F[DP : DP + 3, DBA : DBA + 3] = -0.5 * R * dt * dt
        F[DP : DP + 3, DG : DG + 3] = 0.5 * np.eye(3) * dt * dt
        F[DTH : DTH + 3, DTH : DTH + 3] = quat_to_matrix(quat_exp(w * dt)).T
        F[DTH : DTH + 3, DBG : DBG + 3] = -jr * dt
        F[DV : DV + 3, DTH : DTH + 3] = -Ra_skew * dt
        F[DV : DV + 3, DBA : DBA + 3] = -R * dt
        F[DV : DV + 3, DG : DG + 3] = np.eye(3) * dt

        Q = np.zeros((STATE_DIM, STATE_DIM))
        Q[DTH : DTH + 3, DTH : DTH + 3] = sg2 * dt * (jr @ jr.T)
        Q[DV : DV + 3, DV : DV + 3] = sa2 * dt * np.eye(3)
        Q[DP : DP + 3, DP : DP + 3] = 0.25 * sa2 * dt**3 * np.eye(3)
        Q[DP : DP + 3, DV : DV + 3] = 0.5 * sa2 * dt**2 * np.eye(3)
        Q[DV : DV + 3, DP : DP + 3] = 0.5 * sa2 * dt**2 * np.eye(3)
        Q[DBG : DBG + 3, DBG : DBG + 3] = swg2 * dt * np.eye(3)
        Q[DBA : DBA + 3, DBA : DBA + 3] = swa2 * dt * np.eye(3)

        P = F @ P @ F.T + Q
        p, v, q, _ = strapdown_step(p, v, q, imu.gyro[k], imu.accel[k], state.bg, state.ba, state.g, dt)

    P = 0.5 * (P + P.T)
    new_state = FilterState(
        t=float(imu.t[-1]) if len(imu) else state.t,
        p=p, q=q, v=v,
        bg=state.bg.copy(), ba=state.ba.copy(), g=state.g.copy(), P=P,
    )
    return new_state, segment


def _pose_jacobian_rows(points_sensor: np.ndarray, normals: np.ndarray, R: np.ndarray):
    """Rows of the point-to-plane Jacobian over [dp, dtheta].

    residual r = n . (R exp(dtheta) p + t + dp) + d
    dr/dp  = n
    dr/dth = cross(p, R^T n)
    """
    n_body = normals @ R  # row-vectors n^T R == (R^T n)^T
    h = np.empty((len(points_sensor), 6))
    h[:, 0:3] = normals
    h[:, 3:6] = np.cross(points_sensor, n_body)
    return h


def update_lidar(
    state: FilterState,
    points_sensor: np.ndarray,
    vmap: VoxelMap,
    cfg: LidarUpdateConfig = LidarUpdateConfig(),
):
    """Iterated point-to-plane update of the pose against the voxel map.

    Degenerate scans (too few matches, or the pose information matrix has a
    near-null direction) leave the state bit-identical and only produce a
    flagged report.
    """
    pts = np.asarray(points_sensor, dtype=float).reshape(-1, 3)
    x_pred = state
    x = state
    sigma2 = cfg.meas_sigma**2

    P_inv = np.linalg.inv(0.5 * (state.P + state.P.T))

    report = UpdateReport(
        t=state.t, matched=0, rms=float("nan"), min_eig=0.0, iterations=0, degenerate=True
    )
    last = None  # final-iteration (H, valid rows) for the covariance update

    for it in range(cfg.max_iterations):
        R = quat_to_matrix(x.q)
        pts_w = pts @ R.T + x.p
        assoc = associate_planes(
            vmap, pts_w,
            k=cfg.knn, max_radius=cfg.search_radius,
            rms_threshold=cfg.plane_rms_threshold,
        )
        resid = assoc.residuals(pts_w)
        abs_r = np.abs(resid)
        gate = robust_gate(abs_r[assoc.valid], cfg.outlier_gate)
        valid = assoc.valid & (abs_r <= gate)
        m = int(valid.sum())
        report.iterations = it + 1
        report.matched = m
        if m < cfg.min_matches:
            report.degenerate = True
            return state, report

        h6 = _pose_jacobian_rows(pts[valid], assoc.normals[valid], R)
        r = resid[valid]
        info6 = h6.T @ h6
        eigvals = np.linalg.eigvalsh(0.5 * (info6 + info6.T))
        report.min_eig = float(eigvals[0])
        report.rms = float(np.sqrt(np.mean(r**2)))
        if eigvals[0] < cfg.degeneracy_min_eig:
            report.degenerate = True
            return state, report

        S = P_inv.copy()
        S[:6, :6] += info6 / sigma2
        b = np.zeros(STATE_DIM)
        b[:6] = h6.T @ r / sigma2
        e = x.error_from(x_pred)
        dx = -np.linalg.solve(S, b + P_inv @ e)
        x = x.retract(dx)
        last = (pts[valid], assoc.normals[valid])
        if np.linalg.norm(dx) < cfg.step_tolerance:
            break

    report.degenerate = False
    # covariance evaluated at the final linearization point
    pts_valid, normals_valid = last
    h6 = _pose_jacobian_rows(pts_valid, normals_valid, quat_to_matrix(x.q))
    info = np.zeros((STATE_DIM, STATE_DIM))
    info[:6, :6] = h6.T @ h6 / sigma2
    P_new = np.linalg.inv(P_inv + info)
    P_new = 0.5 * (P_new + P_new.T)
    x = FilterState(x.t, x.p, x.q, x.v, x.bg, x.ba, x.g, P_new)
    return x, report


def update_relpose(state: FilterState, residual: RelPoseResidual) -> FilterState:
    """EKF update from an external relative-pose measurement (loose coupling).

    The stored pose at t_i is held fixed; the innovation compares the
    measured relative pose with the one predicted from the current state.
    """
    R_i = residual.stored_pose_i.rotation.matrix
    p_i = residual.stored_pose_i.translation
    R_j = quat_to_matrix(state.q)

    pred_t = R_i.T @ (state.p - p_i)
    pred_R = R_i.T @ R_j
    meas_R = residual.measured.rotation.matrix

    y = np.empty(6)
    y[0:3] = residual.measured.translation - pred_t
    y[3:6] = quat_log(Rotation.from_matrix(pred_R.T @ meas_R).q)

    H = np.zeros((6, STATE_DIM))
    H[0:3, DP : DP + 3] = R_i.T
    H[3:6, DTH : DTH + 3] = np.eye(3)

    P = 0.5 * (state.P + state.P.T)
    S = H @ P @ H.T + residual.cov
    K = P @ H.T @ np.linalg.inv(S)
    dx = K @ y
    new = state.retract(dx)
    ikh = np.eye(STATE_DIM) - K @ H
    P_new = ikh @ P @ ikh.T + K @ residual.cov @ K.T
    new.P = 0.5 * (P_new + P_new.T)
    new.t = state.t
    return new
