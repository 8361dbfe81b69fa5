import numpy as np
import pytest

from portalio.esikf import (
    DBA, DBG, DG, DP, DTH, DV,
    FilterState,
    LidarUpdateConfig,
    ProcessNoise,
    RelPoseResidual,
    UpdateReport,
    _pose_jacobian_rows,
    make_initial_state,
    predict,
    update_lidar,
    update_relpose,
)
from portalio.geometry import Pose, Rotation, quat_rotate, quat_to_matrix, so3_exp
from portalio.sim.imu import ImuBatch
from portalio.voxel_map import VoxelMap


def stationary_imu(t0=0.0, duration=1.0, rate=200.0):
    n = int(duration * rate)
    t = t0 + (np.arange(n) + 1) / rate
    return ImuBatch(t, np.zeros((n, 3)), np.tile([0.0, 0.0, 9.81], (n, 1)))


def corner_map(rng, n_per_wall=4000, extent=6.0):
    """Three mutually perpendicular planes meeting at a corner."""
    m = VoxelMap(voxel_size=0.5, capacity=64, min_dist=0.02)
    u = rng.uniform(0, extent, (n_per_wall, 2))
    m.insert(np.column_stack([u[:, 0], u[:, 1], np.zeros(n_per_wall)]))        # floor z=0
    u = rng.uniform(0, extent, (n_per_wall, 2))
    m.insert(np.column_stack([np.zeros(n_per_wall), u[:, 0], u[:, 1] / 2]))    # wall x=0
    u = rng.uniform(0, extent, (n_per_wall, 2))
    m.insert(np.column_stack([u[:, 0], np.zeros(n_per_wall), u[:, 1] / 2]))    # wall y=0
    return m


def sample_corner_surface(rng, n=600, extent=5.0):
    """Points on the three corner planes (world frame)."""
    k = n // 3
    floor = np.column_stack([rng.uniform(0.5, extent, k), rng.uniform(0.5, extent, k), np.zeros(k)])
    wx = np.column_stack([np.zeros(k), rng.uniform(0.5, extent, k), rng.uniform(0.2, 2.5, k)])
    wy = np.column_stack([rng.uniform(0.5, extent, k), np.zeros(k), rng.uniform(0.2, 2.5, k)])
    return np.concatenate([floor, wx, wy])


class TestPredict:
    def test_zero_noise_stationary_keeps_state_and_covariance(self):
        state = make_initial_state(0.0, Pose.identity())
        state.P[:] = 0.0
        new, seg = predict(state, stationary_imu(), ProcessNoise(0, 0, 0, 0))
        assert np.allclose(new.p, 0.0, atol=1e-9)
        assert np.allclose(new.v, 0.0, atol=1e-9)
        assert np.allclose(new.q, [1, 0, 0, 0], atol=1e-9)
        assert np.allclose(new.P, 0.0, atol=1e-15)
        assert seg.covers(0.0, 1.0)

    def test_gyro_noise_grows_trace(self):
        state = make_initial_state(0.0, Pose.identity())
        tr0 = np.trace(state.P)
        new, _ = predict(state, stationary_imu(), ProcessNoise(1e-3, 0, 0, 0))
        assert np.trace(new.P) > tr0

    def test_matches_textbook_scalar_kf(self):
        # 1-D position/velocity reduction along x with white-accel process noise
        sigma_a = 0.05
        p_var, v_var, pv_cov = 0.3, 0.2, 0.05
        state = make_initial_state(0.0, Pose.identity())
        state.P[:] = 0.0
        state.P[DP, DP] = p_var
        state.P[DV, DV] = v_var
        state.P[DP, DV] = state.P[DV, DP] = pv_cov
        imu = stationary_imu(duration=0.1, rate=100 / 0.5)  # few coarse steps
        imu = ImuBatch(np.array([0.25, 0.5]), np.zeros((2, 3)), np.tile([0, 0, 9.81], (2, 1)))
        new, _ = predict(state, imu, ProcessNoise(0.0, sigma_a, 0.0, 0.0))

        P = np.array([[p_var, pv_cov], [pv_cov, v_var]])
        for dt in (0.25, 0.25):
            F = np.array([[1.0, dt], [0.0, 1.0]])
            Q = sigma_a**2 * np.array(
                [[0.25 * dt**3, 0.5 * dt**2], [0.5 * dt**2, dt]]
            )
            P = F @ P @ F.T + Q
        assert np.isclose(new.P[DP, DP], P[0, 0], atol=1e-14)
        assert np.isclose(new.P[DP, DV], P[0, 1], atol=1e-14)
        assert np.isclose(new.P[DV, DV], P[1, 1], atol=1e-14)

    def test_covariance_symmetric(self):
        state = make_initial_state(0.0, Pose.identity())
        rng = np.random.default_rng(0)
        imu = stationary_imu()
        imu.gyro[:] = rng.normal(0, 0.2, imu.gyro.shape)
        new, _ = predict(state, imu, ProcessNoise())
        assert np.max(np.abs(new.P - new.P.T)) < 1e-9

    def test_non_monotonic_rejected(self):
        state = make_initial_state(0.0, Pose.identity())
        imu = ImuBatch(np.array([0.2, 0.1]), np.zeros((2, 3)), np.zeros((2, 3)))
        with pytest.raises(ValueError):
            predict(state, imu, ProcessNoise())


class TestJacobian:
    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(7)
        eps = 1e-6
        for _ in range(100):
            q = so3_exp(rng.normal(0, 0.6, 3)).q
            t = rng.normal(0, 2.0, 3)
            pts = rng.normal(0, 3.0, (4, 3))
            normals = rng.normal(size=(4, 3))
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
            d = rng.normal(0, 1.0, 4)
            R = quat_to_matrix(q)

            h = _pose_jacobian_rows(pts, normals, R)

            def residuals(dx):
                pose_q = Rotation(q).compose(so3_exp(dx[3:6])).q
                pw = pts @ quat_to_matrix(pose_q).T + t + dx[0:3]
                return np.einsum("ij,ij->i", normals, pw) + d

            h_fd = np.empty_like(h)
            for col in range(6):
                dp = np.zeros(6)
                dp[col] = eps
                h_fd[:, col] = (residuals(dp) - residuals(-dp)) / (2 * eps)
            scale = max(1.0, np.abs(h_fd).max())
            assert np.max(np.abs(h - h_fd)) / scale < 1e-5


class TestUpdateLidar:
    def test_fixed_point_at_ground_truth(self):
        rng = np.random.default_rng(1)
        vmap = corner_map(rng)
        truth = Pose(so3_exp([0.05, -0.1, 0.3]), np.array([2.0, 2.0, 1.2]))
        world_pts = sample_corner_surface(rng)
        pts_sensor = truth.inverse().apply(world_pts)
        state = make_initial_state(0.0, truth)
        new, rep = update_lidar(state, pts_sensor, vmap)
        assert not rep.degenerate
        assert np.linalg.norm(new.p - truth.translation) < 1e-6
        assert new.rotation.angle_to(truth.rotation) < 1e-6

    def test_converges_from_perturbed_start(self):
        rng = np.random.default_rng(2)
        vmap = corner_map(rng)
        truth = Pose(so3_exp([0.0, 0.0, 0.4]), np.array([2.5, 2.5, 1.0]))
        world_pts = sample_corner_surface(rng, n=900)
        pts_sensor = truth.inverse().apply(world_pts)
        start = Pose(
            truth.rotation.compose(so3_exp(np.radians([0.8, -1.2, 1.5]))),
            truth.translation + np.array([0.08, -0.06, 0.04]),
        )
        state = make_initial_state(0.0, start, pos_std=0.2, rot_std=0.1)
        new, rep = update_lidar(state, pts_sensor, vmap, LidarUpdateConfig(max_iterations=8))
        assert not rep.degenerate
        assert np.linalg.norm(new.p - truth.translation) < 1e-3
        assert np.degrees(new.rotation.angle_to(truth.rotation)) < 0.1

    def test_single_wall_degenerate_and_state_untouched(self):
        rng = np.random.default_rng(3)
        vmap = VoxelMap(voxel_size=0.5, capacity=64, min_dist=0.02)
        wall = np.column_stack(
            [np.full(8000, 3.0), rng.uniform(-6, 6, 8000), rng.uniform(-3, 3, 8000)]
        )
        vmap.insert(wall)
        truth = Pose.identity()
        sample = wall[rng.integers(0, len(wall), 500)]
        pts_sensor = sample  # identity pose
        state = make_initial_state(0.0, truth)
        before = state.copy()
        new, rep = update_lidar(state, pts_sensor, vmap)
        assert rep.degenerate
        assert rep.min_eig < 10.0
        # analytic null space: translations parallel to the wall unobservable
        assert np.array_equal(new.p, before.p)
        assert np.array_equal(new.q, before.q)
        assert np.array_equal(new.P, before.P)

    def test_too_few_matches_skips(self):
        vmap = VoxelMap()
        vmap.insert(np.random.default_rng(0).uniform(-1, 1, (50, 3)))
        state = make_initial_state(0.0, Pose(Rotation.identity(), np.array([100.0, 0, 0])))
        pts = np.random.default_rng(1).normal(size=(40, 3))
        new, rep = update_lidar(state, pts, vmap)
        assert rep.degenerate
        assert rep.matched < 10
        assert np.array_equal(new.p, state.p)

    def test_single_iteration_matches_scalar_kf(self):
        # truly 1-D measurement: query points sit on the x-axis, so the
        # rotation Jacobian (lever arm x normal) vanishes and every residual
        # observes x-position directly
        rng = np.random.default_rng(4)
        vmap = VoxelMap(voxel_size=0.5, capacity=64, min_dist=0.02)
        wall = np.column_stack(
            [np.full(6000, 4.0), rng.uniform(-5, 5, 6000), rng.uniform(-3, 3, 6000)]
        )
        vmap.insert(wall)
        offset = 0.03
        state = make_initial_state(0.0, Pose(Rotation.identity(), np.array([offset, 0, 0])))
        p_var = state.P[DP, DP]
        m = 20
        # true pose is identity: the wall at x=4 is measured at x=4 in the
        # sensor frame; the state wrongly believes it sits at x=offset
        pts_sensor = np.column_stack([np.full(m, 4.0), np.zeros(m), np.zeros(m)])
        sigma = 0.02
        cfg = LidarUpdateConfig(
            meas_sigma=sigma, max_iterations=1, degeneracy_min_eig=-1.0, outlier_gate=10.0
        )
        new, rep = update_lidar(state, pts_sensor, vmap, cfg)
        assert rep.matched == m
        # scalar information-form KF oracle for the x coordinate
        post_var = 1.0 / (1.0 / p_var + m / sigma**2)
        expected_dx = -post_var * (m * offset / sigma**2)
        assert np.isclose(new.p[0] - offset, expected_dx, atol=1e-12)
        assert np.isclose(new.P[DP, DP], post_var, rtol=1e-9)

    def test_covariance_symmetry_after_update(self):
        rng = np.random.default_rng(5)
        vmap = corner_map(rng)
        truth = Pose(Rotation.identity(), np.array([2.0, 2.0, 1.0]))
        pts_sensor = truth.inverse().apply(sample_corner_surface(rng))
        state = make_initial_state(0.0, truth)
        new, _ = update_lidar(state, pts_sensor, vmap)
        assert np.max(np.abs(new.P - new.P.T)) < 1e-9


class TestUpdateRelpose:
    def _states(self):
        pose_i = Pose(so3_exp([0, 0, 0.3]), np.array([1.0, 0.5, 0.0]))
        state = make_initial_state(2.0, Pose(so3_exp([0, 0, 0.5]), np.array([2.0, 1.0, 0.0])))
        return pose_i, state

    def test_zero_innovation_keeps_state(self):
        pose_i, state = self._states()
        measured = pose_i.inverse() @ state.pose
        res = RelPoseResidual(1.0, 2.0, measured, np.eye(6) * 1e-4, pose_i)
        new = update_relpose(state, res)
        assert np.allclose(new.p, state.p, atol=1e-12)
        assert new.rotation.angle_to(state.rotation) < 1e-12

    def test_offset_moves_state_toward_measurement(self):
        pose_i, state = self._states()
        true_rel = pose_i.inverse() @ state.pose
        shifted = Pose(true_rel.rotation, true_rel.translation + pose_i.rotation.matrix.T @ np.array([0.1, 0, 0]))
        res = RelPoseResidual(1.0, 2.0, shifted, np.eye(6) * 1e-8, pose_i)
        new = update_relpose(state, res)
        moved = new.p - state.p
        # high-confidence measurement pulls nearly the whole 0.1 m offset
        assert 0.05 < moved[0] <= 0.101
        assert abs(moved[1]) < 0.02 and abs(moved[2]) < 0.02

    def test_gain_monotonic_in_confidence(self):
        pose_i, state = self._states()
        true_rel = pose_i.inverse() @ state.pose
        shifted = Pose(true_rel.rotation, true_rel.translation + np.array([0.1, 0, 0]))
        moves = []
        for var in (1e-8, 1e-4, 1e-2):
            res = RelPoseResidual(1.0, 2.0, shifted, np.eye(6) * var, pose_i)
            new = update_relpose(state, res)
            moves.append(np.linalg.norm(new.p - state.p))
        assert moves[0] > moves[1] > moves[2]

    def test_requires_time_order(self):
        pose_i, state = self._states()
        with pytest.raises(ValueError):
            RelPoseResidual(2.0, 1.0, Pose.identity(), np.eye(6), pose_i)
