import numpy as np
import pytest

from portalio.deskew import (
    CoverageError,
    deskew_scan,
    propagate_imu,
    segment_from_trajectory,
)
from portalio.esikf import FilterState, make_initial_state
from portalio.geometry import Pose, Rotation, quat_rotate, so3_exp
from portalio.sim.imu import ImuBatch
from portalio.sim.scene import Patch, Scene
from portalio.sim.sensors import SENSOR_PRESETS, ScanRecord, cast_scan
from portalio.sim.trajectory import constant_velocity_trajectory, generate_trajectory


def make_state(t=0.0, p=(0, 0, 0), v=(0, 0, 0)):
    s = make_initial_state(t, Pose.identity())
    s.p = np.asarray(p, dtype=float)
    s.v = np.asarray(v, dtype=float)
    return s


def stationary_imu(duration=1.0, rate=1000.0):
    n = int(duration * rate)
    t = (np.arange(n) + 1) / rate
    gyro = np.zeros((n, 3))
    accel = np.tile([0.0, 0.0, 9.81], (n, 1))
    return ImuBatch(t, gyro, accel)


class TestPropagate:
    def test_stationary_equilibrium(self):
        seg = propagate_imu(make_state(), stationary_imu())
        assert np.max(np.abs(seg.positions)) < 1e-9
        assert np.max(np.abs(seg.quats - np.array([1.0, 0, 0, 0]))) < 1e-9

    def test_constant_gyro_yaw(self):
        imu = stationary_imu()
        imu.gyro[:] = [0.0, 0.0, 1.0]
        seg = propagate_imu(make_state(), imu)
        yaw = 2 * np.arctan2(seg.quats[-1, 3], seg.quats[-1, 0])
        assert abs(yaw - 1.0) < 1e-6

    def test_constant_accel_displacement(self):
        imu = stationary_imu()
        imu.accel[:, 0] = 1.0
        seg = propagate_imu(make_state(), imu)
        assert abs(seg.positions[-1, 0] - 0.5) < 1e-4
        assert np.allclose(seg.positions[-1, 1:], 0.0, atol=1e-9)

    def test_gap_raises_coverage_error(self):
        imu = stationary_imu()
        t = imu.t.copy()
        t[500:] += 0.01  # 10 ms hole in a 1 ms stream
        with pytest.raises(CoverageError):
            propagate_imu(make_state(), ImuBatch(t, imu.gyro, imu.accel))

    def test_bias_removed_before_integration(self):
        imu = stationary_imu()
        imu.gyro[:] += [0.0, 0.0, 0.3]
        state = make_state()
        state.bg = np.array([0.0, 0.0, 0.3])
        seg = propagate_imu(state, imu)
        assert np.max(np.abs(seg.quats[-1] - np.array([1.0, 0, 0, 0]))) < 1e-9


class TestDeskew:
    def test_tof_uniform_timestamps_identity(self):
        pts = np.random.default_rng(0).normal(size=(50, 3))
        scan = ScanRecord(1.0, 1.0, np.full(50, 1.0), pts, np.zeros(50, dtype=np.int64))
        seg = segment_from_trajectory(constant_velocity_trajectory([3.0, 0, 0], 2.0), 0.9, 1.1)
        out = deskew_scan(scan, seg)
        assert np.array_equal(out, pts)

    def test_zero_motion_identity(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(100, 3))
        times = np.sort(rng.uniform(0.0, 0.1, 100))
        scan = ScanRecord(0.0, 0.1, times, pts, np.zeros(100, dtype=np.int64))
        seg = propagate_imu(make_state(), stationary_imu(0.2))
        out = deskew_scan(scan, seg)
        assert np.allclose(out, pts, atol=1e-9)

    def test_constant_velocity_shift(self):
        # +x at 1 m/s; a point captured 0.05 s before scan end appears
        # shifted by (-0.05, 0, 0) relative to the raw measurement
        traj = constant_velocity_trajectory([1.0, 0.0, 0.0], 1.0)
        seg = segment_from_trajectory(traj, 0.0, 0.1, rate_hz=1000)
        pts = np.array([[2.0, 0.5, 0.3]])
        scan = ScanRecord(0.0, 0.1, np.array([0.05]), pts, np.zeros(1, dtype=np.int64))
        out = deskew_scan(scan, seg)
        assert np.allclose(out[0], [2.0 - 0.05, 0.5, 0.3], atol=1e-9)

    def test_coverage_violation(self):
        pts = np.zeros((2, 3))
        scan = ScanRecord(0.0, 0.5, np.array([0.0, 0.4]), pts, np.zeros(2, dtype=np.int64))
        seg = segment_from_trajectory(constant_velocity_trajectory([1, 0, 0], 1.0), 0.0, 0.2)
        with pytest.raises(CoverageError):
            deskew_scan(scan, seg)

    def test_roundtrip_with_simulator_walking(self):
        # cast under real motion, deskew with the ground-truth segment, then
        # place with the ground-truth scan-end pose: points land on surfaces
        scene = Scene(
            patches=[
                Patch([8, -10, 0], [0, 20, 0], [0, 0, 4], 0),
                Patch([-8, -10, 0], [16, 0, 0], [0, 20, 0], 1),
                Patch([-8, -10, 0], [16, 0, 0], [0, 0, 4], 2),
            ]
        )
        traj = generate_trajectory("walk-loop", 4.0, 3)
        preset = SENSOR_PRESETS["mid360"].with_rate(30000)
        for k in (5, 20):
            scan = cast_scan(scene, traj, preset, k)
            seg = segment_from_trajectory(traj, scan.t0, scan.t1, rate_hz=1000)
            pts_end = deskew_scan(scan, seg)
            end_pose = traj.pose(scan.t1)
            world = quat_rotate(
                np.broadcast_to(end_pose.rotation.q, (len(pts_end), 4)), pts_end
            ) + end_pose.translation
            d = scene.surface_distance(world)
            assert np.max(d) < 2e-4  # walking-speed interpolation error budget

    def test_constant_rate_exactness(self):
        # piecewise-constant-rate motion: deskew via interpolation is exact
        traj = constant_velocity_trajectory(
            [1.0, -0.5, 0.2], 1.0, angular_rate=[0.0, 0.0, 0.4]
        )
        scene = Scene(patches=[Patch([6, -15, -2], [0, 30, 0], [0, 0, 6], 0)])
        preset = SENSOR_PRESETS["mid360"].with_rate(20000)
        scan = cast_scan(scene, traj, preset, 2)
        seg = segment_from_trajectory(traj, scan.t0, scan.t1, rate_hz=200)
        pts_end = deskew_scan(scan, seg)
        end_pose = traj.pose(scan.t1)
        world = quat_rotate(
            np.broadcast_to(end_pose.rotation.q, (len(pts_end), 4)), pts_end
        ) + end_pose.translation
        assert np.max(scene.surface_distance(world)) < 1e-4
