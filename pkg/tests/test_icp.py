import numpy as np
import pytest

from portalio.geometry import Pose, Rotation, so3_exp
from portalio.icp import IcpParams, register
from portalio.voxel_map import VoxelMap


def room_cloud(rng, n_per=5000, sx=8.0, sy=6.0, sz=3.0):
    """Dense point cloud of a closed rectangular room interior."""
    surfaces = []
    u = rng.uniform(0, 1, (n_per, 2))
    surfaces.append(np.column_stack([u[:, 0] * sx, u[:, 1] * sy, np.zeros(n_per)]))
    u = rng.uniform(0, 1, (n_per, 2))
    surfaces.append(np.column_stack([u[:, 0] * sx, u[:, 1] * sy, np.full(n_per, sz)]))
    u = rng.uniform(0, 1, (n_per, 2))
    surfaces.append(np.column_stack([np.zeros(n_per), u[:, 0] * sy, u[:, 1] * sz]))
    u = rng.uniform(0, 1, (n_per, 2))
    surfaces.append(np.column_stack([np.full(n_per, sx), u[:, 0] * sy, u[:, 1] * sz]))
    u = rng.uniform(0, 1, (n_per, 2))
    surfaces.append(np.column_stack([u[:, 0] * sx, np.zeros(n_per), u[:, 1] * sz]))
    u = rng.uniform(0, 1, (n_per, 2))
    surfaces.append(np.column_stack([u[:, 0] * sx, np.full(n_per, sy), u[:, 1] * sz]))
    return np.concatenate(surfaces)


@pytest.fixture(scope="module")
def room_map():
    rng = np.random.default_rng(0)
    cloud = room_cloud(rng)
    m = VoxelMap(voxel_size=0.5, capacity=64, min_dist=0.02)
    m.insert(cloud)
    return m, cloud


class TestRegister:
    def test_self_registration_is_identity(self, room_map):
        vmap, cloud = room_map
        rng = np.random.default_rng(1)
        source = cloud[rng.integers(0, len(cloud), 2000)]
        res = register(source, vmap, Pose.identity())
        assert res.converged
        assert np.linalg.norm(res.pose.translation) < 1e-9
        assert res.pose.rotation.angle_to(Rotation.identity()) < 1e-9
        assert res.rms < 1e-9

    def test_known_transform_recovered(self, room_map):
        vmap, cloud = room_map
        rng = np.random.default_rng(2)
        true_pose = Pose(so3_exp(np.radians([0, 0, 5.0])), np.array([0.2, -0.1, 0.05]))
        world = cloud[rng.integers(0, len(cloud), 3000)]
        source = true_pose.inverse().apply(world)
        res = register(source, vmap, Pose.identity())
        assert res.converged
        assert np.linalg.norm(res.pose.translation - true_pose.translation) < 1e-3
        assert np.degrees(res.pose.rotation.angle_to(true_pose.rotation)) < 0.05

    def test_rms_monotonic_over_accepted_iterations(self, room_map):
        vmap, cloud = room_map
        rng = np.random.default_rng(3)
        true_pose = Pose(so3_exp(np.radians([2, -3, 8.0])), np.array([0.25, 0.2, -0.1]))
        source = true_pose.inverse().apply(cloud[rng.integers(0, len(cloud), 2000)])
        res = register(source, vmap, Pose.identity())
        assert res.converged
        diffs = np.diff(res.rms_history)
        assert np.all(diffs <= 1e-12)

    def test_single_wall_flags_low_eigenvalue(self):
        rng = np.random.default_rng(4)
        vmap = VoxelMap(voxel_size=0.5, capacity=64, min_dist=0.02)
        wall = np.column_stack(
            [np.full(6000, 5.0), rng.uniform(-6, 6, 6000), rng.uniform(-3, 3, 6000)]
        )
        vmap.insert(wall)
        source = wall[rng.integers(0, len(wall), 800)]
        res = register(source, vmap, Pose.identity())
        # caller must treat this result as unreliable along the null space
        assert res.min_eig < 10.0

    def test_empty_source_rejected(self, room_map):
        vmap, _ = room_map
        with pytest.raises(ValueError):
            register(np.zeros((0, 3)), vmap)

    def test_small_target_rejected(self):
        m = VoxelMap()
        m.insert(np.random.default_rng(0).uniform(0, 1, (20, 3)))
        with pytest.raises(ValueError):
            register(np.zeros((10, 3)), m)

    def test_basin_sample(self, room_map):
        # spot-check of the convergence basin; the full 100-draw version runs
        # in the acceptance suite
        vmap, cloud = room_map
        rng = np.random.default_rng(5)
        world = cloud[rng.integers(0, len(cloud), 3000)]
        for i in range(5):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            true_pose = Pose(
                so3_exp(axis * np.radians(rng.uniform(0, 10))),
                rng.uniform(-0.3, 0.3, 3),
            )
            source = true_pose.inverse().apply(world)
            res = register(source, vmap, Pose.identity())
            assert res.converged
            assert np.linalg.norm(res.pose.translation - true_pose.translation) < 5e-3
            assert np.degrees(res.pose.rotation.angle_to(true_pose.rotation)) < 0.05
