import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from portalio.geometry import (
    Pose,
    Rotation,
    compose,
    format_tum_line,
    interpolate,
    quat_exp,
    quat_log,
    quat_slerp,
    read_tum,
    so3_exp,
    so3_log,
    write_tum,
)


def random_rotation(rng):
    v = rng.normal(size=3)
    v = v / np.linalg.norm(v) * rng.uniform(0.0, 3.0)
    return so3_exp(v)


def random_pose(rng):
    return Pose(random_rotation(rng), rng.normal(size=3))


class TestCompose:
    def test_identity(self):
        rng = np.random.default_rng(0)
        t = random_pose(rng)
        out = compose(Pose.identity(), t)
        assert np.allclose(out.translation, t.translation, atol=1e-12)
        assert out.rotation.angle_to(t.rotation) < 1e-12

    def test_inverse_gives_identity(self):
        rng = np.random.default_rng(1)
        t = random_pose(rng)
        out = compose(t, t.inverse())
        assert np.linalg.norm(out.translation) < 1e-9
        assert out.rotation.angle_to(Rotation.identity()) < 1e-9

    def test_rz90_with_translation(self):
        # hand-checked against the 3x3 matrix form: Rz(90)*(1,0,0) + (1,0,0)
        t = Pose(so3_exp(np.array([0.0, 0.0, math.pi / 2])), np.array([1.0, 0.0, 0.0]))
        out = t.apply(np.array([1.0, 0.0, 0.0]))
        assert np.allclose(out, [1.0, 1.0, 0.0], atol=1e-12)

    def test_apply_matches_matrix_composition(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a, b = random_pose(rng), random_pose(rng)
            p = rng.normal(size=3)
            lhs = compose(a, b).apply(p)
            rhs = a.apply(b.apply(p))
            assert np.allclose(lhs, rhs, atol=1e-9)

    def test_norm_preserved_over_many_compositions(self):
        rng = np.random.default_rng(3)
        r = Rotation.identity()
        steps = rng.normal(size=(100_000, 3)) * 0.05
        q = r.q
        for i in range(0, len(steps), 1000):
            # chain in bulk to keep the test fast while counting 1e5 products
            block = steps[i : i + 1000]
            qs = quat_exp(block)
            for qq in qs:
                q = np.array(
                    [
                        q[0] * qq[0] - q[1] * qq[1] - q[2] * qq[2] - q[3] * qq[3],
                        q[0] * qq[1] + q[1] * qq[0] + q[2] * qq[3] - q[3] * qq[2],
                        q[0] * qq[2] - q[1] * qq[3] + q[2] * qq[0] + q[3] * qq[1],
                        q[0] * qq[3] + q[1] * qq[2] - q[2] * qq[1] + q[3] * qq[0],
                    ]
                )
        assert abs(np.linalg.norm(q) - 1.0) < 1e-9


class TestSo3ExpLog:
    def test_exp_zero_is_identity(self):
        r = so3_exp(np.zeros(3))
        assert np.allclose(r.q, [1.0, 0.0, 0.0, 0.0])

    def test_exp_half_pi_z(self):
        r = so3_exp(np.array([0.0, 0.0, math.pi / 2]))
        assert np.isclose(r.q[0], math.cos(math.pi / 4))
        assert np.isclose(r.q[3], math.sin(math.pi / 4))

    def test_round_trip_1000_random(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            v = rng.normal(size=3)
            n = np.linalg.norm(v)
            if n > 0:
                v = v / n * rng.uniform(0, 3.0)
            r = so3_exp(v)
            v_back = so3_log(r)
            assert np.allclose(v_back, v, atol=1e-9)

    def test_against_scipy_matrices(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            v = rng.normal(size=3)
            ours = so3_exp(v).matrix
            theirs = ScipyRotation.from_rotvec(v).as_matrix()
            assert np.allclose(ours, theirs, atol=1e-12)

    def test_small_angle_taylor_branch(self):
        v = np.array([1e-10, -2e-10, 5e-11])
        r = so3_exp(v)
        assert np.allclose(so3_log(r), v, atol=1e-15)

    def test_log_at_pi_is_flagged_not_nan(self):
        r = so3_exp(np.array([0.0, 0.0, math.pi]))
        vec, flagged = so3_log(r, return_flag=True)
        assert flagged
        assert np.all(np.isfinite(vec))
        assert np.isclose(np.linalg.norm(vec), math.pi, atol=1e-9)

    def test_batched_exp_log_agree_with_scalar(self):
        rng = np.random.default_rng(9)
        vs = rng.normal(size=(100, 3))
        vs = vs / np.linalg.norm(vs, axis=1, keepdims=True) * rng.uniform(0, 3.0, (100, 1))
        qs = quat_exp(vs)
        back = quat_log(qs)
        assert np.allclose(back, vs, atol=1e-9)


class TestInterpolate:
    def test_endpoint(self):
        rng = np.random.default_rng(10)
        p0, p1 = random_pose(rng), random_pose(rng)
        out = interpolate(p0, 1.0, p1, 2.0, 1.0)
        assert np.allclose(out.translation, p0.translation)
        assert out.rotation.angle_to(p0.rotation) < 1e-12

    def test_linear_translation_midpoint(self):
        p0 = Pose(Rotation.identity(), np.zeros(3))
        p1 = Pose(Rotation.identity(), np.array([2.0, 0.0, 0.0]))
        out = interpolate(p0, 0.0, p1, 1.0, 0.5)
        assert np.allclose(out.translation, [1.0, 0.0, 0.0])

    def test_slerp_halves_rotation(self):
        p0 = Pose.identity()
        p1 = Pose(so3_exp(np.array([0.0, 0.0, math.pi / 2])), np.zeros(3))
        out = interpolate(p0, 0.0, p1, 1.0, 0.5)
        expected = so3_exp(np.array([0.0, 0.0, math.pi / 4]))
        assert out.rotation.angle_to(expected) < 1e-12

    def test_outside_interval_rejected(self):
        p = Pose.identity()
        with pytest.raises(ValueError):
            interpolate(p, 0.0, p, 1.0, 1.5)

    def test_continuity(self):
        rng = np.random.default_rng(11)
        p0, p1 = random_pose(rng), random_pose(rng)
        t = 0.3
        base = interpolate(p0, 0.0, p1, 1.0, t)
        for eps in (1e-4, 1e-6, 1e-8):
            near = interpolate(p0, 0.0, p1, 1.0, t + eps)
            gap = np.linalg.norm(near.translation - base.translation)
            assert gap < 10 * eps + 1e-12

    def test_slerp_shortest_arc(self):
        q0 = quat_exp(np.array([0.0, 0.0, 0.1]))
        q1 = -quat_exp(np.array([0.0, 0.0, 0.2]))  # same rotation, flipped sign
        mid = quat_slerp(q0, q1, np.array(0.5))
        expected = quat_exp(np.array([0.0, 0.0, 0.15]))
        assert min(np.linalg.norm(mid - expected), np.linalg.norm(mid + expected)) < 1e-12


class TestTumIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        times = np.sort(rng.uniform(0, 100, size=20))
        poses = [random_pose(rng) for _ in range(20)]
        path = tmp_path / "traj.tum"
        write_tum(path, times, poses)
        t2, p2 = read_tum(path)
        assert np.allclose(t2, times, atol=1e-6)
        for a, b in zip(poses, p2):
            assert np.allclose(a.translation, b.translation, atol=1e-6)
            assert a.rotation.angle_to(b.rotation) < 1e-6

    def test_canonical_w_nonnegative(self):
        r = Rotation(np.array([-0.5, 0.5, 0.5, 0.5]))
        line = format_tum_line(0.0, Pose(r, np.zeros(3)))
        qw = float(line.split()[-1])
        assert qw >= 0.0

    def test_field_order(self):
        pose = Pose(Rotation.identity(), np.array([1.0, 2.0, 3.0]))
        parts = format_tum_line(4.5, pose).split()
        assert [float(p) for p in parts] == [4.5, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 1.0]
