import numpy as np
import pytest

from portalio.evaluate import (
    EvaluationError,
    associate,
    compute_ate,
    final_drift,
    umeyama_alignment,
)
from portalio.geometry import Pose, Rotation, so3_exp


def make_traj(rng, n=200, dt=0.1):
    times = np.arange(n) * dt
    poses = []
    p = np.zeros(3)
    for i in range(n):
        p = p + rng.normal(0, 0.05, 3) + np.array([0.1, 0.02, 0.0])
        poses.append(Pose(so3_exp(rng.normal(0, 0.1, 3)), p.copy()))
    return times, poses


def transform_traj(poses, t: Pose):
    return [t @ p for p in poses]


class TestAssociate:
    def test_exact_match(self):
        t = np.arange(10) * 0.1
        ia, ib = associate(t, t)
        assert np.array_equal(ia, np.arange(10))
        assert np.array_equal(ib, np.arange(10))

    def test_within_window(self):
        a = np.array([0.0, 0.1, 0.2])
        b = np.array([0.004, 0.098, 0.35])
        ia, ib = associate(a, b)
        assert list(ia) == [0, 1]
        assert list(ib) == [0, 1]

    def test_outside_window_dropped(self):
        ia, ib = associate(np.array([0.0]), np.array([0.5]))
        assert len(ia) == 0


class TestUmeyama:
    def test_recovers_random_rigid_transform(self):
        rng = np.random.default_rng(0)
        src = rng.normal(size=(100, 3))
        t_true = Pose(so3_exp(rng.normal(0, 1, 3)), rng.normal(0, 5, 3))
        dst = t_true.apply(src)
        t_est = umeyama_alignment(src, dst)
        assert np.allclose(t_est.translation, t_true.translation, atol=1e-9)
        assert t_est.rotation.angle_to(t_true.rotation) < 1e-9

    def test_needs_two_points(self):
        with pytest.raises(EvaluationError):
            umeyama_alignment(np.zeros((1, 3)), np.zeros((1, 3)))


class TestComputeAte:
    def test_identity_gives_zero(self):
        rng = np.random.default_rng(1)
        times, poses = make_traj(rng)
        rep = compute_ate(times, poses, times, poses, align="none")
        assert rep.rmse == 0.0 and rep.max == 0.0 and rep.mean == 0.0
        assert rep.rpe_trans == 0.0

    def test_alignment_invariance(self):
        rng = np.random.default_rng(2)
        times, poses = make_traj(rng)
        t = Pose(so3_exp([0.3, -0.2, 1.0]), np.array([5.0, -2.0, 1.0]))
        moved = transform_traj(poses, t)
        rep = compute_ate(times, moved, times, poses, align="se3-umeyama")
        assert rep.rmse < 1e-9
        assert rep.max < 1e-9

    def test_noise_rmse_matches_chi_expectation(self):
        # independent per-axis sigma: rmse of the 3-D error approaches
        # sigma * sqrt(3) over many poses
        rng = np.random.default_rng(3)
        times, poses = make_traj(rng, n=1000)
        sigma = 0.01
        noisy = [
            Pose(p.rotation, p.translation + rng.normal(0, sigma, 3)) for p in poses
        ]
        rep = compute_ate(times, noisy, times, poses, align="none")
        expected = sigma * np.sqrt(3)
        assert abs(rep.rmse - expected) / expected < 0.2
        assert rep.rmse**2 == pytest.approx(np.mean(np.array(
            [np.linalg.norm(a.translation - b.translation) for a, b in zip(noisy, poses)]
        ) ** 2))

    def test_umeyama_never_increases_rmse(self):
        rng = np.random.default_rng(4)
        times, poses = make_traj(rng, n=300)
        noisy = [
            Pose(p.rotation, p.translation + rng.normal(0, 0.05, 3) + 0.1) for p in poses
        ]
        plain = compute_ate(times, noisy, times, poses, align="none")
        aligned = compute_ate(times, noisy, times, poses, align="se3-umeyama")
        assert aligned.rmse <= plain.rmse + 1e-12

    def test_too_few_associations_error(self):
        times = np.array([0.0, 1.0])
        poses = [Pose.identity(), Pose.identity()]
        with pytest.raises(EvaluationError):
            compute_ate(times, poses, times + 50.0, poses)

    def test_rejects_unknown_alignment(self):
        times = np.arange(3) * 0.1
        poses = [Pose.identity()] * 3
        with pytest.raises(EvaluationError):
            compute_ate(times, poses, times, poses, align="sim3")


class TestFinalDrift:
    def test_zero_for_identical(self):
        rng = np.random.default_rng(5)
        times, poses = make_traj(rng)
        drift, path = final_drift(times, poses, times, poses)
        assert drift == 0.0
        assert path > 0.0
