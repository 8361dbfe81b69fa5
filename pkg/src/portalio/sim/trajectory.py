"""Smooth synthetic body trajectories for a walking operator.

Every kind produces a continuous-time pose function that is C^2 (bounded
jerk), starts and ends at rest, and is a pure function of (kind, duration,
seed). Orientation is built from elementary-axis quaternions so the sampled
quaternion track is sign-continuous. Angular rates and accelerations come
from central differences with a small step, which is effectively exact for
walking dynamics.
"""

from __future__ import annotations

import numpy as np

from portalio.geometry import Pose, Rotation, quat_mul, quat_log, quat_conj, quat_rotate

WALK_PACE = 1.2  # m/s nominal walking speed
_FD_STEP = 5e-4  # central-difference step for rates/accelerations
SAMPLE_RATE_HZ = 1000.0
WALL_STARE_STAND_X = 7.2  # where the wall-stare path stops (wall sits beyond)

TRAJECTORY_KINDS = ("walk-loop", "corridor", "stairs", "wall-stare")


def _smoothstep5(x: np.ndarray) -> np.ndarray:
    """Quintic smoothstep on [0, 1]; zero first and second derivative at ends."""
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (10.0 + x * (-15.0 + 6.0 * x))


def _smoothstep5_integral(x: np.ndarray) -> np.ndarray:
    """Running integral of the quintic smoothstep (equals x - 1/2 for x >= 1)."""
    xc = np.clip(x, 0.0, 1.0)
    core = xc**4 * (2.5 + xc * (-3.0 + xc))
    return core + np.maximum(x - 1.0, 0.0)


class ArcProfile:
    """C^2 arc-length profile: smooth ramp up, cruise, smooth ramp down.

    Integrates a quintic-smoothstep speed profile in closed form so the total
    travelled length is exact.
    """

    def __init__(self, length: float, t_start: float, t_end: float, ramp: float = 1.5):
        span = t_end - t_start
        ramp = min(ramp, 0.45 * span)
        # each ramp contributes v_max * ramp / 2 of distance
        self.v_max = length / (span - ramp)
        self.t_start = t_start
        self.t_end = t_end
        self.ramp = ramp
        self.length = length

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tau = np.clip(t - self.t_start, 0.0, self.t_end - self.t_start)
        up = self.ramp * _smoothstep5_integral(tau / self.ramp)
        down_tau = np.maximum(tau - (self.t_end - self.t_start - self.ramp), 0.0)
        down = self.ramp * _smoothstep5_integral(down_tau / self.ramp)
        return self.v_max * (up - down)


def _yaw_pitch_roll_quat(yaw, pitch, roll):
    """Quaternion for qz(yaw) * qy(pitch) * qx(roll), vectorized and sign-continuous."""
    yaw = np.asarray(yaw, dtype=float)
    z = np.zeros_like(yaw)
    qz = np.stack([np.cos(yaw / 2), z, z, np.sin(yaw / 2)], axis=-1)
    qy = np.stack([np.cos(pitch / 2), z, np.sin(pitch / 2), z], axis=-1)
    qx = np.stack([np.cos(roll / 2), np.sin(roll / 2), z, z], axis=-1)
    return quat_mul(quat_mul(qz, qy), qx)


class Trajectory:
    """Continuous-time rigid motion from closed-form position/orientation callables."""

    def __init__(self, pos_fn, quat_fn, duration: float):
        self._pos_fn = pos_fn
        self._quat_fn = quat_fn
        self.duration = float(duration)

    def position(self, t) -> np.ndarray:
        return self._pos_fn(np.asarray(t, dtype=float))

    def quat(self, t) -> np.ndarray:
        return self._quat_fn(np.asarray(t, dtype=float))

    def pose(self, t: float) -> Pose:
        return Pose(Rotation(self.quat(np.array([t]))[0]), self.position(np.array([t]))[0])

    def poses(self, times: np.ndarray):
        """Batched sampling: returns (positions (N,3), quaternions (N,4))."""
        times = np.asarray(times, dtype=float)
        return self.position(times), self.quat(times)

    def velocity_world(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        h = _FD_STEP
        return (self.position(t + h) - self.position(t - h)) / (2 * h)

    def accel_world(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        h = _FD_STEP
        return (self.position(t + h) - 2 * self.position(t) + self.position(t - h)) / (h * h)

    def angular_rate_body(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        h = _FD_STEP
        q0 = self.quat(t - h)
        q1 = self.quat(t + h)
        return quat_log(quat_mul(quat_conj(q0), q1)) / (2 * h)

    def sample_1khz(self):
        """Dense (times, positions, quaternions) at the standard 1 kHz rate."""
        n = int(round(self.duration * SAMPLE_RATE_HZ)) + 1
        times = np.arange(n) / SAMPLE_RATE_HZ
        pos, quat = self.poses(times)
        return times, pos, quat


def _sway_terms(rng: np.random.Generator, n_terms: int, amp: float, freqs):
    """Sum of seeded sinusoids; returns a closed-form callable of t."""
    amps = rng.uniform(0.3, 1.0, n_terms) * amp
    phases = rng.uniform(0, 2 * np.pi, n_terms)
    fr = np.asarray(freqs, dtype=float)

    def fn(t):
        t = np.asarray(t, dtype=float)
        return np.sum(
            amps * np.sin(2 * np.pi * fr * t[..., None] + phases), axis=-1
        )

    return fn


def generate_trajectory(kind: str, duration: float, seed: int) -> Trajectory:
    """Deterministic C^2 walking trajectory of the requested kind.

    Kinds:
      walk-loop:  closed circular loop, heading tangent, integer lap count
      corridor:   straight walk along +x
      stairs:     straight walk with a smooth staircase height profile
      wall-stare: approach a wall at x=+L, stand staring at it, back away
    """
    if duration <= 0:
        raise ValueError("duration must be > 0")
    if kind not in TRAJECTORY_KINDS:
        raise ValueError(f"unknown trajectory kind {kind!r}; expected one of {TRAJECTORY_KINDS}")
    rng = np.random.default_rng(seed)

    head_height = 1.65
    bob_amp = 0.015 * rng.uniform(0.8, 1.2)
    bob_freq = 1.9 * rng.uniform(0.9, 1.1)
    bob_phase = rng.uniform(0, 2 * np.pi)
    yaw_sway = _sway_terms(rng, 3, np.radians(3.0), [0.21, 0.37, 0.52])
    pitch_sway = _sway_terms(rng, 2, np.radians(1.5), [0.29, 0.47])
    roll_sway = _sway_terms(rng, 2, np.radians(1.5), [0.23, 0.41])

    def bob(t):
        return bob_amp * np.sin(2 * np.pi * bob_freq * t + bob_phase)

    if kind == "walk-loop":
        radius = 3.1 * rng.uniform(0.95, 1.05)
        circumference = 2 * np.pi * radius
        laps = max(1, int(round(WALK_PACE * duration / circumference)))
        length = laps * circumference
        arc = ArcProfile(length, 0.0, duration)
        phi0 = rng.uniform(0, 2 * np.pi)

        def pos_fn(t):
            phi = phi0 + arc(t) / radius
            x = radius * np.cos(phi)
            y = radius * np.sin(phi)
            z = head_height + bob(t)
            return np.stack([x, y, z], axis=-1)

        def quat_fn(t):
            phi = phi0 + arc(t) / radius
            yaw = phi + np.pi / 2 + yaw_sway(t)
            return _yaw_pitch_roll_quat(yaw, pitch_sway(t), roll_sway(t))

    elif kind in ("corridor", "stairs"):
        ramp = 1.5
        length = WALK_PACE * max(duration - ramp, 1e-3)
        arc = ArcProfile(length, 0.0, duration, ramp=ramp)
        step_rise = 0.17
        step_run = 0.29

        def pos_fn(t):
            s = arc(t)
            x = s
            y = np.zeros_like(s)
            if kind == "stairs":
                u = s / step_run
                z = head_height + step_rise * (u - np.sin(2 * np.pi * u) / (2 * np.pi)) + bob(t)
            else:
                z = head_height + np.zeros_like(s) + bob(t)
            return np.stack([x, y, z], axis=-1)

        def quat_fn(t):
            t = np.asarray(t, dtype=float)
            return _yaw_pitch_roll_quat(yaw_sway(t), pitch_sway(t), roll_sway(t))

    else:  # wall-stare
        # fixed phase geometry so scenes can be built around the path:
        # approach [0, 7] to x = WALL_STARE_STAND_X, stare [7, 13], retreat after
        if duration < 18.0:
            raise ValueError("wall-stare requires duration >= 18 s")
        t_app = 7.0
        t_stare_end = 13.0
        approach_len = WALL_STARE_STAND_X
        retreat_len = WALK_PACE * (duration - t_stare_end - 1.0)
        arc_in = ArcProfile(approach_len, 0.0, t_app)
        arc_out = ArcProfile(retreat_len, t_stare_end, duration)

        def pos_fn(t):
            t = np.asarray(t, dtype=float)
            x = arc_in(t) - arc_out(t)
            y = np.zeros_like(x)
            z = head_height + bob(t) * 0.6
            return np.stack([x, y, z], axis=-1)

        def quat_fn(t):
            t = np.asarray(t, dtype=float)
            return _yaw_pitch_roll_quat(
                yaw_sway(t) * 0.5, pitch_sway(t), roll_sway(t)
            )

    return Trajectory(pos_fn, quat_fn, duration)


def constant_velocity_trajectory(
    velocity, duration: float, start=(0.0, 0.0, 0.0), angular_rate=(0.0, 0.0, 0.0)
) -> Trajectory:
    """Analytic constant-twist motion (used for exactness tests and demos)."""
    v = np.asarray(velocity, dtype=float)
    w = np.asarray(angular_rate, dtype=float)
    p0 = np.asarray(start, dtype=float)

    def pos_fn(t):
        t = np.asarray(t, dtype=float)
        return p0 + t[..., None] * v

    def quat_fn(t):
        from portalio.geometry import quat_exp

        t = np.asarray(t, dtype=float)
        return quat_exp(t[..., None] * w)

    return Trajectory(pos_fn, quat_fn, duration)


def static_trajectory(pose: Pose, duration: float) -> Trajectory:
    """Motionless trajectory at a fixed pose."""

    def pos_fn(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(pose.translation, t.shape + (3,)).copy()

    def quat_fn(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(pose.rotation.q, t.shape + (4,)).copy()

    return Trajectory(pos_fn, quat_fn, duration)
