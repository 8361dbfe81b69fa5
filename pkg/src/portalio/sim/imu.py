"""IMU synthesis from a trajectory: specific force, body rates, bias walks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from portalio.geometry import quat_conj, quat_rotate

GRAVITY = 9.81


@dataclass(frozen=True)
class ImuModel:
    """Noise/bias model of an embedded IMU.

    Densities are continuous-time: noise in (unit)/sqrt(Hz), bias random
    walks in (unit)*sqrt(Hz). Setting all densities to zero gives exact,
    noise-free measurements.
    """

    gyro_noise_density: float = 2.0e-4   # rad/s/sqrt(Hz)
    accel_noise_density: float = 2.0e-3  # m/s^2/sqrt(Hz)
    gyro_bias_walk: float = 1.0e-5       # rad/s * sqrt(Hz)
    accel_bias_walk: float = 1.0e-4      # m/s^2 * sqrt(Hz)
    init_gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    init_accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rate_hz: float = 200.0
    gravity: float = GRAVITY

    def __post_init__(self):
        for name in ("gyro_noise_density", "accel_noise_density", "gyro_bias_walk", "accel_bias_walk"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.rate_hz < 100:
            raise ValueError("IMU sample rate must be >= 100 Hz")
        object.__setattr__(self, "init_gyro_bias", np.asarray(self.init_gyro_bias, dtype=float).reshape(3))
        object.__setattr__(self, "init_accel_bias", np.asarray(self.init_accel_bias, dtype=float).reshape(3))

    @property
    def noise_free(self) -> bool:
        return (
            self.gyro_noise_density == 0
            and self.accel_noise_density == 0
            and self.gyro_bias_walk == 0
            and self.accel_bias_walk == 0
        )

    def gravity_world(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.gravity])


@dataclass
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass
class ImuBatch:
    """Column-array container for an IMU stream (time-sorted)."""

    t: np.ndarray      # (N,)
    gyro: np.ndarray   # (N, 3)
    accel: np.ndarray  # (N, 3)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i) -> ImuSample:
        return ImuSample(float(self.t[i]), self.gyro[i], self.accel[i])

    def between(self, t0: float, t1: float, slack: float = 1e-9) -> "ImuBatch":
        """Samples with t0 < t <= t1 (predict steps consume half-open windows).

        Both bounds are padded by `slack` so samples that differ from a scan
        boundary by float rounding stay in exactly one window.
        """
        i0 = int(np.searchsorted(self.t, t0 + slack, side="right"))
        i1 = int(np.searchsorted(self.t, t1 + slack, side="right"))
        return ImuBatch(self.t[i0:i1], self.gyro[i0:i1], self.accel[i0:i1])

    def nominal_period(self) -> float:
        if len(self.t) < 2:
            return 0.0
        return float(np.median(np.diff(self.t)))


def synthesize_imu(traj, model: ImuModel, seed: int = 0, t_end: float | None = None) -> ImuBatch:
    """Sample gyro/accel measurements of a trajectory under the IMU model.

    accel = R_body^T (a_world - g_world) + bias + noise   (specific force)
    gyro  = body angular rate + bias + noise

    Biases random-walk from their initial values; all draws are seeded.
    """
    duration = traj.duration if t_end is None else t_end
    dt = 1.0 / model.rate_hz
    n = int(np.floor(duration / dt + 1e-9)) + 1
    ts = np.arange(n) * dt

    quat = traj.quat(ts)
    a_world = traj.accel_world(ts)
    gyro_true = traj.angular_rate_body(ts)
    g_w = model.gravity_world()
    accel_true = quat_rotate(quat_conj(quat), a_world - g_w)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1347]))
    sqrt_rate = np.sqrt(model.rate_hz)
    sqrt_dt = np.sqrt(dt)
    gyro_bias = model.init_gyro_bias + np.cumsum(
        rng.normal(0.0, 1.0, (n, 3)) * model.gyro_bias_walk * sqrt_dt, axis=0
    )
    accel_bias = model.init_accel_bias + np.cumsum(
        rng.normal(0.0, 1.0, (n, 3)) * model.accel_bias_walk * sqrt_dt, axis=0
    )
    gyro = gyro_true + gyro_bias + rng.normal(0.0, 1.0, (n, 3)) * model.gyro_noise_density * sqrt_rate
    accel = (
        accel_true + accel_bias + rng.normal(0.0, 1.0, (n, 3)) * model.accel_noise_density * sqrt_rate
    )
    return ImuBatch(ts, gyro, accel)
