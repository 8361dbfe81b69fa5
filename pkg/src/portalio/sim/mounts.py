"""Body-mount configurations: where a sensor sits on the operator.

Helmet mounts are rigid with the head trajectory. Chest and shoulder mounts
are strapped to the jacket, so they carry an independent angular sway
(sinusoidal wobble plus slow drift) on top of their nominal offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from portalio.geometry import Pose, Rotation, quat_exp, quat_mul, quat_rotate, so3_exp
from portalio.sim.trajectory import Trajectory

ATTACH_POINTS = ("helmet", "chest", "shoulder")


@dataclass(frozen=True)
class MountConfig:
    name: str
    attach: str
    offset: Pose
    sway_amp_deg: float = 0.0  # per-axis sinusoidal wobble amplitude
    sway_freq_hz: float = 2.0
    drift_amp_deg: float = 0.0  # slow non-rigid drift amplitude

    def __post_init__(self):
        if self.attach not in ATTACH_POINTS:
            raise ValueError(f"unknown attach point {self.attach!r}")
        if self.attach == "helmet" and (self.sway_amp_deg != 0.0 or self.drift_amp_deg != 0.0):
            raise ValueError("helmet mounts are rigid; sway must be zero")


def _pitch_forward(deg: float) -> Rotation:
    """Rotation tilting the sensor forward (nose-down) by `deg` about +y."""
    return so3_exp(np.array([0.0, np.radians(deg), 0.0]))


MOUNTS = {
    "helmet-top": MountConfig(
        "helmet-top", "helmet", Pose(Rotation.identity(), np.array([0.0, 0.0, 0.12]))
    ),
    "helmet-tilted": MountConfig(
        "helmet-tilted", "helmet", Pose(_pitch_forward(15.0), np.array([0.05, 0.0, 0.12]))
    ),
    "chest-forward": MountConfig(
        "chest-forward",
        "chest",
        Pose(_pitch_forward(90.0), np.array([0.12, 0.0, -0.45])),
        sway_amp_deg=5.0,
        sway_freq_hz=2.0,
        drift_amp_deg=2.0,
    ),
    "shoulder": MountConfig(
        "shoulder",
        "shoulder",
        Pose(Rotation.identity(), np.array([0.0, -0.18, -0.05])),
        sway_amp_deg=5.0,
        sway_freq_hz=2.0,
        drift_amp_deg=2.0,
    ),
}


def mounted_trajectory(body: Trajectory, mount: MountConfig, seed: int = 0) -> Trajectory:
    """Sensor trajectory for a mount riding on the body trajectory.

    Non-rigid mounts add a smooth angular offset about the sensor origin:
    sinusoidal wobble at the sway frequency plus low-frequency seeded drift.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D6E74]))
    amp = np.radians(mount.sway_amp_deg) * rng.uniform(0.6, 1.0, 3)
    freq = mount.sway_freq_hz * rng.uniform(0.85, 1.15, 3)
    phase = rng.uniform(0, 2 * np.pi, 3)
    drift_amp = np.radians(mount.drift_amp_deg) * rng.uniform(0.5, 1.0, 3)
    drift_freq = rng.uniform(0.05, 0.15, 3)
    drift_phase = rng.uniform(0, 2 * np.pi, 3)
    off_q = mount.offset.rotation.q
    off_t = mount.offset.translation

    def sway_vec(t):
        t = np.asarray(t, dtype=float)[..., None]
        return amp * np.sin(2 * np.pi * freq * t + phase) + drift_amp * np.sin(
            2 * np.pi * drift_freq * t + drift_phase
        )

    rigid = mount.sway_amp_deg == 0.0 and mount.drift_amp_deg == 0.0

    def pos_fn(t):
        t = np.asarray(t, dtype=float)
        qb = body.quat(t)
        return body.position(t) + quat_rotate(qb, np.broadcast_to(off_t, t.shape + (3,)))

    def quat_fn(t):
        t = np.asarray(t, dtype=float)
        q = quat_mul(body.quat(t), np.broadcast_to(off_q, t.shape + (4,)))
        if rigid:
            return q
        return quat_mul(q, quat_exp(sway_vec(t)))

    return Trajectory(pos_fn, quat_fn, body.duration)
