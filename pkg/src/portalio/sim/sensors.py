"""Sensor presets and scan synthesis by ray casting.

Presets model the field of view, range gate, point rate and scan pattern of
the devices the toolkit targets: a short-range ToF camera with a narrow
window (l515-class), a wide-FoV ToF camera (kinect-class), a 360deg solid
state scanner (mid360-class) and a conical-pattern scanner (avia-class).

Pattern semantics:
  raster                  depth-camera frame, every point shares one timestamp
  spinning                azimuth sweeps 360deg across the scan period
  non-repetitive-conical  rosette from two incommensurate angular frequencies
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from portalio.geometry import quat_rotate
from portalio.sim.scene import Scene
from portalio.sim.trajectory import Trajectory

PATTERNS = ("raster", "spinning", "non-repetitive-conical")

_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class SensorPreset:
    name: str
    h_fov_deg: float
    v_fov_deg: float
    max_range: float
    min_range: float
    points_per_second: float
    scan_period: float
    pattern: str

    def __post_init__(self):
        if not (0 < self.h_fov_deg <= 360 and 0 < self.v_fov_deg <= 360):
            raise ValueError("FoV must be in (0, 360] degrees")
        if not (0 < self.min_range < self.max_range):
            raise ValueError("require 0 < min_range < max_range")
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")

    @property
    def points_per_scan(self) -> int:
        return int(round(self.points_per_second * self.scan_period))

    def with_rate(self, points_per_second: float) -> "SensorPreset":
        """Copy with a different point rate (coarse/fast simulation runs)."""
        return SensorPreset(
            self.name,
            self.h_fov_deg,
            self.v_fov_deg,
            self.max_range,
            self.min_range,
            points_per_second,
            self.scan_period,
            self.pattern,
        )


SENSOR_PRESETS = {
    "l515": SensorPreset("l515", 70.0, 55.0, 9.0, 0.25, 30_000, 0.1, "raster"),
    "azure-kinect": SensorPreset("azure-kinect", 120.0, 120.0, 5.5, 0.25, 40_000, 0.1, "raster"),
    "mid360": SensorPreset("mid360", 360.0, 59.0, 40.0, 0.1, 200_000, 0.1, "spinning"),
    "avia": SensorPreset("avia", 70.4, 77.2, 60.0, 1.0, 240_000, 0.1, "non-repetitive-conical"),
}


@dataclass
class ScanRecord:
    """One scan: per-point capture times and sensor-frame points.

    Raster presets use t0 == t1 and a single shared timestamp; sweeping
    patterns spread strictly increasing timestamps over [t0, t1].
    """

    t0: float
    t1: float
    times: np.ndarray       # (N,)
    points: np.ndarray      # (N, 3) sensor frame at each point's capture time
    surface_ids: np.ndarray  # (N,) ground-truth surface hit


def _dirs_from_angles(az: np.ndarray, el: np.ndarray) -> np.ndarray:
    """Unit directions from azimuth (+left) and elevation (+up), x-forward."""
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)


def scan_pattern(preset: SensorPreset, scan_index: int):
    """Ray directions (sensor frame) and relative times for one scan.

    Deterministic in (preset, scan_index); the conical rosette advances by a
    golden-angle phase per scan so coverage fills in over time.
    """
    n = preset.points_per_scan
    h_half = np.radians(preset.h_fov_deg) / 2
    v_half = np.radians(preset.v_fov_deg) / 2

    if preset.pattern == "raster":
        aspect = preset.h_fov_deg / preset.v_fov_deg
        nh = max(2, int(round(np.sqrt(n * aspect))))
        nv = max(2, n // nh)
        az = np.linspace(-h_half, h_half, nh)
        el = np.linspace(-v_half, v_half, nv)
        azg, elg = np.meshgrid(az, el, indexing="ij")
        dirs = _dirs_from_angles(azg.ravel(), elg.ravel())
        rel_t = np.zeros(dirs.shape[0])
        return dirs, rel_t

    if preset.pattern == "spinning":
        n_beams = 16
        n_cols = max(1, n // n_beams)
        col = np.repeat(np.arange(n_cols), n_beams)
        beam = np.tile(np.arange(n_beams), n_cols)
        az = col / n_cols * 2 * h_half - h_half
        el = (beam + 0.5) / n_beams * 2 * v_half - v_half
        rel_t = (col + beam / n_beams) / n_cols * preset.scan_period
        return _dirs_from_angles(az, el), rel_t

    # non-repetitive conical rosette: radial and angular frequencies chosen
    # incommensurate so successive scans do not repeat
    u = (np.arange(n) + 0.5) / n
    phase = (scan_index * 2 * np.pi / _GOLDEN) % (2 * np.pi)
    f_spin = 11.0
    f_rad = f_spin * _GOLDEN
    ang = 2 * np.pi * f_spin * u + phase
    rad = np.abs(np.sin(2 * np.pi * f_rad * u + 0.7 * phase))
    az = rad * np.cos(ang) * h_half
    el = rad * np.sin(ang) * v_half
    rel_t = u * preset.scan_period
    return _dirs_from_angles(az, el), rel_t


def cast_scan(
    scene: Scene,
    sensor_traj: Trajectory,
    preset: SensorPreset,
    scan_index: int,
    range_noise_sigma: float = 0.0,
    seed: int = 0,
) -> ScanRecord:
    """Synthesize one scan by casting the preset's rays from the moving sensor.

    Each emitted point is the nearest ray-surface hit inside the range gate,
    expressed in the sensor frame at its own capture time; misses emit
    nothing (an empty scan is valid). Range noise is additive Gaussian along
    the ray, seeded per (seed, scan_index).
    """
    dirs_s, rel_t = scan_pattern(preset, scan_index)
    t_start = scan_index * preset.scan_period
    times = t_start + rel_t
    if preset.pattern == "raster":
        t0 = t1 = t_start
    else:
        t0, t1 = t_start, t_start + preset.scan_period

    pos, quat = sensor_traj.poses(times)
    dirs_w = quat_rotate(quat, dirs_s)
    t_hit, surf, hit = scene.raycast(pos, dirs_w)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5C43, int(scan_index)]))
    noise = (
        rng.normal(0.0, range_noise_sigma, size=t_hit.shape)
        if range_noise_sigma > 0
        else np.zeros_like(t_hit)
    )
    rng_vals = np.where(hit, t_hit, np.inf) + noise
    keep = hit & (rng_vals >= preset.min_range) & (rng_vals <= preset.max_range)

    points = dirs_s[keep] * rng_vals[keep, None]
    return ScanRecord(
        t0=float(t0),
        t1=float(t1),
        times=times[keep],
        points=points,
        surface_ids=surf[keep].astype(np.int64),
    )


def scan_count(preset: SensorPreset, duration: float) -> int:
    return int(np.floor(duration / preset.scan_period + 1e-9))
