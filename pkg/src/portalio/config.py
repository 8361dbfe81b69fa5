"""Run configuration: TOML document with [sim], [filter] and [dual] sections.

Every tunable of the simulator, the filter and the dual-pipeline logic lives
here so runs are reproducible from a config file plus a seed. Validation
errors raise ConfigError, which the CLI maps to exit code 2.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from portalio.esikf import LidarUpdateConfig, ProcessNoise
from portalio.geometry import Pose, so3_exp
from portalio.sim.mounts import MOUNTS, MountConfig
from portalio.sim.sensors import SENSOR_PRESETS, SensorPreset
from portalio.sim.trajectory import TRAJECTORY_KINDS


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class SensorAssignment:
    preset: SensorPreset
    mount: MountConfig


@dataclass
class VioConfig:
    keyframe_period: float = 0.5
    trans_sigma: float = 0.01
    rot_sigma_deg: float = 0.2


@dataclass
class SimConfig:
    scenario: str = "walk-loop"
    duration: float = 30.0
    seed: int = 0
    scene_path: Path | None = None
    sensors: list[SensorAssignment] = field(default_factory=list)
    range_noise_sigma: float = 0.02
    imu_noise: bool = True
    imu_rate_hz: float = 200.0
    vio: VioConfig | None = None


@dataclass
class FilterConfig:
    process_noise: ProcessNoise = ProcessNoise()
    lidar: LidarUpdateConfig = LidarUpdateConfig()
    voxel_size: float = 0.5
    voxel_capacity: int = 64
    voxel_min_dist: float = 0.05
    update_max_points: int = 1000
    update_grid: float = 0.3
    insert_grid: float = 0.1
    gravity: float = 9.81


@dataclass
class DualConfig:
    warmup_seconds: float = 3.0
    warmup_map_points: int = 5000
    init_rel_guess: Pose | None = None  # L1->L2 rough alignment; default from mounts
    init_max_scans: int = 20
    init_cov_inflation: float = 10.0
    divergence_window: int = 10
    divergence_degenerate_frac: float = 0.8
    divergence_rms: float = 0.3
    reinit_search_radius: float = 1.0
    reinit_max_rms: float = 0.1


@dataclass
class RunConfig:
    sim: SimConfig
    filter: FilterConfig
    dual: DualConfig
    raw_text: str = ""

    @property
    def seed(self) -> int:
        return self.sim.seed


def _pose_from_xyzrpy(vals) -> Pose:
    if len(vals) != 6:
        raise ConfigError("pose must be [x, y, z, roll_deg, pitch_deg, yaw_deg]")
    x, y, z, r, p, yw = [float(v) for v in vals]
    rot = (
        so3_exp([0, 0, np.radians(yw)])
        @ so3_exp([0, np.radians(p), 0])
        @ so3_exp([np.radians(r), 0, 0])
    )
    return Pose(rot, np.array([x, y, z]))


def _sensor_assignment(entry: dict) -> SensorAssignment:
    preset_name = entry.get("preset")
    if preset_name not in SENSOR_PRESETS:
        raise ConfigError(f"unknown sensor preset {preset_name!r}")
    preset = SENSOR_PRESETS[preset_name]
    if "points_per_second" in entry:
        preset = preset.with_rate(float(entry["points_per_second"]))
    mount_name = entry.get("mount", "helmet-top")
    if mount_name not in MOUNTS:
        raise ConfigError(f"unknown mount {mount_name!r}")
    return SensorAssignment(preset, MOUNTS[mount_name])


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"TOML parse error: {e}") from e

    sim_doc = doc.get("sim", {})
    scenario = sim_doc.get("scenario", "walk-loop")
    if scenario not in TRAJECTORY_KINDS:
        raise ConfigError(f"unknown scenario kind {scenario!r}; expected one of {TRAJECTORY_KINDS}")
    duration = float(sim_doc.get("duration", 30.0))
    if duration <= 0:
        raise ConfigError("sim.duration must be > 0")
    if "seed" not in sim_doc:
        raise ConfigError("sim.seed is mandatory (no wall-clock entropy anywhere)")
    seed = int(sim_doc["seed"])

    scene_path = None
    if "scene" in sim_doc:
        scene_path = Path(sim_doc["scene"])
        if base_dir is not None and not scene_path.is_absolute():
            scene_path = base_dir / scene_path

    sensors = [_sensor_assignment(e) for e in sim_doc.get("sensors", [])]
    if not sensors:
        raise ConfigError("at least one [[sim.sensors]] entry is required")
    if len(sensors) > 2:
        raise ConfigError("at most two sensors are supported")

    vio = None
    if "vio" in sim_doc:
        v = sim_doc["vio"]
        vio = VioConfig(
            keyframe_period=float(v.get("keyframe_period", 0.5)),
            trans_sigma=float(v.get("trans_sigma", 0.01)),
            rot_sigma_deg=float(v.get("rot_sigma_deg", 0.2)),
        )
        if vio.keyframe_period <= 0:
            raise ConfigError("sim.vio.keyframe_period must be > 0")

    sim = SimConfig(
        scenario=scenario,
        duration=duration,
        seed=seed,
        scene_path=scene_path,
        sensors=sensors,
        range_noise_sigma=float(sim_doc.get("range_noise_sigma", 0.02)),
        imu_noise=bool(sim_doc.get("imu_noise", True)),
        imu_rate_hz=float(sim_doc.get("imu_rate_hz", 200.0)),
        vio=vio,
    )

    f_doc = doc.get("filter", {})
    lidar = LidarUpdateConfig(
        meas_sigma=float(f_doc.get("meas_sigma", 0.02)),
        max_iterations=int(f_doc.get("max_iterations", 5)),
        step_tolerance=float(f_doc.get("step_tolerance", 1e-6)),
        outlier_gate=float(f_doc.get("outlier_gate", 0.5)),
        knn=int(f_doc.get("knn", 12)),
        search_radius=float(f_doc.get("search_radius", 0.5)),
        plane_rms_threshold=float(f_doc.get("plane_rms_threshold", 0.1)),
        min_matches=int(f_doc.get("min_matches", 10)),
        degeneracy_min_eig=float(f_doc.get("degeneracy_min_eig", 10.0)),
    )
    noise = ProcessNoise(
        gyro_noise=float(f_doc.get("gyro_noise", 2e-4)),
        accel_noise=float(f_doc.get("accel_noise", 2e-3)),
        gyro_bias_walk=float(f_doc.get("gyro_bias_walk", 1e-5)),
        accel_bias_walk=float(f_doc.get("accel_bias_walk", 1e-4)),
    )
    fil = FilterConfig(
        process_noise=noise,
        lidar=lidar,
        voxel_size=float(f_doc.get("voxel_size", 0.5)),
        voxel_capacity=int(f_doc.get("voxel_capacity", 64)),
        voxel_min_dist=float(f_doc.get("voxel_min_dist", 0.05)),
        update_max_points=int(f_doc.get("update_max_points", 1000)),
        update_grid=float(f_doc.get("update_grid", 0.3)),
        insert_grid=float(f_doc.get("insert_grid", 0.1)),
        gravity=float(f_doc.get("gravity", 9.81)),
    )

    d_doc = doc.get("dual", {})
    rel_guess = None
    if "init_rel_guess" in d_doc:
        rel_guess = _pose_from_xyzrpy(d_doc["init_rel_guess"])
    dual = DualConfig(
        warmup_seconds=float(d_doc.get("warmup_seconds", 3.0)),
        warmup_map_points=int(d_doc.get("warmup_map_points", 5000)),
        init_rel_guess=rel_guess,
        init_max_scans=int(d_doc.get("init_max_scans", 20)),
        init_cov_inflation=float(d_doc.get("init_cov_inflation", 10.0)),
        divergence_window=int(d_doc.get("divergence_window", 10)),
        divergence_degenerate_frac=float(d_doc.get("divergence_degenerate_frac", 0.8)),
        divergence_rms=float(d_doc.get("divergence_rms", 0.3)),
        reinit_search_radius=float(d_doc.get("reinit_search_radius", 1.0)),
        reinit_max_rms=float(d_doc.get("reinit_max_rms", 0.1)),
    )
    return RunConfig(sim=sim, filter=fil, dual=dual, raw_text=text)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, base_dir=path.parent)
