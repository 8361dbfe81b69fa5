"""Dataset generation: run the synthetic world and write the stream logs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from portalio.config import RunConfig
from portalio.geometry import Pose, Rotation, write_tum, read_tum
from portalio.sim.imu import ImuBatch, ImuModel, synthesize_imu
from portalio.sim.logs import (
    config_hash,
    read_imu_log,
    read_manifest,
    read_scan_log,
    read_vio_log,
    write_imu_log,
    write_manifest,
    write_scan_log,
    write_vio_log,
)
from portalio.sim.mounts import mounted_trajectory
from portalio.sim.scene import Scene
from portalio.sim.sensors import cast_scan, scan_count
from portalio.sim.trajectory import generate_trajectory
from portalio.sim.vio import simulate_vio_stream

SENSOR_NAMES = ("l1", "l2")


def _sensor_seed(seed: int, idx: int, purpose: int) -> int:
    return int(np.random.SeedSequence([seed, idx, purpose]).generate_state(1)[0])


def build_dataset(config: RunConfig, scene: Scene, out_dir) -> Path:
    """Simulate all sensor streams for a config and write the dataset.

    Produces, per sensor: scan log, IMU log and ground-truth trajectory;
    plus the optional relative-pose stream (generated in the first sensor's
    frame) and a manifest recording the configuration hash.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim = config.sim
    body = generate_trajectory(sim.scenario, sim.duration, sim.seed)
    scene.save(out / "scene.json")

    manifest = {
        "format": 1,
        "config_hash": config_hash(config.raw_text),
        "scenario": sim.scenario,
        "duration": sim.duration,
        "seed": sim.seed,
        "scene_file": "scene.json",
        "range_noise_sigma": sim.range_noise_sigma,
        "imu_rate_hz": sim.imu_rate_hz,
        "imu_noise": sim.imu_noise,
        "sensors": [],
        "vio": None,
    }

    trajectories = []
    for idx, assignment in enumerate(sim.sensors):
        name = SENSOR_NAMES[idx]
        sensor_traj = mounted_trajectory(body, assignment.mount, seed=_sensor_seed(sim.seed, idx, 1))
        trajectories.append(sensor_traj)

        n_scans = scan_count(assignment.preset, sim.duration)
        scans = [
            cast_scan(
                scene,
                sensor_traj,
                assignment.preset,
                k,
                range_noise_sigma=sim.range_noise_sigma,
                seed=_sensor_seed(sim.seed, idx, 2),
            )
            for k in range(n_scans)
        ]
        write_scan_log(out / f"{name}_scans.jsonl", scans)

        rng_bias = np.random.default_rng(np.random.SeedSequence([sim.seed, idx, 3]))
        if sim.imu_noise:
            model = ImuModel(
                init_gyro_bias=rng_bias.uniform(-2e-3, 2e-3, 3),
                init_accel_bias=rng_bias.uniform(-2e-2, 2e-2, 3),
                rate_hz=sim.imu_rate_hz,
            )
        else:
            model = ImuModel(0.0, 0.0, 0.0, 0.0, rate_hz=sim.imu_rate_hz)
        imu = synthesize_imu(sensor_traj, model, seed=_sensor_seed(sim.seed, idx, 4))
        write_imu_log(out / f"{name}_imu.jsonl", imu)

        gt_times = np.arange(n_scans + 1) * assignment.preset.scan_period
        gt_poses = [sensor_traj.pose(float(t)) for t in gt_times]
        write_tum(out / f"{name}_gt.tum", gt_times, gt_poses)

        v0 = sensor_traj.velocity_world(np.array([0.0]))[0]
        manifest["sensors"].append(
            {
                "id": name,
                "preset": assignment.preset.name,
                "points_per_second": assignment.preset.points_per_second,
                "scan_period": assignment.preset.scan_period,
                "pattern": assignment.preset.pattern,
                "mount": assignment.mount.name,
                "files": {
                    "scans": f"{name}_scans.jsonl",
                    "imu": f"{name}_imu.jsonl",
                    "gt": f"{name}_gt.tum",
                },
                "initial_velocity": v0.tolist(),
            }
        )

    if sim.vio is not None:
        records = simulate_vio_stream(
            trajectories[0],
            keyframe_period=sim.vio.keyframe_period,
            trans_sigma=sim.vio.trans_sigma,
            rot_sigma_deg=sim.vio.rot_sigma_deg,
            seed=_sensor_seed(sim.seed, 0, 5),
        )
        write_vio_log(out / "vio.jsonl", records)
        manifest["vio"] = {
            "file": "vio.jsonl",
            "keyframe_period": sim.vio.keyframe_period,
            "trans_sigma": sim.vio.trans_sigma,
            "rot_sigma_deg": sim.vio.rot_sigma_deg,
        }

    write_manifest(out / "manifest.json", manifest)
    return out


@dataclass
class SensorStreams:
    name: str
    scans: list
    imu: ImuBatch
    gt_times: np.ndarray
    gt_poses: list
    scan_period: float
    initial_velocity: np.ndarray


@dataclass
class Dataset:
    """Loaded dataset: per-sensor streams plus the optional VIO stream."""

    path: Path
    manifest: dict
    sensors: list[SensorStreams]
    vio: list | None

    def sensor(self, name: str) -> SensorStreams:
        for s in self.sensors:
            if s.name == name:
                return s
        raise KeyError(f"dataset has no sensor {name!r}")


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest = read_manifest(path / "manifest.json")
    if manifest.get("format") != 1:
        raise ValueError(f"unsupported dataset format {manifest.get('format')!r}")
    sensors = []
    for entry in manifest["sensors"]:
        files = entry["files"]
        gt_times, gt_poses = read_tum(path / files["gt"])
        sensors.append(
            SensorStreams(
                name=entry["id"],
                scans=read_scan_log(path / files["scans"]),
                imu=read_imu_log(path / files["imu"]),
                gt_times=gt_times,
                gt_poses=gt_poses,
                scan_period=float(entry["scan_period"]),
                initial_velocity=np.asarray(entry.get("initial_velocity", [0, 0, 0]), dtype=float),
            )
        )
    vio = None
    if manifest.get("vio"):
        vio = read_vio_log(path / manifest["vio"]["file"])
    return Dataset(path=path, manifest=manifest, sensors=sensors, vio=vio)
