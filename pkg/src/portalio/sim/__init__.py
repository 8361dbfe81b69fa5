"""Deterministic synthetic world: scenes, trajectories, sensors, IMU, VIO."""

from portalio.sim.scene import Box, Patch, Scene
from portalio.sim.trajectory import Trajectory, generate_trajectory
from portalio.sim.mounts import MountConfig, MOUNTS, mounted_trajectory
from portalio.sim.sensors import ScanRecord, SensorPreset, SENSOR_PRESETS, cast_scan
from portalio.sim.imu import ImuBatch, ImuModel, synthesize_imu
from portalio.sim.vio import VioRecord, relative_pose, simulate_vio_stream

__all__ = [
    "Box",
    "Patch",
    "Scene",
    "Trajectory",
    "generate_trajectory",
    "MountConfig",
    "MOUNTS",
    "mounted_trajectory",
    "ScanRecord",
    "SensorPreset",
    "SENSOR_PRESETS",
    "cast_scan",
    "ImuBatch",
    "ImuModel",
    "synthesize_imu",
    "VioRecord",
    "relative_pose",
    "simulate_vio_stream",
]
