"""Dataset file formats.

  scans  JSON-Lines, one scan per line:
         {"t0": ..., "t1": ..., "points": [[t, x, y, z, surface_id], ...]}
  imu    JSON-Lines, one sample per line: [t, wx, wy, wz, ax, ay, az]
  vio    JSON-Lines, one relative-pose record per line:
         [ti, tj, tx, ty, tz, qx, qy, qz, qw, 36 row-major covariance values]
  gt     TUM trajectory text

Floats are serialized with Python's shortest round-trip repr, so identical
simulations produce byte-identical logs.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from portalio.geometry import Pose, Rotation
from portalio.sim.imu import ImuBatch
from portalio.sim.sensors import ScanRecord
from portalio.sim.vio import VioRecord


def _atomic_write(path: Path, write_fn) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="ascii") as f:
        write_fn(f)
    os.replace(tmp, path)


def write_scan_log(path, scans: list[ScanRecord]) -> None:
    def write(f):
        for s in scans:
            pts = [
                [float(t), float(p[0]), float(p[1]), float(p[2]), int(sid)]
                for t, p, sid in zip(s.times, s.points, s.surface_ids)
            ]
            f.write(json.dumps({"t0": s.t0, "t1": s.t1, "points": pts}))
            f.write("\n")

    _atomic_write(Path(path), write)


def read_scan_log(path) -> list[ScanRecord]:
    scans = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            pts = np.asarray(obj["points"], dtype=float).reshape(-1, 5)
            scans.append(
                ScanRecord(
                    t0=float(obj["t0"]),
                    t1=float(obj["t1"]),
                    times=pts[:, 0].copy(),
                    points=pts[:, 1:4].copy(),
                    surface_ids=pts[:, 4].astype(np.int64),
                )
            )
    return scans


def write_imu_log(path, imu: ImuBatch) -> None:
    def write(f):
        for i in range(len(imu)):
            row = [float(imu.t[i])] + imu.gyro[i].tolist() + imu.accel[i].tolist()
            f.write(json.dumps(row))
            f.write("\n")

    _atomic_write(Path(path), write)


def read_imu_log(path) -> ImuBatch:
    rows = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    arr = np.asarray(rows, dtype=float).reshape(-1, 7)
    return ImuBatch(arr[:, 0], arr[:, 1:4], arr[:, 4:7])


def write_vio_log(path, records: list[VioRecord]) -> None:
    def write(f):
        for r in records:
            q = r.pose.rotation.canonical_quat()
            row = (
                [r.t_i, r.t_j]
                + r.pose.translation.tolist()
                + [q[1], q[2], q[3], q[0]]
                + np.asarray(r.cov, dtype=float).reshape(36).tolist()
            )
            f.write(json.dumps(row))
            f.write("\n")

    _atomic_write(Path(path), write)


def read_vio_log(path) -> list[VioRecord]:
    records = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            if len(row) != 45:
                raise ValueError("malformed relative-pose record")
            ti, tj = row[0], row[1]
            t = np.asarray(row[2:5], dtype=float)
            qx, qy, qz, qw = row[5:9]
            cov = np.asarray(row[9:45], dtype=float).reshape(6, 6)
            records.append(
                VioRecord(float(ti), float(tj), Pose(Rotation(np.array([qw, qx, qy, qz])), t), cov)
            )
    return records


def config_hash(config_text: str) -> str:
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()[:16]


def write_manifest(path, manifest: dict) -> None:
    def write(f):
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")

    _atomic_write(Path(path), write)


def read_manifest(path) -> dict:
    with open(path, "r", encoding="ascii") as f:
        return json.load(f)
