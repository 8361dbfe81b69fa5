"""Odometry session orchestration.

Runs one or two filter pipelines over a single shared voxel map:

  - the primary pipeline bootstraps the map with its first scan and stays
    ACTIVE from the start;
  - a secondary pipeline begins in WARMUP and becomes ACTIVE only after its
    deskewed scan registers into the already-built map (point-to-plane ICP
    from an operator-grade rough guess);
  - degenerate updates never move a state and never insert points;
  - a pipeline whose recent updates are mostly degenerate (or persistently
    bad) is declared DIVERGED, stops contributing to the map, and enters
    REINIT: per-scan ICP re-registration attempts against the shared map
    until geometry supports a confident pose again.

Events from both sensors are processed strictly in scan-end order with a
deterministic tie-break (sensor order), so a run is a pure function of the
dataset and configuration.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from portalio.config import DualConfig, FilterConfig, RunConfig
from portalio.deskew import deskew_scan
from portalio.esikf import (
    FilterState,
    RelPoseResidual,
    UpdateReport,
    make_initial_state,
    predict,
    update_lidar,
    update_relpose,
)
from portalio.geometry import Pose, write_tum
from portalio.icp import IcpParams, IcpResult, register
from portalio.simulate import Dataset, SensorStreams
from portalio.voxel_map import VoxelMap, _pack_keys

WARMUP = "WARMUP"
ACTIVE = "ACTIVE"
DIVERGED = "DIVERGED"
REINIT = "REINIT"

RUN_MODES = ("single", "dual", "single+vio")


class SessionError(RuntimeError):
    """Streams unusable for the requested mode (gaps, missing sensors)."""


def grid_downsample(points: np.ndarray, grid: float) -> np.ndarray:
    """Keep the first point of each cubic grid cell (deterministic)."""
    if len(points) == 0 or grid <= 0:
        return points
    packed = _pack_keys(np.floor(points / grid).astype(np.int64))
    _, first = np.unique(packed, return_index=True)
    return points[np.sort(first)]


def cap_points(points: np.ndarray, budget: int) -> np.ndarray:
    """Deterministic stride subsample down to at most `budget` points."""
    if len(points) <= budget:
        return points
    stride = int(np.ceil(len(points) / budget))
    return points[::stride]


def detect_divergence(
    reports: list[UpdateReport],
    window: int = 10,
    degenerate_frac: float = 0.8,
    rms_threshold: float = 0.3,
) -> bool:
    """True when the recent update window shows sustained failure.

    Triggers when >= degenerate_frac of the window is flagged DEGENERATE, or
    when every update in the window has RMS above rms_threshold.
    """
    if len(reports) < window:
        return False
    recent = reports[-window:]
    frac = np.mean([r.degenerate for r in recent])
    if frac >= degenerate_frac:
        return True
    rms = np.array([r.rms if np.isfinite(r.rms) else np.inf for r in recent])
    return bool(np.all(rms > rms_threshold))


def initialize_secondary(
    deskewed_points: np.ndarray,
    vmap: VoxelMap,
    guess: Pose,
    t: float,
    velocity: np.ndarray,
    fcfg: FilterConfig,
    dcfg: DualConfig,
) -> tuple[FilterState | None, IcpResult]:
    """Register a secondary sensor's scan into the shared map.

    On a converged, non-degenerate registration returns a filter state
    seeded with the refined pose and an inflated initial covariance;
    otherwise returns (None, result) so the caller retries on a later scan.
    """
    params = IcpParams(
        knn=fcfg.lidar.knn,
        search_radius=dcfg.reinit_search_radius,
        plane_rms_threshold=fcfg.lidar.plane_rms_threshold,
        min_matches=fcfg.lidar.min_matches,
    )
    result = register(deskewed_points, vmap, guess, params)
    ok = (
        result.converged
        and result.min_eig >= fcfg.lidar.degeneracy_min_eig
        and result.rms <= dcfg.reinit_max_rms
    )
    if not ok:
        return None, result
    scale = np.sqrt(dcfg.init_cov_inflation)
    state = make_initial_state(
        t,
        result.pose,
        velocity=velocity,
        gravity=(0.0, 0.0, -fcfg.gravity),
        pos_std=0.01 * scale,
        rot_std=0.01 * scale,
        vel_std=0.05 * scale,
    )
    return state, result


@dataclass
class PipelineHandle:
    """One device's odometry pipeline and its bookkeeping."""

    name: str
    source_id: int
    streams: SensorStreams
    state: FilterState
    status: str
    is_primary: bool
    vio: list | None = None
    reports: list[UpdateReport] = field(default_factory=list)
    diag: list[dict] = field(default_factory=list)
    traj_times: list[float] = field(default_factory=list)
    traj_poses: list[Pose] = field(default_factory=list)
    status_log: list[tuple[float, str]] = field(default_factory=list)
    keyframe_cache: dict = field(default_factory=dict)
    vio_cursor: int = 0
    vio_dropped: int = 0
    init_attempts: int = 0
    activated_at: float | None = None

    def set_status(self, t: float, status: str):
        if status != self.status:
            self.status = status
            self.status_log.append((float(t), status))


@dataclass
class SessionResult:
    trajectories: dict
    map: VoxelMap
    reports: dict
    status_log: dict
    insert_audit: list
    vio_dropped: int
    wall_time: float
    mode: str

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, (times, poses) in self.trajectories.items():
            write_tum(out / f"{name}_traj.tum", times, poses)
        self.map.export_ply(out / "map.ply")
        for name, lines in self.reports.items():
            path = out / f"diag_{name}.jsonl"
            tmp = path.with_name(path.name + ".tmp")
            with open(tmp, "w", encoding="ascii") as f:
                for line in lines:
                    f.write(json.dumps(line))
                    f.write("\n")
            tmp.replace(path)


def _initial_state_for(streams: SensorStreams, fcfg: FilterConfig) -> FilterState:
    pose0 = streams.gt_poses[0]
    return make_initial_state(
        float(streams.gt_times[0]),
        pose0,
        velocity=streams.initial_velocity,
        gravity=(0.0, 0.0, -fcfg.gravity),
    )


def _check_stream_gaps(streams: SensorStreams, max_gap: float = 1.0):
    ends = np.array([s.t1 for s in streams.scans])
    if len(ends) == 0:
        raise SessionError(f"sensor {streams.name} has no scans")
    gaps = np.diff(np.concatenate([[0.0], ends]))
    if np.any(gaps > max_gap):
        raise SessionError(f"sensor {streams.name} has a stream gap > {max_gap}s")


def _nominal_rel_guess(dataset: Dataset, cfg: RunConfig) -> Pose:
    if cfg.dual.init_rel_guess is not None:
        return cfg.dual.init_rel_guess
    from portalio.sim.mounts import MOUNTS

    mounts = [MOUNTS[e["mount"]] for e in dataset.manifest["sensors"]]
    return mounts[0].offset.inverse() @ mounts[1].offset


def run_session(
    dataset: Dataset,
    cfg: RunConfig,
    mode: str,
    primary: str = "l1",
) -> SessionResult:
    """Run an odometry session over a dataset.

    mode:
      single      one pipeline (the `primary` sensor), LiDAR-inertial only;
                  running the second sensor solo doubles as the private-map
                  ablation of the shared-map configuration
      single+vio  same plus relative-pose updates from the external stream
      dual        both sensors over one shared map
    """
    if mode not in RUN_MODES:
        raise SessionError(f"unknown mode {mode!r}")
    fcfg = cfg.filter
    t_start = time.perf_counter()

    if mode in ("single", "single+vio"):
        names = [primary]
    else:
        names = [s.name for s in dataset.sensors]
        if primary != "l1":
            raise SessionError("dual mode always bootstraps from the first sensor")
    try:
        stream_list = [dataset.sensor(n) for n in names]
    except KeyError as e:
        raise SessionError(str(e)) from e
    for s in stream_list:
        _check_stream_gaps(s)

    use_vio = mode == "single+vio"
    if use_vio and dataset.vio is None:
        raise SessionError("mode single+vio requires a relative-pose stream in the dataset")

    shared_map = VoxelMap(fcfg.voxel_size, fcfg.voxel_capacity, fcfg.voxel_min_dist)
    pipelines: list[PipelineHandle] = []
    for i, s in enumerate(stream_list):
        is_primary = i == 0
        pl = PipelineHandle(
            name=s.name,
            source_id=i,
            streams=s,
            state=_initial_state_for(s, fcfg),
            status=ACTIVE if is_primary else WARMUP,
            is_primary=is_primary,
            vio=dataset.vio if (use_vio and is_primary) else None,
        )
        pl.status_log.append((float(s.gt_times[0]), pl.status))
        if is_primary:
            pl.activated_at = float(s.gt_times[0])
        if pl.vio is not None:
            period = dataset.manifest["vio"]["keyframe_period"]
            pl.keyframe_cache[round(pl.state.t / period)] = pl.state.pose
        pipelines.append(pl)

    rel_guess = None
    if len(pipelines) == 2:
        rel_guess = _nominal_rel_guess(dataset, cfg)

    # merge scan events by end time; primary pipeline wins ties
    events = []
    for pi, pl in enumerate(pipelines):
        for si, scan in enumerate(pl.streams.scans):
            events.append((scan.t1, pi, si))
    events.sort(key=lambda e: (e[0], e[1]))

    insert_audit = []

    def insert_points(pl: PipelineHandle, deskewed: np.ndarray, degenerate_flag):
        world = pl.state.pose.apply(grid_downsample(deskewed, fcfg.insert_grid))
        n = shared_map.insert(world, source_id=pl.source_id)
        insert_audit.append(
            {"t": pl.state.t, "sensor": pl.name, "status": pl.status,
             "degenerate": degenerate_flag, "inserted": n}
        )

    def diag_line(pl: PipelineHandle, report: UpdateReport):
        line = report.to_dict()
        line["status"] = pl.status
        pl.diag.append(line)

    def apply_vio(pl: PipelineHandle, t_now: float):
        tol = 1e-6
        period = dataset.manifest["vio"]["keyframe_period"]
        while pl.vio_cursor < len(pl.vio) and pl.vio[pl.vio_cursor].t_j <= t_now + tol:
            rec = pl.vio[pl.vio_cursor]
            pl.vio_cursor += 1
            key_i = round(rec.t_i / period)
            stored = pl.keyframe_cache.get(key_i)
            if stored is None or abs(rec.t_j - t_now) > tol:
                pl.vio_dropped += 1
                continue
            residual = RelPoseResidual(rec.t_i, rec.t_j, rec.pose, rec.cov, stored)
            pl.state = update_relpose(pl.state, residual)

    def cache_keyframe(pl: PipelineHandle, t_now: float):
        period = dataset.manifest["vio"]["keyframe_period"]
        k = round(t_now / period)
        if abs(t_now - k * period) <= 1e-6:
            pl.keyframe_cache[k] = pl.state.pose

    for t_end, pi, si in events:
        pl = pipelines[pi]
        scan = pl.streams.scans[si]
        vmap = shared_map

        if pl.status == WARMUP:
            primary_pl = pipelines[0]
            # follow the primary with the rough mount guess until the map is ready
            guess = primary_pl.state.pose @ rel_guess
            base = make_initial_state(
                pl.state.t, guess,
                velocity=primary_pl.state.v, gravity=(0.0, 0.0, -fcfg.gravity),
            )
            imu_win = pl.streams.imu.between(base.t, scan.t1)
            state, segment = predict(base, imu_win, fcfg.process_noise)
            state.t = scan.t1
            pl.state = state
            ready = (
                primary_pl.activated_at is not None
                and t_end - primary_pl.activated_at >= cfg.dual.warmup_seconds
                and len(shared_map) >= cfg.dual.warmup_map_points
            )
            if ready:
                pl.init_attempts += 1
                deskewed = deskew_scan(scan, segment)
                ds = cap_points(grid_downsample(deskewed, fcfg.update_grid), fcfg.update_max_points)
                seeded, icp_res = initialize_secondary(
                    ds, vmap, state.pose, scan.t1, state.v, fcfg, cfg.dual
                )
                if seeded is not None:
                    pl.state = seeded
                    pl.set_status(t_end, ACTIVE)
                    pl.activated_at = t_end
                    pl.traj_times.append(t_end)
                    pl.traj_poses.append(pl.state.pose)
                elif pl.init_attempts == cfg.dual.init_max_scans:
                    pl.diag.append(
                        {"t": t_end, "event": "init_stalled", "attempts": pl.init_attempts,
                         "status": WARMUP}
                    )
            continue

        if pl.status == DIVERGED:
            pl.set_status(t_end, REINIT)

        imu_win = pl.streams.imu.between(pl.state.t, scan.t1)
        state, segment = predict(pl.state, imu_win, fcfg.process_noise)
        state.t = scan.t1
        deskewed = deskew_scan(scan, segment)

        if pl.status == REINIT:
            pl.state = state
            ds = cap_points(grid_downsample(deskewed, fcfg.update_grid), fcfg.update_max_points)
            report = UpdateReport(t_end, 0, float("nan"), 0.0, 0, True)
            if len(ds):
                seeded, icp_res = initialize_secondary(
                    ds, vmap, state.pose, scan.t1, state.v, fcfg, cfg.dual
                )
                report.matched = int(len(ds))
                report.rms = icp_res.rms
                report.min_eig = icp_res.min_eig
                report.iterations = icp_res.iterations
                if seeded is not None:
                    # keep the filtered velocity/bias knowledge, adopt the pose
                    pl.state.p = seeded.p
                    pl.state.q = seeded.q
                    pl.state.P = seeded.P
                    pl.set_status(t_end, ACTIVE)
                    # fresh divergence window after recovery
                    pl.reports.clear()
            pl.reports.append(report)
            diag_line(pl, report)
            pl.traj_times.append(t_end)
            pl.traj_poses.append(pl.state.pose)
            continue

        # ACTIVE: bootstrap or measurement update
        if len(vmap) == 0 and pl.is_primary:
            pl.state = state
            insert_points(pl, deskewed, degenerate_flag=None)
            pl.traj_times.append(t_end)
            pl.traj_poses.append(pl.state.pose)
            continue

        ds_update = cap_points(grid_downsample(deskewed, fcfg.update_grid), fcfg.update_max_points)
        new_state, report = update_lidar(state, ds_update, vmap, fcfg.lidar)
        pl.state = new_state
        if pl.vio is not None:
            apply_vio(pl, t_end)
            cache_keyframe(pl, t_end)
        pl.reports.append(report)
        diag_line(pl, report)
        if not report.degenerate:
            insert_points(pl, deskewed, degenerate_flag=report.degenerate)
        pl.traj_times.append(t_end)
        pl.traj_poses.append(pl.state.pose)

        if detect_divergence(
            pl.reports,
            window=cfg.dual.divergence_window,
            degenerate_frac=cfg.dual.divergence_degenerate_frac,
            rms_threshold=cfg.dual.divergence_rms,
        ):
            pl.set_status(t_end, DIVERGED)

    return SessionResult(
        trajectories={
            pl.name: (np.asarray(pl.traj_times), pl.traj_poses) for pl in pipelines
        },
        map=shared_map,
        reports={pl.name: pl.diag for pl in pipelines},
        status_log={pl.name: pl.status_log for pl in pipelines},
        insert_audit=insert_audit,
        vio_dropped=sum(pl.vio_dropped for pl in pipelines),
        wall_time=time.perf_counter() - t_start,
        mode=mode,
    )
