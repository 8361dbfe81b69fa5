"""Point-to-plane ICP against a voxel map.

Used to register the second device into the first device's map at startup
(and to re-register a diverged pipeline). Shares the plane-correspondence
machinery and Jacobian convention with the filter update, so both agree on
residual semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from portalio.esikf import _pose_jacobian_rows
from portalio.geometry import Pose, Rotation, quat_exp, quat_mul, quat_to_matrix
from portalio.voxel_map import VoxelMap, associate_planes, robust_gate


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 30
    knn: int = 10
    search_radius: float = 1.0
    plane_rms_threshold: float = 0.1
    outlier_gate: float = 1.0
    step_tolerance: float = 1e-6
    rms_tolerance: float = 1e-8
    min_matches: int = 10
    max_bad_iterations: int = 3


@dataclass
class IcpResult:
    pose: Pose
    rms: float
    iterations: int
    converged: bool
    min_eig: float  # smallest eigenvalue of the final normal-equations matrix
    rms_history: list = None  # rms after each accepted iteration


def _evaluate(source, vmap, pose, params):
    R = pose.rotation.matrix
    pts_w = source @ R.T + pose.translation
    assoc = associate_planes(
        vmap, pts_w,
        k=params.knn, max_radius=params.search_radius,
        rms_threshold=params.plane_rms_threshold,
    )
    resid = assoc.residuals(pts_w)
    abs_r = np.abs(resid)
    gate = robust_gate(abs_r[assoc.valid], params.outlier_gate)
    valid = assoc.valid & (abs_r <= gate)
    m = int(valid.sum())
    rms = float(np.sqrt(np.mean(resid[valid] ** 2))) if m else float("inf")
    return assoc, resid, valid, m, rms


def register(
    source: np.ndarray,
    target: VoxelMap,
    initial: Pose = Pose.identity(),
    params: IcpParams = IcpParams(),
) -> IcpResult:
    """Refine `initial` so the source points fit the target map's planes.

    Gauss-Newton on stacked point-to-plane residuals with step backtracking;
    accepted iterations never increase the RMS. Degenerate geometry (rank
    deficient normal equations) still converges via a minimum-norm step, but
    the reported min eigenvalue tells the caller the result is unreliable
    along the null directions.
    """
    source = np.asarray(source, dtype=float).reshape(-1, 3)
    if len(source) == 0:
        raise ValueError("source cloud is empty")
    if len(target) < 100:
        raise ValueError(f"target map too small ({len(target)} points, need >= 100)")

    pose = initial
    assoc, resid, valid, m, rms = _evaluate(source, target, pose, params)
    min_eig = 0.0
    converged = False
    bad_streak = 0
    it = 0
    history = [rms]

    for it in range(1, params.max_iterations + 1):
        if m < params.min_matches:
            converged = False
            break
        h6 = _pose_jacobian_rows(source[valid], assoc.normals[valid], pose.rotation.matrix)
        r = resid[valid]
        info = h6.T @ h6
        min_eig = float(np.linalg.eigvalsh(0.5 * (info + info.T))[0])
        dx = -np.linalg.lstsq(h6, r, rcond=None)[0]

        accepted = False
        step = dx
        for _ in range(3):
            cand = Pose(
                Rotation(quat_mul(pose.rotation.q, quat_exp(step[3:6])), _normalized=False),
                pose.translation + step[0:3],
            )
            c_assoc, c_resid, c_valid, c_m, c_rms = _evaluate(source, target, cand, params)
            if c_m >= params.min_matches and c_rms <= rms + 1e-15:
                accepted = True
                break
            step = step * 0.5
        if not accepted:
            bad_streak += 1
            if bad_streak >= params.max_bad_iterations:
                converged = False
                break
            continue

        bad_streak = 0
        rms_drop = rms - c_rms
        pose, assoc, resid, valid, m, rms = cand, c_assoc, c_resid, c_valid, c_m, c_rms
        history.append(rms)
        if np.linalg.norm(step) < params.step_tolerance or rms_drop < params.rms_tolerance:
            converged = True
            break
    else:
        converged = m >= params.min_matches

    if m < params.min_matches:
        converged = False
    return IcpResult(
        pose=pose, rms=rms, iterations=it, converged=converged, min_eig=min_eig,
        rms_history=history,
    )
