"""Scene geometry: axis-aligned boxes and finite planar patches, all in meters.

A scene is a static collection of surfaces identified by integer ids.
Ray casting returns the nearest intersection per ray; `surface_distance`
measures how far points lie from the closest surface (the ground-truth
check used all over the test suite).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class Box:
    """Axis-aligned solid box given by two opposite corners."""

    lo: np.ndarray
    hi: np.ndarray
    surface_id: int

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(3)
        hi = np.asarray(self.hi, dtype=float).reshape(3)
        if not np.all(hi > lo):
            raise ValueError("box hi must exceed lo on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True)
class Patch:
    """Finite planar parallelogram: corner + two edge vectors."""

    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    surface_id: int

    def __post_init__(self):
        c = np.asarray(self.corner, dtype=float).reshape(3)
        u = np.asarray(self.edge_u, dtype=float).reshape(3)
        v = np.asarray(self.edge_v, dtype=float).reshape(3)
        if np.linalg.norm(np.cross(u, v)) < 1e-12:
            raise ValueError("patch edge vectors must be linearly independent")
        object.__setattr__(self, "corner", c)
        object.__setattr__(self, "edge_u", u)
        object.__setattr__(self, "edge_v", v)

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)


class Scene:
    """Immutable surface collection with vectorized ray casting."""

    def __init__(self, boxes=(), patches=()):
        self.boxes = list(boxes)
        self.patches = list(patches)
        if not self.boxes and not self.patches:
            raise ValueError("scene must contain at least one surface")
        self._box_lo = np.stack([b.lo for b in self.boxes]) if self.boxes else np.zeros((0, 3))
        self._box_hi = np.stack([b.hi for b in self.boxes]) if self.boxes else np.zeros((0, 3))
        self._box_id = np.array([b.surface_id for b in self.boxes], dtype=np.int64)
        if self.patches:
            self._p_corner = np.stack([p.corner for p in self.patches])
            self._p_u = np.stack([p.edge_u for p in self.patches])
            self._p_v = np.stack([p.edge_v for p in self.patches])
            self._p_n = np.stack([p.normal for p in self.patches])
            # 2x2 Gram inverses for in-plane parameter recovery
            uu = np.einsum("pi,pi->p", self._p_u, self._p_u)
            vv = np.einsum("pi,pi->p", self._p_v, self._p_v)
            uv = np.einsum("pi,pi->p", self._p_u, self._p_v)
            det = uu * vv - uv * uv
            self._p_g = np.stack([vv / det, -uv / det, uu / det], axis=1)  # g00, g01, g11
        else:
            self._p_corner = np.zeros((0, 3))
            self._p_u = np.zeros((0, 3))
            self._p_v = np.zeros((0, 3))
            self._p_n = np.zeros((0, 3))
            self._p_g = np.zeros((0, 3))
        self._p_id = np.array([p.surface_id for p in self.patches], dtype=np.int64)

    # -- ray casting ---------------------------------------------------------

    def _raycast_chunk(self, origins: np.ndarray, dirs: np.ndarray):
        n = origins.shape[0]
        best_t = np.full(n, np.inf)
        best_id = np.full(n, -1, dtype=np.int64)

        if len(self.boxes):
            o = origins[:, None, :]
            d = dirs[:, None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (self._box_lo[None] - o) / d
                t2 = (self._box_hi[None] - o) / d
            # rays parallel to a slab: inside -> unconstrained, outside -> miss
            par = np.abs(d) < 1e-15
            inside = (o >= self._box_lo[None]) & (o <= self._box_hi[None])
            near = np.minimum(t1, t2)
            far = np.maximum(t1, t2)
            near = np.where(par, np.where(inside, -np.inf, np.inf), near)
            far = np.where(par, np.where(inside, np.inf, -np.inf), far)
            tmin = near.max(axis=2)
            tmax = far.min(axis=2)
            hit = (tmax >= tmin) & (tmax > _RAY_EPS)
            t_hit = np.where(tmin > _RAY_EPS, tmin, tmax)
            t_hit = np.where(hit, t_hit, np.inf)
            bi = np.argmin(t_hit, axis=1)
            bt = t_hit[np.arange(n), bi]
            better = bt < best_t
            best_t[better] = bt[better]
            best_id[better] = self._box_id[bi[better]]

        if len(self.patches):
            o = origins[:, None, :]
            d = dirs[:, None, :]
            denom = np.einsum("npi,pi->np", d, self._p_n)
            offs = self._p_corner[None] - o
            num = np.einsum("npi,pi->np", offs, self._p_n)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = num / denom
            ok = (np.abs(denom) > 1e-15) & (t > _RAY_EPS)
            pt = o + t[..., None] * d
            e = pt - self._p_corner[None]
            eu = np.einsum("npi,pi->np", e, self._p_u)
            ev = np.einsum("npi,pi->np", e, self._p_v)
            a = self._p_g[None, :, 0] * eu + self._p_g[None, :, 1] * ev
            b = self._p_g[None, :, 1] * eu + self._p_g[None, :, 2] * ev
            tol = 1e-9
            ok &= (a >= -tol) & (a <= 1 + tol) & (b >= -tol) & (b <= 1 + tol)
            t_hit = np.where(ok, t, np.inf)
            bi = np.argmin(t_hit, axis=1)
            bt = t_hit[np.arange(n), bi]
            better = bt < best_t
            best_t[better] = bt[better]
            best_id[better] = self._p_id[bi[better]]

        return best_t, best_id

    def raycast(self, origins: np.ndarray, dirs: np.ndarray, chunk: int = 16384):
        """Nearest intersection along each ray.

        origins, dirs: (N, 3); dirs need not be normalized (t scales with |d|).
        Returns (t (N,), surface_id (N,), hit (N,) bool); t is inf on miss.
        """
        origins = np.atleast_2d(np.asarray(origins, dtype=float))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        n = origins.shape[0]
        t_out = np.empty(n)
        id_out = np.empty(n, dtype=np.int64)
        for s in range(0, n, chunk):
            e = min(s + chunk, n)
            t_out[s:e], id_out[s:e] = self._raycast_chunk(origins[s:e], dirs[s:e])
        return t_out, id_out, np.isfinite(t_out)

    # -- distance queries ----------------------------------------------------

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest scene surface."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        best = np.full(n, np.inf)
        if len(self.boxes):
            c = 0.5 * (self._box_lo + self._box_hi)
            h = 0.5 * (self._box_hi - self._box_lo)
            q = np.abs(pts[:, None, :] - c[None]) - h[None]
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=2)
            inside = np.minimum(q.max(axis=2), 0.0)
            best = np.minimum(best, np.abs(outside + inside).min(axis=1))
        if len(self.patches):
            e = pts[:, None, :] - self._p_corner[None]
            eu = np.einsum("npi,pi->np", e, self._p_u)
            ev = np.einsum("npi,pi->np", e, self._p_v)
            a = np.clip(self._p_g[None, :, 0] * eu + self._p_g[None, :, 1] * ev, 0.0, 1.0)
            b = np.clip(self._p_g[None, :, 1] * eu + self._p_g[None, :, 2] * ev, 0.0, 1.0)
            closest = (
                self._p_corner[None]
                + a[..., None] * self._p_u[None]
                + b[..., None] * self._p_v[None]
            )
            d = np.linalg.norm(pts[:, None, :] - closest, axis=2)
            best = np.minimum(best, d.min(axis=1))
        return best

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "unit": "meters",
            "boxes": [
                {"min": b.lo.tolist(), "max": b.hi.tolist(), "surface_id": b.surface_id}
                for b in self.boxes
            ],
            "patches": [
                {
                    "corner": p.corner.tolist(),
                    "edge_u": p.edge_u.tolist(),
                    "edge_v": p.edge_v.tolist(),
                    "surface_id": p.surface_id,
                }
                for p in self.patches
            ],
        }

    @staticmethod
    def from_dict(data: dict) -> "Scene":
        boxes = [Box(b["min"], b["max"], int(b["surface_id"])) for b in data.get("boxes", [])]
        patches = [
            Patch(p["corner"], p["edge_u"], p["edge_v"], int(p["surface_id"]))
            for p in data.get("patches", [])
        ]
        return Scene(boxes, patches)

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as f:
            json.dump(self.to_dict(), f, indent=1)
            f.write("\n")

    @staticmethod
    def load(path) -> "Scene":
        with open(path, "r", encoding="ascii") as f:
            return Scene.from_dict(json.load(f))
