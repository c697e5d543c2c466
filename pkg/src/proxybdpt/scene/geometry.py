"""Primitives and batched ray queries.

Scenes here hold a few dozen primitives, so every query tests every
primitive. The compiled kernel loops rays then primitives; the numpy form
does the same test over chunks of rays and is kept as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .vec import cross, dot, norm, normalize, uniform_sphere

SPHERE, TRIANGLE, RECTANGLE = 0, 1, 2
KIND_NAMES = {"sphere": SPHERE, "triangle": TRIANGLE, "rectangle": RECTANGLE}

CHUNK = 8192


@dataclass(frozen=True)
class Primitive:
    """One shape. ``inverted`` flips a sphere's normal to point inward."""

    kind: int
    material_id: int
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0
    p0: tuple = (0.0, 0.0, 0.0)
    p1: tuple = (0.0, 0.0, 0.0)
    p2: tuple = (0.0, 0.0, 0.0)
    inverted: bool = False
    name: str = ""

    @staticmethod
    def sphere(center, radius, material_id, inverted=False, name=""):
        return Primitive(SPHERE, material_id, center=tuple(center), radius=float(radius), inverted=inverted, name=name)

    @staticmethod
    def triangle(p0, p1, p2, material_id, name=""):
        return Primitive(TRIANGLE, material_id, p0=tuple(p0), p1=tuple(p1), p2=tuple(p2), name=name)

    @staticmethod
    def rectangle(origin, edge_u, edge_v, material_id, name=""):
        # stored as origin, origin+edge_u, origin+edge_v
        o = np.asarray(origin, dtype=float)
        return Primitive(RECTANGLE, material_id, p0=tuple(o), p1=tuple(o + edge_u), p2=tuple(o + edge_v), name=name)

    @property
    def area(self):
        if self.kind == SPHERE:
            return 4.0 * np.pi * self.radius**2
        e1 = np.subtract(self.p1, self.p0)
        e2 = np.subtract(self.p2, self.p0)
        a = float(norm(cross(e1, e2)))
        return a if self.kind == RECTANGLE else 0.5 * a


@dataclass
class Hit:
    position: np.ndarray
    normal: np.ndarray  # faces the incoming ray
    geometric_normal: np.ndarray  # outward or as authored
    front: bool  # ray arrived on the geometric-normal side
    material_id: int
    primitive_id: int
    distance: float


class Geometry:
    """Struct-of-arrays primitive set with batched intersection."""

    def __init__(self, primitives):
        self.primitives = list(primitives)
        if not self.primitives:
            raise ValueError("scene has no primitives")
        for i, p in enumerate(self.primitives):
            if not p.area > 1e-12:
                raise ValueError(f"primitive {p.name or i}: degenerate geometry (zero area or radius)")
        P = self.primitives
        self.kind = np.array([p.kind for p in P])
        self.material_id = np.array([p.material_id for p in P], dtype=np.int64)
        self.area = np.array([p.area for p in P])

        self.planar = np.flatnonzero(self.kind != SPHERE)
        self.spheres = np.flatnonzero(self.kind == SPHERE)
        pl = [P[i] for i in self.planar]
        self.pl_o = np.array([p.p0 for p in pl], dtype=float).reshape(-1, 3)
        self.pl_e1 = np.array([p.p1 for p in pl], dtype=float).reshape(-1, 3) - self.pl_o
        self.pl_e2 = np.array([p.p2 for p in pl], dtype=float).reshape(-1, 3) - self.pl_o
        self.pl_rect = np.array([p.kind == RECTANGLE for p in pl], dtype=bool)
        self.planar_slot = np.full(len(P), -1, dtype=np.int64)
        self.planar_slot[self.planar] = np.arange(len(self.planar))
        sp = [P[i] for i in self.spheres]
        self.sp_c = np.array([p.center for p in sp], dtype=float).reshape(-1, 3)
        self.sp_r = np.array([p.radius for p in sp], dtype=float)

        # per-primitive normal data (planar normals are constant)
        self.plane_normal = np.zeros((len(P), 3))
        if len(self.planar):
            self.plane_normal[self.planar] = normalize(cross(self.pl_e1, self.pl_e2))
        self.center = np.zeros((len(P), 3))
        self.radius = np.ones(len(P))
        self.flip = np.ones(len(P))
        for j, i in enumerate(self.spheres):
            self.center[i] = self.sp_c[j]
            self.radius[i] = self.sp_r[j]
            self.flip[i] = -1.0 if P[i].inverted else 1.0

        lo, hi = self._bounds()
        self.bbox = (lo, hi)
        self.diag = float(norm(hi - lo))
        self.eps = 1e-6 * self.diag

    def _bounds(self):
        pts = []
        for p in self.primitives:
            if p.kind == SPHERE:
                c = np.array(p.center)
                pts += [c - p.radius, c + p.radius]
            else:
                a, b, c = map(np.array, (p.p0, p.p1, p.p2))
                pts += [a, b, c]
                if p.kind == RECTANGLE:
                    pts.append(b + c - a)
        pts = np.array(pts)
        return pts.min(axis=0), pts.max(axis=0)

    # -- queries ----------------------------------------------------------

    def intersect(self, o, d, tmax=None):
        """Nearest hit for each ray. Returns (t, prim) with prim = -1 on miss."""
        o = np.ascontiguousarray(np.atleast_2d(o), dtype=float)
        d = np.ascontiguousarray(np.atleast_2d(d), dtype=float)
        N = len(o)
        t_out = np.full(N, np.inf)
        p_out = np.full(N, -1, dtype=np.int64)
        tmax = np.full(N, np.inf) if tmax is None else np.ascontiguousarray(np.broadcast_to(np.asarray(tmax, dtype=float), (N,)))
        _intersect_kernel(
            o, d, tmax, self.pl_o, self.pl_e1, self.pl_e2, self.pl_rect, self.planar,
            self.sp_c, self.sp_r, self.spheres, self.eps, t_out, p_out,
        )
        return t_out, p_out

    def intersect_numpy(self, o, d, tmax=None):
        """Vectorized numpy form of ``intersect``, kept as a cross-check."""
        o = np.atleast_2d(o)
        d = np.atleast_2d(d)
        N = len(o)
        t_out = np.full(N, np.inf)
        p_out = np.full(N, -1, dtype=np.int64)
        tmax = np.full(N, np.inf) if tmax is None else np.broadcast_to(np.asarray(tmax, dtype=float), (N,))
        for s in range(0, N, CHUNK):
            sl = slice(s, s + CHUNK)
            t, p = self._intersect_chunk(o[sl], d[sl], tmax[sl])
            t_out[sl] = t
            p_out[sl] = p
        return t_out, p_out

    def _intersect_chunk(self, o, d, tmax):
        n = len(o)
        best_t = tmax.copy()
        best_p = np.full(n, -1, dtype=np.int64)
        tmin = self.eps
        if len(self.planar):
            # Moller-Trumbore against all planar shapes at once: (n, P)
            e1, e2 = self.pl_e1[None], self.pl_e2[None]
            pv = cross(d[:, None, :], e2)
            det = dot(e1, pv)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / det
                tv = o[:, None, :] - self.pl_o[None]
                u = dot(tv, pv) * inv
                qv = cross(tv, e1)
                v = dot(d[:, None, :], qv) * inv
                t = dot(e2, qv) * inv
                inside = np.where(self.pl_rect[None], (v >= 0) & (v <= 1), (v >= 0) & (u + v <= 1))
                ok = (np.abs(det) > 1e-14) & (u >= 0) & (u <= 1) & inside & (t > tmin)
            t = np.where(ok, t, np.inf)
            j = np.argmin(t, axis=1)
            tj = t[np.arange(n), j]
            better = tj < best_t
            best_t = np.where(better, tj, best_t)
            best_p = np.where(better, self.planar[j], best_p)
        if len(self.spheres):
            oc = o[:, None, :] - self.sp_c[None]
            b = dot(oc, d[:, None, :])
            c = dot(oc, oc) - self.sp_r[None] ** 2
            disc = b * b - c
            sq = np.sqrt(np.maximum(disc, 0.0))
            t0 = -b - sq
            t1 = -b + sq
            t = np.where(t0 > tmin, t0, np.where(t1 > tmin, t1, np.inf))
            t = np.where(disc >= 0, t, np.inf)
            j = np.argmin(t, axis=1)
            tj = t[np.arange(n), j]
            better = tj < best_t
            best_t = np.where(better, tj, best_t)
            best_p = np.where(better, self.spheres[j], best_p)
        best_t = np.where(best_p >= 0, best_t, np.inf)
        return best_t, best_p

    def normal_at(self, prim, pos):
        """Geometric normal (as authored: outward for spheres unless inverted)."""
        n = self.plane_normal[prim].copy()
        sph = self.kind[prim] == SPHERE
        if np.any(sph):
            ns = (pos[sph] - self.center[prim[sph]]) / self.radius[prim[sph], None]
            n[sph] = normalize(ns) * self.flip[prim[sph], None]
        return n

    def offset(self, pos, n, direction):
        """Origin nudged off the surface toward the side ``direction`` leaves on."""
        side = np.where(dot(n, direction) >= 0, 1.0, -1.0)
        return pos + (side * self.eps * 10.0)[..., None] * n

    def visible(self, pa, na, pb, nb):
        """Mutual visibility of surface points (normals used for offsets)."""
        d = pb - pa
        dist = norm(d)
        w = d / dist[..., None]
        oa = self.offset(pa, na, w)
        ob = self.offset(pb, nb, -w)
        dd = ob - oa
        L = norm(dd)
        t, _ = self.intersect(oa, dd / L[..., None], tmax=L * (1.0 - 1e-7))
        return ~np.isfinite(t)

    def sample_points(self, prim, rng):
        """Uniform-area points on the given primitives. Returns (pos, normal)."""
        N = len(prim)
        u = rng.random((N, 2))
        pos = np.zeros((N, 3))
        k = self.kind[prim]
        planar = k != SPHERE
        if np.any(planar):
            j = self.planar_slot[prim[planar]]
            o, e1, e2 = self.pl_o[j], self.pl_e1[j], self.pl_e2[j]
            a, b = u[planar, 0], u[planar, 1]
            tri = k[planar] == TRIANGLE
            # fold the unit square onto the triangle
            fold = tri & (a + b > 1)
            a = np.where(fold, 1 - a, a)
            b = np.where(fold, 1 - b, b)
            pos[planar] = o + a[:, None] * e1 + b[:, None] * e2
        sph = ~planar
        if np.any(sph):
            pos[sph] = self.center[prim[sph]] + self.radius[prim[sph], None] * uniform_sphere(u[sph, 0], u[sph, 1])
        return pos, self.normal_at(prim, pos)

    def hit_single(self, origin, direction):
        t, p = self.intersect(np.asarray(origin, float)[None], np.asarray(direction, float)[None])
        if p[0] < 0:
            return None
        pos = np.asarray(origin) + t[0] * np.asarray(direction)
        ng = self.normal_at(p, pos[None])[0]
        front = float(np.dot(ng, direction)) < 0
        return Hit(pos, ng if front else -ng, ng, front, int(self.material_id[p[0]]), int(p[0]), float(t[0]))


@njit(cache=True)
def _intersect_kernel(o, d, tmax, pl_o, pl_e1, pl_e2, pl_rect, planar, sp_c, sp_r, spheres, tmin, t_out, p_out):
    for i in range(o.shape[0]):
        ox, oy, oz = o[i, 0], o[i, 1], o[i, 2]
        dx, dy, dz = d[i, 0], d[i, 1], d[i, 2]
        best = tmax[i]
        bp = -1
        for j in range(planar.shape[0]):
            e1x, e1y, e1z = pl_e1[j, 0], pl_e1[j, 1], pl_e1[j, 2]
            e2x, e2y, e2z = pl_e2[j, 0], pl_e2[j, 1], pl_e2[j, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if abs(det) <= 1e-14:
                continue
            inv = 1.0 / det
            tx, ty, tz = ox - pl_o[j, 0], oy - pl_o[j, 1], oz - pl_o[j, 2]
            u = (tx * px + ty * py + tz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = ty * e1z - tz * e1y
            qy = tz * e1x - tx * e1z
            qz = tx * e1y - ty * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0:
                continue
            if pl_rect[j]:
                if v > 1.0:
                    continue
            elif u + v > 1.0:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if t > tmin and t < best:
                best = t
                bp = planar[j]
        for j in range(spheres.shape[0]):
            cx, cy, cz = ox - sp_c[j, 0], oy - sp_c[j, 1], oz - sp_c[j, 2]
            b = cx * dx + cy * dy + cz * dz
            c = cx * cx + cy * cy + cz * cz - sp_r[j] * sp_r[j]
            disc = b * b - c
            if disc < 0.0:
                continue
            sq = np.sqrt(disc)
            t = -b - sq
            if not t > tmin:
                t = -b + sq
                if not t > tmin:
                    continue
            if t < best:
                best = t
                bp = spheres[j]
        if bp >= 0:
            t_out[i] = best
            p_out[i] = bp
