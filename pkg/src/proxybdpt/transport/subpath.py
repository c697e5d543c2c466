"""Single-path view of the transport core.

These wrap one path at a time for inspection and tests. Tracing reuses the
batched walkers; the connection value here is written against the scalar
BSDF API so it can be checked against the batched ``connect``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.materials import eval_bsdf
from .mis import FullPaths, strategy_pdfs_from, vertex_pdfs
from .paths import trace_eye_batch, trace_light_batch

LIGHT, DIFFUSE, SPECULAR, CAMERA = "light", "diffuse", "specular", "camera"


@dataclass(frozen=True)
class PathVertex:
    position: np.ndarray
    normal: np.ndarray
    material_id: int
    incident: np.ndarray  # unit direction the vertex was reached along (None at path roots)
    flag: str
    pdf_fwd: float
    throughput: np.ndarray
    primitive_id: int = -1

    @property
    def specular(self):
        return self.flag == SPECULAR


@dataclass
class SubPath:
    vertices: list
    kind: str

    def __post_init__(self):
        if self.vertices:
            root = self.vertices[0].flag
            if (self.kind == "light") != (root == LIGHT) or (self.kind == "eye") != (root == CAMERA):
                raise ValueError(f"{self.kind} sub-path cannot start with a {root} vertex")

    def __len__(self):
        return len(self.vertices)


@dataclass
class FullPath:
    """Light part y_0..y_{s-1} joined to eye part z_0 (camera)..z_{t-1}."""

    light: SubPath
    eye: SubPath
    s: int
    t: int

    def __post_init__(self):
        if self.t < 2:
            raise ValueError("t must be at least 2 (light tracing is not used)")
        if self.s < 0 or len(self.light) < self.s or len(self.eye) < self.t:
            raise ValueError("sub-paths are shorter than the requested split")

    @property
    def k(self):
        return self.s + self.t - 1

    def surface_vertices(self):
        """x_0..x_{k-1} in light order."""
        return list(self.light.vertices[: self.s]) + list(self.eye.vertices[1 : self.t])[::-1]


def _to_subpath(scene, batch, kind, camera=None):
    mt = scene.mtable
    verts = []
    if kind == "eye":
        fwd = scene.camera.frame()[0]
        verts.append(PathVertex(np.asarray(camera, float), fwd, -1, None, CAMERA, 1.0, np.ones(3)))
    prev = None if kind == "light" else np.asarray(camera, float)
    for i in range(int(batch.length[0])):
        p = batch.pos[0, i]
        mid = int(batch.mid[0, i])
        if kind == "light" and i == 0:
            flag = LIGHT
        else:
            flag = SPECULAR if mt.specular[mid] else DIFFUSE
        inc = None if prev is None else (p - prev) / np.linalg.norm(p - prev)
        verts.append(PathVertex(p.copy(), batch.nrm[0, i].copy(), mid, inc, flag, float(batch.pdf_fwd[0, i]),
                                batch.beta[0, i].copy(), int(batch.prim[0, i])))
        prev = p
    return SubPath(verts, kind)


def subpath_from_batch(scene, batch, i):
    """Row ``i`` of a traced batch as a SubPath."""
    one = batch.take(np.array([i]))
    return _to_subpath(scene, one, batch.kind, camera=batch.camera)


def trace_light_subpath(scene, max_depth, rng):
    return _to_subpath(scene, trace_light_batch(scene, 1, max_depth, rng), "light")


def trace_eye_subpath(scene, pixel, max_depth, rng):
    px, py = pixel
    batch = trace_eye_batch(scene, np.array([px]), np.array([py]), max_depth, rng)
    return _to_subpath(scene, batch, "eye", camera=batch.camera)


def _visible(scene, a, b):
    pa, pb = np.asarray(a.position, float)[None], np.asarray(b.position, float)[None]
    if a.flag == CAMERA or b.flag == CAMERA:
        cam, other = (a, b) if a.flag == CAMERA else (b, a)
        o = np.asarray(cam.position, float)[None]
        q = np.asarray(other.position, float)[None]
        d = q - o
        L = np.linalg.norm(d)
        qo = scene.geometry.offset(q, np.asarray(other.normal, float)[None], -d / L)
        dd = qo - o
        Lq = np.linalg.norm(dd)
        t, _ = scene.geometry.intersect(o, dd / Lq, tmax=np.array([Lq * (1 - 1e-7)]))
        return not np.isfinite(t[0])
    na, nb = np.asarray(a.normal, float)[None], np.asarray(b.normal, float)[None]
    return bool(scene.geometry.visible(pa, na, pb, nb)[0])


def geometry_term(a, b, scene):
    """|cos_a| |cos_b| / d^2 with visibility; camera vertices contribute no cosine."""
    d = np.asarray(b.position, float) - np.asarray(a.position, float)
    d2 = float(d @ d)
    if d2 <= 0:
        raise ValueError("geometry term needs distinct positions")
    w = d / np.sqrt(d2)
    ca = 1.0 if a.flag == CAMERA else abs(float(np.dot(a.normal, w)))
    cb = 1.0 if b.flag == CAMERA else abs(float(np.dot(b.normal, w)))
    if ca * cb == 0 or not _visible(scene, a, b):
        return 0.0
    return ca * cb / d2


def _emitted(scene, v, w_out):
    k = scene.emitter_of_prim[v.primitive_id] if v.primitive_id >= 0 else -1
    if k < 0 or float(np.dot(v.normal, w_out)) <= 0:
        return np.zeros(3)
    return scene.emitter_radiance[k].copy()


def connection_contribution(light_sp, eye_sp, scene):
    """Unweighted value of joining all of ``light_sp`` to all of ``eye_sp``."""
    if len(eye_sp) < 2:
        raise ValueError("eye sub-path needs a surface vertex (t >= 2)")
    z, zp = eye_sp.vertices[-1], eye_sp.vertices[-2]
    to_prev = zp.position - z.position
    to_prev = to_prev / np.linalg.norm(to_prev)
    if len(light_sp) == 0:
        return z.throughput * _emitted(scene, z, to_prev)
    y = light_sp.vertices[-1]
    w = z.position - y.position
    w = w / np.linalg.norm(w)
    if len(light_sp) == 1:
        fy = np.ones(3) if float(np.dot(y.normal, w)) > 0 else np.zeros(3)
    else:
        yp = light_sp.vertices[-2]
        back = yp.position - y.position
        back = back / np.linalg.norm(back)
        fy = eval_bsdf(scene.materials[y.material_id], back, w, y.normal)[0]
    fz = eval_bsdf(scene.materials[z.material_id], -w, to_prev, z.normal)[0]
    G = geometry_term(y, z, scene)
    return y.throughput * fy * G * fz * z.throughput


def _full_paths(full_path, scene):
    verts = full_path.surface_vertices()
    pos = np.array([v.position for v in verts])[None]
    nrm = np.array([v.normal for v in verts])[None]
    mid = np.array([v.material_id for v in verts])[None]
    spec = scene.mtable.specular[mid]
    return FullPaths(pos, nrm, mid, spec, np.asarray(full_path.eye.vertices[0].position, float))


def strategy_pdfs_single(full_path, scene):
    fp = _full_paths(full_path, scene)
    PL, PE = vertex_pdfs(scene, fp)
    return strategy_pdfs_from(PL, PE, fp.spec)[0]


def strategy_pdf(full_path, s, t, scene):
    """Area-measure density of the path's vertices under split (s, t)."""
    if s + t - 1 != full_path.k or t < 2 or s < 0:
        raise ValueError(f"({s}, {t}) is not a split of a {full_path.k}-vertex path")
    return float(strategy_pdfs_single(full_path, scene)[s])


def balance_mis_weight(full_path, current, scene):
    """Balance-heuristic weight of split ``current`` = (s, t)."""
    s, t = current
    p = strategy_pdfs_single(full_path, scene)
    if s + t - 1 != full_path.k or p[s] <= 0:
        raise ValueError("current strategy has zero density")
    return float(p[s] / p.sum())
