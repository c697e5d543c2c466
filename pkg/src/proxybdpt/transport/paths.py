"""Sub-path tracing over batches of paths.

Surface vertices are stored in (N, D) arrays. For light paths index 0 is
the emitter vertex y0. For eye paths index j-1 holds z_j; the camera z0 is
implicit (one pinhole position shared by the batch).

Throughput ``beta[:, i]`` is the accumulated f/p arriving at vertex i, not
including that vertex's own BSDF. ``pdf_fwd`` is the area-measure density
with which the vertex was traced. The first eye vertex z1 gets density 1:
every strategy shares the camera ray, so it cancels in MIS ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.materials import bsdf_eval, bsdf_sample
from ..scene.vec import dot

LIGHT, EYE = "light", "eye"


@dataclass
class PathBatch:
    kind: str
    pos: np.ndarray
    nrm: np.ndarray
    prim: np.ndarray
    mid: np.ndarray
    spec: np.ndarray
    beta: np.ndarray
    pdf_fwd: np.ndarray
    length: np.ndarray
    camera: np.ndarray = None
    pixel: np.ndarray = None

    @property
    def n(self):
        return len(self.length)

    @property
    def depth(self):
        return self.pos.shape[1]

    def valid(self, i):
        return self.length > i

    def take(self, idx):
        f = {k: getattr(self, k)[idx] for k in ("pos", "nrm", "prim", "mid", "spec", "beta", "pdf_fwd", "length")}
        pix = None if self.pixel is None else self.pixel[idx]
        return PathBatch(self.kind, camera=self.camera, pixel=pix, **f)


def _empty(kind, n, depth):
    return PathBatch(
        kind=kind,
        pos=np.zeros((n, depth, 3)),
        nrm=np.zeros((n, depth, 3)),
        prim=np.full((n, depth), -1, dtype=np.int64),
        mid=np.zeros((n, depth), dtype=np.int64),
        spec=np.zeros((n, depth), dtype=bool),
        beta=np.zeros((n, depth, 3)),
        pdf_fwd=np.zeros((n, depth)),
        length=np.zeros(n, dtype=np.int64),
    )


def _walk(scene, batch, start, origin, onrm, direction, beta, pdf_dir, rng, light_side):
    """Extend paths from vertex ``start`` on. ``origin``/``onrm`` describe the
    previous vertex (onrm None for the camera), ``pdf_dir`` the solid-angle
    density of ``direction``. Mutates ``batch``."""
    geo = scene.geometry
    mt = scene.mtable
    alive = np.arange(batch.n)
    o, d, b, pd = origin, direction, beta, pdf_dir
    for i in range(start, batch.depth):
        # rays leave from the exact surface point; the t > eps cutoff of the
        # intersector rejects the self-hit, so vertex i lies exactly on the ray
        t, prim = geo.intersect(o, d)
        hit = prim >= 0
        alive, o, d, b, pd, t, prim = (x[hit] for x in (alive, o, d, b, pd, t, prim))
        if onrm is not None:
            onrm = onrm[hit]
        if len(alive) == 0:
            break
        p = o + t[:, None] * d
        n = geo.normal_at(prim, p)
        dist = t
        cos_in = np.abs(dot(n, d))
        mid = geo.material_id[prim]
        batch.pos[alive, i] = p
        batch.nrm[alive, i] = n
        batch.prim[alive, i] = prim
        batch.mid[alive, i] = mid
        batch.spec[alive, i] = mt.specular[mid]
        batch.beta[alive, i] = b
        batch.pdf_fwd[alive, i] = pd * cos_in / (dist * dist) if i > 0 or light_side else 1.0
        batch.length[alive] = i + 1
        if i + 1 >= batch.depth:
            break
        a = -d
        nb, pdf = bsdf_sample(mt, mid, a, n, rng)
        ok = pdf > 0
        if light_side:
            f = bsdf_eval(mt, mid, a, nb, n)
        else:
            f = bsdf_eval(mt, mid, nb, a, n)
        with np.errstate(divide="ignore", invalid="ignore"):
            b = b * f * (np.abs(dot(nb, n)) / pdf)[:, None]
        ok &= np.any(b > 0, axis=1)
        alive, o, d, b, pd, onrm = alive[ok], p[ok], nb[ok], b[ok], pdf[ok], n[ok]
        if len(alive) == 0:
            break
    return batch


def trace_light_batch(scene, n, max_depth, rng):
    """Light sub-paths: y0 area-sampled on the emitters, then cosine emission."""
    batch = _empty(LIGHT, n, max_depth)
    pos, nrm, k, pdf_a = scene.sample_light_points(n, rng)
    batch.pos[:, 0] = pos
    batch.nrm[:, 0] = nrm
    batch.prim[:, 0] = scene.emitter_prim[k]
    batch.mid[:, 0] = scene.geometry.material_id[batch.prim[:, 0]]
    batch.spec[:, 0] = scene.mtable.specular[batch.mid[:, 0]]
    beta0 = scene.emitter_radiance[k] / pdf_a[:, None]
    batch.beta[:, 0] = beta0
    batch.pdf_fwd[:, 0] = pdf_a
    batch.length[:] = 1
    if max_depth > 1:
        d = scene.sample_emission_dirs(nrm, rng)
        cos0 = dot(d, nrm)
        # cosine emission: Le cos / (cos/pi) = pi
        _walk(scene, batch, 1, pos, nrm, d, beta0 * np.pi, cos0 / np.pi, rng, light_side=True)
    return batch


def trace_eye_batch(scene, px, py, max_depth, rng):
    """Eye sub-paths through the given pixels (jittered)."""
    n = len(px)
    batch = _empty(EYE, n, max_depth)
    batch.camera = np.asarray(scene.camera.position, dtype=float)
    batch.pixel = py * scene.camera.width + px
    o, d = scene.camera.generate_rays(px, py, rng.random((n, 2)))
    _walk(scene, batch, 0, np.array(o), None, d, np.ones((n, 3)), np.ones(n), rng, light_side=False)
    return batch


def pixel_grid(scene, spp):
    w, h = scene.camera.width, scene.camera.height
    idx = np.tile(np.arange(w * h), spp)
    return idx % w, idx // w
