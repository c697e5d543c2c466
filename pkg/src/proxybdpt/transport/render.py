"""PT+NEE and BDPT renderers over wavefront batches."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..scene.materials import bsdf_eval, bsdf_pdf
from ..scene.vec import dot, norm
from .mis import assemble, balance_weights, strategy_pdfs_from, vertex_pdfs
from .paths import pixel_grid, trace_eye_batch, trace_light_batch

MAX_BATCH = 1 << 15


@dataclass
class Accumulator:
    """Per-pixel running sums of independent samples."""

    width: int
    height: int
    total: np.ndarray = None
    total_sq: np.ndarray = None
    count: int = 0

    def __post_init__(self):
        n = self.width * self.height
        self.total = np.zeros((n, 3))
        self.total_sq = np.zeros((n, 3))

    def add(self, pixel, values, samples_per_pixel):
        """``values`` holds one sample per entry of ``pixel``."""
        n = self.width * self.height
        for c in range(3):
            self.total[:, c] += np.bincount(pixel, values[:, c], minlength=n)
            self.total_sq[:, c] += np.bincount(pixel, values[:, c] ** 2, minlength=n)
        self.count += samples_per_pixel

    def add_pass(self, image):
        """One sample per pixel given as a full (n, 3) image."""
        self.total += image
        self.total_sq += image**2
        self.count += 1

    @property
    def mean(self):
        return (self.total / max(self.count, 1)).reshape(self.height, self.width, 3)

    @property
    def stderr(self):
        """Standard error of the per-pixel mean."""
        n = max(self.count, 2)
        m = self.total / n
        var = np.maximum(self.total_sq / n - m * m, 0.0) * n / (n - 1)
        return np.sqrt(var / n).reshape(self.height, self.width, 3)


@dataclass
class RenderResult:
    image: np.ndarray
    stderr: np.ndarray
    spp: int
    elapsed: float
    rows: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


def _dir(a, b):
    d = b - a
    return d / norm(d)[..., None]


def _passes(scene, spp):
    pixels = scene.camera.width * scene.camera.height
    per = max(1, min(spp, MAX_BATCH // pixels))
    done = 0
    while done < spp:
        k = min(per, spp - done)
        yield k
        done += k


def _run(scene, spp, rng, kernel, time_budget=None, on_pass=None):
    acc = Accumulator(scene.camera.width, scene.camera.height)
    t0 = time.perf_counter()
    rows = []
    total = spp if time_budget is None else 1 << 30
    for i, k in enumerate(_passes(scene, total)):
        px, py = pixel_grid(scene, k)
        vals, pixel = kernel(px, py, rng)
        acc.add(pixel, vals, k)
        elapsed = time.perf_counter() - t0
        if on_pass is not None:
            rows.append(on_pass(i, elapsed, acc))
        if time_budget is not None and elapsed >= time_budget:
            break
    return RenderResult(acc.mean, acc.stderr, acc.count, time.perf_counter() - t0, [r for r in rows if r])


# ---------------------------------------------------------------------------
# path tracing with next-event estimation


def pt_radiance(scene, px, py, rng, max_depth):
    mt = scene.mtable
    geo = scene.geometry
    eye = trace_eye_batch(scene, px, py, max_depth, rng)
    N = eye.n
    L = np.zeros((N, 3))
    cam = eye.camera
    inv_area = 1.0 / scene.total_light_area
    for j in range(1, max_depth + 1):
        idx = np.flatnonzero(eye.length >= j)
        if len(idx) == 0:
            break
        z = eye.pos[idx, j - 1]
        n = eye.nrm[idx, j - 1]
        mid = eye.mid[idx, j - 1]
        prev = eye.pos[idx, j - 2] if j >= 2 else np.broadcast_to(cam, z.shape)
        to_prev = _dir(z, prev)
        beta = eye.beta[idx, j - 1]

        # emission found by BSDF sampling
        le = scene.emitted(eye.prim[idx, j - 1], n, to_prev)
        if j == 1:
            w = np.ones(len(idx))
        else:
            pprev = eye.pos[idx, j - 3] if j >= 3 else np.broadcast_to(cam, z.shape)
            zp, np_ = eye.pos[idx, j - 2], eye.nrm[idx, j - 2]
            p_bsdf = bsdf_pdf(mt, eye.mid[idx, j - 2], _dir(zp, pprev), -to_prev, np_)
            d2 = dot(z - zp, z - zp)
            cos_l = np.abs(dot(n, to_prev))
            with np.errstate(divide="ignore", invalid="ignore"):
                p_light = np.where(eye.spec[idx, j - 2], 0.0, inv_area * d2 / cos_l)
                w = np.where(p_bsdf + p_light > 0, p_bsdf / (p_bsdf + p_light), 0.0)
        L[idx] += beta * le * w[:, None]

        # next-event estimation
        if j + 1 > max_depth:
            continue
        keep = ~eye.spec[idx, j - 1]
        idx, z, n, mid, to_prev, beta = (x[keep] for x in (idx, z, n, mid, to_prev, beta))
        if len(idx) == 0:
            continue
        lp, ln, k, _ = scene.sample_light_points(len(idx), rng)
        wl = _dir(z, lp)
        d2 = dot(lp - z, lp - z)
        cos_l = dot(ln, -wl)
        cos_z = np.abs(dot(n, wl))
        front = cos_l > 0
        f = bsdf_eval(mt, mid, wl, to_prev, n)
        vis = geo.visible(z, n, lp, ln) & front
        G = np.where(vis, cos_z * np.maximum(cos_l, 0.0) / d2, 0.0)
        p_light = np.where(front, inv_area * d2 / np.where(front, cos_l, 1.0), 0.0)
        p_bsdf = bsdf_pdf(mt, mid, to_prev, wl, n)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(front, p_light / (p_light + p_bsdf), 0.0)
        c = beta * f * scene.emitter_radiance[k] * (G / inv_area * w)[:, None]
        L[idx] += c
    return L, eye.pixel


def render_pt(scene, spp, rng, max_depth=None, time_budget=None, on_pass=None):
    D = max_depth or scene.settings.max_depth
    return _run(scene, spp, rng, lambda px, py, r: pt_radiance(scene, px, py, r, D), time_budget, on_pass)


# ---------------------------------------------------------------------------
# bidirectional path tracing


def connect(scene, light, li, s, eye, ei, t):
    """Unweighted connection value C(s,t), shape (M, 3), for the selected pairs.

    s = 0 reads emission at the eye vertex z_{t-1}; s >= 1 joins y_{s-1}
    with z_{t-1}. Occluded junctions give exactly 0.
    """
    mt = scene.mtable
    zi = t - 2
    z = eye.pos[ei, zi]
    nz = eye.nrm[ei, zi]
    prev = eye.pos[ei, zi - 1] if t >= 3 else np.broadcast_to(eye.camera, z.shape)
    to_prev = _dir(z, prev)
    beta_z = eye.beta[ei, zi]
    if s == 0:
        return beta_z * scene.emitted(eye.prim[ei, zi], nz, to_prev)

    y = light.pos[li, s - 1]
    ny = light.nrm[li, s - 1]
    w = _dir(y, z)
    d2 = dot(z - y, z - y)
    if s == 1:
        fy = (dot(ny, w) > 0).astype(float)[:, None]
    else:
        fy = bsdf_eval(mt, light.mid[li, s - 1], _dir(y, light.pos[li, s - 2]), w, ny)
    fz = bsdf_eval(mt, eye.mid[ei, zi], -w, to_prev, nz)
    G = np.abs(dot(ny, w)) * np.abs(dot(nz, w)) / d2
    val = light.beta[li, s - 1] * fy * fz * beta_z * G[:, None]
    nz_mask = np.any(val > 0, axis=1)
    if np.any(nz_mask):
        sel = np.flatnonzero(nz_mask)
        vis = scene.geometry.visible(y[sel], ny[sel], z[sel], nz[sel])
        val[sel[~vis]] = 0.0
    return val


def strategies(D, light_len_max, eye_len_max):
    """Legal (s, t) pairs: s >= 0, t >= 2, s + t - 1 <= D."""
    out = []
    for t in range(2, min(D, eye_len_max) + 2):
        for s in range(0, min(light_len_max, D - t + 1) + 1):
            out.append((s, t))
    return out


def bdpt_radiance(scene, light, eye, max_depth, extra_pdf=None):
    """Sum of MIS-weighted connections for every eye path (paired light path).

    ``extra_pdf(full_paths, PE, pixel)`` returns the effective density of any
    additional strategy (the proxy connection) for the balance denominator.
    """
    N = eye.n
    L = np.zeros((N, 3))
    spec_l, spec_e = light.spec, eye.spec
    for s, t in strategies(max_depth, int(light.length.max()), int(eye.length.max())):
        ok = eye.length >= t - 1
        if s >= 1:
            ok &= light.length >= s
            ok &= ~spec_e[:, t - 2]
            if s >= 2:
                ok &= ~spec_l[:, s - 1]
        idx = np.flatnonzero(ok)
        if len(idx) == 0:
            continue
        val = connect(scene, light, idx, s, eye, idx, t)
        live = np.any(val > 0, axis=1)
        idx, val = idx[live], val[live]
        if len(idx) == 0:
            continue
        fp = assemble(light, idx, s, eye, idx, t)
        PL, PE = vertex_pdfs(scene, fp)
        p = strategy_pdfs_from(PL, PE, fp.spec)
        extra = None if extra_pdf is None else extra_pdf(fp, PE, eye.pixel[idx])
        w = balance_weights(p, s, extra)
        L[idx] += val * w[:, None]
    return L


def render_bdpt(scene, spp, rng, max_depth=None, time_budget=None, on_pass=None):
    D = max_depth or scene.settings.max_depth

    def kernel(px, py, r):
        eye = trace_eye_batch(scene, px, py, D, r)
        light = trace_light_batch(scene, len(px), D, r)
        return bdpt_radiance(scene, light, eye, D), eye.pixel

    return _run(scene, spp, rng, kernel, time_budget, on_pass)
