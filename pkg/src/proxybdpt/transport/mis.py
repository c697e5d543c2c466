"""Full paths, per-strategy densities, and balance-heuristic weights.

A full path has k surface vertices x_0..x_{k-1} (x_0 on an emitter,
x_{k-1} seen by the camera) followed by the camera. Strategy s traces
x_0..x_{s-1} from the light and x_{k-1}..x_s from the eye; s = 0 is the
eye sub-path hitting the emitter. Light tracing (s = k) is not used.

Weights are recomputed from scratch for every evaluated path by local
re-evaluation of each vertex density, never by cached ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.materials import bsdf_pdf
from ..scene.vec import dot, norm


@dataclass
class FullPaths:
    """A batch of M full paths of equal length k."""

    pos: np.ndarray  # (M, k, 3)
    nrm: np.ndarray
    mid: np.ndarray  # (M, k)
    spec: np.ndarray
    camera: np.ndarray  # (3,)

    @property
    def k(self):
        return self.pos.shape[1]

    def __len__(self):
        return self.pos.shape[0]


def assemble(light, li, s, eye, ei, t):
    """Join light vertices y_0..y_{s-1} with eye vertices z_{t-1}..z_1."""
    parts = []
    for name in ("pos", "nrm", "mid", "spec"):
        ly = getattr(light, name)[li, :s] if s > 0 else None
        ez = getattr(eye, name)[ei, : t - 1][:, ::-1]
        parts.append(ez if ly is None else np.concatenate([ly, ez], axis=1))
    return FullPaths(*parts, camera=eye.camera)


def _unit(a, b):
    d = b - a
    return d / norm(d)[..., None]


def _to_area(pdf_dir, x_from, x_to, n_to):
    d = x_to - x_from
    d2 = dot(d, d)
    return pdf_dir * np.abs(dot(n_to, d)) / (np.sqrt(d2) * d2)


def vertex_pdfs(scene, fp):
    """Area densities (PL, PE), each (M, k).

    PL[i]: density of x_i when traced from the light side.
    PE[i]: density of x_i when traced from the eye side.
    """
    M, k = fp.mid.shape
    mt = scene.mtable
    P, N = fp.pos, fp.nrm
    PL = np.zeros((M, k))
    PE = np.zeros((M, k))
    PL[:, 0] = 1.0 / scene.total_light_area
    if k > 1:
        w = _unit(P[:, 0], P[:, 1])
        cos0 = np.maximum(dot(N[:, 0], w), 0.0)
        PL[:, 1] = _to_area(cos0 / np.pi, P[:, 0], P[:, 1], N[:, 1])
    for i in range(2, k):
        a = _unit(P[:, i - 1], P[:, i - 2])
        b = _unit(P[:, i - 1], P[:, i])
        pd = bsdf_pdf(mt, fp.mid[:, i - 1], a, b, N[:, i - 1])
        PL[:, i] = _to_area(pd, P[:, i - 1], P[:, i], N[:, i])
    PE[:, k - 1] = 1.0
    cam = np.broadcast_to(fp.camera, P[:, 0].shape)
    for i in range(k - 2, -1, -1):
        nxt = P[:, i + 2] if i + 2 < k else cam
        a = _unit(P[:, i + 1], nxt)
        b = _unit(P[:, i + 1], P[:, i])
        pd = bsdf_pdf(mt, fp.mid[:, i + 1], a, b, N[:, i + 1])
        PE[:, i] = _to_area(pd, P[:, i + 1], P[:, i], N[:, i])
    return PL, PE


def strategy_pdfs_from(PL, PE, spec):
    """p_s for s = 0..k-1 under the delta convention at the junction."""
    M, k = PL.shape
    ones = np.ones((M, 1))
    prefix = np.concatenate([ones, np.cumprod(PL, axis=1)], axis=1)  # prefix[:, s] = prod_{i<s}
    suffix = np.concatenate([np.cumprod(PE[:, ::-1], axis=1)[:, ::-1], ones], axis=1)  # suffix[:, s] = prod_{i>=s}
    p = prefix[:, :k] * suffix[:, :k]
    for s in range(1, k):
        blocked = spec[:, s] | (spec[:, s - 1] if s >= 2 else False)
        p[:, s] = np.where(blocked, 0.0, p[:, s])
    return p


def strategy_pdfs(scene, fp):
    PL, PE = vertex_pdfs(scene, fp)
    return strategy_pdfs_from(PL, PE, fp.spec)


def balance_weights(p, current, extra=None):
    """Balance heuristic p_cur / sum p. ``extra`` adds further strategies'
    (already effective) densities to the denominator."""
    denom = p.sum(axis=1)
    if extra is not None:
        denom = denom + extra
    cur = p[:, current] if np.ndim(current) == 0 else p[np.arange(len(p)), current]
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(denom > 0, cur / denom, 0.0)
    return w


def balance_mis_weight_pdfs(pdfs, current):
    """Scalar form: weight of strategy ``current`` among the listed densities."""
    pdfs = np.asarray(pdfs, dtype=float)
    if pdfs[current] <= 0:
        raise ValueError("current strategy has zero density")
    return float(pdfs[current] / pdfs.sum())
