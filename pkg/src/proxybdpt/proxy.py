"""Proxy connections for light sub-paths that end in a specular chain.

A light sub-path y_0..y_e whose endpoint P = y_e is specular cannot be
joined to an eye vertex directly. Dropout removes the u vertices
g_1 = y_{e-1} .. g_u = y_{e-u} behind P (g_1..g_{u-1} specular, g_u the
terminal) and keeps the residual prefix: nothing when g_u = y_0 (case A,
terminal on the emitter) or the emitter vertex h_c = y_0 when g_u = y_1
(case B, terminal non-specular). At connection time the dropped vertices
are re-sampled from P's BSDF given the eye direction, so the connection
always satisfies the narrow lobe. The marginal density of P,

    P(P) = integral over g of f(g) = p(g | h_c) p(P | g, h_c),

is unknown in closed form and enters the estimator through an unbiased
reciprocal estimate built from a mixture support distribution over g.

Batches of incomplete sub-paths live in an ``IncompletePool`` with flat
arrays. The renderer runs one sample per pixel per pass; MIS densities of
the proxy strategy use only state frozen at the start of the pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .reciprocal import ReciprocalConfig, run_reciprocal
from .scene.materials import bsdf_eval, bsdf_pdf, bsdf_sample
from .scene.vec import cosine_hemisphere, dot, luminance, norm, to_world
from .subspace import GammaMatrix, SubspaceMapper, SubspaceStats, select_in_subspace
from .transport.mis import FullPaths, strategy_pdfs_from, vertex_pdfs
from .transport.paths import pixel_grid, trace_eye_batch, trace_light_batch
from .transport.render import Accumulator, RenderResult, bdpt_radiance, render_bdpt

CASE_A, CASE_B = 0, 1
LIGHT_AREA, FROM_CONTROL, FROM_SPECULAR = "light_area", "from_control", "from_specular"


@dataclass(frozen=True)
class ProxyConfig:
    enabled: bool = True
    budget: int = 400
    repeats: int = 5
    u_max: int = 4
    freeze_iter: int = 40
    grid_px: int = 10
    gate_share: float = 0.05
    gate_low: float = 0.2
    pilot: int = 32
    recursion_cap: int = 10_000
    pretrace_paths: int = 4096
    pretrace_members: int = 1000
    grid: int = 2
    S_count: int = 100
    C_count: int = 10
    T_count: int = 32

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("proxy budget must be at least 1")
        if self.repeats < 1:
            raise ValueError("reciprocal repeats must be at least 1")
        if not 1 <= self.u_max <= 4:
            raise ValueError("u_max must lie in [1, 4]")
        if self.freeze_iter < 0:
            raise ValueError("freeze iteration must be nonnegative")
        if not 0 < self.gate_low <= 1:
            raise ValueError("gate probability must lie in (0, 1]")

    def mapper(self, scene):
        return SubspaceMapper.for_scene(scene, grid=self.grid, S_count=self.S_count, C_count=self.C_count, T_count=self.T_count)


# ---------------------------------------------------------------------------
# small geometric helpers


def _unit(a, b):
    # escaped candidates sit at their origin; callers mask the NaN rows
    d = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        return d / norm(d)[..., None]


def _to_area(pdf_dir, x, y, ny):
    d = y - x
    d2 = dot(d, d)
    return pdf_dir * np.abs(dot(ny, d)) / (np.sqrt(d2) * d2)


def _cast(scene, o, n_o, d):
    """First hit leaving surface point ``o``: (hit, pos, nrm, prim)."""
    geo = scene.geometry
    t, prim = geo.intersect(o, d)
    hit = prim >= 0
    pos = o + np.where(hit, t, 0.0)[:, None] * d
    nrm = np.zeros_like(pos)
    if np.any(hit):
        nrm[hit] = geo.normal_at(prim[hit], pos[hit])
    return hit, pos, nrm, prim


def _visible(scene, pa, na, pb, nb, mask=None):
    out = np.zeros(len(pa), dtype=bool)
    sel = np.arange(len(pa)) if mask is None else np.flatnonzero(mask)
    if len(sel):
        out[sel] = scene.geometry.visible(pa[sel], na[sel], pb[sel], nb[sel])
    return out


# ---------------------------------------------------------------------------
# incomplete sub-paths


@dataclass
class IncompletePool:
    """M incomplete light sub-paths. Dropped vertices are stored g_1..g_u
    (nearest to the specular endpoint first) in slots 0..u-1."""

    src: np.ndarray  # light path index
    end: np.ndarray  # index e of the specular endpoint in the light path
    u: np.ndarray
    case: np.ndarray
    P_pos: np.ndarray
    P_nrm: np.ndarray
    P_mid: np.ndarray
    P_prim: np.ndarray
    hc_pos: np.ndarray
    hc_nrm: np.ndarray
    hc_prim: np.ndarray  # -1 when there is no control vertex
    g_pos: np.ndarray  # (M, u_max, 3) dropped originals
    g_nrm: np.ndarray
    g_prim: np.ndarray
    g_spec: np.ndarray
    C: np.ndarray = None
    S: np.ndarray = None
    inv_P: np.ndarray = None
    inv_P_sq: np.ndarray = None
    truncated: np.ndarray = None

    def __len__(self):
        return len(self.u)

    def take(self, idx):
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = None if v is None else v[idx]
        return IncompletePool(**out)

    def label(self, mapper):
        self.S = mapper.specular_labels(self.P_pos, self.P_nrm)
        nulls = np.full(self.hc_pos.shape, np.nan)
        self.C = mapper.control_labels(self.hc_pos, nulls, self.case == CASE_B)
        return self

    def keys(self):
        return list(zip(self.u.tolist(), self.C.tolist(), self.S.tolist()))

    def h_star_pdf(self, total_light_area):
        """Density of the retained prefix: the emitter vertex (case B) or none."""
        return np.where(self.case == CASE_B, 1.0 / total_light_area, 1.0)


def _empty_pool(u_max):
    z3 = np.zeros((0, 3))
    zi = np.zeros(0, dtype=np.int64)
    return IncompletePool(
        zi, zi, zi, zi, z3, z3, zi, zi, z3, z3, zi,
        np.zeros((0, u_max, 3)), np.zeros((0, u_max, 3)), np.zeros((0, u_max), dtype=np.int64), np.zeros((0, u_max), dtype=bool),
    )


def dropout_batch(scene, light, max_depth, u_max=4):
    """Every prefix of every light path that ends at a specular vertex and
    has the supported shape becomes one pool member."""
    parts = []
    spec = light.spec
    for e in range(1, min(light.depth, max_depth - 1)):
        # room for at least one eye vertex: e + 2 <= max_depth
        live = (light.length > e) & spec[:, e]
        if not np.any(live):
            continue
        run = live.copy()
        u = np.zeros(light.n, dtype=np.int64)
        for d in range(e, -1, -1):
            run &= spec[:, d]
            u += run
        r = e - u
        ok = live & (u >= 1) & (u <= u_max) & (r >= 0) & (r <= 1)
        idx = np.flatnonzero(ok)
        if len(idx):
            parts.append((idx, e, u[idx]))
    if not parts:
        return _empty_pool(u_max)
    src = np.concatenate([p[0] for p in parts])
    end = np.concatenate([np.full(len(p[0]), p[1]) for p in parts])
    u = np.concatenate([p[2] for p in parts])
    M = len(src)
    g_pos = np.zeros((M, u_max, 3))
    g_nrm = np.zeros((M, u_max, 3))
    g_prim = np.full((M, u_max), -1, dtype=np.int64)
    g_spec = np.zeros((M, u_max), dtype=bool)
    for i in range(u_max):
        has = u > i
        j = np.maximum(end - 1 - i, 0)
        g_pos[has, i] = light.pos[src[has], j[has]]
        g_nrm[has, i] = light.nrm[src[has], j[has]]
        g_prim[has, i] = light.prim[src[has], j[has]]
        g_spec[has, i] = light.spec[src[has], j[has]]
    case = np.where(end - u == 1, CASE_B, CASE_A)
    b = case == CASE_B
    hc_pos = np.where(b[:, None], light.pos[src, 0], 0.0)
    hc_nrm = np.where(b[:, None], light.nrm[src, 0], 0.0)
    hc_prim = np.where(b, light.prim[src, 0], -1)
    return IncompletePool(
        src, end, u, case,
        light.pos[src, end], light.nrm[src, end], light.mid[src, end], light.prim[src, end],
        hc_pos, hc_nrm, hc_prim, g_pos, g_nrm, g_prim, g_spec,
    )


def repair(pool, i):
    """Light-order vertex positions rebuilt from the retained prefix and the
    dropped originals of member ``i``."""
    u = int(pool.u[i])
    verts = [pool.hc_pos[i]] if pool.case[i] == CASE_B else []
    verts += [pool.g_pos[i, j] for j in range(u - 1, -1, -1)]
    verts.append(pool.P_pos[i])
    return np.array(verts)


# ---------------------------------------------------------------------------
# candidate chains: integrand, support density, support sampling


def _groups(pool, members):
    """Split member indices by (u, case)."""
    key = pool.u[members] * 2 + pool.case[members]
    for k in np.unique(key):
        sel = np.flatnonzero(key == k)
        yield int(k // 2), int(k % 2), sel


def strategies_for(u, case):
    if u > 1:
        return (FROM_SPECULAR,)
    return (LIGHT_AREA, FROM_SPECULAR) if case == CASE_A else (FROM_CONTROL, FROM_SPECULAR)


def _class_ok(scene, case, g_prim, u):
    """Positional classes: g_1..g_{u-1} specular, g_u on an emitter (case A)
    or non-specular (case B)."""
    ok = np.all(g_prim[:, :u] >= 0, axis=1)
    p = np.maximum(g_prim[:, :u], 0)
    spec = scene.prim_specular[p]
    if u > 1:
        ok &= np.all(spec[:, : u - 1], axis=1)
    if case == CASE_A:
        ok &= scene.emitter_of_prim[p[:, u - 1]] >= 0
    else:
        ok &= ~spec[:, u - 1]
    return ok


def integrand(scene, pool, m, u, case, g_pos, g_nrm, g_prim):
    """f(g): density of light-tracing the chain terminal .. g_1 .. P, with
    visibility on every link. ``m`` indexes members sharing (u, case)."""
    mt = scene.mtable
    mid_of = scene.geometry.material_id
    n = len(m)
    ok = _class_ok(scene, case, g_prim, u)
    Ypos = [g_pos[:, j] for j in range(u - 1, -1, -1)] + [pool.P_pos[m]]
    Ynrm = [g_nrm[:, j] for j in range(u - 1, -1, -1)] + [pool.P_nrm[m]]
    Ymid = [mid_of[np.maximum(g_prim[:, j], 0)] for j in range(u - 1, -1, -1)] + [pool.P_mid[m]]
    if case == CASE_B:
        Ypos.insert(0, pool.hc_pos[m])
        Ynrm.insert(0, pool.hc_nrm[m])
        Ymid.insert(0, mid_of[np.maximum(pool.hc_prim[m], 0)])
        f = np.ones(n)
    else:
        f = np.full(n, 1.0 / scene.total_light_area)
    f = np.where(ok, f, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = _unit(Ypos[0], Ypos[1])
        f = f * np.maximum(dot(Ynrm[0], w), 0.0) / np.pi
        f = f * _to_area(1.0, Ypos[0], Ypos[1], Ynrm[1])
        for i in range(1, len(Ypos) - 1):
            a = _unit(Ypos[i], Ypos[i - 1])
            b = _unit(Ypos[i], Ypos[i + 1])
            pd = bsdf_pdf(mt, Ymid[i], a, b, Ynrm[i])
            f = f * _to_area(pd, Ypos[i], Ypos[i + 1], Ynrm[i + 1])
    f = np.where(np.isfinite(f), f, 0.0)
    for i in range(len(Ypos) - 1):
        live = f > 0
        if not np.any(live):
            break
        f = np.where(_visible(scene, Ypos[i], Ynrm[i], Ypos[i + 1], Ynrm[i + 1], live), f, 0.0)
    return f


def _q_specular(scene, pool, m, u, g_pos, g_nrm, g_prim):
    mt = scene.mtable
    mid_of = scene.geometry.material_id
    P, nP = pool.P_pos[m], pool.P_nrm[m]
    with np.errstate(divide="ignore", invalid="ignore"):
        w = _unit(P, g_pos[:, 0])
        q = np.abs(dot(nP, w)) / (2 * np.pi)
        q = q * _to_area(1.0, P, g_pos[:, 0], g_nrm[:, 0])
        prev_pos = P
        for i in range(1, u):
            x, nx = g_pos[:, i - 1], g_nrm[:, i - 1]
            a = _unit(x, prev_pos)
            b = _unit(x, g_pos[:, i])
            pd = bsdf_pdf(mt, mid_of[np.maximum(g_prim[:, i - 1], 0)], a, b, nx)
            q = q * _to_area(pd, x, g_pos[:, i], g_nrm[:, i])
            prev_pos = x
    q = np.where(np.isfinite(q) & np.all(g_prim[:, :u] >= 0, axis=1), q, 0.0)
    prev_pos, prev_nrm = P, nP
    for i in range(u):
        live = q > 0
        if not np.any(live):
            break
        q = np.where(_visible(scene, prev_pos, prev_nrm, g_pos[:, i], g_nrm[:, i], live), q, 0.0)
        prev_pos, prev_nrm = g_pos[:, i], g_nrm[:, i]
    return q


def support_pdf_batch(scene, pool, m, u, case, g_pos, g_nrm, g_prim):
    """Mixture density (area measure) of the candidate chain."""
    q = _q_specular(scene, pool, m, u, g_pos, g_nrm, g_prim)
    if u > 1:
        return q
    if case == CASE_A:
        on_light = (g_prim[:, 0] >= 0) & (scene.emitter_of_prim[np.maximum(g_prim[:, 0], 0)] >= 0)
        other = np.where(on_light, 1.0 / scene.total_light_area, 0.0)
    else:
        hc, nhc = pool.hc_pos[m], pool.hc_nrm[m]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = _unit(hc, g_pos[:, 0])
            other = np.maximum(dot(nhc, w), 0.0) / np.pi * _to_area(1.0, hc, g_pos[:, 0], g_nrm[:, 0])
        other = np.where(np.isfinite(other) & (g_prim[:, 0] >= 0), other, 0.0)
        other = np.where(_visible(scene, hc, nhc, g_pos[:, 0], g_nrm[:, 0], other > 0), other, 0.0)
    return 0.5 * (q + other)


def support_sample_batch(scene, pool, m, u, case, rng):
    """Draw one candidate chain per member from the uniform strategy mixture.
    Returns (g_pos, g_nrm, g_prim, strategy) with prim -1 on escape."""
    mt = scene.mtable
    mid_of = scene.geometry.material_id
    n = len(m)
    umax = pool.g_pos.shape[1]
    g_pos = np.zeros((n, umax, 3))
    g_nrm = np.zeros((n, umax, 3))
    g_prim = np.full((n, umax), -1, dtype=np.int64)
    pick_spec = np.ones(n, dtype=bool) if u > 1 else rng.random(n) < 0.5
    other = np.flatnonzero(~pick_spec)
    if len(other):
        if case == CASE_A:
            pos, nrm, k, _ = scene.sample_light_points(len(other), rng)
            g_pos[other, 0], g_nrm[other, 0], g_prim[other, 0] = pos, nrm, scene.emitter_prim[k]
        else:
            hc, nhc = pool.hc_pos[m[other]], pool.hc_nrm[m[other]]
            v = rng.random((len(other), 2))
            d = to_world(cosine_hemisphere(v[:, 0], v[:, 1]), nhc)
            hit, pos, nrm, prim = _cast(scene, hc, nhc, d)
            g_pos[other, 0], g_nrm[other, 0], g_prim[other, 0] = pos, nrm, np.where(hit, prim, -1)
    sp = np.flatnonzero(pick_spec)
    if len(sp):
        P, nP = pool.P_pos[m[sp]], pool.P_nrm[m[sp]]
        v = rng.random((len(sp), 3))
        d = to_world(cosine_hemisphere(v[:, 0], v[:, 1]), nP)
        d = np.where((v[:, 2] < 0.5)[:, None], d, -d)
        alive = np.ones(len(sp), dtype=bool)
        prev_pos, x, nx = P, P, nP
        for i in range(u):
            if i > 0:
                a = _unit(x, prev_pos)
                mid = mid_of[np.maximum(g_prim[sp, i - 1], 0)]
                d, pdf = bsdf_sample(mt, mid, a, nx, rng)
                alive &= pdf > 0
            hit, pos, nrm, prim = _cast(scene, x, nx, d)
            alive &= hit
            g_pos[sp, i] = pos
            g_nrm[sp, i] = nrm
            g_prim[sp, i] = np.where(alive, prim, -1)
            prev_pos, x, nx = x, pos, nrm
            if i + 1 < u:
                # keep shapes fixed: dead rows continue harmlessly and stay marked
                x = np.where(alive[:, None], x, P)
                nx = np.where(alive[:, None], nx, nP)
        g_prim[sp] = np.where(alive[:, None], g_prim[sp], -1)
    strategy = np.where(pick_spec, FROM_SPECULAR, LIGHT_AREA if case == CASE_A else FROM_CONTROL)
    return g_pos, g_nrm, g_prim, strategy


def ratio_draw(scene, pool, m, rng):
    """One f/q sample for each entry of ``m`` (members may repeat)."""
    out = np.zeros(len(m))
    for u, case, sel in _groups(pool, m):
        mm = m[sel]
        gp, gn, gi, _ = support_sample_batch(scene, pool, mm, u, case, rng)
        f = integrand(scene, pool, mm, u, case, gp, gn, gi)
        q = support_pdf_batch(scene, pool, mm, u, case, gp, gn, gi)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[sel] = np.where(q > 0, f / q, 0.0)
    return out


# ---------------------------------------------------------------------------
# reciprocal estimation of 1 / P


@dataclass
class Diagnostics:
    """Per (u, C, S) counters surfaced as CSV."""

    rows: dict = field(default_factory=dict)

    def add(self, keys, name, values=None):
        vals = np.ones(len(keys)) if values is None else np.asarray(values, dtype=float)
        for k, v in zip(keys, vals):
            r = self.rows.setdefault(k, {"members": 0, "runs": 0, "truncated": 0, "attempts": 0, "rejected": 0})
            r[name] += v

    def write_csv(self, path):
        import csv

        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["u", "C", "S", "members", "runs", "truncated", "truncation_rate", "attempts", "rejected", "rejection_rate"])
            for (u, c, s), r in sorted(self.rows.items()):
                tr = r["truncated"] / r["runs"] if r["runs"] else 0.0
                rj = r["rejected"] / r["attempts"] if r["attempts"] else 0.0
                w.writerow([u, c, s, int(r["members"]), int(r["runs"]), int(r["truncated"]), tr, int(r["attempts"]), int(r["rejected"]), rj])


def _bounds(scene, pool, stats, shard, cfg, rng):
    """B per member from the statistics, or from a fresh pilot when the
    bucket has none yet. Pilot maxima go to ``shard``."""
    keys = pool.keys()
    B = np.array([stats.bound(k) or 0.0 for k in keys])
    need = np.flatnonzero(B <= 0)
    if len(need):
        owners = np.repeat(need, cfg.pilot)
        r = ratio_draw(scene, pool, owners, rng).reshape(len(need), cfg.pilot)
        mx = r.max(axis=1)
        for i, j in enumerate(need):
            shard.update(keys[j], f_over_q=mx[i:i + 1])
        fallback = stats.b_factor * mx.max() if mx.max() > 0 else 1.0
        B[need] = np.where(mx > 0, stats.b_factor * mx, fallback)
    return B


class RatioBuffer:
    """Per-member queues of i.i.d. f/q samples drawn in bulk.

    A reciprocal tree consumes one sample per node; drawing ahead in large
    vectorized batches leaves the joint distribution unchanged because the
    samples of a member are independent of the tree that consumes them.
    """

    def __init__(self, sampler, n_members, initial):
        self.sampler = sampler
        self.n = n_members
        self.data = np.zeros((n_members, max(initial, 1)))
        self.fill = np.zeros(n_members, dtype=np.int64)
        self.ptr = np.zeros(n_members, dtype=np.int64)
        self._refill(np.arange(n_members), np.full(n_members, initial))

    def _refill(self, members, amount):
        need = self.fill[members] + amount
        cap = self.data.shape[1]
        if need.max() > cap:
            grown = np.zeros((self.n, max(int(need.max()), 2 * cap)))
            grown[:, :cap] = self.data
            self.data = grown
        owners = np.repeat(members, amount)
        vals = self.sampler(owners)
        rank = np.arange(len(owners)) - np.repeat(np.cumsum(amount) - amount, amount)
        self.data[owners, self.fill[owners] + rank] = vals
        self.fill[members] += amount

    def take(self, m):
        m = np.asarray(m, dtype=np.int64)
        need = np.bincount(m, minlength=self.n)
        short = np.flatnonzero(self.ptr + need > self.fill)
        if len(short):
            extra = np.maximum(self.ptr[short] + need[short] - self.fill[short], 3 * self.fill[short])
            self._refill(short, extra)
        order = np.argsort(m, kind="stable")
        start = np.cumsum(need) - need
        rank = np.empty(len(m), dtype=np.int64)
        rank[order] = np.arange(len(m)) - start[m[order]]
        out = self.data[m, self.ptr[m] + rank]
        self.ptr += need
        return out

    def max_seen(self):
        cols = np.arange(self.data.shape[1])[None, :]
        return np.where(cols < self.fill[:, None], self.data, 0.0).max(axis=1, initial=0.0)


def estimate_inverse_P_batch(scene, pool, stats, shard, cfg, rng, diag=None):
    """Fill ``pool.inv_P`` with the mean of ``cfg.repeats`` reciprocal runs
    per member. Ratio maxima and the estimates feed ``shard``."""
    M = len(pool)
    if M == 0:
        pool.inv_P = pool.inv_P_sq = np.zeros(0)
        pool.truncated = np.zeros(0, dtype=np.int64)
        return pool
    R = cfg.repeats
    B = _bounds(scene, pool, stats, shard, cfg, rng)
    member = np.repeat(np.arange(M), R)
    buf = RatioBuffer(lambda m: ratio_draw(scene, pool, m, rng), M, 16 * R)

    def draw(owner):
        return buf.take(member[owner])

    rc = ReciprocalConfig(B=1.0, recursion_cap=cfg.recursion_cap)
    batch = run_reciprocal(draw, B[member], M * R, rc, rng)
    est = batch.estimates.reshape(M, R)
    pool.inv_P = est.mean(axis=1)
    pool.inv_P_sq = (est**2).mean(axis=1)
    pool.truncated = batch.truncated.reshape(M, R).sum(axis=1)
    keys = pool.keys()
    seen_max = buf.max_seen()
    for i, k in enumerate(keys):
        shard.update(k, f_over_q=seen_max[i:i + 1], inv_p_estimate=est[i])
    if diag is not None:
        diag.add(keys, "members")
        diag.add(keys, "runs", np.full(M, R))
        diag.add(keys, "truncated", pool.truncated)
    return pool


# ---------------------------------------------------------------------------
# retracing from the eye side


def retrace(scene, pool, m, z_pos, rng):
    """Re-sample the dropped chain from P given the eye vertex ``z_pos``.

    Returns (ok, g_pos, g_nrm, g_prim, throughput (n,3), p_chain) where the
    throughput is the product of f |cos| / pdf over P, g_1 .. g_{u-1} and
    p_chain the area density of the chain. Escapes and class mismatches
    with the dropped originals give ok = False.
    """
    mt = scene.mtable
    mid_of = scene.geometry.material_id
    n = len(m)
    umax = pool.g_pos.shape[1]
    u = pool.u[m]
    g_pos = np.zeros((n, umax, 3))
    g_nrm = np.zeros((n, umax, 3))
    g_prim = np.full((n, umax), -1, dtype=np.int64)
    thr = np.ones((n, 3))
    p_chain = np.ones(n)
    ok = np.ones(n, dtype=bool)
    prev_pos = z_pos
    x, nx, mid = pool.P_pos[m], pool.P_nrm[m], pool.P_mid[m]
    for i in range(int(u.max()) if n else 0):
        act = np.flatnonzero(ok & (u > i))
        if len(act) == 0:
            break
        a = _unit(x[act], prev_pos[act])
        b, pdf = bsdf_sample(mt, mid[act], a, nx[act], rng)
        good = pdf > 0
        f = bsdf_eval(mt, mid[act], b, a, nx[act])
        with np.errstate(divide="ignore", invalid="ignore"):
            thr[act] *= f * (np.abs(dot(nx[act], b)) / pdf)[:, None]
        hit, pos, nrm, prim = _cast(scene, x[act], nx[act], b)
        good &= hit
        last = u[act] == i + 1
        pspec = scene.prim_specular[np.maximum(prim, 0)]
        terminal_ok = np.where(pool.case[m[act]] == CASE_A, scene.emitter_of_prim[np.maximum(prim, 0)] >= 0, ~pspec)
        good &= np.where(last, terminal_ok, pspec)
        with np.errstate(divide="ignore", invalid="ignore"):
            p_chain[act] *= _to_area(pdf, x[act], pos, nrm)
        ok[act[~good]] = False
        g_pos[act, i], g_nrm[act, i], g_prim[act, i] = pos, nrm, np.where(good, prim, -1)
        prev_pos = x.copy()
        x, nx, mid = x.copy(), nx.copy(), mid.copy()
        x[act], nx[act], mid[act] = pos, nrm, mid_of[np.maximum(prim, 0)]
    thr[~ok] = 0.0
    p_chain[~ok] = 0.0
    return ok, g_pos, g_nrm, g_prim, thr, p_chain


def terminal_factor(scene, pool, m, g_pos, g_nrm, g_prim):
    """Emission reaching the chain, divided by the prefix density: Le at the
    terminal (case A) or f G V Le / p(h_c) through the control vertex (case B)."""
    n = len(m)
    u = pool.u[m]
    rows = np.arange(n)
    gu_pos = g_pos[rows, u - 1]
    gu_nrm = g_nrm[rows, u - 1]
    gu_prim = g_prim[rows, u - 1]
    nxt = np.where((u > 1)[:, None], g_pos[rows, np.maximum(u - 2, 0)], pool.P_pos[m])
    out = np.zeros((n, 3))
    a = np.flatnonzero(pool.case[m] == CASE_A)
    if len(a):
        out[a] = scene.emitted(gu_prim[a], gu_nrm[a], _unit(gu_pos[a], nxt[a]))
    b = np.flatnonzero(pool.case[m] == CASE_B)
    if len(b):
        mb = m[b]
        hc, nhc = pool.hc_pos[mb], pool.hc_nrm[mb]
        wi = _unit(gu_pos[b], hc)
        wo = _unit(gu_pos[b], nxt[b])
        mid = scene.geometry.material_id[np.maximum(gu_prim[b], 0)]
        f = bsdf_eval(scene.mtable, mid, wi, wo, gu_nrm[b])
        d2 = dot(hc - gu_pos[b], hc - gu_pos[b])
        G = np.abs(dot(gu_nrm[b], wi)) * np.abs(dot(nhc, wi)) / d2
        le = scene.emitted(pool.hc_prim[mb], nhc, -wi)
        val = f * le * (G * scene.total_light_area)[:, None]
        live = np.any(val > 0, axis=1)
        val[~_visible(scene, gu_pos[b], gu_nrm[b], hc, nhc, live)] = 0.0
        out[b] = val
    return out


# ---------------------------------------------------------------------------
# frozen MIS density of the proxy strategy


def proxy_structure(spec, u_max):
    """For full paths (rows of the specular mask) find the proxy split:
    s* (first non-specular vertex seen from the eye), the specular endpoint
    index s*-1, the chain length u and terminal index r. ``valid`` marks
    paths the proxy strategy can produce."""
    M, k = spec.shape
    rows = np.arange(M)
    ns = ~spec
    has = ns.any(axis=1)
    sstar = k - 1 - np.argmax(ns[:, ::-1], axis=1)
    Pi = sstar - 1
    valid = has & (Pi >= 0)
    valid &= spec[rows, np.maximum(Pi, 0)]
    u = np.zeros(M, dtype=np.int64)
    run = valid.copy()
    for d in range(k):
        idx = Pi - d
        run = run & (idx >= 0) & spec[rows, np.maximum(idx, 0)]
        u += run
    r = Pi - u
    valid &= (u >= 1) & (u <= u_max) & (r >= 0) & (r <= 1)
    return valid, sstar, Pi, u, r


@dataclass
class FrozenProxy:
    """Everything the proxy density depends on, fixed for one pass."""

    mapper: SubspaceMapper
    stats: SubspaceStats
    gamma_eff: np.ndarray  # (T, S) rows renormalized over occupied buckets
    inv_phi: np.ndarray  # 1 / expected members per light path, per S
    gate: np.ndarray  # per pixel attempt probability
    total_light_area: float
    u_max: int = 4

    @classmethod
    def build(cls, mapper, stats, gamma, gate, total_light_area, u_max):
        phi = stats.occupancy_rate(mapper.S_count)
        occupied = phi > 0
        g = gamma.table * occupied[None, :]
        tot = g.sum(axis=1, keepdims=True)
        g = np.divide(g, tot, out=np.zeros_like(g), where=tot > 0)
        inv_phi = np.divide(1.0, phi, out=np.zeros_like(phi), where=occupied)
        return cls(mapper, stats, g, inv_phi, gate.copy(), total_light_area, u_max)

    def components(self, fp, PE):
        """(valid, T, S, key rows, prefix density, chain x eye density) of
        the proxy strategy for full paths ``fp``."""
        spec = fp.spec
        M, k = spec.shape
        rows = np.arange(M)
        valid, sstar, Pi, u, r = proxy_structure(spec, self.u_max)
        Pc = np.clip(Pi, 0, k - 1)
        Sc = np.clip(sstar, 0, k - 1)
        S = self.mapper.specular_labels(fp.pos[rows, Pc], fp.nrm[rows, Pc])
        T = self.mapper.eye_labels(fp.pos[rows, Sc], fp.nrm[rows, Sc])
        nulls = np.full((M, 3), np.nan)
        C = self.mapper.control_labels(fp.pos[:, 0], nulls, r == 1)
        p_h = np.where(r == 1, 1.0 / self.total_light_area, 1.0)
        idx = np.arange(k)[None, :]
        use = (idx >= r[:, None]) & (idx != Pi[:, None])
        p_rest = np.prod(np.where(use, PE, 1.0), axis=1)
        return valid, T, S, C, u, p_h, p_rest

    def __call__(self, fp, PE, pixel):
        valid, T, S, C, u, p_h, p_rest = self.components(fp, PE)
        out = np.zeros(len(valid))
        if not np.any(valid):
            return out
        papprox = np.zeros(len(valid))
        kappa = np.ones(len(valid))
        keys = np.stack([u, C, S], axis=1)
        uniq, inv = np.unique(keys[valid], axis=0, return_inverse=True)
        pa = np.array([self.stats.approx_pdf(tuple(int(x) for x in row)) for row in uniq])
        ka = np.array([self.stats.kappa(tuple(int(x) for x in row)) for row in uniq])
        papprox[valid] = pa[inv.ravel()]
        kappa[valid] = ka[inv.ravel()]
        sel = self.gamma_eff[T, S] * self.inv_phi[S]
        out[valid] = (self.gate[pixel] * sel * p_h * papprox * p_rest / kappa)[valid]
        return out


def reciprocal_mis_weight(pdfs, current, inv_sq_moments=None):
    """Weight of strategy ``current``. Strategies whose density is only known
    through a reciprocal estimate carry E[1/p~^2]; their unnormalized weight
    is p / (E[1/p~^2] p^2) relative to exact strategies (None entries)."""
    pdfs = np.asarray(pdfs, dtype=float)
    if pdfs[current] <= 0:
        raise ValueError("current strategy has zero density")
    w = pdfs.copy()
    if inv_sq_moments is not None:
        for i, m2 in enumerate(inv_sq_moments):
            if m2 is not None and pdfs[i] > 0:
                w[i] = 1.0 / (m2 * pdfs[i])
    return float(w[current] / w.sum())


# ---------------------------------------------------------------------------
# proxy connections for a batch of eye paths


@dataclass
class ConnectRecords:
    T: np.ndarray
    S: np.ndarray
    value: np.ndarray  # weighted luminance
    attempts: int = 0
    rejected: int = 0


def first_diffuse(eye):
    """Index (into eye arrays) of each path's first non-specular vertex, -1 if none."""
    j = np.arange(eye.depth)[None, :]
    ok = (~eye.spec) & (j < eye.length[:, None])
    first = np.argmax(ok, axis=1)
    return np.where(ok.any(axis=1), first, -1)


def proxy_connect_batch(scene, eye, pool, gamma, frozen, n_light, keep, max_depth, rng, diag=None):
    """Weighted proxy contribution for every eye path, (N, 3)."""
    N = eye.n
    L = np.zeros((N, 3))
    empty = ConnectRecords(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
    if len(pool) == 0:
        return L, empty
    mt = scene.mtable
    S_count = gamma.S_count
    j = first_diffuse(eye)
    gate = frozen.gate[eye.pixel]
    cand = np.flatnonzero((j >= 0) & (rng.random(N) < gate))
    if len(cand) == 0:
        return L, empty
    jc = j[cand]
    z = eye.pos[cand, jc]
    nz = eye.nrm[cand, jc]
    T = frozen.mapper.eye_labels(z, nz)

    counts = np.bincount(pool.S, minlength=S_count)
    S, pS = gamma.sample(T, rng, counts > 0)
    m, _ = select_in_subspace(pool.S, S, S_count, rng)
    k = pool.end[m] + 1 + jc + 1
    live = k <= max_depth

    prev = np.where((jc >= 1)[:, None], eye.pos[cand, np.maximum(jc - 1, 0)], eye.camera)
    to_prev = _unit(z, prev)
    P, nP = pool.P_pos[m], pool.P_nrm[m]
    w = _unit(z, P)
    fz = bsdf_eval(mt, eye.mid[cand, jc], w, to_prev, nz)
    d2 = dot(P - z, P - z)
    G = np.abs(dot(nz, w)) * np.abs(dot(nP, w)) / d2
    base = eye.beta[cand, jc] * fz * G[:, None]
    live &= np.any(base > 0, axis=1)
    live &= _visible(scene, z, nz, P, nP, live)

    sel = np.flatnonzero(live)
    attempts = len(cand)
    if diag is not None:
        diag.add(pool.take(m).keys(), "attempts")
    if len(sel) == 0:
        if diag is not None:
            diag.add(pool.take(m).keys(), "rejected")
        return L, ConnectRecords(empty.T, empty.S, empty.value, attempts, attempts)
    ms = m[sel]
    ok, g_pos, g_nrm, g_prim, thr, _ = retrace(scene, pool, ms, z[sel], rng)
    term = terminal_factor(scene, pool, ms, g_pos, g_nrm, g_prim)
    sel_prob = n_light * keep * (pS[sel] / counts[S[sel]]) * gate[cand[sel]]
    val = base[sel] * thr * term * (pool.inv_P[ms] / sel_prob)[:, None]
    val[~ok] = 0.0
    nz_rows = np.flatnonzero(np.any(val > 0, axis=1))
    if diag is not None:
        rej = np.ones(len(cand), dtype=bool)
        rej[sel[nz_rows]] = False
        diag.add(pool.take(m[rej]).keys(), "rejected")

    # MIS weights, grouped by full path length
    weights = np.zeros(len(sel))
    kk = k[sel]
    for kv in np.unique(kk[nz_rows]):
        rows = nz_rows[kk[nz_rows] == kv]
        fp = _assemble_proxy(pool, ms[rows], g_pos[rows], g_nrm[rows], g_prim[rows], eye, cand[sel[rows]], jc[sel[rows]], scene)
        PL, PE = vertex_pdfs(scene, fp)
        p = strategy_pdfs_from(PL, PE, fp.spec)
        extra = frozen(fp, PE, eye.pixel[cand[sel[rows]]])
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = p.sum(axis=1) + extra
            weights[rows] = np.where(denom > 0, extra / denom, 0.0)
    val *= weights[:, None]
    L[cand[sel]] += val
    lum = luminance(val)
    keep_rec = lum > 0
    rec = ConnectRecords(T[sel][keep_rec], S[sel][keep_rec], lum[keep_rec], attempts, attempts - len(nz_rows))
    return L, rec


def _assemble_proxy(pool, m, g_pos, g_nrm, g_prim, eye, ei, jc, scene):
    """Full paths (light order) [h_c?, g_u..g_1, P, z_j..z_1] for rows that
    share one total length."""
    geo = scene.geometry
    mt = scene.mtable
    n = len(m)
    u = pool.u[m]
    case_b = pool.case[m] == CASE_B
    k = int(pool.end[m[0]] + 1 + jc[0] + 1)
    pos = np.zeros((n, k, 3))
    nrm = np.zeros((n, k, 3))
    mid = np.zeros((n, k), dtype=np.int64)
    rows = np.arange(n)
    off = case_b.astype(np.int64)
    b = np.flatnonzero(case_b)
    pos[b, 0], nrm[b, 0] = pool.hc_pos[m[b]], pool.hc_nrm[m[b]]
    mid[b, 0] = geo.material_id[pool.hc_prim[m[b]]]
    for i in range(int(u.max())):
        has = np.flatnonzero(u > i)
        slot = off[has] + u[has] - 1 - i
        pos[has, slot] = g_pos[has, i]
        nrm[has, slot] = g_nrm[has, i]
        mid[has, slot] = geo.material_id[g_prim[has, i]]
    e = off + u
    pos[rows, e], nrm[rows, e], mid[rows, e] = pool.P_pos[m], pool.P_nrm[m], pool.P_mid[m]
    j = int(jc[0])
    for q in range(j + 1):
        # z_{j+1-q} sits at e + 1 + q
        pos[rows, e + 1 + q] = eye.pos[ei, j - q]
        nrm[rows, e + 1 + q] = eye.nrm[ei, j - q]
        mid[rows, e + 1 + q] = eye.mid[ei, j - q]
    return FullPaths(pos, nrm, mid, mt.specular[mid], eye.camera)


# ---------------------------------------------------------------------------
# pretrace and the renderer


def pretrace(scene, n_paths, rng, mapper=None, cfg=None, max_depth=None):
    """Seed statistics (B bounds, inverse-pdf moments, bucket occupancy)
    from ``n_paths`` light sub-paths."""
    cfg = cfg or ProxyConfig()
    mapper = mapper or cfg.mapper(scene)
    D = max_depth or scene.settings.max_depth
    stats = SubspaceStats()
    if not scene.has_specular:
        return stats
    light = trace_light_batch(scene, n_paths, D, rng)
    pool = dropout_batch(scene, light, D, cfg.u_max).label(mapper)
    stats.count_paths(n_paths, pool.S)
    if len(pool) == 0:
        return stats
    if len(pool) > cfg.pretrace_members:
        pool = pool.take(rng.choice(len(pool), cfg.pretrace_members, replace=False))
    shard = SubspaceStats()
    _bounds(scene, pool, SubspaceStats(), shard, cfg, rng)
    stats = stats.merge(shard)
    # second round: bounds now come from the bucket maxima
    shard = SubspaceStats()
    estimate_inverse_P_batch(scene, pool, stats, shard, cfg, rng)
    return stats.merge(shard)


def _gate_cells(scene, grid_px):
    w, h = scene.camera.width, scene.camera.height
    gx = -(-w // grid_px)
    idx = np.arange(w * h)
    return (idx // w // grid_px) * gx + (idx % w) // grid_px, gx * -(-h // grid_px)


def render_proxy_bdpt(scene, spp, rng, max_depth=None, time_budget=None, on_pass=None, cfg=None, stats=None):
    """BDPT plus proxy connections, one sample per pixel per pass."""
    cfg = cfg or ProxyConfig()
    D = max_depth or scene.settings.max_depth
    if not cfg.enabled or not scene.has_specular:
        res = render_bdpt(scene, spp, rng, D, time_budget, on_pass)
        res.info["proxy"] = "disabled"
        return res
    mapper = cfg.mapper(scene)
    t0 = time.perf_counter()
    if stats is None:
        stats = pretrace(scene, cfg.pretrace_paths, rng, mapper, cfg, D)
    gamma = GammaMatrix(cfg.T_count, cfg.S_count, cfg.freeze_iter)
    W, H = scene.camera.width, scene.camera.height
    npx = W * H
    cell, ncell = _gate_cells(scene, cfg.grid_px)
    share_proxy = np.zeros(ncell)
    share_total = np.zeros(ncell)
    gate = np.ones(npx)
    acc = Accumulator(W, H)
    diag = Diagnostics()
    rows = []
    info = {"pool_sizes": [], "kept": [], "truncated_runs": 0, "runs": 0, "attempts": 0, "rejected": 0}
    total = spp if time_budget is None else 1 << 30
    for it in range(total):
        frozen = FrozenProxy.build(mapper, stats, gamma, gate, scene.total_light_area, cfg.u_max)
        px, py = pixel_grid(scene, 1)
        eye = trace_eye_batch(scene, px, py, D, rng)
        light = trace_light_batch(scene, npx, D, rng)
        full = dropout_batch(scene, light, D, cfg.u_max).label(mapper)
        shard = SubspaceStats(b_factor=stats.b_factor, min_samples=stats.min_samples)
        shard.count_paths(npx, full.S)
        K = len(full)
        if K > cfg.budget:
            pool = full.take(np.sort(rng.choice(K, cfg.budget, replace=False)))
            keep = cfg.budget / K
        else:
            pool, keep = full, 1.0
        estimate_inverse_P_batch(scene, pool, stats, shard, cfg, rng, diag)
        Lb = bdpt_radiance(scene, light, eye, D, extra_pdf=frozen)
        Lp, rec = proxy_connect_batch(scene, eye, pool, gamma, frozen, npx, keep, D, rng, diag)
        img = Lb + Lp
        acc.add(eye.pixel, img, 1)

        gamma.learn(rec.T, rec.S, rec.value, it)
        stats = stats.merge(shard)
        c = cell[eye.pixel]
        share_proxy += np.bincount(c, luminance(Lp), minlength=ncell)
        share_total += np.bincount(c, luminance(img), minlength=ncell)
        ratio = np.divide(share_proxy, share_total, out=np.ones(ncell), where=share_total > 0)
        gate = np.where(ratio > cfg.gate_share, 1.0, cfg.gate_low)[cell]

        info["pool_sizes"].append(K)
        info["kept"].append(len(pool))
        info["truncated_runs"] += int(pool.truncated.sum()) if len(pool) else 0
        info["runs"] += len(pool) * cfg.repeats
        info["attempts"] += rec.attempts
        info["rejected"] += rec.rejected
        elapsed = time.perf_counter() - t0
        if on_pass is not None:
            rows.append(on_pass(it, elapsed, acc))
        if time_budget is not None and elapsed >= time_budget:
            break
    info.update(stats=stats, gamma=gamma, diagnostics=diag, proxy="enabled")
    return RenderResult(acc.mean, acc.stderr, acc.count, time.perf_counter() - t0, [r for r in rows if r], info)
