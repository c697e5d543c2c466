"""Single-path view of proxy connections.

The renderer works on flat batches (``proxy.IncompletePool``). The types
and functions here handle one incomplete light sub-path at a time for
inspection, examples and tests. ``dropout`` is written independently of
``proxy.dropout_batch`` so the two can be checked against each other; the
remaining operations wrap a one-member pool around the batched core.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .proxy import (
    CASE_A,
    CASE_B,
    IncompletePool,
    ProxyConfig,
    estimate_inverse_P_batch,
    proxy_structure,
    reciprocal_mis_weight,
    retrace,
    strategies_for,
    support_pdf_batch,
    support_sample_batch,
    terminal_factor,
)
from .scene.materials import bsdf_pdf, eval_bsdf
from .transport.mis import FullPaths, strategy_pdfs_from, vertex_pdfs
from .transport.subpath import CAMERA, DIFFUSE, LIGHT, SPECULAR, PathVertex, geometry_term

U_MAX = 4


@dataclass(frozen=True)
class SupportStrategy:
    """Uniform mixture over the strategies available for one case."""

    kinds: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.kinds) != len(self.weights) or not self.kinds:
            raise ValueError("one weight per strategy")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")

    @classmethod
    def for_case(cls, u, contains_emitter):
        kinds = strategies_for(u, CASE_A if contains_emitter else CASE_B)
        return cls(kinds, tuple(1.0 / len(kinds) for _ in kinds))


@dataclass
class IncompleteLightSubPath:
    """A light sub-path with its last u vertices behind the specular endpoint
    dropped. ``dropped`` keeps the originals g_1..g_u (nearest first)."""

    prefix: list
    endpoint: PathVertex
    control: PathVertex | None
    control_dir: np.ndarray | None
    u: int
    prefix_pdf: float
    dropped: list = field(default_factory=list)
    inverse_P: float | None = None
    inverse_P_sq: float | None = None
    C: int | None = None
    S: int | None = None

    def __post_init__(self):
        if not 1 <= self.u <= U_MAX:
            raise ValueError(f"glossy count u={self.u} outside [1, {U_MAX}]")
        if not self.endpoint.specular:
            raise ValueError("the endpoint must be specular")
        if (self.control is None) != (len(self.prefix) == 0):
            raise ValueError("a control vertex exists exactly when y_0 is retained")
        if self.control_dir is not None:
            # the supported shapes always drop y_0 or y_1
            raise ValueError("control direction must be null")
        if self.dropped and len(self.dropped) != self.u:
            raise ValueError("dropped originals must hold u vertices")
        if self.inverse_P is not None and not self.inverse_P > 0:
            raise ValueError("cached inverse_P must be positive")

    @property
    def case(self):
        return CASE_A if self.control is None else CASE_B

    @property
    def contains_emitter(self):
        return self.control is None

    @property
    def strategy(self):
        return SupportStrategy.for_case(self.u, self.contains_emitter)

    @property
    def length(self):
        """Vertex count of the original sub-path."""
        return len(self.prefix) + self.u + 1


@dataclass
class ProxyPath:
    """Vertices g_1..g_u (nearest to the specular endpoint first)."""

    vertices: list
    terminal_on_emitter: bool
    pdf: float = 0.0  # area density under the procedure that produced it
    throughput: np.ndarray | None = None  # retrace only: prod f |cos| / pdf
    eye_position: np.ndarray | None = None

    @property
    def flags(self):
        return tuple(v.flag for v in self.vertices)


# ---------------------------------------------------------------------------


def dropout(light_subpath, u_max=U_MAX):
    """Drop the chain behind the specular endpoint; None when the shape is
    not supported (control vertex not on an emitter, or u > u_max)."""
    v = light_subpath.vertices
    if not v or not v[-1].specular:
        raise ValueError("dropout needs a sub-path ending at a specular vertex")
    e = len(v) - 1
    u = 0
    while u <= e and v[e - u].specular:
        u += 1
    r = e - u
    if u > u_max or r < 0 or r > 1:
        return None
    dropped = [v[e - 1 - i] for i in range(u)]
    prefix = list(v[:r])
    control = v[0] if r == 1 else None
    return IncompleteLightSubPath(
        prefix=prefix,
        endpoint=v[e],
        control=control,
        control_dir=None,
        u=u,
        prefix_pdf=float(v[0].pdf_fwd) if r == 1 else 1.0,
        dropped=dropped,
    )


def repair(inc, gbar=None):
    """Light-order vertices rebuilt from the retained prefix and a chain
    (the dropped originals by default)."""
    chain = inc.dropped if gbar is None else gbar.vertices
    return list(inc.prefix) + list(chain[::-1]) + [inc.endpoint]


def _as_pool(scene, inc, u_max=U_MAX):
    g_pos = np.zeros((1, u_max, 3))
    g_nrm = np.zeros((1, u_max, 3))
    g_prim = np.full((1, u_max), -1, dtype=np.int64)
    g_spec = np.zeros((1, u_max), dtype=bool)
    for i, g in enumerate(inc.dropped):
        g_pos[0, i], g_nrm[0, i], g_prim[0, i], g_spec[0, i] = g.position, g.normal, g.primitive_id, g.specular
    P = inc.endpoint
    hc = inc.control
    arr = lambda x, dt=float: np.array([x], dtype=dt)
    pool = IncompletePool(
        src=arr(0, np.int64), end=arr(inc.length - 1, np.int64), u=arr(inc.u, np.int64), case=arr(inc.case, np.int64),
        P_pos=arr(P.position), P_nrm=arr(P.normal), P_mid=arr(P.material_id, np.int64), P_prim=arr(P.primitive_id, np.int64),
        hc_pos=arr(hc.position if hc else np.zeros(3)), hc_nrm=arr(hc.normal if hc else np.zeros(3)),
        hc_prim=arr(hc.primitive_id if hc else -1, np.int64),
        g_pos=g_pos, g_nrm=g_nrm, g_prim=g_prim, g_spec=g_spec,
    )
    if inc.C is not None:
        pool.C, pool.S = arr(inc.C, np.int64), arr(inc.S, np.int64)
    if inc.inverse_P is not None:
        pool.inv_P = arr(inc.inverse_P)
    return pool


def _flag(scene, prim, terminal_case_a):
    if terminal_case_a and scene.emitter_of_prim[prim] >= 0:
        return LIGHT
    return SPECULAR if scene.prim_specular[prim] else DIFFUSE


def _chain(scene, inc, g_pos, g_nrm, g_prim):
    """PathVertex list for a chain stored in pool slot layout, None on escape."""
    out = []
    for i in range(inc.u):
        prim = int(g_prim[i])
        if prim < 0:
            return None
        last = i == inc.u - 1
        out.append(PathVertex(g_pos[i].copy(), g_nrm[i].copy(), int(scene.geometry.material_id[prim]), None,
                              _flag(scene, prim, last and inc.case == CASE_A), 0.0, np.ones(3), prim))
    return out


def _slots(inc, gbar, u_max=U_MAX):
    g_pos = np.zeros((1, u_max, 3))
    g_nrm = np.zeros((1, u_max, 3))
    g_prim = np.full((1, u_max), -1, dtype=np.int64)
    for i, g in enumerate(gbar.vertices):
        g_pos[0, i], g_nrm[0, i], g_prim[0, i] = g.position, g.normal, g.primitive_id
    return g_pos, g_nrm, g_prim


def retrace_proxy(inc, eye_end, scene, rng):
    """Re-sample the dropped chain from the specular endpoint given the eye
    vertex. None on escape or class mismatch with the originals."""
    pool = _as_pool(scene, inc)
    z = np.asarray(eye_end.position if isinstance(eye_end, PathVertex) else eye_end, float)
    ok, g_pos, g_nrm, g_prim, thr, p_chain = retrace(scene, pool, np.array([0]), z[None], rng)
    if not ok[0]:
        return None
    verts = _chain(scene, inc, g_pos[0], g_nrm[0], g_prim[0])
    if verts is None:
        return None
    return ProxyPath(verts, inc.case == CASE_A, float(p_chain[0]), thr[0].copy(), z.copy())


def support_sample(inc, scene, rng):
    """One candidate chain from the support mixture and its mixture density
    (area measure). (None, 0.0) when the candidate escapes the scene."""
    pool = _as_pool(scene, inc)
    m = np.array([0])
    g_pos, g_nrm, g_prim, _ = support_sample_batch(scene, pool, m, inc.u, inc.case, rng)
    verts = _chain(scene, inc, g_pos[0], g_nrm[0], g_prim[0])
    if verts is None:
        return None, 0.0
    q = float(support_pdf_batch(scene, pool, m, inc.u, inc.case, g_pos, g_nrm, g_prim)[0])
    terminal = inc.case == CASE_A and verts[-1].flag == LIGHT
    return ProxyPath(verts, terminal, q), q


def support_pdf(inc, gbar, scene):
    """Mixture density of ``gbar`` under every available strategy."""
    pool = _as_pool(scene, inc)
    g_pos, g_nrm, g_prim = _slots(inc, gbar)
    return float(support_pdf_batch(scene, pool, np.array([0]), inc.u, inc.case, g_pos, g_nrm, g_prim)[0])


def integrand_value(inc, gbar, scene):
    """f(g): density of light-tracing the chain into the endpoint."""
    from .proxy import integrand

    pool = _as_pool(scene, inc)
    g_pos, g_nrm, g_prim = _slots(inc, gbar)
    return float(integrand(scene, pool, np.array([0]), inc.u, inc.case, g_pos, g_nrm, g_prim)[0])


def estimate_inverse_P(inc, stats, rng, scene, cfg=None, mapper=None):
    """Mean of ``cfg.repeats`` reciprocal runs for 1 / P of this sub-path.
    Caches the value and its second moment on ``inc`` and records the
    estimates in ``stats`` (updated in place)."""
    cfg = cfg or ProxyConfig()
    if inc.S is None:
        mapper = mapper or cfg.mapper(scene)
        inc.S = mapper.classify_specular(inc.endpoint)
        inc.C = mapper.classify_control(inc.control, inc.control_dir)
    pool = _as_pool(scene, inc)
    estimate_inverse_P_batch(scene, pool, stats, stats, cfg, rng)
    inc.inverse_P = float(pool.inv_P[0])
    inc.inverse_P_sq = float(pool.inv_P_sq[0])
    return inc.inverse_P


def retrace_density(inc, gbar, scene):
    """Area density of re-sampling ``gbar`` from the endpoint given
    ``gbar.eye_position``, recomputed from BSDF densities."""
    if gbar.eye_position is None:
        raise ValueError("the retrace density needs the eye vertex")
    mt = scene.mtable
    prev = np.asarray(gbar.eye_position, float)
    x, nx, mid = inc.endpoint.position, inc.endpoint.normal, inc.endpoint.material_id
    p = 1.0
    for g in gbar.vertices:
        a = (prev - x) / np.linalg.norm(prev - x)
        d = g.position - x
        dist = np.linalg.norm(d)
        b = d / dist
        pd = float(bsdf_pdf(mt, np.array([mid]), a[None], b[None], nx[None])[0])
        p *= pd * abs(float(np.dot(g.normal, b))) / dist**2
        prev, x, nx, mid = x, g.position, g.normal, g.material_id
    return p


def proxy_pdf_components(inc, gbar, scene, eye_pdf=None):
    """{prefix: p(h*), retrace: p(g | h)}; with ``eye_pdf`` also the eye
    density and the full proxy-strategy density using the cached 1 / P."""
    out = {"prefix": float(inc.prefix_pdf), "retrace": retrace_density(inc, gbar, scene)}
    if eye_pdf is not None:
        out["eye"] = float(eye_pdf)
        if inc.inverse_P is not None:
            out["path"] = out["prefix"] * out["retrace"] * out["eye"] / inc.inverse_P
    return out


# ---------------------------------------------------------------------------
# one proxy connection


def _first_diffuse_end(eye_subpath):
    verts = eye_subpath.vertices
    if len(verts) < 2 or verts[0].flag != CAMERA:
        raise ValueError("eye sub-path needs a camera vertex and a surface vertex")
    if verts[-1].specular or any(not v.specular for v in verts[1:-1]):
        raise ValueError("eye sub-path must end at its first diffuse vertex")
    return verts[-1], verts[-2]


def _full_path(scene, inc, gbar, eye_subpath):
    light = repair(inc, gbar)
    eye = list(eye_subpath.vertices[1:])[::-1]
    verts = light + eye
    pos = np.array([v.position for v in verts])[None]
    nrm = np.array([v.normal for v in verts])[None]
    mid = np.array([v.material_id for v in verts])[None]
    return FullPaths(pos, nrm, mid, scene.mtable.specular[mid], np.asarray(eye_subpath.vertices[0].position, float))


def proxy_strategy_densities(inc, gbar, eye_subpath, scene, stats, selection=1.0, mapper=None):
    """Densities of every BDPT split of the connected path followed by the
    proxy strategy (last entry), with E[1/p~^2] for the proxy entry only.
    None when the path has no proxy split."""
    fp = _full_path(scene, inc, gbar, eye_subpath)
    PL, PE = vertex_pdfs(scene, fp)
    p = strategy_pdfs_from(PL, PE, fp.spec)[0]
    valid, _, Pi, _, r = proxy_structure(fp.spec, U_MAX)
    if not valid[0]:
        return None
    if inc.S is None:
        mapper = mapper or ProxyConfig().mapper(scene)
        inc.S = mapper.classify_specular(inc.endpoint)
        inc.C = mapper.classify_control(inc.control, inc.control_dir)
    key = (inc.u, inc.C, inc.S)
    approx = stats.approx_pdf(key)
    if approx <= 0:
        # unknown bucket: fall back to this sub-path's own estimate
        approx = 1.0 / inc.inverse_P
    idx = np.arange(fp.k)
    use = (idx >= r[0]) & (idx != Pi[0])
    p_proxy = inc.prefix_pdf * approx * float(np.prod(PE[0][use])) * selection
    if p_proxy <= 0:
        return None
    m2 = stats.kappa(key) / p_proxy**2
    return list(p) + [p_proxy], [None] * len(p) + [m2]


def proxy_weight(inc, gbar, eye_subpath, scene, stats, selection=1.0, mapper=None):
    """Reciprocal-aware MIS weight of the proxy strategy on the connected
    path, against every BDPT split of the same path."""
    dens = proxy_strategy_densities(inc, gbar, eye_subpath, scene, stats, selection, mapper)
    if dens is None:
        return 0.0
    pdfs, m2 = dens
    return reciprocal_mis_weight(pdfs, len(pdfs) - 1, m2)


def proxy_connect(eye_subpath, inc, scene, stats, rng, selection=1.0, mapper=None):
    """Weighted RGB contribution of joining ``eye_subpath`` (ending at its
    first diffuse vertex) to ``inc`` through a retraced chain. ``selection``
    is the probability with which the caller picked this pairing."""
    z, zp = _first_diffuse_end(eye_subpath)
    if inc.inverse_P is None:
        estimate_inverse_P(inc, stats, rng, scene, mapper=mapper)
    P = inc.endpoint
    w = P.position - z.position
    d = np.linalg.norm(w)
    if d <= 0:
        return np.zeros(3)
    w = w / d
    to_prev = (zp.position - z.position) / np.linalg.norm(zp.position - z.position)
    fz = eval_bsdf(scene.materials[z.material_id], w, to_prev, z.normal)[0]
    G = geometry_term(z, P, scene)
    if G == 0 or not np.any(fz > 0):
        return np.zeros(3)
    gbar = retrace_proxy(inc, z, scene, rng)
    if gbar is None:
        return np.zeros(3)
    pool = _as_pool(scene, inc)
    g_pos, g_nrm, g_prim = _slots(inc, gbar)
    term = terminal_factor(scene, pool, np.array([0]), g_pos, g_nrm, g_prim)[0]
    val = z.throughput * fz * G * gbar.throughput * term * inc.inverse_P / selection
    if not np.any(val > 0):
        return np.zeros(3)
    return val * proxy_weight(inc, gbar, eye_subpath, scene, stats, selection, mapper)


__all__ = [
    "IncompleteLightSubPath",
    "ProxyPath",
    "SupportStrategy",
    "dropout",
    "estimate_inverse_P",
    "integrand_value",
    "proxy_connect",
    "proxy_pdf_components",
    "proxy_strategy_densities",
    "proxy_weight",
    "repair",
    "retrace_density",
    "retrace_proxy",
    "support_pdf",
    "support_sample",
]
