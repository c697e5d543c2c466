"""Materials and the BSDF: Lambert diffuse, GGX metal, GGX dielectric.

Direction conventions. All directions point away from the surface.

* ``eval``: ``wi`` points toward the light side of the path, ``wo`` toward
  the viewer side. The dielectric transmission term is not symmetric, so
  callers must respect this order.
* ``pdf`` / ``sample``: ``a`` is the given direction, ``b`` the sampled
  one; the density is the solid-angle density of b given a.

The normal passed in is the geometric normal of the primitive; its
orientation matters only for dielectrics (it points to the outside).
Reflection lobes are two-sided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vec import cosine_hemisphere, cross, dot, normalize, to_world

MIN_ALPHA = 1e-4


@dataclass(frozen=True)
class Material:
    base_color: tuple = (0.8, 0.8, 0.8)
    metallic: float = 0.0
    roughness: float = 1.0
    transmission: float = 0.0
    ior: float = 1.5
    emission: tuple = (0.0, 0.0, 0.0)
    name: str = ""

    def __post_init__(self):
        label = self.name or "material"
        if len(self.base_color) != 3 or any(not 0.0 <= c <= 1.0 for c in self.base_color):
            raise ValueError(f"{label}: base_color must be 3 values in [0, 1]")
        for key in ("metallic", "roughness", "transmission"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{label}: {key} must lie in [0, 1]")
        if not self.ior > 1.0:
            raise ValueError(f"{label}: ior must exceed 1")
        if len(self.emission) != 3 or any(c < 0 for c in self.emission):
            raise ValueError(f"{label}: emission must be 3 nonnegative values")


def is_specular(material):
    return (material.metallic > 0.5 or material.transmission > 0.5) and material.roughness < 0.2


class MaterialTable:
    """Struct-of-arrays view of a material list, indexed by material id."""

    def __init__(self, materials):
        self.materials = list(materials)
        m = self.materials
        self.base_color = np.array([x.base_color for x in m], dtype=float).reshape(-1, 3)
        self.metallic = np.array([x.metallic for x in m], dtype=float)
        self.roughness = np.array([x.roughness for x in m], dtype=float)
        self.transmission = np.array([x.transmission for x in m], dtype=float)
        self.ior = np.array([x.ior for x in m], dtype=float)
        self.alpha = np.maximum(self.roughness**2, MIN_ALPHA)
        self.specular = np.array([is_specular(x) for x in m], dtype=bool)
        self.w_diffuse = (1 - self.metallic) * (1 - self.transmission)
        self.w_metal = self.metallic
        self.w_glass = (1 - self.metallic) * self.transmission

    def __len__(self):
        return len(self.materials)


# ---------------------------------------------------------------------------
# microfacet pieces


def ggx_d(cos_h, alpha, sin2=None):
    """``sin2`` (from a cross product) avoids the cancellation in 1 - cos^2
    that dominates narrow lobes."""
    c2 = cos_h * cos_h
    a2 = alpha * alpha
    s2 = np.maximum(1.0 - c2, 0.0) if sin2 is None else sin2
    denom = s2 + a2 * c2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = a2 / (np.pi * denom * denom)
    return np.where(cos_h > 0, d, 0.0)


def _sin2(h, n):
    c = cross(h, n)
    return dot(c, c)


def smith_g1(cos_v, alpha):
    c2 = np.maximum(cos_v * cos_v, 1e-300)
    tan2 = np.maximum(1.0 - c2, 0.0) / c2
    return 2.0 / (1.0 + np.sqrt(1.0 + alpha * alpha * tan2))


def fresnel_dielectric(cos_i, eta_i, eta_t):
    """Unpolarized Fresnel reflectance for cos_i > 0 on the incident side."""
    cos_i = np.clip(cos_i, 0.0, 1.0)
    eta = eta_i / eta_t
    sin2_t = eta * eta * np.maximum(0.0, 1.0 - cos_i * cos_i)
    tir = sin2_t >= 1.0
    cos_t = np.sqrt(np.maximum(0.0, 1.0 - sin2_t))
    with np.errstate(divide="ignore", invalid="ignore"):
        rs = (eta_i * cos_i - eta_t * cos_t) / (eta_i * cos_i + eta_t * cos_t)
        rp = (eta_t * cos_i - eta_i * cos_t) / (eta_t * cos_i + eta_i * cos_t)
    f = 0.5 * (rs * rs + rp * rp)
    return np.where(tir, 1.0, np.nan_to_num(f, nan=1.0))


def schlick(f0, cos):
    return f0 + (1.0 - f0) * ((1.0 - np.clip(cos, 0.0, 1.0)) ** 5)[..., None]


def _etas(cos_a, ior):
    # side of the given direction decides which medium it lives in
    outside = cos_a > 0
    return np.where(outside, 1.0, ior), np.where(outside, ior, 1.0)


def _oriented(n, c):
    return n * np.where(c >= 0, 1.0, -1.0)[..., None]


# ---------------------------------------------------------------------------
# vectorized BSDF over material ids


def bsdf_eval(mt, mid, wi, wo, n):
    """RGB value of the BSDF for light arriving from wi and leaving along wo."""
    bc = mt.base_color[mid]
    alpha = mt.alpha[mid]
    ior = mt.ior[mid]
    wd, wm, wg = mt.w_diffuse[mid], mt.w_metal[mid], mt.w_glass[mid]
    ci = dot(wi, n)
    co = dot(wo, n)
    same = ci * co > 0
    out = np.zeros(bc.shape)

    out += np.where(same, wd, 0.0)[..., None] * bc / np.pi

    # reflection half vector on the side of wi
    h = normalize(wi + wo)
    ns = _oriented(n, ci)
    cos_h = dot(h, ns)
    hi = np.abs(dot(wi, h))
    with np.errstate(divide="ignore", invalid="ignore"):
        spec = ggx_d(cos_h, alpha, _sin2(h, ns)) * smith_g1(np.abs(ci), alpha) * smith_g1(np.abs(co), alpha) / (4.0 * np.abs(ci) * np.abs(co))
    spec = np.where(same & (cos_h > 0) & np.isfinite(spec), spec, 0.0)
    out += (wm * spec)[..., None] * schlick(bc, hi)
    eta_i, eta_t = _etas(ci, ior)
    out += (wg * spec * fresnel_dielectric(hi, eta_i, eta_t))[..., None]

    # transmission, opposite sides
    if np.any(wg > 0):
        ht = -(eta_i[..., None] * wi + eta_t[..., None] * wo)
        ht = normalize(ht)
        ht = _oriented(ht, dot(ht, ns))
        ih = dot(wi, ht)
        oh = dot(wo, ht)
        cos_ht = dot(ht, ns)
        ok = (~same) & (ih > 0) & (oh < 0) & (ci != 0) & (co != 0)
        denom = eta_i * ih + eta_t * oh
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (
                ggx_d(cos_ht, alpha, _sin2(ht, ns))
                * smith_g1(np.abs(ci), alpha)
                * smith_g1(np.abs(co), alpha)
                * (1.0 - fresnel_dielectric(ih, eta_i, eta_t))
                * eta_t**2
                * np.abs(ih * oh)
                / (np.abs(ci * co) * denom * denom)
            )
        val = np.where(ok & np.isfinite(val), wg * val, 0.0)
        out += val[..., None] * bc
    return out


def bsdf_pdf(mt, mid, a, b, n):
    """Solid-angle density of sampling b given a."""
    alpha = mt.alpha[mid]
    ior = mt.ior[mid]
    wd, wm, wg = mt.w_diffuse[mid], mt.w_metal[mid], mt.w_glass[mid]
    ca = dot(a, n)
    cb = dot(b, n)
    same = ca * cb > 0
    pdf = np.where(same, wd * np.abs(cb) / np.pi, 0.0)

    ns = _oriented(n, ca)
    h = normalize(a + b)
    cos_h = dot(h, ns)
    ah = dot(a, h)
    with np.errstate(divide="ignore", invalid="ignore"):
        refl = ggx_d(cos_h, alpha, _sin2(h, ns)) * cos_h / (4.0 * np.abs(ah))
    refl = np.where(same & (cos_h > 0) & (ah > 0) & np.isfinite(refl), refl, 0.0)
    eta_a, eta_b = _etas(ca, ior)
    pdf = pdf + wm * refl + wg * refl * fresnel_dielectric(ah, eta_a, eta_b)

    if np.any(wg > 0):
        ht = normalize(-(eta_a[..., None] * a + eta_b[..., None] * b))
        ht = _oriented(ht, dot(ht, ns))
        aht = dot(a, ht)
        bht = dot(b, ht)
        cos_ht = dot(ht, ns)
        ok = (~same) & (aht > 0) & (bht < 0) & (ca != 0) & (cb != 0)
        denom = eta_a * aht + eta_b * bht
        with np.errstate(divide="ignore", invalid="ignore"):
            tr = (
                (1.0 - fresnel_dielectric(aht, eta_a, eta_b))
                * ggx_d(cos_ht, alpha, _sin2(ht, ns))
                * cos_ht
                * eta_b**2
                * np.abs(bht)
                / (denom * denom)
            )
        pdf = pdf + np.where(ok & np.isfinite(tr), wg * tr, 0.0)
    return pdf


def sample_ggx_h(alpha, u1, u2, ns):
    cos2 = (1.0 - u1) / (1.0 + (alpha * alpha - 1.0) * u1)
    cos_t = np.sqrt(np.clip(cos2, 0.0, 1.0))
    sin_t = np.sqrt(np.clip(1.0 - cos2, 0.0, 1.0))
    phi = 2.0 * np.pi * u2
    local = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
    return to_world(local, ns)


def bsdf_sample(mt, mid, a, n, rng):
    """Sample b given a. Returns (b, pdf); pdf = 0 marks a failed sample."""
    N = len(mid)
    alpha = mt.alpha[mid]
    ior = mt.ior[mid]
    wd, wm = mt.w_diffuse[mid], mt.w_metal[mid]
    u = rng.random((N, 5))
    ca = dot(a, n)
    ns = _oriented(n, ca)

    b_diff = to_world(cosine_hemisphere(u[:, 1], u[:, 2]), ns)
    h = sample_ggx_h(alpha, u[:, 1], u[:, 2], ns)
    ah = dot(a, h)
    b_refl = 2.0 * ah[..., None] * h - a

    eta_a, eta_b = _etas(ca, ior)
    F = fresnel_dielectric(ah, eta_a, eta_b)
    eta = eta_a / eta_b
    c = np.clip(ah, 0.0, 1.0)
    k = 1.0 - eta * eta * (1.0 - c * c)
    b_tr = -eta[..., None] * a + (eta * c - np.sqrt(np.maximum(k, 0.0)))[..., None] * h
    b_tr = normalize(b_tr)
    glass_reflect = u[:, 3] < F

    lobe = np.where(u[:, 0] < wd, 0, np.where(u[:, 0] < wd + wm, 1, 2))
    b = np.where((lobe == 0)[..., None], b_diff, np.where(((lobe == 1) | glass_reflect)[..., None], b_refl, b_tr))
    b = normalize(b)
    bad = ~np.all(np.isfinite(b), axis=-1) | (ca == 0)
    bad |= (lobe > 0) & (ah <= 0)
    # a lobe that lands on the wrong side is a failed sample, which keeps the
    # returned density equal to bsdf_pdf for every successful one
    side = dot(b, n) * ca
    reflected = (lobe == 1) | ((lobe == 2) & glass_reflect)
    bad |= np.where(reflected, side <= 0, (lobe == 2) & (side >= 0))
    b = np.where(bad[..., None], ns, b)
    pdf = np.where(bad, 0.0, bsdf_pdf(mt, mid, a, b, n))
    return b, pdf


# ---------------------------------------------------------------------------
# single-material convenience API


def _single(material, *arrays):
    mt = MaterialTable([material])
    arrs = [np.atleast_2d(np.asarray(x, dtype=float)) for x in arrays]
    N = max(len(x) for x in arrs)
    arrs = [np.broadcast_to(x, (N, 3)) for x in arrs]
    return mt, np.zeros(N, dtype=np.int64), arrs


def eval_bsdf(material, wi, wo, normal):
    mt, mid, (wi, wo, n) = _single(material, wi, wo, normal)
    return bsdf_eval(mt, mid, wi, wo, n)


def pdf_bsdf(material, wi, wo, normal):
    mt, mid, (wi, wo, n) = _single(material, wi, wo, normal)
    return bsdf_pdf(mt, mid, wi, wo, n)


def sample_bsdf(material, wi, normal, rng):
    """Returns dict(wo, pdf_solid_angle, value) with value = eval_bsdf(wi, wo)."""
    mt, mid, (wi, n) = _single(material, wi, normal)
    wo, pdf = bsdf_sample(mt, mid, wi, n, rng)
    return {"wo": wo, "pdf_solid_angle": pdf, "value": bsdf_eval(mt, mid, wi, wo, n)}
