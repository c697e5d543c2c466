"""Scene description and JSON scene files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .camera import Camera
from .geometry import Geometry, Hit, Primitive
from .materials import Material, MaterialTable
from .vec import cosine_hemisphere, dot, to_world


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    max_depth: int = 8
    spp: int = 16
    seed: int = 0


@dataclass(frozen=True)
class Emitter:
    primitive_id: int
    radiance: tuple
    area: float


@dataclass
class SceneDesc:
    materials: list
    primitives: list
    emitters: list
    camera: Camera
    settings: Settings = field(default_factory=Settings)
    name: str = ""

    def __post_init__(self):
        for i, p in enumerate(self.primitives):
            if not 0 <= p.material_id < len(self.materials):
                raise SceneError(f"primitive {p.name or i}: material id {p.material_id} does not resolve")
        if not self.emitters:
            raise SceneError("scene needs at least one emitter")
        for e in self.emitters:
            if not 0 <= e.primitive_id < len(self.primitives):
                raise SceneError(f"emitter on primitive {e.primitive_id}: primitive does not resolve")
            if any(c < 0 for c in e.radiance) or max(e.radiance) <= 0:
                raise SceneError(f"emitter on {self.primitives[e.primitive_id].name or e.primitive_id}: radiance must be positive")
        self.geometry = Geometry(self.primitives)
        self.mtable = MaterialTable(self.materials)
        P = len(self.primitives)
        self.emitter_of_prim = np.full(P, -1, dtype=np.int64)
        for k, e in enumerate(self.emitters):
            self.emitter_of_prim[e.primitive_id] = k
        self.emitter_prim = np.array([e.primitive_id for e in self.emitters], dtype=np.int64)
        self.emitter_radiance = np.array([e.radiance for e in self.emitters], dtype=float)
        self.emitter_area = np.array([e.area for e in self.emitters], dtype=float)
        self.total_light_area = float(self.emitter_area.sum())
        self.emitter_cdf = np.cumsum(self.emitter_area) / self.total_light_area
        self.prim_specular = self.mtable.specular[self.geometry.material_id]
        self.has_specular = bool(self.prim_specular.any())

    # -- emitters ---------------------------------------------------------

    def sample_light_points(self, n, rng):
        """Area-uniform points over all emitters: (pos, normal, emitter_id, pdf_area)."""
        k = np.searchsorted(self.emitter_cdf, rng.random(n), side="right")
        k = np.minimum(k, len(self.emitters) - 1)
        pos, nrm = self.geometry.sample_points(self.emitter_prim[k], rng)
        return pos, nrm, k, np.full(n, 1.0 / self.total_light_area)

    def sample_light_point(self, rng):
        pos, nrm, k, pdf = self.sample_light_points(1, rng)
        return {"position": pos[0], "normal": nrm[0], "emitter_id": int(k[0]), "pdf_area": float(pdf[0])}

    def emitted(self, prim, normal, w_out):
        """Radiance leaving emitter surfaces along w_out (front side only)."""
        out = np.zeros((len(prim), 3))
        k = self.emitter_of_prim[np.maximum(prim, 0)]
        lit = (prim >= 0) & (k >= 0) & (dot(normal, w_out) > 0)
        out[lit] = self.emitter_radiance[k[lit]]
        return out

    def sample_emission_dirs(self, normal, rng):
        u = rng.random((len(normal), 2))
        return to_world(cosine_hemisphere(u[:, 0], u[:, 1]), normal)

    # -- rays -------------------------------------------------------------

    def intersect(self, origin, direction):
        return self.geometry.hit_single(origin, direction)

    def material_of(self, hit: Hit):
        return self.materials[hit.material_id]


def _vec(v, default=None):
    return tuple(float(x) for x in v) if v is not None else default


def _material(d):
    try:
        return Material(
            base_color=_vec(d.get("base_color"), (0.8, 0.8, 0.8)),
            metallic=float(d.get("metallic", 0.0)),
            roughness=float(d.get("roughness", 1.0)),
            transmission=float(d.get("transmission", 0.0)),
            ior=float(d.get("ior", 1.5)),
            emission=_vec(d.get("emission"), (0.0, 0.0, 0.0)),
            name=d["name"],
        )
    except ValueError as exc:
        msg = str(exc).split(": ", 1)[-1]
        raise SceneError(f"material {d['name']!r}: {msg}") from None


def _primitive(i, d, mat_index):
    label = d.get("name", f"#{i}")
    if d["material"] not in mat_index:
        raise SceneError(f"primitive {label!r}: unknown material {d['material']!r}")
    mid = mat_index[d["material"]]
    need = {"sphere": ("center", "radius"), "triangle": ("p0", "p1", "p2"), "rectangle": ("origin", "edge_u", "edge_v")}[d["type"]]
    missing = [k for k in need if k not in d]
    if missing:
        raise SceneError(f"primitive {label!r}: missing {', '.join(missing)}")
    if d["type"] == "sphere":
        if not d["radius"] > 0:
            raise SceneError(f"primitive {label!r}: radius must be positive")
        return Primitive.sphere(d["center"], d["radius"], mid, bool(d.get("inverted", False)), name=label)
    if d["type"] == "triangle":
        p = Primitive.triangle(d["p0"], d["p1"], d["p2"], mid, name=label)
    else:
        p = Primitive.rectangle(d["origin"], np.asarray(d["edge_u"], float), np.asarray(d["edge_v"], float), mid, name=label)
    if not p.area > 1e-12:
        raise SceneError(f"primitive {label!r}: degenerate geometry (zero area)")
    return p


def _schema():
    return json.loads(resources.files("proxybdpt.scene").joinpath("schema.json").read_text())


def parse_scene(data, name=""):
    try:
        jsonschema.validate(data, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise SceneError(f"{where}: {exc.message}") from None

    mats = [_material(m) for m in data["materials"]]
    mat_index = {}
    for i, m in enumerate(mats):
        if m.name in mat_index:
            raise SceneError(f"material {m.name!r}: duplicate name")
        mat_index[m.name] = i
    prims = [_primitive(i, d, mat_index) for i, d in enumerate(data["primitives"])]
    prim_index = {p.name: i for i, p in enumerate(prims)}

    emitters = []
    seen = set()
    for e in data["emitters"]:
        if e["primitive"] not in prim_index:
            raise SceneError(f"emitter: unknown primitive {e['primitive']!r}")
        i = prim_index[e["primitive"]]
        rad = _vec(e["radiance"])
        if min(rad) < 0 or max(rad) <= 0:
            raise SceneError(f"emitter {e['primitive']!r}: radiance must be positive")
        emitters.append(Emitter(i, rad, prims[i].area))
        seen.add(i)
    # emissive materials register their primitives too
    for i, p in enumerate(prims):
        em = mats[p.material_id].emission
        if i not in seen and max(em) > 0:
            emitters.append(Emitter(i, em, p.area))
    if not emitters:
        raise SceneError("scene has zero emitters; at least one is required")

    cam = data["camera"]
    try:
        camera = Camera(
            position=_vec(cam["position"]),
            look_at=_vec(cam["look_at"]),
            up=_vec(cam.get("up"), (0.0, 1.0, 0.0)),
            vertical_fov=float(cam.get("vertical_fov", 40.0)),
            resolution=tuple(int(x) for x in cam.get("resolution", (64, 64))),
            jitter=bool(cam.get("jitter", True)),
        )
    except ValueError as exc:
        raise SceneError(str(exc)) from None
    settings = Settings(**data.get("settings", {}))
    return SceneDesc(mats, prims, emitters, camera, settings, name=name)


def load_scene(path):
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_scene(data, name=path.stem)


SHIPPED = ("mirror_box", "furnace", "hallway_mini", "diffuse_box")


def shipped_scene_path(name):
    if name not in SHIPPED:
        raise SceneError(f"unknown shipped scene {name!r}; choose from {', '.join(SHIPPED)}")
    return Path(str(resources.files("proxybdpt.scenes").joinpath(f"{name}.json")))


def load_shipped(name):
    return load_scene(shipped_scene_path(name))
