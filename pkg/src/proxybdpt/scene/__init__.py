"""Scene representation: materials, primitives, emitters, camera, loading."""

from .camera import Camera
from .geometry import Geometry, Hit, Primitive
from .loader import (
    Emitter,
    SceneDesc,
    SceneError,
    Settings,
    load_scene,
    load_shipped,
    parse_scene,
    shipped_scene_path,
)
from .materials import Material, MaterialTable, eval_bsdf, is_specular, pdf_bsdf, sample_bsdf

__all__ = [
    "Camera", "Emitter", "Geometry", "Hit", "Material", "MaterialTable", "Primitive",
    "SceneDesc", "SceneError", "Settings", "eval_bsdf", "is_specular", "load_scene",
    "load_shipped", "parse_scene", "pdf_bsdf", "sample_bsdf", "shipped_scene_path",
]
