"""PFM (exact, float32 little-endian) and PNG preview output."""

from pathlib import Path

import numpy as np
from PIL import Image


def write_pfm(path, image):
    """Write an (H, W, 3) image; rows are stored bottom-to-top per the format."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{path}: expected an (H, W, 3) image, got shape {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path):
    data = Path(path).read_bytes()
    parts = []
    pos = 0
    while len(parts) < 4:
        end = data.index(b"\n", pos) if len(parts) != 1 else data.index(b"\n", pos)
        parts.extend(data[pos:end].split())
        pos = end + 1
    kind, w, h, scale = parts[0], int(parts[1]), int(parts[2]), float(parts[3])
    if kind not in (b"PF", b"Pf"):
        raise ValueError(f"{path}: not a PFM file")
    ch = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(data[pos : pos + 4 * w * h * ch], dtype=dtype).reshape(h, w, ch)
    img = img[::-1].astype(np.float64)
    return np.repeat(img, 3, axis=2) if ch == 1 else img


def to_srgb8(image, exposure=1.0):
    x = np.clip(np.asarray(image) * exposure, 0.0, 1.0) ** (1 / 2.2)
    return (x * 255 + 0.5).astype(np.uint8)


def write_png(path, image, exposure=1.0):
    Image.fromarray(to_srgb8(image, exposure), "RGB").save(path)
