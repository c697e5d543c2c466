from dataclasses import dataclass

import numpy as np

from .vec import cross, normalize


@dataclass(frozen=True)
class Camera:
    position: tuple = (0.0, 0.0, 0.0)
    look_at: tuple = (0.0, 0.0, -1.0)
    up: tuple = (0.0, 1.0, 0.0)
    vertical_fov: float = 40.0
    resolution: tuple = (64, 64)
    jitter: bool = True

    def __post_init__(self):
        w, h = self.resolution
        if w < 1 or h < 1:
            raise ValueError("camera: resolution must be at least 1x1")
        if not 0 < self.vertical_fov < 180:
            raise ValueError("camera: vertical_fov must lie in (0, 180) degrees")
        if np.allclose(self.position, self.look_at):
            raise ValueError("camera: look_at coincides with position")

    @property
    def width(self):
        return int(self.resolution[0])

    @property
    def height(self):
        return int(self.resolution[1])

    def frame(self):
        fwd = normalize(np.subtract(self.look_at, self.position).astype(float))
        right = normalize(cross(fwd, np.asarray(self.up, float)))
        up = cross(right, fwd)
        return fwd, right, up

    def generate_rays(self, px, py, jitter):
        """Directions through pixel (px, py), row 0 at the top; jitter in [0,1)^2.

        With ``jitter`` off every ray passes through the pixel center.
        """
        if not self.jitter:
            jitter = np.full_like(jitter, 0.5)
        fwd, right, up = self.frame()
        tan = np.tan(np.radians(self.vertical_fov) / 2)
        aspect = self.width / self.height
        sx = (2.0 * (px + jitter[:, 0]) / self.width - 1.0) * tan * aspect
        sy = (1.0 - 2.0 * (py + jitter[:, 1]) / self.height) * tan
        d = fwd[None] + sx[:, None] * right[None] + sy[:, None] * up[None]
        origin = np.broadcast_to(np.asarray(self.position, float), d.shape)
        return origin, normalize(d)
