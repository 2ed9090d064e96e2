"""In-plane random shift / rotation / scale applied identically to every slice."""
import numpy as np
from scipy.ndimage import map_coordinates

MAX_SHIFT_FRACTION = 0.3
ROTATION_DEG = (0.0, 180.0)
SCALE_RANGE = (0.9, 1.1)


def sample_params(rng, width, height, size=None):
    """Draw ``(shift_x, shift_y, angle_deg, scale)``; vectorised when ``size`` is given."""
    sx = rng.uniform(-MAX_SHIFT_FRACTION * width, MAX_SHIFT_FRACTION * width, size)
    sy = rng.uniform(-MAX_SHIFT_FRACTION * height, MAX_SHIFT_FRACTION * height, size)
    angle = rng.uniform(*ROTATION_DEG, size)
    scale = rng.uniform(*SCALE_RANGE, size)
    return sx, sy, angle, scale


def apply_transform(patch, shift_x=0.0, shift_y=0.0, angle_deg=0.0, scale=1.0):
    """Resample a ``(D, H, W)`` patch bilinearly; outside support reads 0."""
    patch = np.asarray(patch, dtype=np.float64)
    d, h, w = patch.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    theta = np.deg2rad(angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    # inverse map: output pixel -> source coordinate
    u = (xx - cx - shift_x) / scale
    v = (yy - cy - shift_y) / scale
    src_x = cos * u + sin * v + cx
    src_y = -sin * u + cos * v + cy
    coords = np.empty((3, d, h, w))
    coords[0] = np.arange(d, dtype=np.float64)[:, None, None]
    coords[1] = src_y
    coords[2] = src_x
    return map_coordinates(patch, coords, order=1, mode="grid-constant", cval=0.0)


def augment(patch, rng):
    d, h, w = np.shape(patch)
    return apply_transform(patch, *sample_params(rng, w, h))
