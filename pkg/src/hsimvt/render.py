"""Classification-map rendering to binary PPM (P6)."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError


def class_palette(num_classes: int) -> np.ndarray:
    """(K, 3) uint8 palette: class c gets HSV(360*(c-1)/K, 1, 1) as RGB.

    Standard sexant conversion with full saturation and value; rounding is
    half-up so the palette is platform-independent.
    """
    if num_classes < 1:
        raise ConfigError(f"palette needs at least 1 class, got {num_classes}")
    palette = np.zeros((num_classes, 3), dtype=np.uint8)
    for c in range(num_classes):
        hue = 360.0 * c / num_classes
        sector = hue / 60.0
        i = int(sector) % 6
        f = sector - int(sector)
        q, t = 1.0 - f, f
        r, g, b = [(1.0, t, 0.0), (q, 1.0, 0.0), (0.0, 1.0, t),
                   (0.0, q, 1.0), (t, 0.0, 1.0), (1.0, 0.0, q)][i]
        palette[c] = [int(255.0 * v + 0.5) for v in (r, g, b)]
    return palette


def render_class_map(ids: np.ndarray, num_classes: int) -> np.ndarray:
    """(H, W) class ids -> (H, W, 3) uint8 RGB; id 0 (unlabeled) is black."""
    if ids.ndim != 2:
        raise DimensionError(f"class-id raster must be 2-D, got {ids.shape}")
    if ids.max(initial=0) > num_classes:
        raise ConfigError(f"id {int(ids.max())} exceeds class count {num_classes}")
    table = np.vstack([np.zeros((1, 3), dtype=np.uint8), class_palette(num_classes)])
    return table[ids]


def write_ppm(path, rgb: np.ndarray):
    """Write an (H, W, 3) uint8 image as binary PPM (P6, maxval 255)."""
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise DimensionError(f"PPM writer needs (H,W,3) uint8, got {rgb.shape} {rgb.dtype}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM written by :func:`write_ppm` (for round-trip tests)."""
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ConfigError(f"{path}: not a P6/255 PPM written by this package")
    w, h = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3][:h * w * 3], dtype=np.uint8)
    if pixels.size != h * w * 3:
        raise ConfigError(f"{path}: truncated pixel payload")
    return pixels.reshape(h, w, 3).copy()
