"""PNG dumps of sample batches."""

import logging
import math
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .errors import MetricsError

logger = logging.getLogger(__name__)


def write_png_grid(
    samples: np.ndarray,
    path: Union[str, Path],
    value_range: tuple[float, float] = (-1.0, 1.0),
    upscale: int = 4,
    padding: int = 1,
) -> Path:
    """
    Tile a (N, 1, H, W) or (N, H, W) batch into a grayscale PNG.

    Values are mapped linearly from ``value_range`` to 0..255 and clipped.
    Each image is upscaled with nearest-neighbour resampling.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 4:
        if arr.shape[1] != 1:
            raise MetricsError(f"write_png_grid expects one channel, got {arr.shape[1]}")
        arr = arr[:, 0]
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise MetricsError(f"write_png_grid expects a non-empty image batch, got shape {arr.shape}")

    n, h, w = arr.shape
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    lo, hi = value_range
    pixels = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    pixels = np.rint(pixels * 255.0).astype(np.uint8)

    canvas = np.zeros((rows * (h + padding) + padding, cols * (w + padding) + padding), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        top, left = padding + r * (h + padding), padding + c * (w + padding)
        canvas[top:top + h, left:left + w] = pixels[i]

    img = Image.fromarray(canvas)
    if upscale > 1:
        img = img.resize((img.width * upscale, img.height * upscale), Image.Resampling.NEAREST)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
    logger.debug(f"Wrote {n} samples to {path}")
    return path
