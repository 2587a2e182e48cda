"""Procedural 4-mode 8x8 image dataset.

Modes: horizontal bar, vertical bar, centred blob, checkerboard. Each image
is drawn on a -1 background with jittered position and intensity, then
clipped to [-1, 1]. Generation is a pure function of the seed.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..tensor import Tensor
from .schedule import DiffusionError

logger = logging.getLogger(__name__)

IMAGE_SIZE = 8


class Mode(Enum):
    """Dataset modes, in label order."""
    HORIZONTAL_BAR = 0
    VERTICAL_BAR = 1
    BLOB = 2
    CHECKERBOARD = 3


@dataclass(eq=False)
class ToyDataset:
    """A generated dataset: images (n, 1, 8, 8) and their mode labels."""
    images: np.ndarray
    labels: np.ndarray
    seed: int
    contrast: float = 1.0

    @property
    def n(self) -> int:
        return int(self.images.shape[0])

    def as_tensor(self) -> Tensor:
        return Tensor(self.images)

    def mode_counts(self) -> dict[Mode, int]:
        return {mode: int(np.sum(self.labels == mode.value)) for mode in Mode}


def _draw(mode: Mode, rng: np.random.Generator, contrast: float) -> np.ndarray:
    size = IMAGE_SIZE
    image = np.full((size, size), -1.0)
    peak = -1.0 + contrast * rng.uniform(1.5, 2.0)

    if mode == Mode.HORIZONTAL_BAR:
        row = rng.integers(1, size - 2)
        image[row:row + 2, :] = peak
    elif mode == Mode.VERTICAL_BAR:
        col = rng.integers(1, size - 2)
        image[:, col:col + 2] = peak
    elif mode == Mode.BLOB:
        cy, cx = (size - 1) / 2 + rng.uniform(-1.0, 1.0, size=2)
        sigma = rng.uniform(1.0, 1.6)
        yy, xx = np.mgrid[0:size, 0:size]
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        image = -1.0 + (peak + 1.0) * bump
    else:
        cell = 2
        phase = rng.integers(0, 2)
        yy, xx = np.mgrid[0:size, 0:size]
        checks = ((yy // cell + xx // cell + phase) % 2).astype(bool)
        image[checks] = peak

    image = image + rng.normal(0.0, 0.03, size=image.shape)
    return np.clip(image, -1.0, 1.0)


def generate_dataset(seed: int, n: int, contrast: float = 1.0) -> ToyDataset:
    """
    Generate ``n`` images with balanced modes.

    Labels are a seeded permutation of ``arange(n) % 4``, so every mode count
    is within one of n/4.

    Raises:
        DiffusionError: If n < 1 or contrast is not in (0, 1].
    """
    if n < 1:
        raise DiffusionError(f"dataset size must be at least 1, got {n}")
    if not 0.0 < contrast <= 1.0:
        raise DiffusionError(f"contrast must be in (0, 1], got {contrast}")

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % len(Mode))
    images = np.stack([_draw(Mode(int(label)), rng, contrast) for label in labels])
    images = images[:, None, :, :].astype(np.float32)
    logger.debug("Generated toy dataset: seed=%d n=%d contrast=%.2f", seed, n, contrast)
    return ToyDataset(images=images, labels=labels.astype(np.int64), seed=seed, contrast=contrast)
