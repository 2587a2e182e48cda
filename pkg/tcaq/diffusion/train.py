"""Noise-prediction training of the toy UNet."""

import logging
from typing import Optional

import numpy as np
from tqdm import tqdm

from ..errors import NumericalError
from ..tensor import Adam, NonFiniteError, Tape, Tensor, backward, ops
from .dataset import ToyDataset
from .schedule import DiffusionError, NoiseSchedule, forward_diffuse
from .unet import ToyUNet, UNetConfig

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 3000
DEFAULT_LR = 1e-3
DEFAULT_BATCH = 32
LOSS_WINDOW = 100


class TrainingDivergedError(DiffusionError, NumericalError):
    """Raised when the training loss becomes NaN or Inf."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"Training diverged at step {step}: loss is not finite")


def train_toy(
    dataset: ToyDataset,
    sched: NoiseSchedule,
    steps: int = DEFAULT_STEPS,
    lr: float = DEFAULT_LR,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH,
    config: Optional[UNetConfig] = None,
    history: Optional[list[float]] = None,
    progress: Optional[bool] = None,
) -> ToyUNet:
    """
    Train a fresh UNet on the epsilon-prediction MSE objective.

    Each step draws a batch of images, one uniform timestep per image and
    Gaussian noise, all from a generator seeded by ``seed``; the result is
    a pure function of the arguments.

    Args:
        dataset: Training images.
        sched: Noise schedule.
        steps: Number of Adam steps, at least 1.
        lr: Adam learning rate.
        seed: Seed for initialization and batch draws.
        batch_size: Images per step.
        config: Architecture; defaults to UNetConfig().
        history: If given, per-step losses are appended to it.
        progress: Force the progress bar on or off; by default it shows
            only at DEBUG level.

    Returns:
        The trained model.

    Raises:
        DiffusionError: If steps < 1 or batch_size < 1.
        TrainingDivergedError: If the loss stops being finite.
    """
    if steps < 1:
        raise DiffusionError(f"steps must be at least 1, got {steps}")
    if batch_size < 1:
        raise DiffusionError(f"batch_size must be at least 1, got {batch_size}")

    model = ToyUNet(config, seed=seed)
    optimizer = Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed + 1)
    show = progress if progress is not None else logger.isEnabledFor(logging.DEBUG)

    logger.info("Training toy UNet: %d steps, lr=%g, batch=%d, seed=%d", steps, lr, batch_size, seed)
    for step in tqdm(range(steps), desc="train", disable=not show):
        index = rng.integers(0, dataset.n, size=batch_size)
        t = rng.integers(0, sched.T, size=batch_size)
        eps = Tensor(rng.standard_normal((batch_size,) + dataset.images.shape[1:]))
        x_t = forward_diffuse(Tensor(dataset.images[index]), t, eps, sched)

        try:
            with Tape() as tape:
                loss = ops.mse_loss(model(x_t, t), eps)
        except NonFiniteError as e:
            raise TrainingDivergedError(step) from e
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(step)

        optimizer.zero_grad()
        backward(tape, loss)
        optimizer.step()

        if history is not None:
            history.append(value)
        if step % 500 == 0:
            logger.debug("step %d loss %.4f", step, value)

    return model


def loss_ratio(history: list[float], window: int = LOSS_WINDOW) -> float:
    """Moving-average loss over the last ``window`` steps relative to the first."""
    if not history:
        raise DiffusionError("Loss history is empty")
    window = max(1, min(window, len(history)))
    return float(np.mean(history[-window:]) / np.mean(history[:window]))
