"""DDIM sampler and activation capture hooks."""

import logging
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import NumericalError
from ..tensor import NonFiniteError, Tensor, no_grad
from .schedule import DiffusionError, NoiseSchedule
from .unet import ActivationHooks

logger = logging.getLogger(__name__)

SAMPLE_CLIP = 1.5

# model(x, t, hooks=...) -> predicted noise; ToyUNet and QuantizedModel both fit.
NoisePredictor = Callable[..., Tensor]


class SamplingError(DiffusionError, NumericalError):
    """Raised when a sampling step produces NaN or Inf."""

    def __init__(self, t: int, detail: str = ""):
        self.t = t
        message = f"Non-finite values during the DDIM step at t={t}"
        super().__init__(f"{message}: {detail}" if detail else message)


class CaptureHooks:
    """
    Buffers raw layer inputs during sampling.

    Batch row ``i`` belongs to chain ``chain_ids[i]``. Records are keyed by
    (chain_id, t, layer_id) and always read back in that order, so the
    merge is deterministic however the batch was assembled.
    """

    def __init__(self, layer_ids: Iterable[str], chain_ids: Sequence[int]):
        self.layer_ids = frozenset(layer_ids)
        self.chain_ids = list(chain_ids)
        self._records: dict[tuple[int, int, str], np.ndarray] = {}

    def capture(self, layer_id: str, t: int, x: np.ndarray) -> None:
        if layer_id not in self.layer_ids:
            return
        if x.shape[0] != len(self.chain_ids):
            raise DiffusionError(
                f"Capture of '{layer_id}' at t={t} has batch {x.shape[0]}, expected {len(self.chain_ids)} chains"
            )
        for row, chain_id in enumerate(self.chain_ids):
            self._records[(chain_id, t, layer_id)] = x[row].copy()

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[tuple[tuple[int, int, str], np.ndarray]]:
        """All records sorted by (chain_id, t, layer_id)."""
        return sorted(self._records.items(), key=lambda item: item[0])

    def grouped(self) -> dict[tuple[int, int], dict[str, np.ndarray]]:
        """Records regrouped as (chain_id, t) -> {layer_id: activation}."""
        groups: dict[tuple[int, int], dict[str, np.ndarray]] = {}
        for (chain_id, t, layer_id), value in self.records():
            groups.setdefault((chain_id, t), {})[layer_id] = value
        return groups


def ddim_step(
    model: NoisePredictor,
    x_t: Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    eta: float = 0.0,
    hooks: Optional[ActivationHooks] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    One DDIM update from ``t`` to ``t_prev``.

    ``t_prev = -1`` targets the clean state (alpha_bar = 1), where the
    update returns the predicted x0.

    Args:
        model: Noise predictor called as ``model(x, t, hooks=hooks)``.
        x_t: Current batch.
        t: Current timestep.
        t_prev: Target timestep, ``-1 <= t_prev < t``.
        sched: The noise schedule.
        eta: Stochasticity; 0 gives the deterministic sampler.
        hooks: Optional capture hooks passed to the model.
        rng: Noise source, required when eta > 0.

    Returns:
        The batch at ``t_prev``.

    Raises:
        DiffusionError: On invalid timesteps or a missing generator.
        SamplingError: If the model output or the update is non-finite.
    """
    if not -1 <= t_prev < t:
        raise DiffusionError(f"DDIM step needs -1 <= t_prev < t, got t={t}, t_prev={t_prev}")
    if eta < 0:
        raise DiffusionError(f"eta must be non-negative, got {eta}")
    if eta > 0 and rng is None:
        raise DiffusionError("A random generator is required when eta > 0")

    try:
        with no_grad():
            eps = model(x_t, t, hooks=hooks).data.astype(np.float64)
    except NonFiniteError as e:
        raise SamplingError(t, str(e)) from e
    if not np.isfinite(eps).all():
        raise SamplingError(t, "noise prediction")

    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    x = x_t.data.astype(np.float64)

    x0_pred = (x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)
    direction = np.sqrt(max(1.0 - ab_prev - sigma ** 2, 0.0)) * eps
    x_prev = np.sqrt(ab_prev) * x0_pred + direction
    if sigma > 0:
        x_prev = x_prev + sigma * rng.standard_normal(x.shape)

    if not np.isfinite(x_prev).all():
        raise SamplingError(t, "update")
    return Tensor(x_prev.astype(x_t.data.dtype))


def sample_trajectory(
    model: NoisePredictor,
    x_T: Tensor,
    sched: NoiseSchedule,
    inference_steps: int,
    eta: float = 0.0,
    hooks: Optional[ActivationHooks] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Tensor, list[tuple[int, np.ndarray]]]:
    """
    Run the DDIM chain from ``x_T`` and keep every intermediate state.

    Returns:
        (x0, states) where ``states`` lists (t, x_t) in sampling order.
    """
    timesteps = sched.stride_timesteps(inference_steps)
    targets = timesteps[1:] + [-1]
    states: list[tuple[int, np.ndarray]] = []
    x = x_T
    for t, t_prev in zip(timesteps, targets):
        states.append((t, x.data.copy()))
        x = ddim_step(model, x, t, t_prev, sched, eta=eta, hooks=hooks, rng=rng)
    return x, states


def initial_noise(n: int, image_size: int, seed: int, channels: int = 1) -> Tensor:
    """The seeded starting batch x_T."""
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((n, channels, image_size, image_size)))


def sample(
    model: NoisePredictor,
    n: int,
    inference_steps: int,
    seed: int,
    sched: Optional[NoiseSchedule] = None,
    eta: float = 0.0,
    hooks: Optional[ActivationHooks] = None,
) -> Tensor:
    """
    Draw ``n`` samples with the DDIM sampler.

    Output pixels are clipped to [-1.5, 1.5]. The same seed always yields
    the same batch.

    Args:
        model: Noise predictor exposing ``config`` (a UNetConfig).
        n: Number of samples; 0 returns an empty batch.
        inference_steps: Number of DDIM steps, at most T.
        seed: Seed for x_T (and for the eta > 0 noise).
        sched: Noise schedule; the default linear schedule when omitted.
        eta: DDIM stochasticity.
        hooks: Optional capture hooks.

    Returns:
        Samples of shape (n, C, H, W).
    """
    sched = sched or NoiseSchedule.linear()
    config = model.config
    if n < 0:
        raise DiffusionError(f"sample count must be non-negative, got {n}")
    if n == 0:
        sched.stride_timesteps(inference_steps)
        return Tensor(np.zeros((0, config.in_channels, config.image_size, config.image_size)))

    x_T = initial_noise(n, config.image_size, seed, config.in_channels)
    rng = np.random.default_rng(seed + 1) if eta > 0 else None
    x0, _ = sample_trajectory(model, x_T, sched, inference_steps, eta=eta, hooks=hooks, rng=rng)
    logger.debug("Sampled %d images in %d steps (seed=%d)", n, inference_steps, seed)
    return Tensor(np.clip(x0.data, -SAMPLE_CLIP, SAMPLE_CLIP))
