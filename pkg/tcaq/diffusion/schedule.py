"""DDPM noise schedule and the closed-form forward process."""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import TcaqError
from ..tensor import Tensor

logger = logging.getLogger(__name__)


class DiffusionError(TcaqError):
    """Base exception for diffusion errors."""
    pass


@dataclass(eq=False)
class NoiseSchedule:
    """Linear beta schedule with its cumulative alpha products."""
    betas: np.ndarray

    DEFAULT_T = 100
    BETA_START = 1e-4
    BETA_END = 0.02

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size == 0:
            raise DiffusionError(f"betas must be a non-empty vector, got shape {self.betas.shape}")
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise DiffusionError("every beta must lie in (0, 1)")
        self.alpha_bars = np.cumprod(1.0 - self.betas)

    @classmethod
    def linear(
        cls,
        T: int = DEFAULT_T,
        beta_start: float = BETA_START,
        beta_end: float = BETA_END,
    ) -> "NoiseSchedule":
        """The standard DDPM linear schedule."""
        return cls(np.linspace(beta_start, beta_end, T))

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        """Cumulative alpha at ``t``; ``t = -1`` denotes the clean state (1.0)."""
        if t == -1:
            return 1.0
        self.check_timestep(t)
        return float(self.alpha_bars[t])

    def check_timestep(self, t: Union[int, np.ndarray]) -> None:
        t_arr = np.asarray(t)
        if np.any(t_arr < 0) or np.any(t_arr >= self.T):
            raise DiffusionError(f"timestep {t} out of range [0, {self.T})")

    def stride_timesteps(self, inference_steps: int) -> list[int]:
        """
        Uniform-stride inference timesteps, in sampling order (descending).

        Raises:
            DiffusionError: If inference_steps is not in [1, T].
        """
        if not 1 <= inference_steps <= self.T:
            raise DiffusionError(f"inference_steps must be in [1, {self.T}], got {inference_steps}")
        stride = self.T // inference_steps
        return [int(t) for t in (np.arange(inference_steps) * stride)[::-1]]


def forward_diffuse(
    x0: Tensor,
    t: Union[int, np.ndarray],
    eps: Tensor,
    sched: NoiseSchedule,
) -> Tensor:
    """
    Noise clean samples to timestep ``t``: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    Args:
        x0: Clean batch (N, ...).
        t: A timestep, or one timestep per sample.
        eps: Gaussian noise of the same shape as ``x0``.
        sched: The noise schedule.

    Raises:
        DiffusionError: If ``t`` is out of range or shapes differ.
    """
    if x0.shape != eps.shape:
        raise DiffusionError(f"eps shape {eps.shape} does not match x0 shape {x0.shape}")
    sched.check_timestep(t)
    ab = sched.alpha_bars[np.asarray(t)]
    if ab.ndim:
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    x_t = np.sqrt(ab) * x0.data + np.sqrt(1.0 - ab) * eps.data
    return Tensor(x_t)
