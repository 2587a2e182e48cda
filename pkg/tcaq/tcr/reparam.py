"""Timestep-channel joint reparameterization.

Per layer input, the per-timestep channel maxima M[t][d] (absolute values)
define a per-timestep target s_tar[t] = min_d M[t][d] and per-timestep
ratios r_t[t][d] = M[t][d] / s_tar[t]. The shared scaling vector is the
maxima-weighted average over timesteps:

    r_s[d] = sum_t r_t[t][d] * M[t][d] / sum_t M[t][d]

Weights absorb r_s along their input-channel axis and the layer input is
divided by it, so the full-precision output is unchanged.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Union

import numpy as np

from ..calibration import CalibrationSet, capture_layer_stats
from ..errors import TcaqError
from ..tensor import Tensor, ops

logger = logging.getLogger(__name__)

RANGE_FLOOR = 1e-8
WEIGHT_INPUT_AXIS = 1


class TcrError(TcaqError):
    """Raised when reparameterization inputs are inconsistent."""
    pass


@dataclass(eq=False)
class ChannelStats:
    """Absolute per-channel maxima, one row per timestep (sampling order)."""
    layer_id: str
    timesteps: list[int]
    maxima: np.ndarray

    def __post_init__(self):
        self.maxima = np.asarray(self.maxima, dtype=np.float64)
        if self.maxima.ndim != 2 or self.maxima.shape[0] != len(self.timesteps):
            raise TcrError(
                f"{self.layer_id}: maxima shape {self.maxima.shape} does not match {len(self.timesteps)} timesteps"
            )

    @property
    def channels(self) -> int:
        return int(self.maxima.shape[1])

    def row(self, t: int) -> np.ndarray:
        try:
            return self.maxima[self.timesteps.index(t)]
        except ValueError:
            raise TcrError(f"{self.layer_id}: no channel statistics at t={t}")


@dataclass(eq=False)
class ScalingVector:
    """The shared vector r_s, with the per-timestep ratios and targets it came from."""
    layer_id: str
    r_s: np.ndarray
    r_t: np.ndarray
    s_tar: np.ndarray
    clamp_range: Optional[float] = None

    @property
    def channels(self) -> int:
        return int(self.r_s.shape[0])

    #: Record fields written at float64
    FLOAT64_FIELDS = ("r_s",)

    def to_records(self, prefix: str) -> dict[str, np.ndarray]:
        clamp = math.inf if self.clamp_range is None else self.clamp_range
        return {
            f"{prefix}/r_s": np.asarray(self.r_s, dtype=np.float64),
            f"{prefix}/r_t": self.r_t.astype(np.float32),
            f"{prefix}/s_tar": self.s_tar.astype(np.float32),
            f"{prefix}/clamp": np.float32(0.0 if math.isinf(clamp) else clamp),
        }

    @classmethod
    def from_records(cls, layer_id: str, prefix: str, records: Mapping[str, np.ndarray]) -> "ScalingVector":
        try:
            clamp = float(records[f"{prefix}/clamp"])
            return cls(
                layer_id=layer_id,
                r_s=np.asarray(records[f"{prefix}/r_s"], dtype=np.float64),
                r_t=np.asarray(records[f"{prefix}/r_t"], dtype=np.float64),
                s_tar=np.asarray(records[f"{prefix}/s_tar"], dtype=np.float64),
                clamp_range=clamp if clamp > 0 else None,
            )
        except KeyError as e:
            raise TcrError(f"Incomplete scaling vector records under '{prefix}': {e}") from e


def channel_maxima(x: np.ndarray, axis: int) -> np.ndarray:
    """max |x| over every axis except ``axis``."""
    axis = axis % x.ndim
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
    return np.max(np.abs(x), axis=reduce_axes)


def collect_channel_maxima(cal: CalibrationSet, layer_id: str, axis: int = 1) -> ChannelStats:
    """
    Per-timestep, per-channel absolute maxima of a layer's input.

    Args:
        cal: Calibration set with ``layer_id`` hooked.
        layer_id: A conv or linear layer.
        axis: Channel axis of the stacked activations (1 for conv inputs,
            -1 for linear inputs).

    Raises:
        TcrError: If any inference timestep has no activations.
    """
    batches = capture_layer_stats(cal, layer_id)
    missing = [t for t in cal.timesteps if t not in batches]
    if missing:
        raise TcrError(f"{layer_id}: empty calibration cells at timesteps {missing}")
    rows = [channel_maxima(batches[t], axis) for t in cal.timesteps]
    return ChannelStats(layer_id=layer_id, timesteps=list(cal.timesteps), maxima=np.stack(rows))


def compute_target_range(stats: ChannelStats, t: int) -> float:
    """s_tar = min_d M[t][d], floored at 1e-8."""
    return max(float(np.min(stats.row(t))), RANGE_FLOOR)


def compute_scaling_vector(stats: ChannelStats) -> ScalingVector:
    """
    Maxima-weighted aggregation of the per-timestep ratios.

    Channels that are zero at every timestep get r_s = 1.
    """
    m = stats.maxima
    s_tar = np.maximum(m.min(axis=1), RANGE_FLOOR)
    r_t = m / s_tar[:, None]
    weight = m.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r_s = np.where(weight > 0, (r_t * m).sum(axis=0) / weight, 1.0)
    dead = int(np.sum(weight == 0))
    if dead:
        logger.debug("%s: %d dead channels keep r_s = 1", stats.layer_id, dead)
    return ScalingVector(layer_id=stats.layer_id, r_s=r_s, r_t=r_t, s_tar=s_tar)


def clamp_scaling(sv: ScalingVector, clamp_range: Optional[float]) -> ScalingVector:
    """
    Clip r_s into [1 / R, R]; ``None`` or infinity leaves it unchanged.

    Raises:
        TcrError: If the clamp range is below 1.
    """
    if clamp_range is None or math.isinf(clamp_range):
        return replace(sv, clamp_range=None)
    if clamp_range < 1:
        raise TcrError(f"clamp range must be at least 1, got {clamp_range}")
    clipped = np.clip(sv.r_s, 1.0 / clamp_range, clamp_range)
    return replace(sv, r_s=clipped, clamp_range=float(clamp_range))


@dataclass(eq=False)
class ReparamLayer:
    """A layer rewritten by a scaling vector: weight W * r_s, input X / r_s."""
    layer_id: str
    weight: np.ndarray
    inv_scale: np.ndarray
    axis: int

    def transform_input(self, x: Tensor) -> Tensor:
        return ops.channel_mul(x, Tensor(self.inv_scale), axis=self.axis)

    def transform_array(self, x: np.ndarray) -> np.ndarray:
        shape = [1] * x.ndim
        shape[self.axis] = self.inv_scale.shape[0]
        return x * self.inv_scale.reshape(shape).astype(x.dtype)


def apply_reparam(weight: Union[Tensor, np.ndarray], sv: ScalingVector, axis: int = 1) -> ReparamLayer:
    """
    Fold r_s into a conv or linear weight.

    Args:
        weight: (O, I, k, k) conv or (O, I) linear weight.
        sv: Scaling vector with I entries.
        axis: Channel axis of the layer input the transform applies to.

    Raises:
        TcrError: If r_s does not match the weight's input channels.
    """
    w = weight.data if isinstance(weight, Tensor) else np.asarray(weight)
    if w.ndim < 2 or w.shape[WEIGHT_INPUT_AXIS] != sv.channels:
        raise TcrError(f"{sv.layer_id}: scaling vector of {sv.channels} channels does not match weight {w.shape}")
    if np.any(sv.r_s <= 0) or not np.all(np.isfinite(sv.r_s)):
        raise TcrError(f"{sv.layer_id}: scaling vector must be positive and finite")
    shape = [1] * w.ndim
    shape[WEIGHT_INPUT_AXIS] = sv.channels
    rewritten = (w * sv.r_s.reshape(shape)).astype(w.dtype)
    return ReparamLayer(
        layer_id=sv.layer_id,
        weight=rewritten,
        inv_scale=(1.0 / sv.r_s).astype(np.float32),
        axis=axis,
    )


def rescale_stats(stats: ChannelStats, sv: ScalingVector) -> ChannelStats:
    """Maxima of the reparameterized input X / r_s."""
    if sv.channels != stats.channels:
        raise TcrError(f"{stats.layer_id}: scaling vector of {sv.channels} channels vs {stats.channels} in stats")
    return ChannelStats(layer_id=stats.layer_id, timesteps=list(stats.timesteps), maxima=stats.maxima / sv.r_s)


def reparam_spread(stats: ChannelStats) -> float:
    """Cross-channel spread max_d M[t][d] / min_d M[t][d], averaged over timesteps."""
    m = stats.maxima
    return float(np.mean(m.max(axis=1) / np.maximum(m.min(axis=1), RANGE_FLOOR)))
