"""Grouped per-timestep activation quantization tables."""

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from ..calibration import CalibrationSet, capture_layer_stats
from ..quant import Granularity, QuantizerKind, QuantParams, search_params_mse
from .reparam import ReparamLayer, TcrError

logger = logging.getLogger(__name__)


def partition_timesteps(timesteps: Sequence[int], groups: int) -> list[list[int]]:
    """
    Split timesteps (ascending) into ``groups`` contiguous near-equal runs.

    Raises:
        TcrError: If groups is not in [1, len(timesteps)].
    """
    ordered = sorted(int(t) for t in timesteps)
    if not 1 <= groups <= len(ordered):
        raise TcrError(f"group count must be in [1, {len(ordered)}], got {groups}")
    return [[int(t) for t in run] for run in np.array_split(np.asarray(ordered), groups)]


@dataclass(eq=False)
class TimestepQuantTable:
    """Activation QuantParams per timestep group of one layer."""
    layer_id: str
    timesteps: list[int]
    group_index: list[int]
    params: list[QuantParams]

    def __post_init__(self):
        if len(self.timesteps) != len(self.group_index):
            raise TcrError(f"{self.layer_id}: every timestep needs exactly one group")
        if sorted(set(self.group_index)) != list(range(len(self.params))):
            raise TcrError(f"{self.layer_id}: groups {sorted(set(self.group_index))} vs {len(self.params)} params")
        self._lookup = dict(zip(self.timesteps, self.group_index))

    @property
    def group_count(self) -> int:
        return len(self.params)

    def group_of(self, t: int) -> int:
        group = self._lookup.get(int(t))
        if group is None:
            raise TcrError(f"{self.layer_id}: timestep {t} is not covered by the table")
        return group

    def params_for(self, t: int) -> QuantParams:
        return self.params[self.group_of(t)]

    def to_records(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}/timesteps": np.asarray(self.timesteps, dtype=np.float32),
            f"{prefix}/groups": np.asarray(self.group_index, dtype=np.float32),
            f"{prefix}/scale": np.stack([p.scale for p in self.params]).astype(np.float32),
            f"{prefix}/zero_point": np.stack([p.zero_point for p in self.params]).astype(np.float32),
            f"{prefix}/bits": np.float32(self.params[0].bits),
        }

    @classmethod
    def from_records(cls, layer_id: str, prefix: str, records: Mapping[str, np.ndarray]) -> "TimestepQuantTable":
        try:
            bits = int(records[f"{prefix}/bits"])
            scales = records[f"{prefix}/scale"].reshape(-1)
            zeros = records[f"{prefix}/zero_point"].reshape(-1)
            return cls(
                layer_id=layer_id,
                timesteps=[int(t) for t in records[f"{prefix}/timesteps"].reshape(-1)],
                group_index=[int(g) for g in records[f"{prefix}/groups"].reshape(-1)],
                params=[
                    QuantParams(kind=QuantizerKind.UNIFORM, bits=bits, scale=s, zero_point=z)
                    for s, z in zip(scales, zeros)
                ],
            )
        except KeyError as e:
            raise TcrError(f"Incomplete timestep table records under '{prefix}': {e}") from e


def build_timestep_table(
    cal: CalibrationSet,
    layer_id: str,
    bits: int,
    groups: int,
    reparam: Optional[ReparamLayer] = None,
    grid: int = 100,
    max_samples: Optional[int] = None,
) -> TimestepQuantTable:
    """
    Search uniform per-tensor activation parameters per timestep group.

    Args:
        cal: Calibration set with ``layer_id`` hooked.
        layer_id: Layer whose input is quantized.
        bits: Activation bit width.
        groups: Number of timestep groups; 1 shares one quantizer, the
            inference step count gives one quantizer per timestep.
        reparam: When given, activations are divided by its r_s first.
        grid: MSE search grid size.
        max_samples: Subsample cap for the search.

    Raises:
        TcrError: If a group has no activations.
    """
    batches = capture_layer_stats(cal, layer_id)
    runs = partition_timesteps(cal.timesteps, groups)

    params = []
    for run in runs:
        samples = [batches[t] for t in run if t in batches and batches[t].size]
        if not samples:
            raise TcrError(f"{layer_id}: timestep group {run} has no activations")
        if reparam is not None:
            samples = [reparam.transform_array(s) for s in samples]
        params.append(
            search_params_mse(
                samples, bits, QuantizerKind.UNIFORM, Granularity.PER_TENSOR, grid=grid, max_samples=max_samples
            )
        )

    lookup = {t: g for g, run in enumerate(runs) for t in run}
    timesteps = sorted(lookup)
    logger.debug("%s: %d-bit table over %d groups", layer_id, bits, len(runs))
    return TimestepQuantTable(
        layer_id=layer_id,
        timesteps=timesteps,
        group_index=[lookup[t] for t in timesteps],
        params=params,
    )
