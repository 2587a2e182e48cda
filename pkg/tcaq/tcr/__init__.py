"""TCR module - timestep-channel joint reparameterization and timestep tables."""

from .reparam import (
    RANGE_FLOOR,
    ChannelStats,
    ReparamLayer,
    ScalingVector,
    TcrError,
    apply_reparam,
    channel_maxima,
    clamp_scaling,
    collect_channel_maxima,
    compute_scaling_vector,
    compute_target_range,
    reparam_spread,
    rescale_stats,
)
from .tables import TimestepQuantTable, build_timestep_table, partition_timesteps

__all__ = [
    "ChannelStats",
    "RANGE_FLOOR",
    "ReparamLayer",
    "ScalingVector",
    "TcrError",
    "TimestepQuantTable",
    "apply_reparam",
    "build_timestep_table",
    "channel_maxima",
    "clamp_scaling",
    "collect_channel_maxima",
    "compute_scaling_vector",
    "compute_target_range",
    "partition_timesteps",
    "reparam_spread",
    "rescale_stats",
]
