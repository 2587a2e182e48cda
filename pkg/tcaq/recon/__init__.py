"""Reconstruction module - block-wise learned rounding and progressive alignment."""

from .adaround import BlockResult, ReconConfig, ReconstructionError, RoundingVars, adaround_block
from .blocks import Block, BlockCell, block_mse, gather_block_data, partition_blocks
from .par import BlockRecord, ReconLog, RoundRecord, SamplerSpec, par, reconstruct

__all__ = [
    "Block",
    "BlockCell",
    "BlockRecord",
    "BlockResult",
    "ReconConfig",
    "ReconLog",
    "ReconstructionError",
    "RoundRecord",
    "RoundingVars",
    "SamplerSpec",
    "adaround_block",
    "block_mse",
    "gather_block_data",
    "par",
    "partition_blocks",
    "reconstruct",
]
