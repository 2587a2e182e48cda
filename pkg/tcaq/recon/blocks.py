"""Block partition of the UNet and per-block calibration data."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..calibration import CalibrationSet
from ..diffusion import BLOCK_ORDER, ToyUNet, UNetState
from ..diffusion.unet import HEAD, STEM
from ..quantized import QuantizedModel
from ..tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Block:
    """A reconstruction unit: one down/mid/up block of the UNet."""
    name: str
    layer_ids: tuple[str, ...]
    input_boundary: str
    output_boundary: str


def partition_blocks(model: ToyUNet) -> list[Block]:
    """
    Split the quantized layers into the UNet's blocks, in execution order.

    Boundary layers (time embedding, input and output convs) belong to no
    block and stay in full precision.
    """
    blocks = []
    for i, name in enumerate(BLOCK_ORDER):
        blocks.append(Block(
            name=name,
            layer_ids=tuple(spec.layer_id for spec in model.block_layers(name)),
            input_boundary=BLOCK_ORDER[i - 1] if i > 0 else STEM,
            output_boundary=BLOCK_ORDER[i + 1] if i + 1 < len(BLOCK_ORDER) else HEAD,
        ))
    return blocks


@dataclass
class BlockCell:
    """Block inputs (through the quantized model) and FP targets at one timestep."""
    t: int
    h: np.ndarray
    emb: np.ndarray
    skips: list[np.ndarray]
    target: np.ndarray

    @property
    def size(self) -> int:
        return int(self.h.shape[0])

    def state(self, rows: Optional[np.ndarray] = None) -> UNetState:
        rows = np.arange(self.size) if rows is None else rows
        return UNetState(
            h=Tensor(self.h[rows]),
            emb=Tensor(self.emb[rows]),
            skips=[Tensor(s[rows]) for s in self.skips],
            t=np.full(rows.shape[0], self.t, dtype=np.int64),
        )


def gather_block_data(
    block: Block,
    fp_model: ToyUNet,
    qmodel: QuantizedModel,
    cal: CalibrationSet,
) -> list[BlockCell]:
    """
    Inputs and targets for reconstructing ``block``.

    Inputs come from running the quantized model (with every earlier block
    already in its current quantized state) up to the block; targets are the
    FP block outputs on FP inputs.
    """
    cells = []
    with no_grad():
        for t in cal.timesteps:
            x = Tensor(cal.x_t(t))
            q_state = qmodel.fp_model.run_until(block.name, x, t, runtime=qmodel)
            fp_state = fp_model.run_until(block.name, x, t)
            target = fp_model.run_block(block.name, fp_state).h.data
            cells.append(BlockCell(
                t=t,
                h=q_state.h.data,
                emb=q_state.emb.data,
                skips=[s.data for s in q_state.skips],
                target=target,
            ))
    return cells


def block_mse(block: Block, qmodel: QuantizedModel, cells: list[BlockCell]) -> float:
    """Mean squared block-output error over all cells with the current weights."""
    total, count = 0.0, 0
    with no_grad():
        for cell in cells:
            out = qmodel.fp_model.run_block(block.name, cell.state(), runtime=qmodel).h.data
            diff = out.astype(np.float64) - cell.target
            total += float(np.sum(diff * diff))
            count += diff.size
    return total / max(count, 1)
