"""Block-wise learned weight rounding.

For every quantized weight in a block, a continuous variable v chooses
between the floor and the ceil of w / s through the rectified sigmoid
h(v). The block output is matched to the FP output by minimizing

    sum_features (out_q - out_fp)^2 (batch mean) + lam * sum (1 - |2h - 1|^beta)

with the regularizer switched on after a warm-up and beta annealed from 20
to 2 so h is pushed to {0, 1}. Rounding is finalized at h >= 0.5.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from tqdm import tqdm

from ..errors import ConfigError, NumericalError
from ..tensor import Adam, NonFiniteError, Tape, Tensor, backward, ops
from ..quantized import QuantizedModel, inverse_rectified_sigmoid, rectified_sigmoid
from .blocks import Block, BlockCell, block_mse

logger = logging.getLogger(__name__)

H_INIT_RANGE = (0.01, 0.99)


class ReconstructionError(NumericalError):
    """Raised when the reconstruction loss becomes NaN or Inf."""

    def __init__(self, block: str, iteration: int):
        self.block = block
        self.iteration = iteration
        super().__init__(f"Reconstruction of block '{block}' diverged at iteration {iteration}")


@dataclass
class ReconConfig:
    """Reconstruction hyper-parameters."""
    init_iters: int = 2000
    par_iters: int = 1000
    rounds: int = 2
    batch: int = 16
    lr: float = 1e-2
    reg_weight: float = 0.01
    beta_start: float = 20.0
    beta_end: float = 2.0
    warmup: float = 0.2
    patience: int = 200
    quantize_activations: bool = True
    seed: int = 0

    FULL_INIT_ITERS = 20000
    FULL_PAR_ITERS = 10000

    def validate(self) -> None:
        if self.init_iters < 0 or self.par_iters < 0:
            raise ConfigError("reconstruction iterations must be non-negative")
        if self.rounds < 0:
            raise ConfigError(f"PAR rounds must be non-negative, got {self.rounds}")
        if self.rounds > 0 and self.par_iters > self.init_iters:
            raise ConfigError(
                f"par_iters ({self.par_iters}) must not exceed init_iters ({self.init_iters}) when PAR rounds run"
            )
        if self.batch < 1:
            raise ConfigError(f"batch must be at least 1, got {self.batch}")
        if not 0.0 <= self.warmup < 1.0:
            raise ConfigError(f"warmup must be in [0, 1), got {self.warmup}")

    def full_scale(self) -> "ReconConfig":
        return replace(self, init_iters=self.FULL_INIT_ITERS, par_iters=self.FULL_PAR_ITERS)


@dataclass
class RoundingVars:
    """Soft rounding variables of every quantized weight in a block."""
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def soft_values(self) -> dict[str, np.ndarray]:
        return {layer_id: rectified_sigmoid(Tensor(v)).data for layer_id, v in self.v.items()}


@dataclass
class BlockResult:
    """Outcome of one block reconstruction."""
    block: str
    start_mse: float
    end_mse: float
    iterations: int
    reverted: bool
    rounding: RoundingVars
    seconds: float = 0.0


def _init_vars(qmodel: QuantizedModel, layer_ids: list[str]) -> RoundingVars:
    rounding = RoundingVars()
    for layer_id in layer_ids:
        frac = qmodel.weight_quantizer(layer_id).fractional_part()
        rounding.v[layer_id] = inverse_rectified_sigmoid(np.clip(frac, *H_INIT_RANGE)).astype(np.float32)
    return rounding


def _beta(cfg: ReconConfig, iteration: int, iters: int) -> Optional[float]:
    """Annealed beta, or None during warm-up."""
    start = int(cfg.warmup * iters)
    if iteration < start:
        return None
    span = max(iters - start - 1, 1)
    progress = (iteration - start) / span
    return cfg.beta_start + (cfg.beta_end - cfg.beta_start) * min(progress, 1.0)


def _round_loss(v: Tensor, mask: np.ndarray, beta: float, weight: float) -> Tensor:
    """weight * sum over learnable elements of (1 - |2h - 1|^beta)."""
    h = rectified_sigmoid(v)
    term = ops.power(ops.absolute(ops.affine(h, 2.0, -1.0)), beta)
    active = float(mask.sum())
    return ops.affine(ops.reduce_sum(ops.mul(term, Tensor(mask.astype(np.float32)))), -weight, weight * active)


def adaround_block(
    block: Block,
    qmodel: QuantizedModel,
    cells: list[BlockCell],
    cfg: ReconConfig,
    iters: int,
    rng: np.random.Generator,
    warm_start: Optional[RoundingVars] = None,
    progress: Optional[bool] = None,
) -> BlockResult:
    """
    Learn the rounding of every quantized weight in ``block``.

    Each iteration draws one timestep cell and up to ``cfg.batch`` chains
    from it. Training stops early after ``cfg.patience`` iterations without
    a new best reconstruction loss. If the finalized rounding does worse on
    the whole data than the rounding the block started with, the starting
    rounding is kept.

    Args:
        block: The block to reconstruct.
        qmodel: Quantized model; its weight codes for the block are updated.
        cells: Block inputs and FP targets per timestep.
        cfg: Hyper-parameters.
        iters: Iteration budget; 0 keeps the current rounding.
        rng: Batch sampler.
        warm_start: Rounding variables from an earlier round.
        progress: Force the progress bar on or off.

    Returns:
        The block result, including the rounding variables for warm starts.

    Raises:
        ReconstructionError: If the loss becomes non-finite.
    """
    started = time.perf_counter()
    layer_ids = [lid for lid in block.layer_ids if lid in qmodel.weights and qmodel.weights[lid].is_quantized]
    start_codes = {lid: qmodel.weights[lid].codes().copy() for lid in layer_ids}
    start_mse = block_mse(block, qmodel, cells)

    if iters == 0 or not layer_ids or not cells:
        return BlockResult(block.name, start_mse, start_mse, 0, False, warm_start or RoundingVars(),
                           time.perf_counter() - started)

    rounding = _init_vars(qmodel, layer_ids)
    if warm_start is not None:
        rounding.v.update({lid: v for lid, v in warm_start.v.items() if lid in rounding.v})

    variables = {lid: Tensor(rounding.v[lid].copy(), requires_grad=True) for lid in layer_ids}
    masks = {lid: qmodel.weights[lid].learnable_mask() for lid in layer_ids}
    for lid, v in variables.items():
        qmodel.weights[lid].attach_soft(v)
    optimizer = Adam(list(variables.values()), lr=cfg.lr)

    show = progress if progress is not None else logger.isEnabledFor(logging.DEBUG)
    best, stale, iteration = float("inf"), 0, 0
    try:
        for iteration in tqdm(range(iters), desc=f"recon {block.name}", disable=not show):
            cell = cells[int(rng.integers(len(cells)))]
            rows = rng.choice(cell.size, size=min(cfg.batch, cell.size), replace=False)
            target = Tensor(cell.target[rows])
            beta = _beta(cfg, iteration, iters)

            try:
                with Tape() as tape:
                    out = qmodel.fp_model.run_block(block.name, cell.state(rows), runtime=qmodel).h
                    per_sample = out.size / out.shape[0]
                    rec = ops.scale(ops.mse_loss(out, target), per_sample)
                    loss = rec
                    if beta is not None:
                        for lid in layer_ids:
                            loss = ops.add(loss, _round_loss(variables[lid], masks[lid], beta, cfg.reg_weight))
            except NonFiniteError as e:
                raise ReconstructionError(block.name, iteration) from e
            if not np.isfinite(loss.item()):
                raise ReconstructionError(block.name, iteration)

            optimizer.zero_grad()
            backward(tape, loss)
            optimizer.step()

            if rec.item() < best:
                best, stale = rec.item(), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    logger.debug("%s: no improvement for %d iterations, stopping at %d", block.name, stale, iteration)
                    break

        for lid in layer_ids:
            qmodel.weights[lid].finalize()
    finally:
        for lid in layer_ids:
            qmodel.weights[lid].detach_soft()

    rounding = RoundingVars({lid: variables[lid].data.copy() for lid in layer_ids})
    end_mse = block_mse(block, qmodel, cells)
    reverted = end_mse > start_mse
    if reverted:
        for lid, codes in start_codes.items():
            qmodel.weights[lid].set_codes(codes)
        end_mse = start_mse

    logger.info(
        "Block %s: mse %.4e -> %.4e after %d iterations%s",
        block.name, start_mse, end_mse, iteration + 1, " (reverted)" if reverted else "",
    )
    return BlockResult(block.name, start_mse, end_mse, iteration + 1, reverted, rounding,
                       time.perf_counter() - started)
