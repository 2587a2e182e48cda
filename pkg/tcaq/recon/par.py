"""Basic reconstruction and the progressively aligned reconstruction loop.

Round 0 reconstructs every block on a calibration set sampled by the FP
model. Each further round resamples the calibration set with the current
quantized model, so the inputs the blocks see match what the quantized
sampler actually produces, and refines the rounding with a smaller
iteration budget, warm-starting from the previous round.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from ..audit import get_run_logger
from ..calibration import CalibrationSet, resample_calibration_quant
from ..diffusion import NoiseSchedule, ToyUNet
from ..quantized import QuantizedModel
from .adaround import ReconConfig, RoundingVars, adaround_block
from .blocks import gather_block_data, partition_blocks

logger = logging.getLogger(__name__)


@dataclass
class BlockRecord:
    """Per-block line of a round record."""
    block: str
    start_mse: float
    end_mse: float
    iterations: int
    reverted: bool
    seconds: Optional[float] = None


@dataclass
class RoundRecord:
    """One reconstruction round."""
    round: int
    source: str
    iterations: int
    blocks: list[BlockRecord] = field(default_factory=list)
    seconds: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class ReconLog:
    """All rounds of a reconstruction run, in order."""
    rounds: list[RoundRecord] = field(default_factory=list)

    @property
    def sources(self) -> list[str]:
        return [r.source for r in self.rounds]

    def to_dict(self) -> dict[str, Any]:
        return {"rounds": [r.to_dict() for r in self.rounds]}

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


@dataclass
class SamplerSpec:
    """How calibration sets are (re)sampled."""
    n_chains: int = 32
    inference_steps: int = 20
    seed: int = 0
    sched: Optional[NoiseSchedule] = None


def reconstruct(
    fp_model: ToyUNet,
    qmodel: QuantizedModel,
    cal: CalibrationSet,
    cfg: ReconConfig,
    iters: Optional[int] = None,
    round_index: int = 0,
    warm_start: Optional[dict[str, RoundingVars]] = None,
    record_timings: bool = False,
) -> tuple[RoundRecord, dict[str, RoundingVars]]:
    """
    Reconstruct every block in execution order.

    Inputs of each block come from the quantized model with all earlier
    blocks already reconstructed. Activation fake quantization is on during
    reconstruction when ``cfg.quantize_activations`` is set.

    Args:
        fp_model: The FP model providing targets.
        qmodel: The initialized quantized model, updated in place.
        cal: Calibration set supplying x_t per timestep.
        cfg: Reconstruction hyper-parameters.
        iters: Iteration budget per block; ``cfg.init_iters`` by default.
        round_index: Round number for records and logs.
        warm_start: Rounding variables per block from the previous round.
        record_timings: Whether wall-clock seconds go into the record.

    Returns:
        The round record and the rounding variables per block.
    """
    iters = cfg.init_iters if iters is None else iters
    rng = np.random.default_rng(cfg.seed + round_index)
    started = time.perf_counter()
    record = RoundRecord(round=round_index, source=cal.source.tag, iterations=iters)
    rounding: dict[str, RoundingVars] = {}
    run_log = get_run_logger()

    previous = qmodel.quantize_activations
    qmodel.quantize_activations = cfg.quantize_activations
    try:
        for block in partition_blocks(fp_model):
            cells = gather_block_data(block, fp_model, qmodel, cal)
            result = adaround_block(
                block, qmodel, cells, cfg, iters, rng,
                warm_start=(warm_start or {}).get(block.name),
            )
            rounding[block.name] = result.rounding
            record.blocks.append(BlockRecord(
                block=block.name,
                start_mse=result.start_mse,
                end_mse=result.end_mse,
                iterations=result.iterations,
                reverted=result.reverted,
                seconds=round(result.seconds, 3) if record_timings else None,
            ))
            run_log.log_block_reconstructed(
                round_index, block.name, result.start_mse, result.end_mse, result.iterations, result.reverted
            )
    finally:
        qmodel.quantize_activations = previous

    elapsed = time.perf_counter() - started
    record.seconds = round(elapsed, 3) if record_timings else None
    run_log.log_par_round(round_index, record.source, iters, elapsed)
    return record, rounding


def par(
    fp_model: ToyUNet,
    qmodel: QuantizedModel,
    cal: CalibrationSet,
    sampler: SamplerSpec,
    cfg: ReconConfig,
    record_timings: bool = False,
) -> tuple[QuantizedModel, ReconLog]:
    """
    Progressively aligned reconstruction.

    Calibration sources run fp, q0, ..., q_{p-1}: the basic reconstruction
    uses the FP-sampled set ``cal``; round n + 1 resamples with the quantized
    model produced by round n and runs ``cfg.par_iters`` iterations per
    block. Activation parameters stay as initialized; only the rounding is
    refined.

    Args:
        fp_model: The FP model.
        qmodel: The initialized quantized model, updated in place.
        cal: FP-sampled calibration set.
        sampler: Chain count, step count and seed for resampling.
        cfg: Reconstruction hyper-parameters; ``cfg.rounds`` is p.
        record_timings: Whether wall-clock seconds go into the log.

    Returns:
        The reconstructed model and the per-round log.
    """
    cfg.validate()
    log = ReconLog()
    record, rounding = reconstruct(fp_model, qmodel, cal, cfg, cfg.init_iters, 0, None, record_timings)
    log.rounds.append(record)

    for n in range(cfg.rounds):
        resampled = resample_calibration_quant(
            qmodel,
            n_chains=sampler.n_chains,
            inference_steps=sampler.inference_steps,
            seed=sampler.seed,
            round=n,
            sched=sampler.sched,
            layers=(),
        )
        logger.info("PAR round %d: recalibrating on %s", n + 1, resampled.source.tag)
        record, rounding = reconstruct(fp_model, qmodel, resampled, cfg, cfg.par_iters, n + 1, rounding, record_timings)
        log.rounds.append(record)

    return qmodel, log
