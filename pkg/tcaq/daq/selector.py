"""Per-(layer, timestep) quantizer selection for post-Softmax activations."""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from ..calibration import CalibrationSet, capture_layer_stats
from ..quant import Granularity, QuantizerKind, QuantParams, kind_code, kind_from_code, search_params_mse
from .powerlaw import (
    MIN_TAIL,
    AltFamily,
    DaqError,
    InsufficientTailError,
    PowerLawFit,
    fit_alternative,
    fit_power_law,
    likelihood_ratio,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_FIT_SAMPLES = 8192

DecisionKey = tuple[str, int]


class PostSoftmaxMode(Enum):
    """How post-Softmax quantizers are chosen."""
    ADAPTIVE = "adaptive"
    UNIFORM = "uniform"
    LOG2 = "log2"


@dataclass
class DaqDecision:
    """Quantizer choice for one post-Softmax layer at one timestep."""
    layer_id: str
    t: int
    r_g: float
    chosen: QuantizerKind
    params: QuantParams
    fit: Optional[PowerLawFit] = None
    alt_logliks: dict[str, float] = field(default_factory=dict)
    note: str = ""

    def to_row(self) -> dict[str, object]:
        return {
            "layer_id": self.layer_id,
            "t": self.t,
            "chosen": self.chosen.value,
            "r_g": self.r_g,
            "alpha": self.fit.alpha if self.fit else "",
            "x_min": self.fit.x_min if self.fit else "",
            "c": self.fit.c if self.fit else "",
            "n_tail": self.fit.n_tail if self.fit else "",
            "loglik_power_law": self.fit.loglik if self.fit else "",
            "loglik_exponential": self.alt_logliks.get(AltFamily.EXPONENTIAL.value, ""),
            "loglik_lognormal": self.alt_logliks.get(AltFamily.LOGNORMAL.value, ""),
            "note": self.note,
        }


CSV_FIELDS = [
    "layer_id", "t", "chosen", "r_g", "alpha", "x_min", "c", "n_tail",
    "loglik_power_law", "loglik_exponential", "loglik_lognormal", "note",
]


def decide(r_g: float) -> QuantizerKind:
    """log2 when the power law wins (R_g > 0); ties and NaN go to uniform."""
    return QuantizerKind.LOG2 if r_g > 0 else QuantizerKind.UNIFORM


def select_quantizer(
    layer_id: str,
    t: int,
    samples: np.ndarray,
    bits: int,
    mode: PostSoftmaxMode = PostSoftmaxMode.ADAPTIVE,
    grid: int = 100,
    max_fit_samples: Optional[int] = DEFAULT_MAX_FIT_SAMPLES,
    min_tail: int = MIN_TAIL,
) -> DaqDecision:
    """
    Choose and parameterize the quantizer for one (layer, timestep) cell.

    In adaptive mode the power law is fitted against the exponential and
    log-normal alternatives; an insufficient tail falls back to uniform with
    R_g = -inf. Forced modes skip the fit. The chosen kind's parameters are
    then found by MSE search.
    """
    values = np.asarray(samples, dtype=np.float64).reshape(-1)
    fit = None
    alt_logliks: dict[str, float] = {}
    note = ""

    if mode == PostSoftmaxMode.ADAPTIVE:
        excluded = int(np.sum(values <= 0))
        if excluded:
            logger.debug("%s t=%d: %d non-positive samples excluded from the fit", layer_id, t, excluded)
        try:
            fit = fit_power_law(values, min_tail=min_tail, max_samples=max_fit_samples)
            alt_logliks = {
                family.value: fit_alternative(values, family, fit.x_min, max_samples=max_fit_samples)
                for family in AltFamily
            }
            r_g = likelihood_ratio(fit, alt_logliks)
        except InsufficientTailError as e:
            r_g, note = -math.inf, f"insufficient tail: {e}"
            logger.info("%s t=%d: %s; falling back to uniform", layer_id, t, note)
        except DaqError as e:
            r_g, note = -math.inf, f"degenerate fit: {e}"
            logger.info("%s t=%d: %s; falling back to uniform", layer_id, t, note)
        chosen = decide(r_g)
    else:
        r_g = math.nan
        chosen = QuantizerKind.LOG2 if mode == PostSoftmaxMode.LOG2 else QuantizerKind.UNIFORM
        note = f"forced {mode.value}"

    params = search_params_mse(samples, bits, chosen, Granularity.PER_TENSOR, grid=grid, max_samples=max_fit_samples)
    return DaqDecision(
        layer_id=layer_id, t=t, r_g=r_g, chosen=chosen, params=params, fit=fit, alt_logliks=alt_logliks, note=note
    )


def run_daq_offline(
    cal: CalibrationSet,
    layer_ids: Sequence[str],
    bits: int,
    mode: PostSoftmaxMode = PostSoftmaxMode.ADAPTIVE,
    grid: int = 100,
    max_fit_samples: Optional[int] = DEFAULT_MAX_FIT_SAMPLES,
    min_tail: int = MIN_TAIL,
) -> dict[DecisionKey, DaqDecision]:
    """
    Decide every (layer, timestep) cell of the given post-Softmax layers.

    Returns:
        (layer_id, t) -> decision, ordered by layer then sampling order of t.
    """
    decisions: dict[DecisionKey, DaqDecision] = {}
    for layer_id in layer_ids:
        for t, batch in capture_layer_stats(cal, layer_id).items():
            decisions[(layer_id, t)] = select_quantizer(
                layer_id, t, batch, bits, mode=mode, grid=grid, max_fit_samples=max_fit_samples, min_tail=min_tail
            )
    log2_count = sum(1 for d in decisions.values() if d.chosen == QuantizerKind.LOG2)
    logger.info("DAQ (%s, %d bits): %d of %d cells chose log2", mode.value, bits, log2_count, len(decisions))
    return decisions


def write_decision_csv(decisions: Mapping[DecisionKey, DaqDecision], path: Union[str, Path]) -> Path:
    """Dump the decision grid, one row per cell."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for decision in decisions.values():
            writer.writerow(decision.to_row())
    return path


def decision_records(decisions: Mapping[DecisionKey, DaqDecision]) -> dict[str, np.ndarray]:
    """Archive records ``daq/<layer_id>/<t>`` = [chosen, R_g, alpha, x_min] plus ``.../qp``."""
    records = {}
    for (layer_id, t), d in decisions.items():
        alpha = d.fit.alpha if d.fit else math.nan
        x_min = d.fit.x_min if d.fit else math.nan
        records[f"daq/{layer_id}/{t}"] = np.array([kind_code(d.chosen), d.r_g, alpha, x_min], dtype=np.float32)
        records[f"daq/{layer_id}/{t}/qp"] = np.array(
            [kind_code(d.params.kind), d.params.bits, d.params.scale, d.params.zero_point], dtype=np.float32
        )
    return records


def decisions_from_records(records: Mapping[str, np.ndarray]) -> dict[DecisionKey, DaqDecision]:
    """Rebuild decisions (without fit details beyond alpha and x_min) from archive records."""
    decisions: dict[DecisionKey, DaqDecision] = {}
    for name, value in records.items():
        parts = name.split("/")
        if parts[0] != "daq" or len(parts) != 3:
            continue
        layer_id, t = parts[1], int(parts[2])
        chosen_code, r_g, alpha, x_min = (float(v) for v in value)
        kind, bits, scale, zero = (float(v) for v in records[f"{name}/qp"])
        fit = None
        if not math.isnan(alpha):
            fit = PowerLawFit(alpha=alpha, x_min=x_min, loglik=math.nan, n_tail=0, ks_distance=math.nan)
        decisions[(layer_id, t)] = DaqDecision(
            layer_id=layer_id,
            t=t,
            r_g=r_g,
            chosen=kind_from_code(chosen_code),
            params=QuantParams(kind=kind_from_code(kind), bits=int(bits), scale=np.float32(scale), zero_point=zero),
            fit=fit,
        )
    return dict(sorted(decisions.items(), key=lambda item: (item[0][0], -item[0][1])))
