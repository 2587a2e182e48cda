"""Per-layer quantization error metrics."""

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import TcaqError

logger = logging.getLogger(__name__)


class MetricsError(TcaqError):
    """Raised when a metric cannot be computed from its inputs."""
    pass


@dataclass(frozen=True)
class LayerError:
    """Error of quantized activations against FP activations."""
    mse: float
    sqnr_db: float

    def to_dict(self) -> dict[str, float]:
        return {"mse": self.mse, "sqnr_db": self.sqnr_db}


def layer_error(fp_acts: np.ndarray, q_acts: np.ndarray) -> LayerError:
    """
    Mean squared error and signal-to-quantization-noise ratio.

    sqnr_db = 10 log10(signal power / error power). With no error the ratio
    is +inf; with zero signal and non-zero error it is -inf.

    Raises:
        MetricsError: If the shapes differ or the batch is empty.
    """
    fp = np.asarray(fp_acts, dtype=np.float64)
    q = np.asarray(q_acts, dtype=np.float64)
    if fp.shape != q.shape:
        raise MetricsError(f"layer_error shape mismatch: {fp.shape} vs {q.shape}")
    if fp.size == 0:
        raise MetricsError("layer_error needs at least one element")

    err = fp - q
    mse = float(np.mean(err * err))
    signal = float(np.mean(fp * fp))
    if mse == 0.0:
        sqnr = float("inf")
    elif signal == 0.0:
        sqnr = float("-inf")
    else:
        sqnr = float(10.0 * np.log10(signal / mse))
    return LayerError(mse=mse, sqnr_db=sqnr)
