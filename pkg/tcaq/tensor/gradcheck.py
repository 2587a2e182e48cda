"""Central finite-difference oracle for the autodiff ops."""

import logging
from typing import Callable, Union

import numpy as np

from .core import Tape, Tensor, backward, precision

logger = logging.getLogger(__name__)


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Union[Tensor, np.ndarray],
    h: float = 1e-3,
) -> float:
    """
    Compare the tape gradient of ``f`` at ``x`` with central differences.

    Both the analytic and the numeric gradient are evaluated in float64.

    Args:
        f: Scalar-valued tensor function.
        x: Point to differentiate at.
        h: Finite-difference step, in (0, 0.1].

    Returns:
        max_i |analytic_i - numeric_i| / (|analytic_i| + 1e-8).
    """
    if not 0.0 < h <= 0.1:
        raise ValueError(f"Finite-difference step must be in (0, 0.1], got {h}")

    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    with precision("float64"):
        leaf = Tensor(base.copy(), requires_grad=True)
        with Tape() as tape:
            out = f(leaf)
        backward(tape, out, leaves=[leaf])
        analytic = leaf.grad.astype(np.float64)

        flat = base.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            plus = flat.copy()
            minus = flat.copy()
            plus[i] += h
            minus[i] -= h
            f_plus = f(Tensor(plus.reshape(base.shape))).item()
            f_minus = f(Tensor(minus.reshape(base.shape))).item()
            numeric[i] = (f_plus - f_minus) / (2.0 * h)

    error = np.abs(analytic.reshape(-1) - numeric) / (np.abs(analytic.reshape(-1)) + 1e-8)
    worst = float(error.max()) if error.size else 0.0
    logger.debug("Finite-difference check over %d elements: max relative error %.3e", flat.size, worst)
    return worst
