"""Continuous power-law fitting and alternative-distribution likelihoods.

The power law p(x) = (alpha - 1) / x_min * (x / x_min)^-alpha on x >= x_min
is fitted by the closed-form MLE for alpha, with x_min chosen by minimizing
the Kolmogorov-Smirnov distance over quantile candidates. Alternatives are
fitted on the identical tail so log-likelihoods are comparable.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from ..errors import TcaqError

logger = logging.getLogger(__name__)

MIN_TAIL = 50
XMIN_CANDIDATES = 20
XMIN_PERCENTILES = (50.0, 95.0)

# Cutoff of the fitted log-normal, in standard units above mu
LOGNORMAL_MAX_Z = 2.0
LOGNORMAL_Z_BOUNDS = (-10.0, LOGNORMAL_MAX_Z)
LOG_SIGMA_BOUNDS = (-20.0, 20.0)


class DaqError(TcaqError):
    """Base exception for adaptive quantizer selection errors."""
    pass


class InsufficientTailError(DaqError):
    """Raised when too few samples lie above every cutoff candidate."""
    pass


class AltFamily(Enum):
    """Competing tail distributions."""
    EXPONENTIAL = "exponential"
    LOGNORMAL = "lognormal"


@dataclass(frozen=True)
class PowerLawFit:
    """A fitted continuous power law on the tail x >= x_min."""
    alpha: float
    x_min: float
    loglik: float
    n_tail: int
    ks_distance: float

    @property
    def c(self) -> float:
        """Density constant: p(x) = c * x^-alpha on the tail."""
        return (self.alpha - 1.0) * self.x_min ** (self.alpha - 1.0)


def _positive_sorted(samples: np.ndarray, max_samples: Optional[int]) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    x = np.sort(x[x > 0])
    if max_samples is not None and x.size > max_samples:
        # evenly strided order statistics keep the empirical quantiles
        index = np.linspace(0, x.size - 1, max_samples).round().astype(np.int64)
        x = x[index]
    return x


def tail(samples: np.ndarray, x_min: float) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    return x[x >= x_min]


def _alpha_mle(tail_x: np.ndarray, x_min: float) -> Optional[float]:
    log_sum = float(np.sum(np.log(tail_x / x_min)))
    if log_sum <= 0:
        return None
    return 1.0 + tail_x.size / log_sum


def _ks_distance(tail_x: np.ndarray, alpha: float, x_min: float) -> float:
    """KS distance between sorted tail data and the fitted power-law CDF."""
    n = tail_x.size
    theoretical = 1.0 - (x_min / tail_x) ** (alpha - 1.0)
    upper = np.arange(1, n + 1) / n
    lower = np.arange(n) / n
    return float(max(np.max(upper - theoretical), np.max(theoretical - lower)))


def power_law_loglik(tail_x: np.ndarray, alpha: float, x_min: float) -> float:
    """sum [ln(alpha - 1) - ln x_min - alpha ln(x / x_min)] over the tail."""
    n = tail_x.size
    return float(n * math.log(alpha - 1.0) - n * math.log(x_min) - alpha * np.sum(np.log(tail_x / x_min)))


def fit_power_law(
    samples: np.ndarray,
    min_tail: int = MIN_TAIL,
    candidates: int = XMIN_CANDIDATES,
    max_samples: Optional[int] = None,
) -> PowerLawFit:
    """
    Fit a continuous power law with KS-selected cutoff.

    Non-positive samples are excluded first. Cutoff candidates are
    ``candidates`` evenly spaced percentiles between the 50th and 95th;
    candidates leaving fewer than ``min_tail`` samples are skipped.

    Args:
        samples: Activation values.
        min_tail: Minimum number of samples at or above the cutoff.
        candidates: Number of cutoff candidates.
        max_samples: Deterministic subsample cap applied before fitting.

    Returns:
        The fit at the KS-minimizing cutoff (first candidate on ties).

    Raises:
        InsufficientTailError: If no candidate leaves enough tail samples,
            or all samples are equal.
    """
    x = _positive_sorted(samples, max_samples)
    if x.size < min_tail:
        raise InsufficientTailError(f"only {x.size} positive samples, need at least {min_tail}")
    if x[0] == x[-1]:
        raise InsufficientTailError("all samples are equal; no cutoff separates a tail")

    best: Optional[PowerLawFit] = None
    for x_min in np.unique(np.percentile(x, np.linspace(*XMIN_PERCENTILES, candidates))):
        tail_x = x[x >= x_min]
        if tail_x.size < min_tail:
            continue
        alpha = _alpha_mle(tail_x, x_min)
        if alpha is None:
            continue
        distance = _ks_distance(tail_x, alpha, x_min)
        if best is None or distance < best.ks_distance:
            best = PowerLawFit(
                alpha=alpha,
                x_min=float(x_min),
                loglik=power_law_loglik(tail_x, alpha, x_min),
                n_tail=int(tail_x.size),
                ks_distance=distance,
            )

    if best is None:
        raise InsufficientTailError(f"no cutoff candidate leaves {min_tail} distinct tail samples")
    return best


def fit_alternative(
    samples: np.ndarray,
    family: AltFamily,
    x_min: float,
    max_samples: Optional[int] = None,
) -> float:
    """
    Log-likelihood of the MLE fit of ``family`` on the tail x >= x_min.

    Exponential: rate 1 / (mean - x_min), shifted to start at x_min (the
    closed-form MLE). Log-normal: (mu, sigma) maximizing the likelihood of
    the density truncated to [x_min, inf), found by Nelder-Mead from the
    moments of ln x on the tail.

    Raises:
        DaqError: If the tail is empty or the fit is degenerate.
    """
    x = tail(_positive_sorted(samples, max_samples), x_min)
    n = x.size
    if n == 0:
        raise DaqError(f"no samples at or above x_min={x_min}")

    if family == AltFamily.EXPONENTIAL:
        excess = float(np.mean(x)) - x_min
        if excess <= 0:
            raise DaqError("exponential fit is degenerate: every tail sample equals x_min")
        rate = 1.0 / excess
        return float(n * math.log(rate) - rate * np.sum(x - x_min))

    logs = np.log(x)
    mu0 = float(np.mean(logs))
    sigma0 = float(np.std(logs))
    if sigma0 <= 0:
        raise DaqError("log-normal fit is degenerate: sigma is 0")
    mu, sigma, loglik = fit_truncated_lognormal(logs, x_min, mu0, sigma0)
    logger.debug(f"log-normal tail fit: mu={mu:.4f} sigma={sigma:.4f} loglik={loglik:.2f}")
    return loglik


def lognormal_loglik(logs: np.ndarray, x_min: float, mu: float, sigma: float) -> float:
    """Log-likelihood of ln-values ``logs`` under a log-normal truncated at x_min."""
    z = (logs - mu) / sigma
    density = -logs - math.log(sigma) - 0.5 * math.log(2.0 * math.pi) - 0.5 * z * z
    return float(np.sum(density) - logs.size * norm.logsf((math.log(x_min) - mu) / sigma))


def fit_truncated_lognormal(
    logs: np.ndarray, x_min: float, mu0: float, sigma0: float
) -> tuple[float, float, float]:
    """
    Maximize the truncated log-normal likelihood.

    The search runs over (z, ln sigma) with mu = ln x_min - z * sigma, so z
    is the cutoff in standard units. z is capped at LOGNORMAL_MAX_Z: as
    z -> inf with sigma -> inf the family converges to a power law, and an
    uncapped fit would tie the power law on its own data.

    Returns:
        (mu, sigma, loglik); never worse than the moment starting point.
    """
    log_min = math.log(x_min)

    def unpack(params: np.ndarray) -> tuple[float, float]:
        sigma = math.exp(float(params[1]))
        return log_min - float(params[0]) * sigma, sigma

    def objective(params: np.ndarray) -> float:
        value = lognormal_loglik(logs, x_min, *unpack(params))
        return -value if math.isfinite(value) else math.inf

    z0 = min(max((log_min - mu0) / sigma0, LOGNORMAL_Z_BOUNDS[0]), LOGNORMAL_Z_BOUNDS[1])
    start = np.array([z0, math.log(sigma0)])
    result = minimize(
        objective,
        start,
        method="Nelder-Mead",
        bounds=[LOGNORMAL_Z_BOUNDS, LOG_SIGMA_BOUNDS],
        options={"xatol": 1e-6, "fatol": 1e-6, "maxiter": 4000},
    )
    best = result.x if math.isfinite(result.fun) and result.fun <= objective(start) else start
    mu, sigma = unpack(best)
    return mu, sigma, lognormal_loglik(logs, x_min, mu, sigma)


def likelihood_ratio(fit: PowerLawFit, alt_logliks: Mapping[str, float]) -> float:
    """
    Per-sample log-likelihood margin of the power law over its best rival.

    Raises:
        DaqError: If no alternative is given.
    """
    if not alt_logliks:
        raise DaqError("likelihood ratio needs at least one alternative")
    return (fit.loglik - max(alt_logliks.values())) / fit.n_tail
