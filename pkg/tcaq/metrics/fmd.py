"""Fréchet moment distance between two sample sets.

d^2 = ||mu_a - mu_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^(1/2)) on raw flattened
samples. The trace of the square root is taken from the eigenvalues of the
symmetric product C_a^(1/2) C_b C_a^(1/2), which shares its spectrum with
C_a C_b.
"""

import logging

import numpy as np
from scipy import linalg

from .errors import MetricsError

logger = logging.getLogger(__name__)

COV_EPS = 1e-6


def _flatten(samples: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim < 2:
        raise MetricsError(f"{name} must be a batch of samples, got shape {arr.shape}")
    return arr.reshape(arr.shape[0], -1)


def _moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    return x.mean(axis=0), cov + COV_EPS * np.eye(x.shape[1])


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = linalg.eigh(mat)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray) -> float:
    """Fréchet distance between two Gaussians given their moments."""
    diff = mu_a - mu_b
    root_a = _psd_sqrt(cov_a)
    middle = root_a @ cov_b @ root_a
    eig = linalg.eigvalsh(0.5 * (middle + middle.T))
    tr_covmean = float(np.sum(np.sqrt(np.clip(eig, 0.0, None))))
    d2 = float(diff @ diff) + float(np.trace(cov_a)) + float(np.trace(cov_b)) - 2.0 * tr_covmean
    return max(d2, 0.0)


def fmd(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """
    Fréchet moment distance between two batches of samples.

    Both batches are flattened to (n, dim); each needs at least dim + 1
    samples so the covariance is not degenerate.

    Raises:
        MetricsError: If either batch is too small or the dims differ.
    """
    a = _flatten(samples_a, "samples_a")
    b = _flatten(samples_b, "samples_b")
    if a.shape[1] != b.shape[1]:
        raise MetricsError(f"fmd dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    need = a.shape[1] + 1
    for name, x in (("samples_a", a), ("samples_b", b)):
        if x.shape[0] < need:
            raise MetricsError(f"fmd needs at least {need} samples in {name}, got {x.shape[0]}")
    mu_a, cov_a = _moments(a)
    mu_b, cov_b = _moments(b)
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


def moment_distance(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """
    Diagonal moment distance ||mu_a - mu_b||^2 + ||sigma_a - sigma_b||^2.

    Works with fewer samples than dimensions; used to compare per-timestep
    marginals of x_t.
    """
    a = _flatten(samples_a, "samples_a")
    b = _flatten(samples_b, "samples_b")
    if a.shape[1] != b.shape[1]:
        raise MetricsError(f"moment_distance dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise MetricsError("moment_distance needs non-empty batches")
    dmu = a.mean(axis=0) - b.mean(axis=0)
    dsig = a.std(axis=0) - b.std(axis=0)
    return float(dmu @ dmu + dsig @ dsig)
