"""Symmetric fixed-point FastICA with tanh contrast.

Applied to learned features to remove the linear indeterminacy left by
contrastive training.  Features are centered and ZCA-whitened internally;
the returned unmixing matrix acts on centered features.  Convergence can
legitimately fail (e.g. Gaussian inputs); the result then carries
converged=False instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError
from .rng import named_stream


@dataclass
class FastIcaResult:
    unmixing: np.ndarray        # (d, d), components = (x - mean) @ unmixing.T
    components: np.ndarray      # (T, d)
    mean: np.ndarray
    iterations: int
    converged: bool


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(w @ w.T)
    return (eigvec / np.sqrt(eigval)) @ eigvec.T @ w


def fastica(
    features: np.ndarray,
    max_iter: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
) -> FastIcaResult:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeError("need a (T, d) feature matrix with d >= 2")
    n, d = x.shape
    if n <= d:
        raise ShapeError("need more samples than feature dimensions")
    if not np.isfinite(x).all():
        raise InputError("non-finite values in features")

    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval[0] <= 0 or eigval[0] < 1e-12 * eigval[-1]:
        raise InputError(f"feature covariance is degenerate (min eigenvalue {eigval[0]:.3e})")
    whiten = (eigvec / np.sqrt(eigval)) @ eigvec.T
    z = xc @ whiten.T

    rng = named_stream(seed, "init")
    w, _ = np.linalg.qr(rng.normal(size=(d, d)))
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        g = np.tanh(z @ w.T)
        g_prime = 1.0 - g ** 2
        w_new = _sym_decorrelate(g.T @ z / n - g_prime.mean(axis=0)[:, None] * w)
        lim = 1.0 - np.abs(np.diag(w_new @ w.T)).min()
        w = w_new
        if lim < tol:
            converged = True
            break

    components = z @ w.T
    return FastIcaResult(w @ whiten, components, mean, iterations, converged)
