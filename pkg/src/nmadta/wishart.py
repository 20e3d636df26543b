"""Batched Wishart sampling and density helpers (scale-matrix parametrisation)."""
from __future__ import annotations

import numpy as np
from scipy.special import multigammaln

__all__ = ["wishart_logpdf", "draw_wishart", "mvn_logpdf_zero_mean", "chol_logdet"]

LOG_2PI = float(np.log(2.0 * np.pi))


def chol_logdet(chol: np.ndarray) -> np.ndarray:
    return 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)


def wishart_logpdf(x: np.ndarray, df: float, scale: np.ndarray) -> np.ndarray:
    """Log-density of ``x ~ W(df, scale)`` (mean ``df * scale``), batched over leading axes."""
    x = np.asarray(x, float)
    scale = np.asarray(scale, float)
    p = x.shape[-1]
    lx = np.linalg.cholesky(x)
    ls = np.linalg.cholesky(scale)
    trace = np.trace(np.linalg.solve(scale, x), axis1=-2, axis2=-1)
    return (0.5 * (df - p - 1) * chol_logdet(lx) - 0.5 * trace
            - 0.5 * df * p * np.log(2.0) - 0.5 * df * chol_logdet(ls) - multigammaln(0.5 * df, p))


def draw_wishart(rng: np.random.Generator, df: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Bartlett-decomposition draws for a stack of scale matrices ``(B, p, p)``.

    Consumes ``rng.chisquare`` for all diagonals first, then ``rng.standard_normal``
    for all strictly-lower entries, row-major within each matrix.
    """
    scale = np.asarray(scale, float)
    b, p, _ = scale.shape
    df = np.broadcast_to(np.asarray(df, float), (b,))
    chi = rng.chisquare(df[:, None] - np.arange(p)[None, :])
    rows, cols = np.tril_indices(p, -1)
    z = rng.standard_normal((b, len(rows)))
    a = np.zeros((b, p, p))
    a[:, np.arange(p), np.arange(p)] = np.sqrt(chi)
    a[:, rows, cols] = z
    la = np.linalg.cholesky(scale) @ a
    return la @ np.swapaxes(la, -1, -2)


def mvn_logpdf_zero_mean(x: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Zero-mean normal log-density of rows ``x (n, p)`` under one covariance ``(p, p)``."""
    x = np.atleast_2d(x)
    p = x.shape[-1]
    if p == 0:
        return np.zeros(x.shape[0])
    chol = np.linalg.cholesky(cov)
    w = np.linalg.solve(chol, x.T)
    return -0.5 * np.sum(w * w, axis=0) - 0.5 * chol_logdet(chol) - 0.5 * p * LOG_2PI
