"""Multivariate Gaussian algebra: products, affine maps and sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .manifold import TaskFrame

# relative ridge added before inverting near-singular covariances
REGULARIZATION = 1e-10


def clamp_psd(cov, floor: float = 0.0) -> np.ndarray:
    """Symmetrise ``cov`` and lift negative eigenvalues to ``floor``."""
    cov = np.asarray(cov, dtype=float)
    cov = 0.5 * (cov + cov.T)
    if cov.size == 0:
        return cov
    w, V = np.linalg.eigh(cov)
    if w[0] >= floor:
        return cov
    w = np.maximum(w, floor)
    cov = (V * w) @ V.T
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float).reshape(mean.size, mean.size)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", clamp_psd(cov))

    @property
    def dim(self) -> int:
        return self.mean.size


def regularized(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    delta = REGULARIZATION * max(np.trace(cov) / d, np.finfo(float).tiny)
    return cov + delta * np.eye(d)


def precision(cov: np.ndarray) -> np.ndarray:
    """Inverse of a covariance via Cholesky, regularised only if it fails."""
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(regularized(cov))
    Linv = np.linalg.solve(L, np.eye(cov.shape[0]))
    P = Linv.T @ Linv
    return 0.5 * (P + P.T)


def product_moments(means: Sequence[np.ndarray], covs: Sequence[np.ndarray]):
    """Mean and covariance of the normalised product of Gaussians.

    The product of Gaussians is Gaussian with precision equal to the sum of
    the input precisions; its mode (the argmax of the product) coincides with
    its mean.
    """
    if len(means) == 0:
        raise ValueError("product of zero Gaussians is undefined")
    dims = {np.size(m) for m in means}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch in product: {sorted(dims)}")
    prec = np.zeros_like(np.asarray(covs[0], dtype=float))
    info = np.zeros(np.size(means[0]))
    usable = 0
    for m, c in zip(means, covs):
        c = np.asarray(c, dtype=float)
        if np.trace(c) <= 0.0:
            continue
        P = precision(c)
        prec += P
        info += P @ np.asarray(m, dtype=float)
        usable += 1
    if usable == 0:
        raise ValueError("all covariances are singular; product undefined")
    L = np.linalg.cholesky(prec)
    Linv = np.linalg.solve(L, np.eye(prec.shape[0]))
    cov = Linv.T @ Linv
    cov = 0.5 * (cov + cov.T)
    return cov @ info, cov


def gaussian_product(gs: Sequence[GaussianState]) -> GaussianState:
    if len(gs) == 1:
        return gs[0]
    mean, cov = product_moments([g.mean for g in gs], [g.cov for g in gs])
    return GaussianState(mean, cov)


def gaussian_affine(f: TaskFrame, g: GaussianState) -> GaussianState:
    if f.dim != g.dim:
        raise ValueError(f"frame is {f.dim}D but Gaussian is {g.dim}D")
    return GaussianState(f.A @ g.mean + f.b, f.A @ g.cov @ f.A.T)


def gaussian_sample(g: GaussianState, seed: int, n: int) -> np.ndarray:
    """``n`` draws from ``g`` as an ``(n, dim)`` array, reproducible per seed."""
    rng = np.random.default_rng(seed)
    w, V = np.linalg.eigh(g.cov)
    root = V * np.sqrt(np.maximum(w, 0.0))
    z = rng.standard_normal((n, g.dim))
    return g.mean + z @ root.T


def log_density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise Gaussian log-density of ``x`` (shape ``(n, d)``)."""
    x = np.atleast_2d(x)
    d = mean.size
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, (x - mean).T)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (np.sum(z * z, axis=0) + logdet + d * np.log(2.0 * np.pi))
