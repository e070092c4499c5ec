"""
Kernelized movement primitive: kernel regression over a probabilistic
reference trajectory.

With the RBF kernel ``k`` shared by all output dimensions, the reference
means ``mu`` stacked per time and the block-diagonal reference covariance
``S``, the KL-optimal predictions are

    mean(t) = k(t) (K + lam_mean S)^-1 mu
    cov(t)  = N / lam_cov * [k(t, t) I - k(t) (K + lam_cov S)^-1 k(t)^T]

where ``k(t)`` is the row of kernel values against the reference times
(Kronecker-expanded by the output identity).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .gaussian import GaussianState
from .gmm import ReferenceTrajectory


@dataclass(frozen=True)
class KernelParams:
    lengthscale: float = 0.05
    variance: float = 1.0

    def __post_init__(self):
        if not (self.lengthscale > 0 and self.variance > 0):
            raise ValueError("kernel lengthscale and variance must be positive")

    def __call__(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=float).reshape(-1, 1)
        b = np.asarray(b, dtype=float).reshape(1, -1)
        return self.variance * np.exp(-0.5 * (a - b) ** 2 / self.lengthscale ** 2)


def _block_diag(covs: np.ndarray) -> np.ndarray:
    n, o, _ = covs.shape
    out = np.zeros((n * o, n * o))
    for i in range(n):
        out[i * o:(i + 1) * o, i * o:(i + 1) * o] = covs[i]
    return out


def _cholesky(M: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(M, lower=True)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * np.mean(np.diag(M))
    try:
        return scipy.linalg.cholesky(M + jitter * np.eye(M.shape[0]), lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("KMP system is not positive definite after regularization") from exc


@dataclass(frozen=True)
class KmpPrediction:
    """Predicted Gaussians at arbitrary (possibly repeated or unsorted) query times."""

    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    @property
    def states(self) -> list[GaussianState]:
        return [GaussianState(m, c) for m, c in zip(self.means, self.covs)]


@dataclass
class KmpModel:
    ref: ReferenceTrajectory
    kernel: KernelParams
    lam_mean: float
    lam_cov: float
    _alpha: np.ndarray = field(repr=False, default=None)
    _chol_cov: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return self.ref.dim


def kmp_fit(ref: ReferenceTrajectory, kernel: KernelParams | None = None,
            lam_mean: float = 1.0, lam_cov: float = 60.0) -> KmpModel:
    if len(ref) < 1:
        raise ValueError("reference trajectory is empty")
    if not (lam_mean > 0 and lam_cov > 0):
        raise ValueError("regularizers must be positive")
    kernel = kernel or KernelParams()
    o = ref.dim
    gram = np.kron(kernel(ref.times, ref.times), np.eye(o))
    S = _block_diag(ref.covs)
    L_mean = _cholesky(gram + lam_mean * S)
    alpha = scipy.linalg.cho_solve((L_mean, True), ref.means.reshape(-1))
    L_cov = _cholesky(gram + lam_cov * S)
    return KmpModel(ref, kernel, lam_mean, lam_cov, alpha.reshape(len(ref), o), L_cov)


def kmp_predict(model: KmpModel, times, with_cov: bool = True) -> KmpPrediction:
    t = np.asarray(times, dtype=float).reshape(-1)
    o = model.dim
    n = len(model.ref)
    kstar = model.kernel(t, model.ref.times)
    mean = kstar @ model._alpha
    if not with_cov:
        return KmpPrediction(t, mean, np.zeros((t.size, o, o)))
    # columns of B^T for every query/output pair, solved in one triangular pass
    Bt = np.kron(kstar, np.eye(o)).T
    V = scipy.linalg.solve_triangular(model._chol_cov, Bt, lower=True)
    V = V.reshape(n * o, t.size, o)
    quad = np.einsum("imo,imp->mop", V, V)
    kself = model.kernel.variance
    cov = (n / model.lam_cov) * (kself * np.eye(o)[None] - quad)
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
    return KmpPrediction(t, mean, cov)


def holdout_rmse(ref: ReferenceTrajectory, kernel: KernelParams, lam_mean: float = 1.0,
                 stride: int = 3) -> float:
    """RMSE of KMP means at every ``stride``-th interior reference point when
    fitted on the remaining points."""
    idx = np.arange(len(ref))
    test = idx[1:-1][::stride]
    if test.size == 0:
        test = idx[-1:]
    train = np.setdiff1d(idx, test)
    sub = ReferenceTrajectory(ref.times[train], ref.means[train], ref.covs[train])
    model = kmp_fit(sub, kernel, lam_mean=lam_mean)
    pred = kmp_predict(model, ref.times[test], with_cov=False)
    return float(np.sqrt(np.mean(np.sum((pred.means - ref.means[test]) ** 2, axis=1))))


def kmp_tune(ref: ReferenceTrajectory, grid, lam_mean: float = 1.0, stride: int = 3) -> KernelParams:
    """Pick the kernel from ``grid`` with the lowest hold-out RMSE.

    ``grid`` entries are lengthscales or :class:`KernelParams`. Ties go to the
    smaller lengthscale, then to the earlier grid entry.
    """
    candidates = [g if isinstance(g, KernelParams) else KernelParams(float(g)) for g in grid]
    if not candidates:
        raise ValueError("kernel grid is empty")
    best, best_err = None, np.inf
    for cand in candidates:
        err = holdout_rmse(ref, cand, lam_mean=lam_mean, stride=stride)
        if err < best_err or (err == best_err and cand.lengthscale < best.lengthscale):
            best, best_err = cand, err
    return best
