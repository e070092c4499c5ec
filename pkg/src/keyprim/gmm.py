"""
Time-indexed Gaussian mixture models and Gaussian mixture regression.

Mixtures live on the joint space ``(t, y)`` with time in column 0. The EM
core works on a list of data views sharing one set of responsibilities so
the task-parameterised variant in :mod:`keyprim.tpgmm` reuses it unchanged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .gaussian import GaussianState, clamp_psd, log_density

FORMAT_VERSION = 1


class CovarianceCollapseWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Per-time Gaussian states: ``means`` is ``(N, D)``, ``covs`` ``(N, D, D)``."""

    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    extrapolated: bool = False

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        means = np.asarray(self.means, dtype=float).reshape(times.size, -1)
        covs = np.asarray(self.covs, dtype=float).reshape(times.size, means.shape[1], means.shape[1])
        if times.size < 1:
            raise ValueError("reference trajectory needs at least one state")
        if np.any(np.diff(times) <= 0):
            raise ValueError("reference times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    def __len__(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def states(self) -> list[GaussianState]:
        return [GaussianState(m, c) for m, c in zip(self.means, self.covs)]


@dataclass
class GmmModel:
    priors: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    time_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0
    log_likelihoods: list[float] = field(default_factory=list)
    collapsed: bool = False
    rejected_drop: float = 0.0

    @property
    def K(self) -> int:
        return self.priors.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "kind": "gmm",
            "format_version": FORMAT_VERSION,
            "K": self.K,
            "dim": self.dim,
            "seed": self.seed,
            "time_range": list(self.time_range),
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "log_likelihoods": list(self.log_likelihoods),
            "collapsed": bool(self.collapsed),
            "rejected_drop": float(self.rejected_drop),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        if d.get("kind") != "gmm":
            raise ValueError(f"not a gmm document: kind={d.get('kind')!r}")
        return cls(
            priors=np.asarray(d["priors"], dtype=float),
            means=np.asarray(d["means"], dtype=float),
            covs=np.asarray(d["covs"], dtype=float),
            time_range=tuple(d["time_range"]),
            seed=int(d["seed"]),
            log_likelihoods=list(d.get("log_likelihoods", [])),
            collapsed=bool(d.get("collapsed", False)),
            rejected_drop=float(d.get("rejected_drop", 0.0)),
        )


def _kmeanspp_labels(Z: np.ndarray, K: int, rng: np.random.Generator, lloyd_iters: int = 10) -> np.ndarray:
    n = Z.shape[0]
    centers = [Z[rng.integers(n)]]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(Z[idx])
        d2 = np.minimum(d2, np.sum((Z - Z[idx]) ** 2, axis=1))
    C = np.array(centers)
    labels = np.zeros(n, dtype=int)
    for _ in range(lloyd_iters):
        dist = np.sum((Z[:, None, :] - C[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dist, axis=1)
        for k in range(K):
            members = Z[labels == k]
            if len(members):
                C[k] = members.mean(axis=0)
    return labels


def _floor_for(X: np.ndarray, reg_factor: float) -> float:
    return reg_factor * float(np.mean(np.var(X, axis=0)))


@dataclass
class EmResult:
    priors: np.ndarray
    means: list[np.ndarray]
    covs: list[np.ndarray]
    log_likelihoods: list[float]
    collapsed: bool
    rejected_drop: float = 0.0  # size of the final non-improving step, if one was discarded


def _log_joint(views, priors, means, covs) -> np.ndarray:
    n = views[0].shape[0]
    K = priors.size
    logp = np.tile(np.log(np.maximum(priors, np.finfo(float).tiny)), (n, 1))
    for X, mu, sig in zip(views, means, covs):
        for k in range(K):
            logp[:, k] += log_density(X, mu[k], sig[k])
    return logp


def em_fit(views: Sequence[np.ndarray], K: int, seed: int = 0, max_iter: int = 200,
           tol: float = 1e-10, reg_factor: float = 1e-8) -> EmResult:
    """EM over one or more views of the same samples with shared responsibilities."""
    views = [np.asarray(X, dtype=float) for X in views]
    n = views[0].shape[0]
    if any(X.shape[0] != n for X in views):
        raise ValueError("all views must hold the same samples")
    if K < 1:
        raise ValueError("K must be at least 1")
    if n < K * (views[0].shape[1] + 1):
        raise ValueError(f"{n} samples are too few for K={K} components of dimension {views[0].shape[1]}")
    joint = np.hstack(views)
    if not np.all(np.isfinite(joint)):
        raise ValueError("data contain NaN or Inf")
    if np.all(np.ptp(joint, axis=0) == 0):
        raise ValueError("degenerate data: all points identical")

    rng = np.random.default_rng(seed)
    scale = joint.std(axis=0)
    scale[scale == 0] = 1.0
    labels = _kmeanspp_labels(joint / scale, K, rng) if K > 1 else np.zeros(n, dtype=int)
    resp = np.zeros((n, K))
    resp[np.arange(n), labels] = 1.0
    floors = [_floor_for(X, reg_factor) for X in views]

    collapsed = False
    lls: list[float] = []
    priors = means = covs = best = None
    rejected = 0.0
    for it in range(max_iter + 1):
        # M-step
        nk = resp.sum(axis=0)
        if np.any(nk <= np.finfo(float).eps * n):
            collapsed = True
            nk = np.maximum(nk, np.finfo(float).eps * n)
        priors = nk / nk.sum()
        means, covs = [], []
        for X, floor in zip(views, floors):
            mu = (resp.T @ X) / nk[:, None]
            sig = np.empty((K, X.shape[1], X.shape[1]))
            for k in range(K):
                diff = X - mu[k]
                c = (resp[:, k, None] * diff).T @ diff / nk[k]
                c = 0.5 * (c + c.T)
                if np.linalg.eigvalsh(c)[0] < floor:
                    collapsed = collapsed or bool(nk[k] < X.shape[1] + 1)
                    c = clamp_psd(c, floor)
                sig[k] = c
            means.append(mu)
            covs.append(sig)
        # E-step
        logp = _log_joint(views, priors, means, covs)
        norm = logsumexp(logp, axis=1)
        ll = float(np.sum(norm))
        if lls and ll < lls[-1]:
            # exact EM cannot decrease the likelihood, so this is rounding at the fixed point
            priors, means, covs = best
            rejected = lls[-1] - ll
            break
        resp = np.exp(logp - norm[:, None])
        lls.append(ll)
        best = (priors, means, covs)
        if it > 0 and lls[-1] - lls[-2] <= tol * n:
            break
    if collapsed:
        warnings.warn("mixture component collapsed; covariance floor applied", CovarianceCollapseWarning)
    return EmResult(priors, means, covs, lls, collapsed, rejected)


def gmm_fit(data, K: int = 5, seed: int = 0, max_iter: int = 200, tol: float = 1e-10,
            reg_factor: float = 1e-8) -> GmmModel:
    """Fit a mixture to ``data``: an ``(n, 1 + D)`` array whose first column is time."""
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("data must be an (n, 1 + D) array with time in column 0")
    res = em_fit([X], K, seed=seed, max_iter=max_iter, tol=tol, reg_factor=reg_factor)
    return GmmModel(
        priors=res.priors,
        means=res.means[0],
        covs=res.covs[0],
        time_range=(float(X[:, 0].min()), float(X[:, 0].max())),
        seed=seed,
        log_likelihoods=res.log_likelihoods,
        collapsed=res.collapsed,
        rejected_drop=res.rejected_drop,
    )


def gmr(priors, means, covs, x, in_idx=(0,), out_idx=None):
    """Condition a mixture on its ``in_idx`` block at each row of ``x``.

    Returns ``(mu, sigma)`` with shapes ``(M, O)`` and ``(M, O, O)``.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    in_idx = np.asarray(in_idx)
    if out_idx is None:
        out_idx = np.setdiff1d(np.arange(means.shape[1]), in_idx)
    out_idx = np.asarray(out_idx)
    x = np.asarray(x, dtype=float).reshape(-1, in_idx.size)
    K = priors.size
    M, O = x.shape[0], out_idx.size

    logw = np.empty((M, K))
    cond_mu = np.empty((K, M, O))
    cond_cov = np.empty((K, O, O))
    for k in range(K):
        mi, mo = means[k, in_idx], means[k, out_idx]
        Sii = covs[k][np.ix_(in_idx, in_idx)]
        Soi = covs[k][np.ix_(out_idx, in_idx)]
        Soo = covs[k][np.ix_(out_idx, out_idx)]
        gain = np.linalg.solve(Sii, Soi.T).T
        logw[:, k] = np.log(priors[k]) + log_density(x, mi, Sii)
        cond_mu[k] = mo + (x - mi) @ gain.T
        cond_cov[k] = Soo - gain @ Soi.T
    h = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
    mu = np.einsum("mk,kmo->mo", h, cond_mu)
    sigma = np.einsum("mk,kop->mop", h, cond_cov)
    sigma += np.einsum("mk,kmo,kmp->mop", h, cond_mu, cond_mu)
    sigma -= np.einsum("mo,mp->mop", mu, mu)
    sigma = np.array([clamp_psd(s) for s in sigma])
    return mu, sigma


def gmr_regress(model: GmmModel, query_times) -> ReferenceTrajectory:
    """Conditional output distribution given time; queries outside the training
    time support are clamped to its boundary and flagged."""
    t = np.asarray(query_times, dtype=float).reshape(-1)
    lo, hi = model.time_range
    clamped = np.clip(t, lo, hi)
    mu, sigma = gmr(model.priors, model.means, model.covs, clamped[:, None])
    return ReferenceTrajectory(t, mu, sigma, extrapolated=bool(np.any(clamped != t)))
