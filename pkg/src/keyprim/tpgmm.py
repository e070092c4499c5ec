"""
Task-parameterised GMM baseline.

Every demonstration is projected into each task frame; one EM run fits a
mixture whose components have a Gaussian per frame and share priors and
responsibilities. To reproduce under new frames, each component's frame
Gaussians are mapped to global coordinates and multiplied; GMR over time
then runs on the fused components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gaussian import GaussianState, product_moments
from .gmm import em_fit, gmr
from .lfekmp import GeneralizedTrajectory, _as_frame_sets, _check_normalized, _state_rows, encode_local
from .manifold import IDENTITY, PoseTrajectory, TaskFrame, quat_exp, quat_log, quat_mean, quat_mul, transport_matrix

FORMAT_VERSION = 1


@dataclass
class TpGmmModel:
    priors: np.ndarray
    means: list[np.ndarray]  # per frame, (K, 1 + D)
    covs: list[np.ndarray]  # per frame, (K, 1 + D, 1 + D)
    bases: list[np.ndarray]
    dim: int
    time_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0
    log_likelihoods: list[float] = field(default_factory=list)

    @property
    def P(self) -> int:
        return len(self.means)

    @property
    def K(self) -> int:
        return self.priors.size

    def to_dict(self) -> dict:
        return {
            "kind": "tpgmm",
            "format_version": FORMAT_VERSION,
            "dim": self.dim,
            "K": self.K,
            "P": self.P,
            "seed": self.seed,
            "time_range": list(self.time_range),
            "priors": self.priors.tolist(),
            "means": [m.tolist() for m in self.means],
            "covs": [c.tolist() for c in self.covs],
            "bases": [b.tolist() for b in self.bases],
            "log_likelihoods": list(self.log_likelihoods),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TpGmmModel":
        if d.get("kind") != "tpgmm":
            raise ValueError(f"not a tpgmm document: kind={d.get('kind')!r}")
        return cls(
            priors=np.asarray(d["priors"], dtype=float),
            means=[np.asarray(m, dtype=float) for m in d["means"]],
            covs=[np.asarray(c, dtype=float) for c in d["covs"]],
            bases=[np.asarray(b, dtype=float) for b in d["bases"]],
            dim=int(d["dim"]),
            time_range=tuple(d["time_range"]),
            seed=int(d["seed"]),
            log_likelihoods=list(d.get("log_likelihoods", [])),
        )


def tpgmm_learn(demos: Sequence[PoseTrajectory], demo_frames, K: int = 5, seed: int = 0,
                max_iter: int = 200, tol: float = 1e-10, reg_factor: float = 1e-4) -> TpGmmModel:
    demos = _check_normalized(demos)
    sets = _as_frame_sets(demo_frames, len(demos))
    local = encode_local(demos, sets)
    views, bases = [], []
    for local_p in local:
        base = IDENTITY.copy()
        if demos[0].dim == 3:
            base = quat_mean(np.vstack([d.orientations for d in local_p]))
        bases.append(base)
        views.append(np.vstack([np.column_stack([d.times, _state_rows(d, base)]) for d in local_p]))
    res = em_fit(views, K, seed=seed, max_iter=max_iter, tol=tol, reg_factor=reg_factor)
    t = views[0][:, 0]
    return TpGmmModel(res.priors, res.means, res.covs, bases, demos[0].dim,
                      (float(t.min()), float(t.max())), seed, res.log_likelihoods)


def _component_to_global(mu, sigma, frame: TaskFrame, base, chart, d: int):
    """Map one frame-local joint (time, state) Gaussian to global coordinates,
    rotation vectors re-expressed about ``chart``."""
    n = mu.size
    L = np.eye(n)
    out = mu.copy()
    L[1:1 + d, 1:1 + d] = frame.A
    out[1:1 + d] = frame.A @ mu[1:1 + d] + frame.b
    if d == 3:
        src = quat_mul(frame.quaternion, base)
        out[1 + d:] = quat_log(chart, quat_exp(src, mu[1 + d:]))
        L[1 + d:, 1 + d:] = transport_matrix(src, chart)
    return out, L @ sigma @ L.T


def tpgmm_generalize(model: TpGmmModel, new_frames: Sequence[TaskFrame], times=None) -> GeneralizedTrajectory:
    if len(new_frames) != model.P:
        raise ValueError(f"model has {model.P} frames but {len(new_frames)} were given")
    times = np.linspace(0.0, 1.0, 200) if times is None else np.asarray(times, dtype=float)
    d = model.dim
    chart = quat_mul(new_frames[0].quaternion, model.bases[0]) if d == 3 else None
    fused_means, fused_covs = [], []
    for k in range(model.K):
        ms, cs = [], []
        for p, frame in enumerate(new_frames):
            m, c = _component_to_global(model.means[p][k], model.covs[p][k], frame, model.bases[p], chart, d)
            ms.append(m)
            cs.append(c)
        if len(ms) == 1:
            m, c = ms[0], cs[0]
        else:
            m, c = product_moments(ms, cs)
        fused_means.append(m)
        fused_covs.append(c)
    lo, hi = model.time_range
    mu, sigma = gmr(model.priors, np.array(fused_means), np.array(fused_covs), np.clip(times, lo, hi)[:, None])

    states, quats = [], []
    for m, S in zip(mu, sigma):
        if d == 2:
            states.append(GaussianState(m, S))
            continue
        q = quat_exp(chart, m[d:])
        L = np.eye(d + 3)
        L[d:, d:] = transport_matrix(chart, q)
        quats.append(q)
        states.append(GaussianState(np.concatenate([m[:d], np.zeros(3)]), L @ S @ L.T))
    executed = PoseTrajectory(times, mu[:, :d], np.array(quats) if d == 3 else None)
    return GeneralizedTrajectory(times, states, executed)
