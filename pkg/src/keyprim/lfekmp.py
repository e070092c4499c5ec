"""
Local-feature-enhanced KMP over task-parameterised frames.

Learning, for every task frame ``p``:

1. express the demonstrations in frame ``p``;
2. fit a time-indexed GMM and regress a reference trajectory with GMR
   (orientations as rotation vectors about the per-frame mean orientation);
3. resample the reference near the frame's own endpoint and append the
   resampled points with covariance ``eps * I``, the endpoint itself taking
   the frame origin;
4. fit a KMP on the extended reference.

Generalisation predicts in every frame, maps the predictions through the new
frames and fuses them with a product of Gaussians, in the tangent space of
the fused orientation for the rotational part.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .gaussian import GaussianState, clamp_psd, product_moments
from .gmm import GmmModel, ReferenceTrajectory, gmm_fit, gmr_regress
from .kmp import KernelParams, KmpModel, kmp_fit, kmp_predict, kmp_tune
from .manifold import (
    IDENTITY,
    PoseTrajectory,
    TaskFrame,
    frame_invert,
    quat_exp,
    quat_log,
    quat_mean,
    quat_mul,
    trajectory_apply,
    transport_matrix,
)

FORMAT_VERSION = 1
ANCHOR_MODES = ("own", "all")


@dataclass(frozen=True)
class LfeKmpConfig:
    K: int = 5
    seed: int = 0
    lam_mean: float = 1.0
    lam_cov: float = 60.0
    eps: float = 1e-8
    R: int = 5
    window: float = 0.1
    n_ref: int = 100
    kernel_grid: tuple = (0.01, 0.02, 0.03, 0.05, 0.08, 0.12)
    anchors: str = "own"
    orientation_iters: int = 5
    reg_factor: float = 1e-4
    one_shot_reg_factor: float = 1e-2

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.R < 0:
            raise ValueError("R must be >= 0")
        if not 0 < self.window <= 0.2:
            raise ValueError("window must lie in (0, 0.2]")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.lam_mean <= 0 or self.lam_cov <= 0:
            raise ValueError("regularizers must be positive")
        if self.n_ref < 2:
            raise ValueError("n_ref must be >= 2")
        if self.anchors not in ANCHOR_MODES:
            raise ValueError(f"anchors must be one of {ANCHOR_MODES}")
        if self.orientation_iters < 1:
            raise ValueError("orientation_iters must be >= 1")
        object.__setattr__(self, "kernel_grid", tuple(float(g) for g in self.kernel_grid))


@dataclass
class FrameModel:
    gmm: GmmModel
    base: np.ndarray  # mean local orientation, tangent-chart origin (3D only)
    reference: ReferenceTrajectory  # extended
    kmp: KmpModel


@dataclass
class LfeKmpModel:
    frames: list[FrameModel]
    demo_frames: list[list[TaskFrame]]
    config: LfeKmpConfig
    dim: int

    @property
    def P(self) -> int:
        return len(self.frames)


@dataclass
class GeneralizedTrajectory:
    """Fused per-time Gaussians (position block, then the rotation-vector block
    about the fused orientation) and the executed mean trajectory."""

    times: np.ndarray
    states: list[GaussianState]
    executed: PoseTrajectory
    frame_states: list[list[GaussianState]] = field(default_factory=list)

    @property
    def positions(self) -> np.ndarray:
        return self.executed.positions


def _as_frame_sets(demo_frames, n_demos: int) -> list[list[TaskFrame]]:
    if len(demo_frames) and isinstance(demo_frames[0], TaskFrame):
        return [list(demo_frames) for _ in range(n_demos)]
    sets = [list(fs) for fs in demo_frames]
    if len(sets) != n_demos:
        raise ValueError(f"{len(sets)} frame sets given for {n_demos} demonstrations")
    if len({len(fs) for fs in sets}) != 1:
        raise ValueError("every demonstration needs the same number of frames")
    return sets


def encode_local(demos: Sequence[PoseTrajectory], frames) -> list[list[PoseTrajectory]]:
    """Express every demonstration in every task frame.

    ``frames`` is one frame list shared by all demos, or one list per demo.
    Returns ``out[p][n]``: demo ``n`` seen from frame ``p``.
    """
    if not demos:
        raise ValueError("at least one demonstration is required")
    sets = _as_frame_sets(frames, len(demos))
    P = len(sets[0])
    if P < 1:
        raise ValueError("at least one task frame is required")
    return [[trajectory_apply(frame_invert(fs[p]), d) for d, fs in zip(demos, sets)] for p in range(P)]


def decode_local(local: PoseTrajectory, frame: TaskFrame) -> PoseTrajectory:
    return trajectory_apply(frame, local)


def _state_rows(traj: PoseTrajectory, base) -> np.ndarray:
    if traj.dim == 2:
        return traj.positions
    tangents = np.array([quat_log(base, q) for q in traj.orientations])
    return np.hstack([traj.positions, tangents])


def frame_roles(P: int) -> list[str | None]:
    """Which endpoint each frame anchors: first frame the start, last the end."""
    if P == 1:
        return ["start"]
    return ["start"] + [None] * (P - 2) + ["end"]


def enhance_local_features(ref: ReferenceTrajectory, anchor: GaussianState | None, R: int,
                           window: float, eps: float, at: str = "start") -> ReferenceTrajectory:
    """Append ``R`` near-deterministic desired points inside the start or end window.

    The points sit evenly over the window, closest one on the endpoint. Their
    means follow the reference (linear interpolation between reference
    times) except the endpoint, which takes ``anchor.mean`` when an anchor is
    given. All receive covariance ``eps * I``. Points sharing a timestamp are
    collapsed to the one with the smaller covariance.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if not 0 < window <= 0.2:
        raise ValueError("window must lie in (0, 0.2]")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if at not in ("start", "end"):
        raise ValueError("at must be 'start' or 'end'")
    t0, t1 = ref.times[0], ref.times[-1]
    span = (t1 - t0) * window
    offsets = np.linspace(0.0, span, R)
    times = t0 + offsets if at == "start" else t1 - offsets
    times = np.unique(times)
    if times.size < R:
        times = np.array([t0 if at == "start" else t1])

    D = ref.dim
    means = np.column_stack([np.interp(times, ref.times, ref.means[:, j]) for j in range(D)])
    endpoint = 0 if at == "start" else times.size - 1
    if anchor is not None:
        means[endpoint] = anchor.mean
    covs = np.broadcast_to(eps * np.eye(D), (times.size, D, D))

    all_t = np.concatenate([ref.times, times])
    all_m = np.vstack([ref.means, means])
    all_c = np.concatenate([ref.covs, covs])
    order = np.argsort(all_t, kind="stable")
    keep_t, keep_m, keep_c = [], [], []
    for i in order:
        if keep_t and abs(all_t[i] - keep_t[-1]) <= 1e-12:
            if np.trace(all_c[i]) < np.trace(keep_c[-1]):
                keep_m[-1], keep_c[-1] = all_m[i], all_c[i]
            continue
        keep_t.append(all_t[i])
        keep_m.append(all_m[i])
        keep_c.append(all_c[i])
    return ReferenceTrajectory(np.array(keep_t), np.array(keep_m), np.array(keep_c))


def _origin_state(dim: int, base, eps: float) -> GaussianState:
    mean = np.zeros(dim)
    if dim == 3:
        mean = np.concatenate([mean, quat_log(base, IDENTITY)])
    return GaussianState(mean, eps * np.eye(mean.size))


def _check_normalized(demos: Sequence[PoseTrajectory]) -> list[PoseTrajectory]:
    dims = {d.dim for d in demos}
    if len(dims) != 1:
        raise ValueError("all demonstrations must share one spatial dimension")
    out = []
    for d in demos:
        out.append(d if d.times[0] == 0.0 and d.times[-1] == 1.0 else d.normalized())
    return out


def learn_frame(local_demos: Sequence[PoseTrajectory], role: str | None, config: LfeKmpConfig,
                enhance: bool = True) -> FrameModel:
    dim = local_demos[0].dim
    base = IDENTITY.copy()
    if dim == 3:
        base = quat_mean(np.vstack([d.orientations for d in local_demos]))
    data = np.vstack([np.column_stack([d.times, _state_rows(d, base)]) for d in local_demos])
    reg = config.one_shot_reg_factor if len(local_demos) == 1 else config.reg_factor
    gmm = gmm_fit(data, K=config.K, seed=config.seed, reg_factor=reg)
    ref = gmr_regress(gmm, np.linspace(0.0, 1.0, config.n_ref))
    kernel = kmp_tune(ref, config.kernel_grid, lam_mean=config.lam_mean)
    extended = ref
    if enhance and config.R > 0:
        ends = ["start", "end"] if config.anchors == "all" else ([role] if role else [])
        for at in ends:
            anchor = _origin_state(dim, base, config.eps) if at == role else None
            extended = enhance_local_features(extended, anchor, config.R, config.window, config.eps, at)
    kmp = kmp_fit(extended, kernel, lam_mean=config.lam_mean, lam_cov=config.lam_cov)
    return FrameModel(gmm, base, extended, kmp)


def lfekmp_learn(demos: Sequence[PoseTrajectory], demo_frames, config: LfeKmpConfig | None = None) -> LfeKmpModel:
    """Learn one enhanced KMP per task frame.

    ``demo_frames`` is either a frame list shared by all demos or one frame
    list per demo (frames attached to each demo's own start/end poses).
    """
    config = config or LfeKmpConfig()
    demos = _check_normalized(demos)
    sets = _as_frame_sets(demo_frames, len(demos))
    local = encode_local(demos, sets)
    roles = frame_roles(len(local))
    frames = [learn_frame(local_p, role, config) for local_p, role in zip(local, roles)]
    return LfeKmpModel(frames, sets, config, demos[0].dim)


def _fuse_orientation(means: list[np.ndarray], covs: list[np.ndarray], iters: int):
    """Product of tangent-space Gaussians on S^3, re-linearised at the fused mean."""
    start = int(np.argmin([np.trace(c) for c in covs]))
    c = means[start]
    cov = covs[start]
    if len(means) == 1:
        return c, cov
    for _ in range(iters):
        vs = [quat_log(c, m) for m in means]
        Ls = [transport_matrix(m, c) for m in means]
        cs = [L @ S @ L.T for L, S in zip(Ls, covs)]
        delta, cov = product_moments(vs, cs)
        c = quat_exp(c, delta)
        if np.linalg.norm(delta) < 1e-13:
            break
    return c, cov


def predict_frames(model: LfeKmpModel, new_frames: Sequence[TaskFrame], times):
    """Per-frame predictions mapped to global coordinates.

    Returns, per frame, the predicted local trajectory as
    ``(pos_means, pos_covs, quat_means, rot_covs)``, ``quat_means`` and
    ``rot_covs`` being ``None`` in 2D.
    """
    if len(new_frames) != model.P:
        raise ValueError(f"model has {model.P} frames but {len(new_frames)} were given")
    d = model.dim
    out = []
    for fm, frame in zip(model.frames, new_frames):
        if frame.dim != d:
            raise ValueError(f"frame is {frame.dim}D but model is {d}D")
        pred = kmp_predict(fm.kmp, times)
        A, b = frame.A, frame.b
        pos_mean = pred.means[:, :d] @ A.T + b
        pos_cov = np.einsum("ij,tjk,lk->til", A, pred.covs[:, :d, :d], A)
        if d == 2:
            out.append((pos_mean, pos_cov, None, None))
            continue
        qa = frame.quaternion
        chart = quat_mul(qa, fm.base)
        quats, rcovs = [], []
        for v, S in zip(pred.means[:, d:], pred.covs[:, d:, d:]):
            g = quat_mul(qa, quat_exp(fm.base, v))
            L = transport_matrix(chart, g)
            quats.append(quat_exp(g, np.zeros(3)))
            rcovs.append(L @ S @ L.T)
        out.append((pos_mean, pos_cov, np.array(quats), np.array(rcovs)))
    return out


def lfekmp_generalize(model: LfeKmpModel, new_frames: Sequence[TaskFrame], times=None) -> GeneralizedTrajectory:
    times = np.linspace(0.0, 1.0, 200) if times is None else np.asarray(times, dtype=float)
    per_frame = predict_frames(model, new_frames, times)
    d = model.dim
    # floor keeps anchored (near-zero) covariances invertible without biasing the fusion
    scale = max(np.mean([np.trace(pc[i]) for pm, pc, _, _ in per_frame for i in range(len(times))]) / d, 1e-300)
    floor = 1e-14 * scale

    positions, quats, states = [], [], []
    frame_states = [[] for _ in per_frame]
    for i in range(len(times)):
        covs = [clamp_psd(pc[i], floor) for _, pc, _, _ in per_frame]
        means = [pm[i] for pm, _, _, _ in per_frame]
        for p, (m, c) in enumerate(zip(means, covs)):
            frame_states[p].append(GaussianState(m, c))
        if len(means) == 1:
            mu, cov = means[0], covs[0]
        else:
            mu, cov = product_moments(means, covs)
        positions.append(mu)
        if d == 2:
            states.append(GaussianState(mu, cov))
            continue
        qm = [fq[i] for _, _, fq, _ in per_frame]
        qc = [clamp_psd(fc[i], 1e-14) for _, _, _, fc in per_frame]
        q, rcov = _fuse_orientation(qm, qc, model.config.orientation_iters)
        quats.append(q)
        full = np.zeros((d + 3, d + 3))
        full[:d, :d] = cov
        full[d:, d:] = rcov
        states.append(GaussianState(np.concatenate([mu, np.zeros(3)]), full))
    executed = PoseTrajectory(times, np.array(positions), np.array(quats) if d == 3 else None)
    return GeneralizedTrajectory(np.asarray(times), states, executed, frame_states)


# ---------------------------------------------------------------- KMP baseline

@dataclass
class ViaPointKmpModel:
    """Plain KMP over global coordinates, adapted to new endpoints by via-points."""

    frame: FrameModel
    config: LfeKmpConfig
    dim: int


def via_kmp_learn(demos: Sequence[PoseTrajectory], config: LfeKmpConfig | None = None) -> ViaPointKmpModel:
    config = config or LfeKmpConfig()
    demos = _check_normalized(demos)
    frame = learn_frame(demos, None, config, enhance=False)
    return ViaPointKmpModel(frame, config, demos[0].dim)


def via_kmp_generalize(model: ViaPointKmpModel, new_frames: Sequence[TaskFrame], times=None) -> GeneralizedTrajectory:
    """Refit with the first/last frame poses as via-points at t=0 and t=1.

    Without any task-parameterised encoding the rest of the trajectory stays
    where the demonstrations were recorded.
    """
    if len(new_frames) != 2:
        raise ValueError("the KMP baseline needs exactly a start and an end frame")
    times = np.linspace(0.0, 1.0, 200) if times is None else np.asarray(times, dtype=float)
    cfg, fm, d = model.config, model.frame, model.dim
    ref = fm.reference
    for at, frame in zip(("start", "end"), new_frames):
        mean = frame.b
        if d == 3:
            mean = np.concatenate([mean, quat_log(fm.base, frame.quaternion)])
        via = GaussianState(mean, cfg.eps * np.eye(mean.size))
        ref = enhance_local_features(ref, via, 1, cfg.window, cfg.eps, at)
    pred = kmp_predict(kmp_fit(ref, fm.kmp.kernel, cfg.lam_mean, cfg.lam_cov), times)
    quats = None
    states = []
    if d == 3:
        quats = np.array([quat_exp(fm.base, v) for v in pred.means[:, d:]])
        for q, m, S in zip(quats, pred.means, pred.covs):
            L = np.eye(d + 3)
            L[d:, d:] = transport_matrix(fm.base, q)
            states.append(GaussianState(np.concatenate([m[:d], np.zeros(3)]), L @ S @ L.T))
    else:
        states = list(pred.states)
    executed = PoseTrajectory(times, pred.means[:, :d], quats)
    return GeneralizedTrajectory(times, states, executed)


# ---------------------------------------------------------------- serialization

def _frame_to_dict(f: TaskFrame) -> dict:
    return {"A": f.A.tolist(), "b": f.b.tolist()}


def _frame_from_dict(d: dict) -> TaskFrame:
    return TaskFrame(np.asarray(d["A"], dtype=float), np.asarray(d["b"], dtype=float))


def _frame_model_to_dict(fm: FrameModel) -> dict:
    return {
        "gmm": fm.gmm.to_dict(),
        "base": fm.base.tolist(),
        "kernel": {"lengthscale": fm.kmp.kernel.lengthscale, "variance": fm.kmp.kernel.variance},
        "reference": {
            "times": fm.reference.times.tolist(),
            "means": fm.reference.means.tolist(),
            "covs": fm.reference.covs.tolist(),
        },
    }


def _frame_model_from_dict(fd: dict, config: LfeKmpConfig) -> FrameModel:
    ref = ReferenceTrajectory(fd["reference"]["times"], fd["reference"]["means"], fd["reference"]["covs"])
    kernel = KernelParams(**fd["kernel"])
    return FrameModel(
        GmmModel.from_dict(fd["gmm"]),
        np.asarray(fd["base"], dtype=float),
        ref,
        kmp_fit(ref, kernel, lam_mean=config.lam_mean, lam_cov=config.lam_cov),
    )


def model_to_dict(model: LfeKmpModel | ViaPointKmpModel) -> dict:
    out = {
        "format_version": FORMAT_VERSION,
        "dim": model.dim,
        "config": asdict(model.config),
    }
    if isinstance(model, ViaPointKmpModel):
        out.update(kind="kmp", frame=_frame_model_to_dict(model.frame))
        return out
    out.update(
        kind="lfekmp",
        demo_frames=[[_frame_to_dict(f) for f in fs] for fs in model.demo_frames],
        frames=[_frame_model_to_dict(fm) for fm in model.frames],
    )
    return out


def model_from_dict(d: dict) -> LfeKmpModel | ViaPointKmpModel:
    kind = d.get("kind")
    if kind not in ("lfekmp", "kmp"):
        raise ValueError(f"not a KMP-family model: kind={kind!r}")
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
    cfg = dict(d["config"])
    cfg["kernel_grid"] = tuple(cfg["kernel_grid"])
    config = LfeKmpConfig(**cfg)
    if kind == "kmp":
        return ViaPointKmpModel(_frame_model_from_dict(d["frame"], config), config, int(d["dim"]))
    frames = [_frame_model_from_dict(fd, config) for fd in d["frames"]]
    demo_frames = [[_frame_from_dict(f) for f in fs] for fs in d["demo_frames"]]
    return LfeKmpModel(frames, demo_frames, config, int(d["dim"]))


def dumps_model(model: LfeKmpModel | ViaPointKmpModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True)


def loads_model(text: str) -> LfeKmpModel | ViaPointKmpModel:
    return model_from_dict(json.loads(text))
