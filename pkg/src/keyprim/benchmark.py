"""
Shape-preservation benchmark: KMP, TP-GMM and LFE-KMP on perturbed tasks.

Every method learns from the same demonstrations. Each trial draws a seeded
rigid perturbation of the reference start/end frames, generalises with every
method and scores the result against the mean demonstration.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import DemoBundle, perturb_task, workspace_diameter
from .lfekmp import LfeKmpConfig, lfekmp_generalize, lfekmp_learn, via_kmp_generalize, via_kmp_learn
from .manifold import PoseTrajectory, TaskFrame
from .metrics import MetricReport, evaluate
from .svg import PALETTE, Series, render
from .tpgmm import tpgmm_generalize, tpgmm_learn

METHODS = ("kmp", "tpgmm", "lfekmp")
LABELS = {"kmp": "KMP", "tpgmm": "TP-GMM", "lfekmp": "LFE-KMP"}


@dataclass(frozen=True)
class BenchmarkConfig:
    n_trials: int = 10
    seed: int = 0
    translation_scale: float = 0.3  # fraction of the workspace diameter
    rotation_scale: float = 0.3  # radians
    n_points: int = 200

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.translation_scale < 0 or self.rotation_scale < 0:
            raise ValueError("perturbation scales must be non-negative")
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")


@dataclass
class MethodSummary:
    c_s: float
    kappa_s: float
    endpoint_error: float
    trials: list[MetricReport] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"c_s": self.c_s, "kappa_s": self.kappa_s, "endpoint_error": self.endpoint_error,
                "trials": [t.to_dict() for t in self.trials]}


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    diameter: float
    methods: dict[str, MethodSummary]
    tasks: list[list[TaskFrame]]
    trajectories: dict[str, list[PoseTrajectory]]
    reference: np.ndarray

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "workspace_diameter": self.diameter,
            "methods": {m: s.to_dict() for m, s in self.methods.items()},
        }


def mean_demo(demos: Sequence[PoseTrajectory], n: int) -> np.ndarray:
    """Pointwise mean of the time-normalised demos on ``n`` uniform samples."""
    t = np.linspace(0.0, 1.0, n)
    stacked = []
    for d in demos:
        d = d.normalized()
        stacked.append(np.column_stack([np.interp(t, d.times, d.positions[:, j]) for j in range(d.dim)]))
    return np.mean(stacked, axis=0)


def _generators(bundle: DemoBundle, methods: Sequence[str], cfg: LfeKmpConfig) -> dict[str, Callable]:
    gens = {}
    for m in methods:
        if m == "kmp":
            model = via_kmp_learn(bundle.demos, cfg)
            gens[m] = lambda frames, times, model=model: via_kmp_generalize(model, frames, times)
        elif m == "tpgmm":
            model = tpgmm_learn(bundle.demos, bundle.frames, K=cfg.K, seed=cfg.seed, reg_factor=cfg.reg_factor)
            gens[m] = lambda frames, times, model=model: tpgmm_generalize(model, frames, times)
        elif m == "lfekmp":
            model = lfekmp_learn(bundle.demos, bundle.frames, cfg)
            gens[m] = lambda frames, times, model=model: lfekmp_generalize(model, frames, times)
        else:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    return gens


def run_benchmark(bundle: DemoBundle, methods: Sequence[str] = METHODS, lfe_config: LfeKmpConfig | None = None,
                  config: BenchmarkConfig | None = None) -> BenchmarkResult:
    cfg = lfe_config or LfeKmpConfig()
    config = config or BenchmarkConfig()
    if len(bundle.reference_frames) != 2:
        raise ValueError("the benchmark needs start and end reference frames")
    methods = list(dict.fromkeys(methods))
    gens = _generators(bundle, methods, cfg)
    diameter = workspace_diameter(bundle.demos)
    reference = mean_demo(bundle.demos, config.n_points)
    times = np.linspace(0.0, 1.0, config.n_points)
    tasks = [perturb_task(bundle.reference_frames, config.seed + i, config.translation_scale,
                          config.rotation_scale, diameter) for i in range(config.n_trials)]

    summaries, trajectories = {}, {}
    for m in methods:
        reports, trajs = [], []
        for frames in tasks:
            executed = gens[m](frames, times).executed
            reports.append(evaluate(executed, reference, frames))
            trajs.append(executed)
        summaries[m] = MethodSummary(
            c_s=float(np.mean([r.c_s for r in reports])),
            kappa_s=float(np.mean([r.kappa_s for r in reports])),
            endpoint_error=float(np.mean([r.endpoint_error for r in reports])),
            trials=reports,
        )
        trajectories[m] = trajs
    return BenchmarkResult(config, diameter, summaries, tasks, trajectories, reference)


def overlay_svg(result: BenchmarkResult, demos: Sequence[PoseTrajectory], trial: int = 0) -> str:
    """Demos in grey plus every method's trajectory for one trial."""
    series = [Series("demonstrations" if i == 0 else "", d.positions, "#999999", 1.0, 0.6, False)
              for i, d in enumerate(demos)]
    for i, (m, trajs) in enumerate(result.trajectories.items()):
        series.append(Series(LABELS.get(m, m), trajs[trial].positions, PALETTE[i % len(PALETTE)]))
    frames = result.tasks[trial]
    anchors = np.array([f.b for f in frames])
    series.append(Series("new start/end", anchors, "#000000", 0.5, 0.4, True))
    return render(series, title=f"trial {trial} (+ start, * end)")
