"""Keypoint-constrained task parameters and local-feature-enhanced KMP."""

from .benchmark import BenchmarkConfig, run_benchmark
from .bridge import InteractionStats, KeypointSet, TerminalPose, endpose_estimate, learn_interaction_stats
from .data import DemoBundle, load_handwriting, make_bundle, perturb_task
from .gaussian import GaussianState, gaussian_affine, gaussian_product
from .gmm import GmmModel, ReferenceTrajectory, gmm_fit, gmr_regress
from .kmp import KernelParams, KmpModel, kmp_fit, kmp_predict, kmp_tune
from .lfekmp import LfeKmpConfig, LfeKmpModel, lfekmp_generalize, lfekmp_learn
from .manifold import Pose, PoseTrajectory, TaskFrame
from .metrics import MetricReport, smoothness, topological_similarity
from .tpgmm import TpGmmModel, tpgmm_generalize, tpgmm_learn

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig", "DemoBundle", "GaussianState", "GmmModel", "InteractionStats", "KernelParams",
    "KeypointSet", "KmpModel", "LfeKmpConfig", "LfeKmpModel", "MetricReport", "Pose", "PoseTrajectory",
    "ReferenceTrajectory", "TaskFrame", "TerminalPose", "TpGmmModel", "endpose_estimate", "gaussian_affine",
    "gaussian_product", "gmm_fit", "gmr_regress", "kmp_fit", "kmp_predict", "kmp_tune", "learn_interaction_stats",
    "lfekmp_generalize", "lfekmp_learn", "load_handwriting", "make_bundle", "perturb_task", "run_benchmark",
    "smoothness", "tpgmm_generalize", "tpgmm_learn", "topological_similarity",
]
