"""
Command-line entry point.

    keyprim learn DEMOS [--method lfekmp|kmp|tpgmm]
    keyprim generalize MODEL [--frames FRAMES.json] [--n-points N]
    keyprim endpose SCENARIO.json
    keyprim extract KEYPOINTS.json
    keyprim benchmark [DEMOS] [--method all|kmp|tpgmm|lfekmp]
    keyprim plot TRAJ.csv [TRAJ.csv ...]

Every command accepts ``--config`` (JSON run configuration), ``--seed`` and
``--out`` (output directory; ``KEYPRIM_OUT`` overrides the default ``.``).
Failures print a JSON object to stderr and exit with a code from
:data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import METHODS, BenchmarkConfig, overlay_svg, run_benchmark
from .bridge import run_scenario, scenario_from_dict
from .data import (
    DataFormatError,
    extract_demo_trajectory,
    load_handwriting,
    load_keypoint_sequence,
    read_handwriting_csv,
    write_handwriting_csv,
)
from .lfekmp import (
    LfeKmpConfig,
    LfeKmpModel,
    ViaPointKmpModel,
    dumps_model,
    lfekmp_generalize,
    lfekmp_learn,
    model_from_dict,
    via_kmp_generalize,
    via_kmp_learn,
)
from .manifold import Pose, TaskFrame
from .svg import PALETTE, Series, render
from .tpgmm import TpGmmModel, tpgmm_generalize, tpgmm_learn

OUT_ENV = "KEYPRIM_OUT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_METHOD = 5
EXIT_NUMERIC = 6
EXIT_CODES = {
    EXIT_OK: "success",
    EXIT_USAGE: "bad command line",
    EXIT_CONFIG: "invalid run configuration",
    EXIT_INPUT: "missing or malformed input file",
    EXIT_METHOD: "unknown method",
    EXIT_NUMERIC: "numerical failure",
}


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    K: int = 5
    kernel_grid: tuple = (0.01, 0.02, 0.03, 0.05, 0.08, 0.12)
    lam_mean: float = 1.0
    lam_cov: float = 60.0
    eps: float = 1e-8
    R: int = 5
    window: float = 0.1
    P: int = 2
    anchors: str = "own"
    reg_factor: float = 1e-4
    angle_step: float = 2.0  # degrees
    w_rot: float = 0.1
    n_pos_samples: int = 1
    n_trials: int = 10
    translation_scale: float = 0.3
    rotation_scale: float = 0.3
    n_points: int = 200
    out: str = "."

    def __post_init__(self):
        checks = [
            (isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer"),
            (isinstance(self.K, int) and 1 <= self.K <= 50, "K must be an integer in [1, 50]"),
            (len(self.kernel_grid) > 0 and all(g > 0 for g in self.kernel_grid), "kernel_grid needs positive lengthscales"),
            (self.lam_mean > 0 and self.lam_cov > 0, "lam_mean and lam_cov must be positive"),
            (0 < self.eps < 1e-2, "eps must lie in (0, 1e-2)"),
            (isinstance(self.R, int) and 0 <= self.R <= 100, "R must be an integer in [0, 100]"),
            (0 < self.window <= 0.2, "window must lie in (0, 0.2]"),
            (self.P in (1, 2), "P must be 1 or 2"),
            (self.anchors in ("own", "all"), "anchors must be 'own' or 'all'"),
            (0 < self.reg_factor < 1, "reg_factor must lie in (0, 1)"),
            (0 < self.angle_step <= 90, "angle_step must lie in (0, 90] degrees"),
            (self.w_rot >= 0, "w_rot must be non-negative"),
            (isinstance(self.n_pos_samples, int) and self.n_pos_samples >= 1, "n_pos_samples must be >= 1"),
            (isinstance(self.n_trials, int) and self.n_trials >= 1, "n_trials must be >= 1"),
            (self.translation_scale >= 0 and self.rotation_scale >= 0, "perturbation scales must be non-negative"),
            (isinstance(self.n_points, int) and self.n_points >= 3, "n_points must be an integer >= 3"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        object.__setattr__(self, "kernel_grid", tuple(float(g) for g in self.kernel_grid))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**d)

    def lfe_config(self) -> LfeKmpConfig:
        return LfeKmpConfig(K=self.K, seed=self.seed, lam_mean=self.lam_mean, lam_cov=self.lam_cov, eps=self.eps,
                            R=self.R, window=self.window, kernel_grid=self.kernel_grid, anchors=self.anchors,
                            reg_factor=self.reg_factor)

    def benchmark_config(self) -> BenchmarkConfig:
        return BenchmarkConfig(n_trials=self.n_trials, seed=self.seed, translation_scale=self.translation_scale,
                               rotation_scale=self.rotation_scale, n_points=self.n_points)


def load_config(path: str | None, seed: int | None, out: str | None) -> RunConfig:
    raw: dict = {}
    if path:
        raw = _read_json(path)
        if not isinstance(raw, dict):
            raise CliError(EXIT_CONFIG, "config", "configuration file must hold a JSON object")
    if os.environ.get(OUT_ENV):
        raw["out"] = os.environ[OUT_ENV]
    if out is not None:
        raw["out"] = out
    if seed is not None:
        raw["seed"] = seed
    try:
        return RunConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc)) from None


# ---------------------------------------------------------------- IO helpers

def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, "input", f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_INPUT, "input", f"{path}: line {exc.lineno}: {exc.msg}") from None


def write_atomic(path: Path, text: str) -> Path:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _resource(name: str) -> Path:
    return Path(str(resources.files("keyprim") / "resources" / name))


def _demos_path(arg: str | None) -> Path:
    return Path(arg) if arg else _resource("gshape.csv")


def _load_bundle(path, P: int):
    try:
        bundle = load_handwriting(path)
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, "input", f"{path}: no such file") from None
    except (DataFormatError, KeyError) as exc:
        raise CliError(EXIT_INPUT, "input", f"{path}: {exc}") from None
    if P == 1:
        bundle.frames = [fs[:1] for fs in bundle.frames]
        bundle.reference_frames = bundle.reference_frames[:1]
    return bundle


def _frame_from_doc(d: dict) -> TaskFrame:
    if "A" in d:
        return TaskFrame(d["A"], d["b"])
    if "position" in d:
        pos = d["position"]
        return TaskFrame.from_pose(Pose(pos, d.get("orientation")) if len(pos) == 3 else Pose(pos))
    raise ValueError("each frame needs either A and b or position (and orientation)")


def load_frames(path) -> list[TaskFrame]:
    doc = _read_json(path)
    items = doc.get("frames") if isinstance(doc, dict) else doc
    if not isinstance(items, list) or not items:
        raise CliError(EXIT_INPUT, "input", f"{path}: expected a non-empty list of frames")
    try:
        return [_frame_from_doc(d) for d in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_INPUT, "input", f"{path}: {exc}") from None


def _method_name(method: str, allow_all: bool = False) -> str:
    valid = METHODS + (("all",) if allow_all else ())
    if method not in valid:
        raise CliError(EXIT_METHOD, "method", f"unknown method {method!r}; choose from {', '.join(valid)}")
    return method


def load_model(path):
    doc = _read_json(path)
    kind = doc.get("kind") if isinstance(doc, dict) else None
    try:
        if kind == "tpgmm":
            return TpGmmModel.from_dict(doc)
        if kind in ("lfekmp", "kmp"):
            return model_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_INPUT, "input", f"{path}: {exc}") from None
    raise CliError(EXIT_INPUT, "input", f"{path}: unknown model kind {kind!r}")


# ---------------------------------------------------------------- commands

def cmd_learn(args, cfg: RunConfig) -> dict:
    method = _method_name(args.method)
    bundle = _load_bundle(_demos_path(args.demos), cfg.P)
    lfe = cfg.lfe_config()
    if method == "lfekmp":
        text = dumps_model(lfekmp_learn(bundle.demos, bundle.frames, lfe))
    elif method == "kmp":
        text = dumps_model(via_kmp_learn(bundle.demos, lfe))
    else:
        model = tpgmm_learn(bundle.demos, bundle.frames, K=cfg.K, seed=cfg.seed, reg_factor=cfg.reg_factor)
        text = json.dumps(model.to_dict(), indent=1, sort_keys=True)
    path = write_atomic(Path(cfg.out) / "model.json", text + "\n")
    return {"model": str(path), "method": method, "n_demos": len(bundle.demos)}


def cmd_generalize(args, cfg: RunConfig) -> dict:
    model = load_model(args.model)
    if args.frames:
        frames = load_frames(args.frames)
    elif isinstance(model, LfeKmpModel):
        frames = model.demo_frames[0]
    else:
        raise CliError(EXIT_INPUT, "input", "--frames is required for this model kind")
    n = args.n_points or cfg.n_points
    times = np.linspace(0.0, 1.0, n)
    try:
        if isinstance(model, LfeKmpModel):
            gen = lfekmp_generalize(model, frames, times)
        elif isinstance(model, ViaPointKmpModel):
            gen = via_kmp_generalize(model, frames, times)
        else:
            gen = tpgmm_generalize(model, frames, times)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, "input", str(exc)) from None
    out = Path(cfg.out)
    traj = write_atomic(out / "trajectory.csv", write_handwriting_csv([gen.executed], ["generated"]))
    dist = {
        "times": gen.times.tolist(),
        "means": [s.mean.tolist() for s in gen.states],
        "covs": [s.cov.tolist() for s in gen.states],
        "frames": [{"A": f.A.tolist(), "b": f.b.tolist()} for f in frames],
    }
    dist_path = write_atomic(out / "distribution.json", dump_json(dist))
    return {"trajectory": str(traj), "distribution": str(dist_path), "n_points": n}


def cmd_endpose(args, cfg: RunConfig) -> dict:
    doc = _read_json(args.scenario)
    try:
        sc = scenario_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_INPUT, "input", f"{args.scenario}: {exc}") from None
    overrides = {"angle_step_deg": cfg.angle_step, "w_rot": cfg.w_rot, "n_pos_samples": cfg.n_pos_samples}
    if args.config is None:
        overrides = {}  # scenario options stand unless a config is given
    result = run_scenario(sc, seed=args.seed, **overrides)
    path = write_atomic(Path(cfg.out) / "terminal_pose.json", dump_json(result.to_dict()))
    return {"terminal_pose": str(path), **result.to_dict()}


def cmd_extract(args, cfg: RunConfig) -> dict:
    try:
        traj, (master, slave) = extract_demo_trajectory(load_keypoint_sequence(args.keypoints))
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, "input", f"{args.keypoints}: no such file") from None
    except (DataFormatError, ValueError) as exc:
        raise CliError(EXIT_INPUT, "input", f"{args.keypoints}: {exc}") from None
    out = Path(cfg.out)
    csv_path = write_atomic(out / "demo.csv", write_handwriting_csv([traj], [Path(args.keypoints).stem]))
    final = {"master": None if master is None else master.to_dict(), "slave": slave.to_dict()}
    final_path = write_atomic(out / "final_frame.json", dump_json(final))
    return {"demo": str(csv_path), "final_frame": str(final_path), "n_samples": len(traj)}


def cmd_benchmark(args, cfg: RunConfig) -> dict:
    method = _method_name(args.method, allow_all=True)
    methods = list(METHODS) if method == "all" else [method]
    bundle = _load_bundle(_demos_path(args.demos), 2)
    try:
        result = run_benchmark(bundle, methods, cfg.lfe_config(), cfg.benchmark_config())
    except np.linalg.LinAlgError as exc:
        raise CliError(EXIT_NUMERIC, "numeric", str(exc)) from None
    out = Path(cfg.out)
    metrics = write_atomic(out / "metrics.json", dump_json(result.to_dict()))
    svg = write_atomic(out / "overlay.svg", overlay_svg(result, bundle.demos))
    summary = {m: {"c_s": s.c_s, "kappa_s": s.kappa_s, "endpoint_error": s.endpoint_error}
               for m, s in result.methods.items()}
    return {"metrics": str(metrics), "plot": str(svg), "summary": summary}


def cmd_plot(args, cfg: RunConfig) -> dict:
    series = []
    for i, p in enumerate(args.trajectories):
        try:
            demos = read_handwriting_csv(Path(p).read_text())
        except FileNotFoundError:
            raise CliError(EXIT_INPUT, "input", f"{p}: no such file") from None
        except DataFormatError as exc:
            raise CliError(EXIT_INPUT, "input", f"{p}: {exc}") from None
        for j, d in enumerate(demos):
            series.append(Series(Path(p).stem if j == 0 else "", d.positions, PALETTE[i % len(PALETTE)]))
    path = write_atomic(Path(cfg.out) / "plot.svg", render(series, title="+ start, * end"))
    return {"plot": str(path)}


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help=f"output directory (env {OUT_ENV} sets the default)")

    parser = _Parser(prog="keyprim", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", parents=[common], help="learn a model from demonstrations")
    p.add_argument("demos", nargs="?", help="demo CSV or bundle JSON (default: bundled G-shape set)")
    p.add_argument("--method", default="lfekmp")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("generalize", parents=[common], help="reproduce a learnt model under new frames")
    p.add_argument("model")
    p.add_argument("--frames", help="JSON list of frames ({A, b} or {position, orientation})")
    p.add_argument("--n-points", type=int)
    p.set_defaults(func=cmd_generalize)

    p = sub.add_parser("endpose", parents=[common], help="estimate a terminal pose from a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_endpose)

    p = sub.add_parser("extract", parents=[common], help="turn a keypoint stream into a demo CSV")
    p.add_argument("keypoints")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("benchmark", parents=[common], help="shape-preservation comparison")
    p.add_argument("demos", nargs="?", help="demo CSV or bundle JSON (default: bundled G-shape set)")
    p.add_argument("--method", default="all")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("plot", parents=[common], help="draw trajectory CSVs as SVG")
    p.add_argument("trajectories", nargs="+")
    p.set_defaults(func=cmd_plot)
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        report = args.func(args, cfg)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except np.linalg.LinAlgError as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except (DataFormatError, OSError) as exc:
        return _fail(EXIT_INPUT, "input", str(exc))
    sys.stdout.write(json.dumps(report, indent=1, sort_keys=True, default=_json_default) + "\n")
    return EXIT_OK


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


if __name__ == "__main__":
    sys.exit(main())
