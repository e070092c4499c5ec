"""End-to-end acceptance checks; each prints one PASS/FAIL line per criterion."""

import json
import time
import warnings
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from keyprim.benchmark import BenchmarkConfig, run_benchmark
from keyprim.bridge import InteractionStats, endpose_estimate, learn_interaction_stats, normalize_interaction_keypoint
from keyprim.bridge import run_scenario, scenario_from_dict
from keyprim.cli import main
from keyprim.data import endpoint_frames, load_handwriting, read_handwriting_csv, synthetic_pour_dataset
from keyprim.gaussian import GaussianState, gaussian_product
from keyprim.gmm import CovarianceCollapseWarning, ReferenceTrajectory, gmm_fit
from keyprim.kmp import KernelParams, kmp_fit, kmp_predict
from keyprim.lfekmp import enhance_local_features, lfekmp_generalize, lfekmp_learn
from keyprim.manifold import (
    TaskFrame,
    frame_compose,
    parallel_transport,
    quat_angle,
    quat_exp,
    quat_log,
    trajectory_apply,
)
from keyprim.metrics import smoothness, topological_similarity

from conftest import ACCEPTANCE_LINES, random_quaternion, random_rotation, random_spd
from helpers import brute_force_endpose, random_pour_scenario

RES = resources.files("keyprim.resources")
GSHAPE = RES / "gshape.csv"

# target shape-preservation figures (c_s in percent, kappa_s)
TARGET_CS = {"lfekmp": 92.76, "tpgmm": 84.89, "kmp": 64.95}
TARGET_KAPPA = {"lfekmp": 0.0663, "tpgmm": 0.0911, "kmp": 0.4127}
MAGNITUDE_TOL = 0.15


def report(criterion, ok, detail):
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CovarianceCollapseWarning)
        yield


@pytest.fixture(scope="module")
def benchmark():
    bundle = load_handwriting(GSHAPE)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CovarianceCollapseWarning)
        result = run_benchmark(bundle)
    return bundle, result, time.perf_counter() - t0


def test_criterion_01_shape_benchmark(benchmark):
    bundle, result, elapsed = benchmark
    cs = {m: s.c_s for m, s in result.methods.items()}
    kappa = {m: s.kappa_s for m, s in result.methods.items()}
    checks = {
        "time<60s": elapsed < 60.0,
        "6 demos": len(bundle.demos) == 6,
        "c_s order": cs["lfekmp"] > cs["tpgmm"] > cs["kmp"],
        "kappa order": kappa["lfekmp"] < kappa["tpgmm"] < kappa["kmp"],
        "LFE c_s>=85": cs["lfekmp"] >= 85.0,
        "gain>=20": cs["lfekmp"] - cs["kmp"] >= 20.0,
    }
    for m, ref in TARGET_CS.items():
        checks[f"c_s {m} +-15%"] = abs(cs[m] - ref) <= MAGNITUDE_TOL * ref
    ok = all(checks.values())
    kappa_ratio = {m: kappa[m] / kappa["lfekmp"] for m in kappa}
    target_ratio = {m: TARGET_KAPPA[m] / TARGET_KAPPA["lfekmp"] for m in kappa}
    report(1, ok, f"{elapsed:.1f}s c_s " + " ".join(f"{m}={cs[m]:.2f}" for m in TARGET_CS)
           + " kappa " + " ".join(f"{m}={kappa[m]:.1f}" for m in TARGET_CS)
           + " kappa/LFE ours " + " ".join(f"{m}={kappa_ratio[m]:.2f}" for m in ("tpgmm", "kmp"))
           + " target " + " ".join(f"{m}={target_ratio[m]:.2f}" for m in ("tpgmm", "kmp"))
           + ("" if ok else f" failed={[k for k, v in checks.items() if not v]}"))
    assert ok, checks


def test_criterion_02_endpoint_convergence():
    bundle = load_handwriting(GSHAPE)
    result = run_benchmark(bundle, ("tpgmm", "lfekmp"), config=BenchmarkConfig(n_trials=20))
    bound = 0.01 * result.diameter
    lfe = np.array([r.endpoint_error for r in result.methods["lfekmp"].trials])
    tp = np.array([r.endpoint_error for r in result.methods["tpgmm"].trials])
    wins = int(np.sum(lfe < tp))
    ok = bool(np.all(lfe <= bound)) and wins >= 18
    report(2, ok, f"max LFE endpoint error {lfe.max():.2e} (bound {bound:.2e}), LFE beats TP-GMM on {wins}/20")
    assert ok


def _random_reference(rng):
    n = int(rng.integers(20, 120))
    dim = int(rng.integers(1, 4))
    t = np.linspace(0, 1, n)
    freq = rng.uniform(0.5, 4, dim)
    means = np.sin(np.pi * freq * t[:, None] + rng.uniform(0, np.pi, dim)) * rng.uniform(0.2, 3, dim)
    covs = np.array([random_spd(rng, dim, 1e-3, 0.2) for _ in range(n)])
    return ReferenceTrajectory(t, means, covs)


def test_criterion_03_desired_point_insertion(rng):
    worst = 0.0
    for i in range(100):
        ref = _random_reference(rng)
        at = "start" if i % 2 == 0 else "end"
        anchor = GaussianState(rng.uniform(-5, 5, ref.dim), np.eye(ref.dim))
        extended = enhance_local_features(ref, anchor, int(rng.integers(1, 6)), 0.1, 1e-10, at)
        kernel = KernelParams(float(rng.choice([0.02, 0.05, 0.1])))
        pred = kmp_predict(kmp_fit(extended, kernel), [0.0 if at == "start" else 1.0])
        worst = max(worst, float(np.linalg.norm(pred.means[0] - anchor.mean)))
    ok = worst <= 1e-3
    report(3, ok, f"max |mean - anchor| = {worst:.2e} over 100 references (tol 1e-3)")
    assert ok


def test_criterion_04_em_monotone():
    worst = rejected = 0.0
    for seed in range(100):
        r = np.random.default_rng(1000 + seed)
        n, D, K = int(r.integers(50, 300)), int(r.integers(1, 4)), int(r.integers(1, 7))
        t = np.sort(r.uniform(0, 1, n))
        X = np.column_stack([t, r.standard_normal((n, D)) + np.cos(5 * t)[:, None] * r.uniform(0, 3, D)])
        model = gmm_fit(X, K=K, seed=seed)
        lls = model.log_likelihoods
        if len(lls) > 1:
            worst = min(worst, float(np.min(np.diff(lls))))
        # a discarded final step must be rounding-sized, not a genuine decrease
        rejected = max(rejected, model.rejected_drop / abs(lls[-1]))
    ok = worst >= -1e-9 and rejected <= 1e-10
    report(4, ok, f"largest log-likelihood decrease {max(0.0, -worst):.2e} over 100 fits (slack 1e-9), "
                  f"largest discarded step {rejected:.1e} relative")
    assert ok


def test_criterion_05_gaussian_product(rng):
    err_closed = err_assoc = 0.0
    for _ in range(500):
        dim = int(rng.integers(2, 7))
        gs = [GaussianState(rng.uniform(-3, 3, dim), random_spd(rng, dim)) for _ in range(3)]
        out = gaussian_product(gs)
        prec = sum(np.linalg.inv(g.cov) for g in gs)
        cov = np.linalg.inv(prec)
        mean = cov @ sum(np.linalg.inv(g.cov) @ g.mean for g in gs)
        err_closed = max(err_closed, np.max(np.abs(out.mean - mean)), np.max(np.abs(out.cov - cov)))
        a = gaussian_product([gaussian_product(gs[:2]), gs[2]])
        b = gaussian_product([gs[0], gaussian_product(gs[1:])])
        err_assoc = max(err_assoc, np.max(np.abs(a.mean - b.mean)), np.max(np.abs(a.cov - b.cov)))
    ok = err_closed <= 1e-10 and err_assoc <= 1e-10
    report(5, ok, f"closed-form error {err_closed:.1e}, associativity error {err_assoc:.1e} (tol 1e-10)")
    assert ok


def test_criterion_06_manifold(rng):
    rt = 0.0
    for _ in range(1000):
        base, q = random_quaternion(rng), random_quaternion(rng)
        rt = max(rt, np.max(np.abs(quat_exp(base, quat_log(base, q)) - q)))
        v = rng.standard_normal(3)
        v *= rng.uniform(0, np.pi - 1e-3) / np.linalg.norm(v)
        rt = max(rt, np.max(np.abs(quat_log(base, quat_exp(base, v)) - v)))
    spectrum_err = 0.0
    min_eig = np.inf
    for _ in range(500):
        M = random_spd(rng, 3, 1e-6, 3.0)
        out = parallel_transport(random_quaternion(rng), random_quaternion(rng), M)
        ev = np.linalg.eigvalsh(out)
        spectrum_err = max(spectrum_err, np.max(np.abs(ev - np.linalg.eigvalsh(M))), np.max(np.abs(out - out.T)))
        min_eig = min(min_eig, ev[0])

    equi = 0.0
    bundle = load_handwriting(GSHAPE)
    model2 = lfekmp_learn(bundle.demos, bundle.frames)
    demos3, _ = synthetic_pour_dataset()
    frames3 = [endpoint_frames(d) for d in demos3]
    model3 = lfekmp_learn(demos3, frames3)
    for model, frames, dim in ((model2, bundle.reference_frames, 2), (model3, frames3[0], 3)):
        for _ in range(3):
            motion = TaskFrame(random_rotation(rng, dim), rng.standard_normal(dim))
            base = lfekmp_generalize(model, frames)
            moved = lfekmp_generalize(model, [frame_compose(motion, f) for f in frames])
            expect = trajectory_apply(motion, base.executed)
            equi = max(equi, np.max(np.abs(moved.positions - expect.positions)))
            if dim == 3:
                equi = max(equi, max(1 - abs(a @ b) for a, b in zip(moved.executed.orientations,
                                                                    expect.orientations)))
    ok = rt <= 1e-12 and spectrum_err <= 1e-10 and min_eig >= -1e-10 and equi <= 1e-9
    report(6, ok, f"Log/Exp round trip {rt:.1e} (1e-12), transport spectrum {spectrum_err:.1e} (1e-10), "
                  f"min eig {min_eig:.1e}, equivariance {equi:.1e} (1e-9)")
    assert ok


def test_criterion_07_bridge(rng):
    geo = 0.0
    for _ in range(500):
        O, A, B, C = rng.uniform(-2, 2, (4, 3))
        D = normalize_interaction_keypoint(O, A, B, C)
        oa, ob, oc, od = ((P - O)[:2] for P in (A, B, C, D))

        def ang(u, v):
            return np.arctan2(u[0] * v[1] - u[1] * v[0], u @ v)

        geo = max(geo, abs(np.angle(np.exp(1j * (ang(oc, od) - ang(oa, ob))))),
                  abs(np.linalg.norm(od) / np.linalg.norm(oc) - np.linalg.norm(ob) / np.linalg.norm(oa)))

    _, finals = synthetic_pour_dataset()
    stats = learn_interaction_stats(finals)
    step = np.deg2rad(2.0)
    matches = 0
    for seed in range(50):
        master, _, start = random_pour_scenario(seed, stats)
        out = endpose_estimate(master, stats, start, seed=seed, angle_step=step, w_rot=0.1)
        idx, best, dists = brute_force_endpose(master, stats, start, 0.1, step, out.interaction_point)
        tie = np.sum(dists <= best + 1e-12) > 1
        if out.candidate_index == idx or (tie and dists[out.candidate_index] <= best + 1e-12):
            matches += 1

    master, _, start = random_pour_scenario(0, stats)
    flat = InteractionStats(stats.pos_mean, stats.pos_var, 0.0, 0.0, stats.reference_master)
    exact = bool(np.array_equal(endpose_estimate(master, flat, start).z_axis, master.axis))
    ok = geo <= 1e-10 and matches == 50 and exact
    report(7, ok, f"angle/ratio error {geo:.1e} (1e-10), brute-force agreement {matches}/50, "
                  f"alpha=0 exact {exact}")
    assert ok


def test_criterion_08_metrics_exact():
    t = np.linspace(0, 1, 100)
    curve = np.column_stack([np.cos(3 * t) + t, np.sin(2 * t)])
    line = np.column_stack([2 * t - 1, 0.5 - t])
    grid = np.arange(40.0)
    values = {
        "c_s(xi,xi)": topological_similarity(curve, curve),
        "c_s(xi,rev)": topological_similarity(line[::-1], line),
        "kappa(line)": smoothness(np.column_stack([grid, 3 * grid])),
        "kappa(t^2)": smoothness(grid[:, None] ** 2),
    }
    expect = {"c_s(xi,xi)": 100.0, "c_s(xi,rev)": -100.0, "kappa(line)": 0.0, "kappa(t^2)": 2.0}
    ok = values == expect
    report(8, ok, " ".join(f"{k}={v!r}" for k, v in values.items()))
    assert ok


def test_criterion_09_pouring_end_to_end():
    scenario = scenario_from_dict(json.loads((RES / "pour_scenario.json").read_text()))
    target = run_scenario(scenario).pose
    demos = read_handwriting_csv((RES / "pour_demos.csv").read_text())
    model = lfekmp_learn(demos, [endpoint_frames(d) for d in demos])
    frames = [TaskFrame.from_pose(scenario.start), TaskFrame.from_pose(target)]
    final = lfekmp_generalize(model, frames).executed
    pos_err = float(np.linalg.norm(final.positions[-1] - target.position))
    ang_err = float(np.degrees(quat_angle(final.orientations[-1], target.orientation)))
    ok = pos_err <= 0.01 and ang_err <= 2.0
    report(9, ok, f"terminal error {pos_err * 100:.2e} cm, {ang_err:.2e} deg (tol 1 cm, 2 deg)")
    assert ok


def test_criterion_10_reproducible_outputs(tmp_path):
    frames = tmp_path / "frames.json"
    bundle = load_handwriting(GSHAPE)
    frames.write_text(json.dumps([{"A": f.A.tolist(), "b": (f.b + 0.2).tolist()} for f in bundle.reference_frames]))
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        argv = [
            ["benchmark", "--seed", "4", "--out", str(out / "bench")],
            ["endpose", str(RES / "pour_scenario.json"), "--seed", "4", "--out", str(out / "pose")],
        ]
        for method in ("lfekmp", "kmp", "tpgmm"):
            argv.append(["learn", "--method", method, "--seed", "4", "--out", str(out / method)])
            argv.append(["generalize", str(out / method / "model.json"), "--frames", str(frames),
                         "--out", str(out / method)])
        codes = [main(a) for a in argv]
        assert codes == [0] * len(argv)
        runs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    same = runs[0] == runs[1]
    report(10, same, f"{len(runs[0])} output files byte-identical across two runs: {same}")
    assert same
