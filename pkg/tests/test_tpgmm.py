import json
import warnings

import numpy as np
import pytest

from keyprim.benchmark import mean_demo
from keyprim.data import make_bundle, synthetic_gshape_demos
from keyprim.gmm import CovarianceCollapseWarning, gmm_fit, gmr_regress
from keyprim.manifold import TaskFrame, frame_compose, trajectory_apply
from keyprim.tpgmm import TpGmmModel, tpgmm_generalize, tpgmm_learn

from conftest import random_rotation
from helpers import arclength_rmse


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CovarianceCollapseWarning)
        yield


@pytest.fixture(scope="module")
def gshape():
    bundle = make_bundle(synthetic_gshape_demos())
    return bundle, tpgmm_learn(bundle.demos, bundle.frames)


def test_single_identity_frame_equals_plain_gmm(gshape):
    bundle, _ = gshape
    model = tpgmm_learn(bundle.demos, [TaskFrame.identity(2)], K=4, seed=3)
    data = np.vstack([np.column_stack([d.times, d.positions]) for d in bundle.demos])
    plain = gmm_fit(data, K=4, seed=3, reg_factor=1e-4)
    np.testing.assert_allclose(model.priors, plain.priors, atol=1e-10)
    np.testing.assert_allclose(model.means[0], plain.means, atol=1e-10)
    np.testing.assert_allclose(model.covs[0], plain.covs, atol=1e-10)

    times = np.linspace(0, 1, 60)
    g = tpgmm_generalize(model, [TaskFrame.identity(2)], times)
    np.testing.assert_allclose(g.positions, gmr_regress(plain, times).means, atol=1e-10)


def test_priors_shared_and_normalised(gshape):
    _, model = gshape
    assert model.P == 2
    assert abs(model.priors.sum() - 1) <= 1e-12
    for covs in model.covs:
        for c in covs:
            assert np.linalg.eigvalsh(c)[0] > 0


def test_log_likelihood_monotone(gshape):
    _, model = gshape
    assert np.all(np.diff(model.log_likelihoods) >= -1e-9)


def test_reproduces_mean_demo(gshape):
    bundle, model = gshape
    g = tpgmm_generalize(model, bundle.reference_frames)
    assert arclength_rmse(g.positions, mean_demo(bundle.demos, 200)) <= 0.05


def test_equivariance(gshape):
    bundle, model = gshape
    rng = np.random.default_rng(1)
    motion = TaskFrame(random_rotation(rng, 2), rng.standard_normal(2))
    base = tpgmm_generalize(model, bundle.reference_frames)
    moved = tpgmm_generalize(model, [frame_compose(motion, f) for f in bundle.reference_frames])
    assert np.max(np.abs(moved.positions - trajectory_apply(motion, base.executed).positions)) <= 1e-9


def test_deterministic_and_serialisable(gshape):
    bundle, model = gshape
    again = tpgmm_learn(bundle.demos, bundle.frames)
    assert json.dumps(again.to_dict()) == json.dumps(model.to_dict())
    back = TpGmmModel.from_dict(json.loads(json.dumps(model.to_dict())))
    np.testing.assert_array_equal(tpgmm_generalize(back, bundle.reference_frames).positions,
                                  tpgmm_generalize(model, bundle.reference_frames).positions)


def test_wrong_kind_rejected(gshape):
    _, model = gshape
    with pytest.raises(ValueError):
        TpGmmModel.from_dict(model.to_dict() | {"kind": "gmm"})


def test_frame_count_mismatch(gshape):
    _, model = gshape
    with pytest.raises(ValueError):
        tpgmm_generalize(model, [TaskFrame.identity(2)])
