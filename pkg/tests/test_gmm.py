import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from keyprim.gmm import (
    CovarianceCollapseWarning,
    GmmModel,
    ReferenceTrajectory,
    _log_joint,
    em_fit,
    gmm_fit,
    gmr,
    gmr_regress,
)

from conftest import random_spd


def random_dataset(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(60, 300))
    D = int(r.integers(1, 4))
    t = np.sort(r.uniform(0, 1, n))
    Y = r.standard_normal((n, D)) + np.sin(4 * t)[:, None] * r.uniform(0, 3, D)
    return np.column_stack([t, Y]), int(r.integers(1, 6))


def test_single_component_equals_sample_moments(rng):
    X = rng.standard_normal((200, 3)) @ rng.standard_normal((3, 3))
    m = gmm_fit(X, K=1)
    np.testing.assert_allclose(m.means[0], X.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(m.covs[0], np.cov(X.T, bias=True), atol=1e-10)
    assert m.priors[0] == 1.0


def test_two_separated_clusters(rng):
    y = np.concatenate([rng.normal(0, 0.1, 100), rng.normal(10, 0.1, 100)])
    t = np.linspace(0, 1, 200)
    m = gmm_fit(np.column_stack([t, y]), K=2, seed=1)
    # oracle: exact moments of each generated cluster
    oracle = sorted([y[:100].mean(), y[100:].mean()])
    got = sorted(m.means[:, 1])
    assert abs(got[0] - 0) < 0.1 and abs(got[1] - 10) < 0.1
    np.testing.assert_allclose(got, oracle, atol=1e-2)


def test_identical_points_rejected():
    with pytest.raises(ValueError):
        gmm_fit(np.ones((50, 2)), K=2)


def test_nan_rejected(rng):
    X = rng.standard_normal((50, 2))
    X[3, 1] = np.nan
    with pytest.raises(ValueError):
        gmm_fit(X, K=1)


def test_collapse_floors_covariance_and_warns():
    # a lone far outlier ends up as a single-point component
    X = np.vstack([np.random.default_rng(0).standard_normal((40, 2)), [[100.0, 100.0]]])
    with pytest.warns(CovarianceCollapseWarning):
        m = gmm_fit(X, K=2, seed=0)
    assert m.collapsed
    for c in m.covs:
        assert np.linalg.eigvalsh(c)[0] > 0


@pytest.mark.parametrize("seed", range(20))
def test_log_likelihood_non_decreasing(seed):
    X, K = random_dataset(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CovarianceCollapseWarning)
        m = gmm_fit(X, K=K, seed=seed)
    assert np.all(np.diff(m.log_likelihoods) >= -1e-9)
    assert m.rejected_drop <= 1e-10 * abs(m.log_likelihoods[-1])


def test_responsibilities_normalised(rng):
    X, K = random_dataset(5)
    res = em_fit([X], K, seed=5)
    logp = _log_joint([X], res.priors, res.means, res.covs)
    resp = np.exp(logp - logp.max(axis=1, keepdims=True))
    resp /= resp.sum(axis=1, keepdims=True)
    assert np.max(np.abs(resp.sum(axis=1) - 1)) <= 1e-12
    assert abs(res.priors.sum() - 1) <= 1e-12


def test_fit_is_bitwise_deterministic():
    X, K = random_dataset(3)
    a, b = gmm_fit(X, K=K, seed=11), gmm_fit(X, K=K, seed=11)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_json_round_trip():
    X, K = random_dataset(4)
    m = gmm_fit(X, K=K)
    back = GmmModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert np.array_equal(back.covs, m.covs) and np.array_equal(back.priors, m.priors)


def test_gmr_zero_coupling_gives_constant_mean():
    cov = np.diag([0.1, 0.4, 0.9])
    mu, _ = gmr(np.array([1.0]), np.array([[0.5, 2.0, -1.0]]), cov[None], np.linspace(0, 1, 7)[:, None])
    assert np.array_equal(mu, np.tile([2.0, -1.0], (7, 1)))


def test_gmr_single_component_matches_conditional_formula(rng):
    for _ in range(50):
        S = random_spd(rng, 4)
        m = rng.standard_normal(4)
        t = rng.uniform(-1, 1, 9)
        mu, sigma = gmr(np.array([1.0]), m[None], S[None], t[:, None])
        # oracle: Schur complement with explicit inverse
        gain = S[1:, :1] @ np.linalg.inv(S[:1, :1])
        expect_mu = m[1:] + (t[:, None] - m[0]) @ gain.T
        expect_cov = S[1:, 1:] - gain @ S[:1, 1:]
        np.testing.assert_allclose(mu, expect_mu, atol=1e-12)
        for s in sigma:
            np.testing.assert_allclose(s, expect_cov, atol=1e-12)


def test_gmr_recovers_noiseless_line():
    t = np.linspace(0, 1, 200)
    X = np.column_stack([t, 3 * t - 1, -2 * t])
    m = gmm_fit(X, K=3, seed=0)
    ref = gmr_regress(m, t[::10])
    np.testing.assert_allclose(ref.means, X[::10, 1:], atol=1e-3)
    assert not ref.extrapolated


def test_gmr_covariances_psd_and_extrapolation_flag():
    X, K = random_dataset(9)
    m = gmm_fit(X, K=K)
    ref = gmr_regress(m, np.linspace(-0.5, 1.5, 40))
    assert ref.extrapolated
    for c in ref.covs:
        assert np.linalg.eigvalsh(c)[0] >= -1e-12
    inside = gmr_regress(m, [m.time_range[0]])
    np.testing.assert_array_equal(ref.means[0], inside.means[0])


def test_reference_trajectory_requires_increasing_times():
    with pytest.raises(ValueError):
        ReferenceTrajectory([0.0, 0.0], np.zeros((2, 1)), np.zeros((2, 1, 1)))


@given(st.integers(0, 10_000))
def test_priors_on_simplex(seed):
    X, K = random_dataset(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CovarianceCollapseWarning)
        m = gmm_fit(X, K=K, seed=seed, max_iter=30)
    assert abs(m.priors.sum() - 1) <= 1e-12 and np.all(m.priors >= 0)
