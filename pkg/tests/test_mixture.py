import math
import warnings

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from scipy.special import erf
from sklearn.base import clone
from sklearn.mixture import GaussianMixture

from uavsim.channel import Region
from uavsim.mixture import (GaussianMixtureEM, MixtureModel, WeightedGaussianMixture,
                            WeightedSamples, em_fit, mixture_eval, region_integral, weighted_em,
                            wem_fit)


def blobs(seed, K=None, n=200):
    rng = np.random.default_rng(seed)
    K = K or int(rng.integers(2, 4))
    mu = rng.uniform(-300, 300, (K, 2))
    X = np.vstack([m + rng.normal(0, rng.uniform(10, 40), (n, 2)) for m in mu])
    return X, mu, rng


def paired_error(a_means, b_means):
    r, c = linear_sum_assignment(((a_means[:, None] - b_means[None]) ** 2).sum(-1))
    return r, c


def test_box_integral_matches_erf_closed_form():
    sx, sy = 30.0, 55.0
    model = MixtureModel("probabilistic", [1.0], [[12.0, -7.0]], [np.diag([sx ** 2, sy ** 2])])
    box = Region.from_bounds(-40, -100, 80, 60, 1.0)

    def cdf(v, m, s):
        return 0.5 * (1 + erf((v - m) / (s * math.sqrt(2))))

    exact = (cdf(80, 12, sx) - cdf(-40, 12, sx)) * (cdf(60, -7, sy) - cdf(-100, -7, sy))
    assert region_integral(model, box) == pytest.approx(exact, rel=1e-4)


def test_density_function_eval_is_sum_of_bells():
    cov = np.array([[400.0, 100.0], [100.0, 900.0]])
    model = MixtureModel("density_function", [3.0, 0.5], [[0, 0], [50, 20]], [cov, cov * 2])
    x = np.array([10.0, -5.0])
    expected = 0.0
    for a, m, c in zip([3.0, 0.5], [[0, 0], [50, 20]], [cov, cov * 2]):
        d = x - m
        expected += a * math.exp(-0.5 * d @ np.linalg.solve(c, d))
    assert mixture_eval(model, x) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_em_log_likelihood_nondecreasing(seed):
    X, _, _ = blobs(seed)
    est = GaussianMixtureEM(3, random_state=seed, tol=1e-10).fit(X)
    h = est.log_likelihood_history_
    assert np.all(np.diff(h) >= -1e-9 * np.abs(h[:-1]))


@pytest.mark.parametrize("seed", range(10))
def test_wem_log_likelihood_nondecreasing(seed):
    X, _, rng = blobs(seed)
    w = rng.gamma(2.0, 1.0, len(X))
    est = WeightedGaussianMixture(3, tol=1e-10).fit(X, sample_weight=w)
    h = est.log_likelihood_history_
    assert np.all(np.diff(h) >= -1e-9 * np.abs(h[:-1]))


@pytest.mark.parametrize("seed", range(5))
def test_constant_weights_reproduce_plain_em(seed):
    """Equal weights make weighted EM an ordinary EM; compare with sklearn."""
    X, _, rng = blobs(seed)
    K = len(X) // 200
    w = np.full(len(X), rng.uniform(0.1, 10))
    m0 = X[rng.choice(len(X), K, replace=False)]
    init = (np.full(K, 1 / K), m0, np.tile(np.eye(2) * 900, (K, 1, 1)))
    (pi, mu, cov), _, _ = weighted_em(X, w, init, tol=-np.inf, max_iter=100)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ref = GaussianMixture(K, tol=0, reg_covar=0, max_iter=100, weights_init=init[0],
                              means_init=m0, precisions_init=np.linalg.inv(init[2])).fit(X)
    r, c = paired_error(mu, ref.means_)
    assert np.abs(mu[r] - ref.means_[c]).max() < 1e-6
    assert np.abs(pi[r] - ref.weights_[c]).max() < 1e-6
    assert np.abs(cov[r] - ref.covariances_[c]).max() / np.abs(ref.covariances_).max() < 1e-6


def test_two_component_recovery():
    rng = np.random.default_rng(42)
    true = np.array([[-150.0, 40.0], [200.0, -60.0]])
    X = np.vstack([true[0] + rng.normal(0, 30, (2500, 2)), true[1] + rng.normal(0, 45, (2500, 2))])
    for means in (GaussianMixtureEM(2, random_state=0).fit(X).means_,
                  WeightedGaussianMixture(2).fit(X, sample_weight=np.ones(len(X))).means_):
        r, c = paired_error(means, true)
        assert np.linalg.norm(means[r] - true[c], axis=1).max() < 5.0


def test_weighted_fit_follows_the_weights():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 20, (500, 2)), rng.normal(300, 20, (500, 2))])
    w = np.r_[np.full(500, 9.0), np.full(500, 1.0)]
    est = WeightedGaussianMixture(2).fit(X, sample_weight=w)
    heavy = est.means_[np.argmin(np.linalg.norm(est.means_, axis=1))]
    k = int(np.argmin(np.linalg.norm(est.means_ - heavy, axis=1)))
    assert est.mixing_weights_[k] == pytest.approx(0.9, abs=0.02)


def test_wem_surface_integrates_to_total_weight():
    rng = np.random.default_rng(2)
    X = rng.normal(500, 60, (800, 2))
    w = rng.uniform(1, 3, 800)
    region = Region.from_bounds(0, 0, 1000, 1000, 10)
    model = wem_fit(WeightedSamples(X, w), 2, region=region)
    assert region_integral(model, region) == pytest.approx(w.sum(), rel=1e-9)


def test_wem_requires_weights_and_enough_points():
    with pytest.raises(ValueError):
        wem_fit(WeightedSamples(np.zeros((3, 2)) + np.arange(3)[:, None]), 1)
    with pytest.raises(ValueError):
        WeightedGaussianMixture(3).fit(np.array([[0.0, 0], [1, 1]]), sample_weight=[1, 1])


def test_em_fit_returns_probabilistic_model():
    X, _, _ = blobs(3)
    m = em_fit(WeightedSamples(X), 2, seed=0)
    assert m.kind == "probabilistic"
    assert m.weights.sum() == pytest.approx(1.0)


def test_estimators_follow_sklearn_conventions():
    est = GaussianMixtureEM(4, tol=1e-3, random_state=7)
    assert est.get_params()["n_components"] == 4
    assert clone(est).get_params() == est.get_params()
    est.set_params(n_components=2)
    assert est.n_components == 2
    assert "region" in WeightedGaussianMixture().get_params()


def test_model_validation():
    with pytest.raises(ValueError):
        MixtureModel("probabilistic", [0.5, 0.4], [[0, 0], [1, 1]], [np.eye(2)] * 2)
    with pytest.raises(ValueError):
        MixtureModel("density_function", [1.0], [[0, 0]], [[[1.0, 0], [0, -1.0]]])
    with pytest.raises(ValueError):
        MixtureModel("other", [1.0], [[0, 0]], [np.eye(2)])


def test_identical_samples_rejected():
    with pytest.raises(ValueError):
        GaussianMixtureEM(1).fit(np.ones((10, 2)))


def test_predict_proba_rows_sum_to_one():
    X, _, _ = blobs(4)
    est = GaussianMixtureEM(2, random_state=0).fit(X)
    assert np.allclose(est.predict_proba(X[:20]).sum(axis=1), 1.0)
    assert est.predict(X[:5]).shape == (5,)
