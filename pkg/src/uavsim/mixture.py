"""Gaussian mixtures for UE locations (EM) and traffic density (weighted EM).

Two model kinds share one representation:

* ``"probabilistic"`` -- a normalized Gaussian mixture, weights sum to one.
* ``"density_function"`` -- a sum of unnormalized Gaussian bells
  ``S(y) = sum_k pi_k exp(-0.5 (y - mu_k)^T Sigma_k^-1 (y - mu_k))`` whose
  coefficients carry an absolute scale (bits/s per m^2 for traffic).

Both fits run the same weighted E/M iteration; plain EM is the special case
of unit weights.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.cluster import kmeans_plusplus
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from uavsim._validation import check_points, check_sample_weight

KINDS = ("probabilistic", "density_function")


@dataclass(frozen=True, eq=False)
class MixtureModel:
    kind: str
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        means = np.asarray(self.means, dtype=float).reshape(-1, 2)
        covs = np.asarray(self.covariances, dtype=float).reshape(-1, 2, 2)
        if not (len(weights) == len(means) == len(covs)) or len(weights) == 0:
            raise ValueError("weights, means and covariances must describe the same components")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("component weights must be finite and nonnegative")
        if self.kind == "probabilistic" and abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilistic weights must sum to 1, got {weights.sum()!r}")
        if self.kind == "density_function" and np.any(weights <= 0):
            raise ValueError("density_function coefficients must be strictly positive")
        if not np.allclose(covs, np.swapaxes(covs, 1, 2)):
            raise ValueError("covariances must be symmetric")
        if np.any(np.linalg.eigvalsh(covs) <= 0):
            raise ValueError("covariances must be positive definite")
        for name, value in (("weights", weights), ("means", means), ("covariances", covs)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_components(self):
        return len(self.weights)

    def scaled(self, factor):
        """Same shape with every weight multiplied by ``factor``."""
        if self.kind != "density_function":
            raise ValueError("only density_function models can be rescaled")
        return MixtureModel(self.kind, self.weights * factor, self.means, self.covariances)

    def translated(self, offset):
        return MixtureModel(self.kind, self.weights, self.means + np.asarray(offset, float),
                            self.covariances)


@dataclass(frozen=True, eq=False)
class WeightedSamples:
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        points = check_points(self.points, name="points")
        object.__setattr__(self, "points", points)
        if self.weights is not None:
            object.__setattr__(self, "weights", check_sample_weight(self.weights, len(points)))

    def __len__(self):
        return len(self.points)

    @property
    def total_weight(self):
        return float(self.weights.sum()) if self.weights is not None else float(len(self))


def _mahalanobis_sq(X, means, covs):
    """Squared Mahalanobis distance of each point to each component, (n, K)."""
    prec = np.linalg.inv(covs)
    diff = X[:, None, :] - means[None, :, :]
    return np.einsum("nki,kij,nkj->nk", diff, prec, diff)


def _log_gaussian(X, means, covs):
    _, logdet = np.linalg.slogdet(covs)
    return -0.5 * (_mahalanobis_sq(X, means, covs) + 2.0 * np.log(2.0 * np.pi) + logdet)


def _regularize(covs, floor):
    """Lift near-singular covariances so no eigenvalue falls below ``floor``."""
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    lam_min = np.linalg.eigvalsh(covs)[:, 0]
    lift = np.where(lam_min < floor, floor - lam_min, 0.0)
    covs = covs + lift[:, None, None] * np.eye(2)
    # eigvalsh roundoff can leave the smallest eigenvalue a hair under the floor
    lam_min = np.linalg.eigvalsh(covs)[:, 0]
    short = lam_min < floor
    if np.any(short):
        covs[short] += (floor - lam_min[short] + floor * 1e-9)[:, None, None] * np.eye(2)
    return covs


def _m_step(X, w, resp, reg_covar, prev=None):
    rw = resp * w[:, None]
    nk = rw.sum(axis=0)
    tiny = 10 * np.finfo(float).eps * max(w.sum(), 1.0)
    dead = nk < tiny
    nk_safe = np.where(dead, 1.0, nk)
    means = (rw.T @ X) / nk_safe[:, None]
    diff = X[:, None, :] - means[None, :, :]
    covs = np.einsum("nk,nki,nkj->kij", rw, diff, diff) / nk_safe[:, None, None]
    if np.any(dead) and prev is not None:
        means[dead] = prev[1][dead]
        covs[dead] = prev[2][dead]
    weights = np.maximum(nk, tiny) / np.maximum(nk, tiny).sum()
    return weights, means, _regularize(covs, reg_covar)


def weighted_em(X, w, init, *, tol=1e-6, max_iter=500, reg_covar=1e-6):
    """Run weighted E/M iterations from ``init = (weights, means, covs)``.

    Returns ``(params, history, converged)``. ``history`` holds the weighted
    log-likelihood ``sum_n w_n ln sum_k pi_k N(y_n | mu_k, Sigma_k)`` of each
    successive parameter set, starting with ``init``.
    """
    weights, means, covs = (np.array(a, dtype=float) for a in init)
    history = []
    converged = False
    for _ in range(max_iter + 1):
        log_prob = np.log(weights)[None, :] + _log_gaussian(X, means, covs)
        log_norm = logsumexp(log_prob, axis=1)
        ll = float(np.dot(w, log_norm))
        if history and ll - history[-1] < tol * abs(history[-1]):
            history.append(ll)
            converged = True
            break
        history.append(ll)
        if len(history) > max_iter:
            break
        resp = np.exp(log_prob - log_norm[:, None])
        weights, means, covs = _m_step(X, w, resp, reg_covar, prev=(weights, means, covs))
    return (weights, means, covs), history, converged


def _init_from_centers(X, w, centers, reg_covar):
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros_like(d2)
    resp[np.arange(len(X)), d2.argmin(axis=1)] = 1.0
    return _m_step(X, w, resp, reg_covar, prev=(None, centers, np.tile(np.eye(2), (len(centers), 1, 1))))


def _pdf_values(model, X):
    m2 = _mahalanobis_sq(X, model.means, model.covariances)
    bells = np.exp(-0.5 * m2)
    if model.kind == "probabilistic":
        norm = 2.0 * np.pi * np.sqrt(np.linalg.det(model.covariances))
        return bells @ (model.weights / norm)
    return bells @ model.weights


class GaussianMixtureEM(DensityMixin, BaseEstimator):
    """Gaussian mixture over 2-D locations fitted by expectation-maximization.

    Parameters
    ----------
    n_components : int
        Number of Gaussian components L.
    tol : float
        Stop when the relative log-likelihood gain falls below ``tol``.
    max_iter : int
        Maximum number of E/M iterations.
    reg_covar : float
        Eigenvalue floor (m^2) enforced on every covariance.
    means_init : array-like of shape (n_components, 2), optional
        Initial centers. When absent, k-means++ seeding from ``random_state``.
    random_state : int, RandomState or None
        Seed for the k-means++ initialization.
    """

    def __init__(self, n_components=1, *, tol=1e-6, max_iter=500, reg_covar=1e-6,
                 means_init=None, random_state=None):
        self.n_components = n_components
        self.tol = tol
        self.max_iter = max_iter
        self.reg_covar = reg_covar
        self.means_init = means_init
        self.random_state = random_state

    def _initial_params(self, X, w):
        if self.means_init is not None:
            centers = np.asarray(self.means_init, dtype=float).reshape(self.n_components, 2)
        else:
            rng = check_random_state(self.random_state)
            seed = rng.randint(np.iinfo(np.int32).max)
            centers, _ = kmeans_plusplus(X, self.n_components, random_state=seed)
        return _init_from_centers(X, w, centers, self.reg_covar)

    def fit(self, X, y=None):
        X = check_points(X)
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.n_components > len(X):
            raise ValueError(f"n_components={self.n_components} exceeds n_samples={len(X)}")
        if np.all(X == X[0]):
            raise ValueError("all samples are identical")
        w = np.ones(len(X))
        params, history, converged = weighted_em(
            X, w, self._initial_params(X, w), tol=self.tol, max_iter=self.max_iter,
            reg_covar=self.reg_covar)
        if not converged:
            warnings.warn("EM did not converge; raise max_iter or tol", ConvergenceWarning)
        self.weights_, self.means_, self.covariances_ = params
        self.log_likelihood_history_ = np.array(history)
        self.lower_bound_ = history[-1]
        self.n_iter_ = len(history) - 1
        self.converged_ = converged
        return self

    @property
    def model_(self):
        check_is_fitted(self, "means_")
        return MixtureModel("probabilistic", self.weights_, self.means_, self.covariances_)

    def _log_prob(self, X):
        check_is_fitted(self, "means_")
        X = check_points(X)
        return np.log(self.weights_)[None, :] + _log_gaussian(X, self.means_, self.covariances_)

    def score_samples(self, X):
        """Log density of each sample."""
        return logsumexp(self._log_prob(X), axis=1)

    def score(self, X, y=None):
        return float(self.score_samples(X).mean())

    def predict_proba(self, X):
        log_prob = self._log_prob(X)
        return np.exp(log_prob - logsumexp(log_prob, axis=1)[:, None])

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)


class WeightedGaussianMixture(BaseEstimator):
    """Traffic-density surface fitted by weighted EM.

    Each location is weighted by its observed traffic density. Centers start
    at the ``n_components`` locations with the highest density (ties broken
    by x then y), covariances at identity and coefficients equal. After the
    normalized iteration converges, coefficients are rescaled once so the
    fitted surface integrates to the total observed weight, over ``region``
    when given and over the whole plane otherwise.

    ``predict(X)`` returns the fitted traffic density at ``X``.
    """

    def __init__(self, n_components=1, *, tol=1e-6, max_iter=500, reg_covar=1e-6, region=None):
        self.n_components = n_components
        self.tol = tol
        self.max_iter = max_iter
        self.reg_covar = reg_covar
        self.region = region

    def _initial_params(self, X, w):
        K = self.n_components
        pos = w > 0
        pts, wts = X[pos], w[pos]
        order = np.lexsort((pts[:, 1], pts[:, 0], -wts))
        chosen = []
        for idx in order:
            if not any(np.array_equal(pts[idx], pts[c]) for c in chosen):
                chosen.append(idx)
                if len(chosen) == K:
                    break
        if len(chosen) < K:
            raise ValueError(
                f"n_components={K} exceeds the {len(chosen)} distinct positive-weight points")
        means = pts[chosen].copy()
        return np.full(K, 1.0 / K), means, np.tile(np.eye(2), (K, 1, 1))

    def fit(self, X, y=None, sample_weight=None):
        X = check_points(X)
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        w = check_sample_weight(sample_weight, len(X))
        init = self._initial_params(X, w)
        params, history, converged = weighted_em(
            X, w, init, tol=self.tol, max_iter=self.max_iter, reg_covar=self.reg_covar)
        if not converged:
            warnings.warn("weighted EM did not converge; raise max_iter or tol",
                          ConvergenceWarning)
        self.mixing_weights_, self.means_, self.covariances_ = params
        self.log_likelihood_history_ = np.array(history)
        self.n_iter_ = len(history) - 1
        self.converged_ = converged
        self.total_weight_ = float(w.sum())

        normalized = MixtureModel("probabilistic", self.mixing_weights_, self.means_,
                                  self.covariances_)
        mass = 1.0 if self.region is None else region_integral(normalized, self.region)
        if mass <= 0:
            raise ValueError("fitted mixture has no mass over the region")
        bell_norm = 2.0 * np.pi * np.sqrt(np.linalg.det(self.covariances_))
        self.coefficients_ = self.total_weight_ / mass * self.mixing_weights_ / bell_norm
        return self

    @property
    def model_(self):
        check_is_fitted(self, "coefficients_")
        return MixtureModel("density_function", self.coefficients_, self.means_,
                            self.covariances_)

    def predict(self, X):
        return _pdf_values(self.model_, check_points(X))


def em_fit(samples, num_components, tol=1e-6, max_iter=500, seed=None, **kwargs):
    """Fit a probabilistic mixture to the (unweighted) sample locations."""
    points = samples.points if isinstance(samples, WeightedSamples) else samples
    est = GaussianMixtureEM(num_components, tol=tol, max_iter=max_iter, random_state=seed,
                            **kwargs).fit(points)
    return est.model_


def wem_fit(samples, num_components, tol=1e-6, max_iter=500, region=None, **kwargs):
    """Fit a traffic-density surface to weighted samples."""
    if samples.weights is None:
        raise ValueError("wem_fit requires weighted samples")
    est = WeightedGaussianMixture(num_components, tol=tol, max_iter=max_iter, region=region,
                                  **kwargs).fit(samples.points, sample_weight=samples.weights)
    return est.model_


def mixture_eval(model, point):
    """Mixture value at one point (scalar) or at each row of an (n, 2) array."""
    arr = np.asarray(point, dtype=float)
    values = _pdf_values(model, arr.reshape(-1, 2))
    return float(values[0]) if arr.ndim == 1 else values


def region_integral(model, region):
    """Midpoint-rule integral of the mixture over the region's cells."""
    if region.is_empty:
        raise ValueError("empty region")
    return float(_pdf_values(model, region.centers()).sum() * region.cell_area)


def cell_values(model, region):
    """Mixture value at each included cell center of ``region``."""
    return _pdf_values(model, region.centers())
