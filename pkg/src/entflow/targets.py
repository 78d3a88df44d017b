"""Unnormalized target densities: Gaussian mixtures, correlated Gaussians,
and Bayesian logistic-regression posteriors.

Every target exposes log u and its gradient (both vectorized over rows)
plus, where a closed form exists, exact sampling.  The normalizing
constant is never computed; samplers only consume gradients and ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, logsumexp

__all__ = [
    "UnnormalizedTarget",
    "GaussianMixtureSpec",
    "LogisticRegressionData",
    "make_mixture",
    "make_scenario",
    "make_ar_gaussian",
    "make_blr_posterior",
    "sample_exact",
    "scale_target",
    "scenario_names",
    "ring_means",
    "grid_means",
]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class UnnormalizedTarget:
    """A density known up to a constant: log u, grad log u, optional sampler.

    ``log_u``/``grad_log_u`` accept a single point (d,) or a batch (n, d).
    ``exact_sampler(n, rng)`` returns (n, d) draws when available.
    """

    name: str
    dimension: int
    log_u: Callable[[np.ndarray], np.ndarray]
    grad_log_u: Callable[[np.ndarray], np.ndarray]
    exact_sampler: Callable[[int, np.random.Generator], np.ndarray] | None = None
    mode_list: np.ndarray | None = None
    mixture_spec: "GaussianMixtureSpec | None" = None


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Component means, covariances and simplex weights of a Gaussian mixture."""

    means: np.ndarray  # (J, d)
    covariances: np.ndarray  # (J, d, d)
    weights: np.ndarray  # (J,)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covariances, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "weights", w)
        j, d = means.shape
        if covs.shape != (j, d, d):
            raise ValueError(f"covariances must be ({j}, {d}, {d}), got {covs.shape}")
        if w.shape != (j,):
            raise ValueError("one weight per component is required")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 within 1e-12, got {w.sum()!r}")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dimension(self) -> int:
        return self.means.shape[1]


def isotropic_mixture(means: np.ndarray, sigma2: float, weights=None) -> GaussianMixtureSpec:
    means = np.atleast_2d(np.asarray(means, dtype=float))
    j, d = means.shape
    covs = np.broadcast_to(sigma2 * np.eye(d), (j, d, d)).copy()
    w = np.full(j, 1.0 / j) if weights is None else np.asarray(weights, dtype=float)
    return GaussianMixtureSpec(means, covs, w)


def _as_rows(x: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != d:
            raise ValueError(f"point has length {x.shape[0]}, target dimension is {d}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected (n, {d}) points, got shape {x.shape}")
    return x, False


def make_mixture(spec: GaussianMixtureSpec, name: str = "mixture") -> UnnormalizedTarget:
    """Gaussian-mixture target with stable log-sum-exp evaluation.

    log u(x) = logsumexp_j [log w_j + log N(x; mu_j, Sigma_j)], and the
    gradient is the responsibility-weighted sum of per-component pulls
    Sigma_j^{-1} (mu_j - x).
    """
    j, d = spec.means.shape
    chols = np.empty((j, d, d))
    precisions = np.empty((j, d, d))
    log_norms = np.empty(j)
    for k in range(j):
        try:
            chols[k] = np.linalg.cholesky(spec.covariances[k])
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"component {k}: covariance is not positive definite") from exc
        precisions[k] = np.linalg.inv(spec.covariances[k])
        log_det = 2.0 * np.log(np.diag(chols[k])).sum()
        log_norms[k] = -0.5 * (d * LOG_2PI + log_det)
    with np.errstate(divide="ignore"):
        log_w = np.log(spec.weights)

    def component_log_densities(x: np.ndarray) -> np.ndarray:
        # (n, J) array of log w_j + log N(x_i; mu_j, Sigma_j)
        diff = x[:, None, :] - spec.means[None, :, :]  # (n, J, d)
        maha = np.einsum("njd,jde,nje->nj", diff, precisions, diff)
        return log_w + log_norms - 0.5 * maha

    if j == 1:
        # single component: no mixing, so skip the log-sum-exp machinery
        mean0, prec0, log_norm0 = spec.means[0], precisions[0], log_norms[0] + log_w[0]

        def log_u(x):
            xb, single = _as_rows(x, d)
            diff = xb - mean0
            out = log_norm0 - 0.5 * np.einsum("nd,nd->n", diff @ prec0, diff)
            return float(out[0]) if single else out

        def grad_log_u(x):
            xb, single = _as_rows(x, d)
            out = (mean0 - xb) @ prec0.T
            return out[0] if single else out

    else:

        def log_u(x):
            xb, single = _as_rows(x, d)
            out = logsumexp(component_log_densities(xb), axis=1)
            return float(out[0]) if single else out

        def grad_log_u(x):
            xb, single = _as_rows(x, d)
            comp = component_log_densities(xb)
            resp = np.exp(comp - logsumexp(comp, axis=1, keepdims=True))  # (n, J)
            diff = spec.means[None, :, :] - xb[:, None, :]  # (n, J, d)
            pulls = np.einsum("jde,nje->njd", precisions, diff)
            out = np.einsum("nj,njd->nd", resp, pulls)
            return out[0] if single else out

    def sampler(n: int, rng: np.random.Generator) -> np.ndarray:
        comps = rng.choice(j, size=n, p=spec.weights)
        z = rng.standard_normal((n, d))
        out = np.empty((n, d))
        for k in range(j):
            mask = comps == k
            out[mask] = spec.means[k] + z[mask] @ chols[k].T
        return out

    return UnnormalizedTarget(
        name=name,
        dimension=d,
        log_u=log_u,
        grad_log_u=grad_log_u,
        exact_sampler=sampler,
        mode_list=spec.means.copy(),
        mixture_spec=spec,
    )


def ring_means(count: int, radius: float) -> np.ndarray:
    """Means r*(sin, cos) at equally spaced angles, first mode pointing up."""
    angles = 2.0 * np.pi * np.arange(count) / count
    return radius * np.column_stack([np.sin(angles), np.cos(angles)])


def grid_means(side: int, spacing: float) -> np.ndarray:
    """side x side grid centered at the origin, row-major enumeration."""
    offset = (side + 1) / 2.0
    pts = [
        spacing * np.array([j - offset, k - offset])
        for j in range(1, side + 1)
        for k in range(1, side + 1)
    ]
    return np.array(pts)


def _circle_centers(count: int, radius: float) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(count) / count
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def _spiral_centers(count: int, turns_factor: float, sign: float = 1.0) -> np.ndarray:
    t = turns_factor * np.pi * np.arange(count) / count
    return sign * np.column_stack([t * np.cos(t), t * np.sin(t)])


def _moons_centers(count: int) -> np.ndarray:
    i = np.arange(count)
    m1 = np.column_stack([8.0 * i / count - 6.0, 4.0 * np.sin(i * np.pi / count)])
    m2 = np.column_stack([8.0 * i / count - 2.0, 4.0 * np.sin(i * np.pi / count)])
    return np.vstack([m1, m2])


def _point_cloud_target(
    name: str, centers: np.ndarray, noise: str, sigma2: float = 0.03, disc_radius: float = 1.0 / 30.0
) -> UnnormalizedTarget:
    """Shape scenario: equal-weight blobs on a list of centers.

    Gaussian noise gives a proper mixture with log density; uniform-disc or
    mixed noise has no simple closed-form density, so those variants carry
    only an exact sampler (figure generation, not flow targets).
    """
    if noise == "gaussian":
        return make_mixture(isotropic_mixture(centers, sigma2), name=name)
    if noise not in ("uniform", "mixed"):
        raise ValueError(f"unknown noise kind {noise!r}")
    centers = np.asarray(centers, dtype=float)
    count = centers.shape[0]

    def sampler(n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, count, size=n)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        radius = disc_radius * np.sqrt(rng.uniform(size=n))
        disc = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
        if noise == "mixed":
            gauss = math.sqrt(sigma2) * rng.standard_normal((n, 2))
            pick = rng.uniform(size=n) < 0.5
            disc = np.where(pick[:, None], disc, gauss)
        return centers[idx] + disc

    def no_density(x):
        raise ValueError(f"{name}: {noise}-noise variant has no closed-form log density")

    return UnnormalizedTarget(
        name=name,
        dimension=2,
        log_u=no_density,
        grad_log_u=no_density,
        exact_sampler=sampler,
        mode_list=centers.copy(),
    )


def make_scenario(scenario_id: int, **params) -> UnnormalizedTarget:
    """Benchmark target number 1..16; free knobs (sigma2, r, noise) as kwargs."""
    sid = int(scenario_id)
    sigma2 = float(params.pop("sigma2", 0.03))
    r = float(params.pop("r", 4.0))
    noise = params.pop("noise", "gaussian")
    weights = params.pop("weights", None)
    if params:
        raise ValueError(f"scenario {sid}: unknown parameters {sorted(params)}")

    def mix(means, s2, w=None, name=""):
        return make_mixture(isotropic_mixture(means, s2, w), name=name)

    if sid == 1:
        spec = GaussianMixtureSpec(
            [[1.0], [-2.0]], [[[0.25]], [[2.0]]], [1.0 / 3.0, 2.0 / 3.0]
        )
        return make_mixture(spec, name="2gaussians_1d1")
    if sid == 2:
        spec = GaussianMixtureSpec(
            [[3.0], [-3.0]], [[[0.25]], [[2.0]]], [1.0 / 3.0, 2.0 / 3.0]
        )
        return make_mixture(spec, name="2gaussians_1d2")
    if sid == 3:
        spec = GaussianMixtureSpec(
            [[3.0], [-3.0]], [[[0.03]], [[0.03]]], [1.0 / 3.0, 2.0 / 3.0]
        )
        return make_mixture(spec, name="2gaussians_1d3")
    if sid == 4:
        return mix([[r, 0.0], [-r, 0.0]], sigma2, weights, name="2gaussians")
    if sid == 5:
        return mix(ring_means(8, r), sigma2, weights, name="8gaussians")
    if sid == 6:
        return mix(grid_means(3, 4.0), sigma2, weights, name="9gaussians")
    if sid == 7:
        return mix(ring_means(16, 4.0), 0.03, weights, name="16gaussians_1c")
    if sid == 8:
        means = np.vstack([ring_means(8, 4.0), ring_means(8, 2.0)])
        return mix(means, 0.03, weights, name="16gaussians_2c")
    if sid == 9:
        return mix(grid_means(5, 2.0), sigma2, weights, name="25gaussians")
    if sid == 10:
        return mix(grid_means(7, 1.5), 0.03, weights, name="49gaussians")
    if sid == 11:
        return mix(grid_means(9, 1.5), 0.03, weights, name="81gaussians")
    if sid == 12:
        return _point_cloud_target("1circle", _circle_centers(400, 4.0), noise)
    if sid == 13:
        centers = np.vstack([_circle_centers(200, 2.0), _circle_centers(200, 4.0)])
        return _point_cloud_target("2circles", centers, noise)
    if sid == 14:
        return _point_cloud_target("1spiral", _spiral_centers(400, 4.0), noise)
    if sid == 15:
        centers = np.vstack(
            [_spiral_centers(200, 3.0, 1.0), _spiral_centers(200, 3.0, -1.0)]
        )
        return _point_cloud_target("2spirals", centers, noise)
    if sid == 16:
        return _point_cloud_target("moons", _moons_centers(200), noise)
    raise ValueError(f"scenario id must be in 1..16, got {scenario_id}")


def scenario_names() -> dict[int, str]:
    return {
        1: "2gaussians_1d1",
        2: "2gaussians_1d2",
        3: "2gaussians_1d3",
        4: "2gaussians",
        5: "8gaussians",
        6: "9gaussians",
        7: "16gaussians_1c",
        8: "16gaussians_2c",
        9: "25gaussians",
        10: "49gaussians",
        11: "81gaussians",
        12: "1circle",
        13: "2circles",
        14: "1spiral",
        15: "2spirals",
        16: "moons",
    }


def make_ar_gaussian(d: int, rho: float = 0.7) -> UnnormalizedTarget:
    """Gaussian with mean all-ones and covariance Sigma_ij = rho^|i-j|.

    The precision matrix has the tridiagonal closed form
    (1/(1-rho^2)) * tridiag(-rho; 1, 1+rho^2, ..., 1+rho^2, 1; -rho),
    so gradients cost O(d) and no factorization of Sigma^{-1} is needed.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if not (-1.0 < rho < 1.0):
        raise ValueError("rho must lie in (-1, 1)")
    mean = np.ones(d)
    idx = np.arange(d)
    cov = rho ** np.abs(idx[:, None] - idx[None, :])
    chol = np.linalg.cholesky(cov)
    scale = 1.0 / (1.0 - rho**2)
    precision = np.zeros((d, d))
    if d == 1:
        precision[0, 0] = 1.0
    else:
        diag = np.full(d, (1.0 + rho**2) * scale)
        diag[0] = diag[-1] = scale
        precision[idx, idx] = diag
        precision[idx[:-1], idx[1:]] = -rho * scale
        precision[idx[1:], idx[:-1]] = -rho * scale

    def log_u(x):
        xb, single = _as_rows(x, d)
        diff = xb - mean
        out = -0.5 * np.einsum("nd,de,ne->n", diff, precision, diff)
        return float(out[0]) if single else out

    def grad_log_u(x):
        xb, single = _as_rows(x, d)
        out = (mean - xb) @ precision.T
        return out[0] if single else out

    def sampler(n: int, rng: np.random.Generator) -> np.ndarray:
        return mean + rng.standard_normal((n, d)) @ chol.T

    return UnnormalizedTarget(
        name=f"ar_gaussian_d{d}",
        dimension=d,
        log_u=log_u,
        grad_log_u=grad_log_u,
        exact_sampler=sampler,
        mode_list=mean[None, :].copy(),
        mixture_spec=GaussianMixtureSpec(mean[None, :], cov[None, :, :], np.ones(1)),
    )


@dataclass(frozen=True)
class LogisticRegressionData:
    """Binary-classification design matrix (intercept column appended) and labels."""

    features: np.ndarray  # (N, d_x + 1), last column is the intercept
    labels: np.ndarray  # (N,) in {0, 1}

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(int))
        if x.ndim != 2:
            raise ValueError("features must be an (N, d) matrix")
        if y.shape != (x.shape[0],):
            raise ValueError("one label per row is required")
        if not np.isfinite(x).all():
            raise ValueError("features must be finite")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def with_intercept(raw_features: np.ndarray, labels: np.ndarray) -> LogisticRegressionData:
    x = np.asarray(raw_features, dtype=float)
    ones = np.ones((x.shape[0], 1))
    return LogisticRegressionData(np.hstack([x, ones]), labels)


def make_blr_posterior(data: LogisticRegressionData, gamma_rate: float = 0.01) -> UnnormalizedTarget:
    """Logistic-regression posterior over theta = (beta, log alpha).

    beta gets the conditional prior N(0, alpha^{-1} I); alpha gets a
    Gamma(shape 1, rate ``gamma_rate``) prior and is sampled on the log
    scale (the log alpha coordinate includes the Jacobian term).  There is
    no exact sampler.
    """
    x = data.features
    y = data.labels.astype(float)
    d_beta = data.n_features
    dim = d_beta + 1

    def split(theta_rows):
        return theta_rows[:, :d_beta], theta_rows[:, d_beta]

    def log_u(theta):
        tb, single = _as_rows(theta, dim)
        beta, log_alpha = split(tb)
        alpha = np.exp(log_alpha)
        eta = beta @ x.T  # (n, N)
        loglik = (y * eta - np.logaddexp(0.0, eta)).sum(axis=1)
        sq = np.einsum("nd,nd->n", beta, beta)
        log_prior = 0.5 * d_beta * log_alpha - 0.5 * alpha * sq - gamma_rate * alpha
        out = loglik + log_prior + log_alpha  # + log alpha: Jacobian of alpha -> log alpha
        return float(out[0]) if single else out

    def grad_log_u(theta):
        tb, single = _as_rows(theta, dim)
        beta, log_alpha = split(tb)
        alpha = np.exp(log_alpha)
        eta = beta @ x.T
        resid = y - expit(eta)  # (n, N)
        g_beta = resid @ x - alpha[:, None] * beta
        sq = np.einsum("nd,nd->n", beta, beta)
        g_log_alpha = 0.5 * d_beta - 0.5 * alpha * sq - gamma_rate * alpha + 1.0
        out = np.hstack([g_beta, g_log_alpha[:, None]])
        return out[0] if single else out

    return UnnormalizedTarget(
        name="blr_posterior",
        dimension=dim,
        log_u=log_u,
        grad_log_u=grad_log_u,
        exact_sampler=None,
        mode_list=None,
    )


def sample_exact(target: UnnormalizedTarget, n: int, seed: int) -> np.ndarray:
    """n i.i.d. draws from the normalized target, deterministic under seed."""
    if target.exact_sampler is None:
        raise ValueError(f"target {target.name!r} has no exact sampler")
    if n < 1:
        raise ValueError("n must be positive")
    return target.exact_sampler(n, np.random.default_rng(seed))


def scale_target(target: UnnormalizedTarget, log_factor: float) -> UnnormalizedTarget:
    """Multiply u by exp(log_factor); p, gradients and samples are unchanged."""

    def log_u(x):
        return target.log_u(x) + log_factor

    return UnnormalizedTarget(
        name=f"{target.name}_scaled",
        dimension=target.dimension,
        log_u=log_u,
        grad_log_u=target.grad_log_u,
        exact_sampler=target.exact_sampler,
        mode_list=target.mode_list,
        mixture_spec=target.mixture_spec,
    )
