"""Multivariate Gaussian mixture: EM fitting, density, sampling, marginals.

Also exposes the univariate mixture marginal CDF and quantile needed to
move between latent mixture space and the unit hypercube.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky as _cholesky
from scipy.linalg import solve_triangular
from scipy.special import logsumexp, ndtr

from .dataset import EPS_CLIP, Dataset
from .marginals import _newton_quantiles
from .rootfind import RootConfig, chandrupatla

_LOG_2PI = 1.8378770664093453
_INV_SQRT_2PI = 0.3989422804014327

_QUANTILE_ROOT_CFG = RootConfig(x_tol=1e-13, f_tol=1e-12, max_iter=100)


def _chol_with_jitter(cov: np.ndarray, max_tries: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Lower Cholesky factor, adding diagonal jitter until it succeeds."""
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    jitter = 1e-6 * max(np.trace(cov) / d, 1e-12)
    for attempt in range(max_tries):
        try:
            return _cholesky(cov, lower=True), cov
        except np.linalg.LinAlgError:
            cov = cov + jitter * np.eye(d)
            jitter *= 10.0
    raise np.linalg.LinAlgError("covariance not repairable by jitter")


@dataclass
class GmmParams:
    """Mixture weights, means and full covariances.

    Covariances are symmetrized and, if needed, diagonally jittered at
    construction so that a Cholesky factorization always exists.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    _chols: np.ndarray | None = field(default=None, repr=False, compare=False)
    _log_dets: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        if mu.ndim != 2:
            raise ValueError("means must be (K, d)")
        K, d = mu.shape
        if w.shape != (K,) or cov.shape != (K, d, d):
            raise ValueError("inconsistent parameter shapes")
        if np.any(w < -1e-12):
            raise ValueError("negative mixture weight")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()}, expected 1")
        w = np.clip(w, 0.0, None)
        self.weights = w / w.sum()
        self.means = mu
        chols = np.empty_like(cov)
        fixed = np.empty_like(cov)
        for k in range(K):
            chols[k], fixed[k] = _chol_with_jitter(cov[k])
        self.covariances = fixed
        self._chols = chols
        self._log_dets = 2.0 * np.sum(
            np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1
        )

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def _check_points(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}, got {x.shape[1]}")
        return x

    def log_component_densities(self, x: np.ndarray) -> np.ndarray:
        """Per-component multivariate normal log densities, shape (n, K)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        out = np.empty((n, self.K))
        for k in range(self.K):
            diff = x - self.means[k]
            sol = solve_triangular(self._chols[k], diff.T, lower=True)
            maha = np.sum(sol * sol, axis=0)
            out[:, k] = -0.5 * (self.d * _LOG_2PI + self._log_dets[k] + maha)
        return out

    def logpdf(self, x: np.ndarray) -> np.ndarray | float:
        """Mixture log density; accepts one point or an (n, d) batch."""
        arr = np.asarray(x, dtype=float)
        squeeze = arr.ndim == 1
        pts = self._check_points(arr)
        comp = self.log_component_densities(pts)
        with np.errstate(divide="ignore"):
            out = logsumexp(comp + np.log(self.weights)[None, :], axis=1)
        return float(out[0]) if squeeze else out

    def pdf(self, x: np.ndarray) -> np.ndarray | float:
        return np.exp(self.logpdf(x))

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        comp = self.log_component_densities(np.atleast_2d(x))
        with np.errstate(divide="ignore"):
            log_r = comp + np.log(self.weights)[None, :]
        return np.exp(log_r - logsumexp(log_r, axis=1, keepdims=True))

    def sample(self, n: int, seed: int | np.random.Generator) -> np.ndarray:
        """Draw n points: categorical component choice, then Cholesky transform."""
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(seed) if isinstance(seed, int) else seed
        comp = rng.choice(self.K, size=n, p=self.weights)
        g = rng.standard_normal((n, self.d))
        out = np.empty((n, self.d))
        for k in range(self.K):
            mask = comp == k
            if mask.any():
                out[mask] = self.means[k] + g[mask] @ self._chols[k].T
        return out

    def marginal(self, j: int) -> "GmmMarginal1d":
        if not 0 <= j < self.d:
            raise ValueError(f"dimension {j} out of range for d={self.d}")
        return GmmMarginal1d(
            weights=self.weights,
            means=self.means[:, j].copy(),
            sigmas=np.sqrt(self.covariances[:, j, j]),
        )

    def restrict(self, dims: list[int]) -> "GmmParams":
        """Marginal mixture over a subset of coordinates (again a GMM)."""
        dims = list(dims)
        return GmmParams(
            weights=self.weights.copy(),
            means=self.means[:, dims],
            covariances=self.covariances[np.ix_(range(self.K), dims, dims)],
        )

    def to_payload(self) -> dict:
        return {
            "K": self.K,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "GmmParams":
        return cls(
            weights=np.asarray(payload["weights"], dtype=float),
            means=np.asarray(payload["means"], dtype=float),
            covariances=np.asarray(payload["covariances"], dtype=float),
        )


@dataclass
class GmmMarginal1d:
    """One coordinate of a GMM: a univariate mixture of normals."""

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        if np.any(self.sigmas <= 0):
            raise ValueError("marginal standard deviations must be positive")

    @property
    def bracket(self) -> tuple[float, float]:
        lo = float(np.min(self.means - 10.0 * self.sigmas))
        hi = float(np.max(self.means + 10.0 * self.sigmas))
        return lo, hi

    def cdf(self, z) -> np.ndarray | float:
        z_arr = np.atleast_1d(np.asarray(z, dtype=float))
        t = (z_arr[:, None] - self.means[None, :]) / self.sigmas[None, :]
        out = ndtr(t) @ self.weights
        return float(out[0]) if np.ndim(z) == 0 else out

    def pdf(self, z) -> np.ndarray | float:
        z_arr = np.atleast_1d(np.asarray(z, dtype=float))
        t = (z_arr[:, None] - self.means[None, :]) / self.sigmas[None, :]
        dens = _INV_SQRT_2PI * np.exp(-0.5 * t * t) / self.sigmas[None, :]
        out = dens @ self.weights
        return float(out[0]) if np.ndim(z) == 0 else out

    def log_pdf(self, z) -> np.ndarray | float:
        z_arr = np.atleast_1d(np.asarray(z, dtype=float))
        t = (z_arr[:, None] - self.means[None, :]) / self.sigmas[None, :]
        with np.errstate(divide="ignore"):
            logs = (
                np.log(self.weights)[None, :]
                - 0.5 * t * t
                - 0.5 * _LOG_2PI
                - np.log(self.sigmas)[None, :]
            )
        out = logsumexp(logs, axis=1)
        return float(out[0]) if np.ndim(z) == 0 else out

    def quantile(self, u: float) -> float:
        """Invert the marginal CDF at one level via Chandrupatla."""
        if not EPS_CLIP <= u <= 1.0 - EPS_CLIP:
            raise ValueError(f"quantile level {u} outside clipped range")
        lo, hi = self.bracket
        return chandrupatla(lambda z: self.cdf(z) - u, lo, hi, _QUANTILE_ROOT_CFG)

    def quantile_batch(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.size and (u.min() < EPS_CLIP or u.max() > 1.0 - EPS_CLIP):
            raise ValueError("quantile levels outside clipped range")
        lo, hi = self.bracket
        return _newton_quantiles(self.cdf, self.pdf, u, lo, hi)


def _kmeanspp_means(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding on a subsample of at most 10 000 rows."""
    n = x.shape[0]
    sub = x[rng.choice(n, size=min(n, 10_000), replace=False)]
    centers = [sub[rng.integers(sub.shape[0])]]
    for _ in range(K - 1):
        d2 = np.min(
            [np.sum((sub - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(sub[rng.integers(sub.shape[0])])
            continue
        centers.append(sub[rng.choice(sub.shape[0], p=d2 / total)])
    return np.array(centers)


def fit_em(
    data: Dataset | np.ndarray,
    K: int,
    seed: int,
    max_iter: int = 500,
    rel_tol: float = 1e-7,
    return_history: bool = False,
):
    """Fit a K-component GMM by EM, deterministic for a given seed.

    Initialization is k-means++ seeding on a subsample. Components whose
    responsibility mass collapses are re-seeded from a random data point.
    Returns GmmParams, or (GmmParams, loglik_history) with
    ``return_history`` where the history holds the per-iteration training
    mean log-likelihood (nondecreasing up to tiny slack).
    """
    x = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    x = np.atleast_2d(x)
    n, d = x.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if n < K * (d + 1):
        raise ValueError(f"need at least K*(d+1)={K * (d + 1)} rows, got {n}")
    rng = np.random.default_rng(seed)

    means = _kmeanspp_means(x, K, rng)
    base_cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=0))
    covs = np.repeat(base_cov[None, :, :], K, axis=0)
    weights = np.full(K, 1.0 / K)
    params = GmmParams(weights, means, covs)

    history: list[float] = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        comp = params.log_component_densities(x)
        with np.errstate(divide="ignore"):
            log_r = comp + np.log(params.weights)[None, :]
        row_ll = logsumexp(log_r, axis=1)
        ll = float(np.mean(row_ll))
        history.append(ll)
        if np.isfinite(prev_ll) and ll - prev_ll < rel_tol * abs(prev_ll):
            break
        prev_ll = ll

        resp = np.exp(log_r - row_ll[:, None])
        mass = resp.sum(axis=0)
        collapsed = np.nonzero(mass < 1e-8 * n)[0]
        safe_mass = mass.copy()
        safe_mass[collapsed] = 1.0
        weights = mass / mass.sum()
        means = (resp.T @ x) / safe_mass[:, None]
        covs = np.empty((K, d, d))
        for k in range(K):
            diff = x - means[k]
            covs[k] = (resp[:, k][:, None] * diff).T @ diff / safe_mass[k]
        for k in collapsed:
            # Collapsed component: restart it at a random data point.
            means[k] = x[rng.integers(n)]
            covs[k] = base_cov
            weights[k] = 1.0 / n
        weights = weights / weights.sum()
        params = GmmParams(weights, means, covs)

    if return_history:
        return params, np.array(history)
    return params
