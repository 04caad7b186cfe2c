"""Gaussian mixture copula: density, MAP objective and gradient, fitting.

The copula is a GMM living in a latent space; data on the unit hypercube
is pulled back through the mixture's marginal quantiles. The likelihood
has no closed form because of those quantiles, so fitting maximizes a
penalized objective by Adam over mini-batches. Gradients are computed
analytically: the quantile derivative w.r.t. the mixture parameters comes
from the implicit-function rule

    dz/dtheta = - (dPsi/dtheta)(z) / psi(z),

which avoids any automatic-differentiation dependency. Gaussian priors on
the weighted marginal means (target 0) and weighted second moments
(target 1) pin down the per-dimension affine freedom of the latent space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp, ndtr, ndtri

from .dataset import UnitDataset
from .gmm import GmmParams, fit_em
from .marginals import _newton_quantiles

_LOG_2PI = 1.8378770664093453
_INV_SQRT_2PI = 0.3989422804014327


class FitDivergedError(RuntimeError):
    """Objective became non-finite; ``last_params`` holds the last finite iterate."""

    def __init__(self, message: str, last_params: "UnconstrainedParams"):
        super().__init__(message)
        self.last_params = last_params


@dataclass(frozen=True)
class FitOptions:
    """Knobs of the MAP fit; defaults follow the reference configuration."""

    K: int = 4
    learning_rate: float = 1e-3
    batch_size: int = 1024
    max_epochs: int = 200
    prior_sigma: float = 0.1
    seed: int = 0
    rel_tol: float = 1e-6
    patience: int = 5

    def __post_init__(self):
        if min(self.K, self.batch_size, self.patience) < 1:
            raise ValueError("K, batch_size and patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if min(self.learning_rate, self.prior_sigma, self.rel_tol) <= 0:
            raise ValueError("learning_rate, prior_sigma and rel_tol must be > 0")


@dataclass
class UnconstrainedParams:
    """Free-space view of mixture parameters for gradient optimization.

    Weights are softmax logits; each covariance is a lower-triangular
    Cholesky factor whose diagonal slots store the log of the factor's
    diagonal, making the map to valid (weights, means, SPD covariances)
    a bijection.
    """

    weight_logits: np.ndarray
    means: np.ndarray
    chol_factors: np.ndarray

    @property
    def K(self) -> int:
        return self.weight_logits.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def to_gmm(self) -> GmmParams:
        alpha = _softmax(self.weight_logits)
        L = _factors_to_chol(self.chol_factors)
        cov = np.einsum("kij,klj->kil", L, L)
        return GmmParams(weights=alpha, means=self.means.copy(), covariances=cov)

    @classmethod
    def from_gmm(cls, params: GmmParams) -> "UnconstrainedParams":
        logits = np.log(np.clip(params.weights, 1e-300, None))
        factors = params._chols.copy()
        K, d = params.K, params.d
        idx = np.arange(d)
        factors[:, idx, idx] = np.log(factors[:, idx, idx])
        return cls(
            weight_logits=logits, means=params.means.copy(), chol_factors=factors
        )

    def pack(self) -> np.ndarray:
        K, d = self.K, self.d
        rows, cols = np.tril_indices(d)
        return np.concatenate(
            [
                self.weight_logits,
                self.means.ravel(),
                self.chol_factors[:, rows, cols].ravel(),
            ]
        )

    @classmethod
    def unpack(cls, vec: np.ndarray, K: int, d: int) -> "UnconstrainedParams":
        vec = np.asarray(vec, dtype=float)
        n_tril = d * (d + 1) // 2
        logits = vec[:K]
        means = vec[K : K + K * d].reshape(K, d)
        factors = np.zeros((K, d, d))
        rows, cols = np.tril_indices(d)
        factors[:, rows, cols] = vec[K + K * d :].reshape(K, n_tril)
        return cls(weight_logits=logits.copy(), means=means, chol_factors=factors)


def _softmax(w: np.ndarray) -> np.ndarray:
    e = np.exp(w - w.max())
    return e / e.sum()


def _factors_to_chol(factors: np.ndarray) -> np.ndarray:
    L = np.tril(factors)
    idx = np.arange(factors.shape[1])
    with np.errstate(over="ignore"):  # divergence is signaled downstream
        L[:, idx, idx] = np.exp(factors[:, idx, idx])
    return L


def _solve_latent(
    alpha: np.ndarray, mu_dk: np.ndarray, sig_dk: np.ndarray, U: np.ndarray
) -> np.ndarray:
    """Invert each mixture marginal CDF: z[b, j] solves Psi_j(z) = U[b, j]."""
    B, d = U.shape
    z = np.empty((B, d))
    for j in range(d):
        m, s = mu_dk[j], sig_dk[j]
        lo = float(np.min(m - 10.0 * s))
        hi = float(np.max(m + 10.0 * s))

        def cdf(x, m=m, s=s):
            return ndtr((x[:, None] - m[None, :]) / s[None, :]) @ alpha

        def pdf(x, m=m, s=s):
            t = (x[:, None] - m[None, :]) / s[None, :]
            return (_INV_SQRT_2PI * np.exp(-0.5 * t * t) / s[None, :]) @ alpha

        z[:, j] = _newton_quantiles(cdf, pdf, U[:, j], lo, hi)
    return z


def _evaluate(
    up: UnconstrainedParams,
    U: np.ndarray,
    prior_sigma: float,
    prior_scale: float,
    want_grad: bool,
):
    """Penalized copula objective and (optionally) its free-space gradient."""
    B, d = U.shape
    K = up.K
    alpha = _softmax(up.weight_logits)
    with np.errstate(divide="ignore", over="ignore"):
        log_alpha = np.log(alpha)
        L = _factors_to_chol(up.chol_factors)
        M = up.means
        sig_kd = np.sqrt(np.sum(L * L, axis=2))  # sqrt of covariance diagonals
        mu_dk, sig_dk = M.T, sig_kd.T

        # Prior block first: catches overflowed parameters before the root
        # solve; non-finite values are signaled, never clamped.
        sig2_kd = sig_kd * sig_kd
        m_prior = alpha @ M  # weighted marginal means, (d,)
        s_prior = alpha @ (sig2_kd + M * M)  # weighted second moments, (d,)
        sp2 = prior_sigma * prior_sigma
        prior_term = prior_scale * (
            -2.0 * d * (np.log(prior_sigma) + 0.5 * _LOG_2PI)
            - float(np.sum(m_prior**2)) / (2.0 * sp2)
            - float(np.sum((s_prior - 1.0) ** 2)) / (2.0 * sp2)
        )
    if not np.all(np.isfinite(log_alpha)) or not np.all(np.isfinite(sig_kd)):
        raise FloatingPointError("objective is not finite")
    if not np.isfinite(prior_term):
        raise FloatingPointError("objective is not finite")

    z = _solve_latent(alpha, mu_dk, sig_dk, U)

    # Univariate mixture pieces along each dimension.
    t = (z[:, :, None] - mu_dk[None, :, :]) / sig_dk[None, :, :]  # (B,d,K)
    comp_j = log_alpha[None, None, :] - 0.5 * t * t - 0.5 * _LOG_2PI - np.log(
        sig_dk
    )[None, :, :]
    log_psi_j = logsumexp(comp_j, axis=2)  # (B,d)
    rho = np.exp(comp_j - log_psi_j[:, :, None])  # (B,d,K)

    # Joint mixture pieces.
    log_phi = np.empty((B, K))
    A = np.empty((K, d, B))  # A[k] = Sigma_k^{-1} (z - mu_k)^T
    for k in range(K):
        diff = z - M[k]
        sol = solve_triangular(L[k], diff.T, lower=True)
        log_phi[:, k] = (
            -0.5 * d * _LOG_2PI
            - np.sum(np.log(np.diag(L[k])))
            - 0.5 * np.sum(sol * sol, axis=0)
        )
        A[k] = solve_triangular(L[k].T, sol, lower=False)
    log_mix = log_alpha[None, :] + log_phi
    log_psi = logsumexp(log_mix, axis=1)  # (B,)
    r = np.exp(log_mix - log_psi[:, None])  # (B,K)

    data_term = float(np.mean(log_psi - log_psi_j.sum(axis=1)))
    objective = data_term + prior_term
    if not np.isfinite(objective):
        raise FloatingPointError("objective is not finite")
    if not want_grad:
        return objective, None

    g_alpha = np.zeros(K)
    g_mean = np.zeros((K, d))
    g_cov = np.zeros((K, d, d))  # Frechet derivative w.r.t. full covariances

    # Direct dependence of log psi(z) on the parameters (z held fixed).
    g_alpha += r.mean(axis=0) / alpha
    for k in range(K):
        W = A[k] * r[:, k][None, :]  # (d,B)
        g_mean[k] += W.mean(axis=1)
        Linv = solve_triangular(L[k], np.eye(d), lower=True)
        prec = Linv.T @ Linv
        g_cov[k] += 0.5 * ((W @ A[k].T) / B - r[:, k].mean() * prec)

    # Direct dependence of the per-dimension log psi_j terms (subtracted).
    g_alpha -= rho.sum(axis=1).mean(axis=0) / alpha
    rt_mean = np.mean(rho * t, axis=0)  # (d,K)
    g_mean -= (rt_mean / sig_dk).T
    diag_idx = np.arange(d)
    g_cov[:, diag_idx, diag_idx] -= (
        np.mean(rho * (t * t - 1.0), axis=0) / (2.0 * sig_dk * sig_dk)
    ).T

    # Chain through z: dz/dtheta = -(dPsi/dtheta)(z) / psi_j(z).
    G = np.sum(rho * t / sig_dk[None, :, :], axis=2)  # -d log psi_j / dz
    S = np.zeros((B, d))
    for k in range(K):
        S += r[:, k][:, None] * A[k].T
    w_chain = (G - S) / np.exp(log_psi_j)  # (B,d)

    Phi_t = ndtr(t)
    phi_t = _INV_SQRT_2PI * np.exp(-0.5 * t * t)
    g_alpha -= np.einsum("bj,bjk->k", w_chain, Phi_t) / B
    wphi = np.einsum("bj,bjk->jk", w_chain, phi_t) / B  # (d,K)
    g_mean += (wphi * (alpha[None, :] / sig_dk)).T
    wphit = np.einsum("bj,bjk,bjk->jk", w_chain, phi_t, t) / B
    g_cov[:, diag_idx, diag_idx] += (
        wphit * alpha[None, :] / (2.0 * sig_dk * sig_dk)
    ).T

    # Prior gradients.
    c_m = -prior_scale * m_prior / sp2
    c_s = -prior_scale * (s_prior - 1.0) / sp2
    g_alpha += M @ c_m + (sig2_kd + M * M) @ c_s
    g_mean += alpha[:, None] * (c_m[None, :] + 2.0 * c_s[None, :] * M)
    g_cov[:, diag_idx, diag_idx] += np.outer(alpha, c_s)

    # Map to free coordinates: softmax logits and log-diagonal Cholesky.
    g_logits = alpha * (g_alpha - float(g_alpha @ alpha))
    g_fact = np.zeros_like(up.chol_factors)
    for k in range(K):
        GL = 2.0 * g_cov[k] @ L[k]
        GL = np.tril(GL)
        GL[diag_idx, diag_idx] *= np.diag(L[k])
        g_fact[k] = GL
    grad = UnconstrainedParams(
        weight_logits=g_logits, means=g_mean, chol_factors=g_fact
    )
    return objective, grad


def map_objective(p: UnconstrainedParams, U: UnitDataset, sigma: float) -> float:
    """Mean copula log density over U plus the identifiability log priors.

    The prior block is scaled by 1/n so the value estimates the full
    per-sample MAP objective.
    """
    obj, _ = _evaluate(p, U.values, sigma, 1.0 / U.n, want_grad=False)
    return obj


def map_gradient(
    p: UnconstrainedParams, U: UnitDataset, sigma: float
) -> UnconstrainedParams:
    """Gradient of :func:`map_objective` in the free parameterization."""
    _, grad = _evaluate(p, U.values, sigma, 1.0 / U.n, want_grad=True)
    return grad


def gmc_copula_logdensity(base: GmmParams, u) -> np.ndarray | float:
    """Log density of the mixture copula at points of the unit hypercube.

    A single d-vector is inverted by the scalar root finder; batches use
    the vectorized solver. Both honor the same tolerance.
    """
    arr = np.asarray(u, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != base.d:
            raise ValueError(f"expected dimension {base.d}, got {arr.shape[0]}")
        z = np.array([base.marginal(j).quantile(arr[j]) for j in range(base.d)])
        log_marg = sum(
            float(base.marginal(j).log_pdf(z[j])) for j in range(base.d)
        )
        return float(base.logpdf(z)) - log_marg
    z, log_marg, log_joint = copula_parts(base, arr)
    return log_joint - log_marg.sum(axis=1)


def copula_parts(
    base: GmmParams, U: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Latent points plus the marginal and joint mixture log densities.

    Returns (z, log_psi_j matrix (n, d), log_psi vector (n,)); the copula
    log density is log_psi - sum_j log_psi_j.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] != base.d:
        raise ValueError(f"expected an (n, {base.d}) matrix, got {U.shape}")
    alpha = base.weights
    mu_dk = base.means.T
    sig_dk = np.sqrt(base.covariances[:, np.arange(base.d), np.arange(base.d)]).T
    z = _solve_latent(alpha, mu_dk, sig_dk, U)
    log_marg = np.column_stack(
        [base.marginal(j).log_pdf(z[:, j]) for j in range(base.d)]
    )
    return z, log_marg, base.logpdf(z)


def marginal_cdf_matrix(base: GmmParams, z: np.ndarray) -> np.ndarray:
    """Apply each latent marginal CDF columnwise: u[b, j] = Psi_j(z[b, j])."""
    z = np.asarray(z, dtype=float)
    return np.column_stack(
        [base.marginal(j).cdf(z[:, j]) for j in range(base.d)]
    )


def init_gmcm(U: UnitDataset, K: int, seed: int) -> UnconstrainedParams:
    """EM fit on the normal scores of U, mapped to free coordinates."""
    z_scores = ndtri(U.values)
    return UnconstrainedParams.from_gmm(fit_em(z_scores, K, seed))


def fit_gmcm(
    U: UnitDataset,
    opts: FitOptions,
    progress: Callable[[int, float], None] | None = None,
) -> GmmParams:
    """Adam ascent of the MAP objective over seeded mini-batches.

    Stops at ``max_epochs`` or once the epoch-mean objective has improved
    by less than ``rel_tol`` (relatively) for ``patience`` consecutive
    epochs. Deterministic for a given seed. ``progress`` receives
    (epoch index, epoch-mean objective) after every epoch.
    """
    n = U.n
    if n < opts.K * (U.d + 1):
        raise ValueError(
            f"need at least K*(d+1)={opts.K * (U.d + 1)} rows, got {n}"
        )
    up = init_gmcm(U, opts.K, opts.seed)
    if opts.max_epochs == 0:
        return up.to_gmm()
    K, d = up.K, up.d
    theta = up.pack()
    rng = np.random.default_rng(opts.seed)
    prior_scale = 1.0 / n

    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    m_state = np.zeros_like(theta)
    v_state = np.zeros_like(theta)
    step = 0
    best = -np.inf
    stall = 0
    last_finite = theta.copy()

    for epoch in range(opts.max_epochs):
        perm = rng.permutation(n)
        batch_objs = []
        for start in range(0, n, opts.batch_size):
            idx = perm[start : start + opts.batch_size]
            params = UnconstrainedParams.unpack(theta, K, d)
            try:
                obj, grad = _evaluate(
                    params, U.values[idx], opts.prior_sigma, prior_scale, True
                )
            except FloatingPointError:
                raise FitDivergedError(
                    f"objective diverged at epoch {epoch}",
                    UnconstrainedParams.unpack(last_finite, K, d),
                ) from None
            g = grad.pack()
            if not np.all(np.isfinite(g)):
                raise FitDivergedError(
                    f"gradient diverged at epoch {epoch}",
                    UnconstrainedParams.unpack(last_finite, K, d),
                )
            last_finite = theta.copy()
            step += 1
            m_state = beta1 * m_state + (1.0 - beta1) * g
            v_state = beta2 * v_state + (1.0 - beta2) * g * g
            m_hat = m_state / (1.0 - beta1**step)
            v_hat = v_state / (1.0 - beta2**step)
            theta = theta + opts.learning_rate * m_hat / (np.sqrt(v_hat) + eps_adam)
            batch_objs.append(obj)
        epoch_obj = float(np.mean(batch_objs))
        if progress is not None:
            progress(epoch, epoch_obj)
        rel_gain = (epoch_obj - best) / max(abs(best), 1e-12)
        if np.isfinite(best) and rel_gain < opts.rel_tol:
            stall += 1
        else:
            stall = 0
        best = max(best, epoch_obj)
        if stall >= opts.patience:
            break
    return UnconstrainedParams.unpack(theta, K, d).to_gmm()
