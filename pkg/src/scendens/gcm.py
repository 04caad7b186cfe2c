"""Gaussian copula: normal-scores correlation fit, density, sampling.

The copula keeps only a correlation matrix; marginals are supplied
separately, so the same KDE marginals can back several model families.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky as _cholesky
from scipy.linalg import solve_triangular
from scipy.special import ndtr, ndtri

from .dataset import EPS_CLIP, UnitDataset

_EIG_FLOOR = 1e-8


def _repair_correlation(R: np.ndarray) -> np.ndarray:
    """Clip eigenvalues at a small floor and restore the unit diagonal."""
    vals, vecs = np.linalg.eigh(0.5 * (R + R.T))
    vals = np.maximum(vals, _EIG_FLOOR)
    fixed = (vecs * vals) @ vecs.T
    scale = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(scale, scale)
    return 0.5 * (fixed + fixed.T)


@dataclass
class GcmParams:
    """Correlation matrix of a Gaussian copula (unit diagonal, SPD)."""

    correlation: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)
    _log_det: float = field(default=0.0, repr=False, compare=False)

    def __post_init__(self):
        R = np.asarray(self.correlation, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("correlation must be a square matrix")
        if np.max(np.abs(np.diag(R) - 1.0)) > 1e-8:
            raise ValueError("correlation matrix must have a unit diagonal")
        if np.max(np.abs(R - R.T)) > 1e-8:
            raise ValueError("correlation matrix must be symmetric")
        try:
            chol = _cholesky(R, lower=True)
        except np.linalg.LinAlgError:
            R = _repair_correlation(R)
            chol = _cholesky(R, lower=True)
        self.correlation = R
        self._chol = chol
        self._log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))

    @property
    def d(self) -> int:
        return self.correlation.shape[0]

    def restrict(self, dims: list[int]) -> "GcmParams":
        sub = self.correlation[np.ix_(dims, dims)]
        return GcmParams(correlation=sub)

    def to_payload(self) -> dict:
        return {"correlation": self.correlation.tolist()}

    @classmethod
    def from_payload(cls, payload: dict) -> "GcmParams":
        return cls(correlation=np.asarray(payload["correlation"], dtype=float))


def fit_gcm(U: UnitDataset) -> GcmParams:
    """Estimate the copula correlation as the correlation of normal scores."""
    if U.n < U.d + 1:
        raise ValueError(f"need at least d+1={U.d + 1} rows, got {U.n}")
    z = ndtri(U.values)
    if U.d == 1:
        return GcmParams(correlation=np.array([[1.0]]))
    R = np.corrcoef(z, rowvar=False)
    R = np.atleast_2d(R)
    np.fill_diagonal(R, 1.0)
    return GcmParams(correlation=_repair_correlation(R))


def copula_logdensity(p: GcmParams, u: np.ndarray) -> np.ndarray | float:
    """Gaussian copula log density at points of the unit hypercube.

    Equals -0.5*log|R| - 0.5 * z^T (R^-1 - I) z with z the normal scores;
    identically zero when R is the identity.
    """
    arr = np.asarray(u, dtype=float)
    squeeze = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != p.d:
        raise ValueError(f"expected dimension {p.d}, got {pts.shape[1]}")
    if pts.min() < EPS_CLIP or pts.max() > 1.0 - EPS_CLIP:
        raise ValueError("copula arguments outside the clipped unit range")
    z = ndtri(pts)
    sol = solve_triangular(p._chol, z.T, lower=True)
    quad = np.sum(sol * sol, axis=0) - np.sum(z * z, axis=1)
    out = -0.5 * p._log_det - 0.5 * quad
    return float(out[0]) if squeeze else out


def sample_unit(p: GcmParams, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """Draw copula samples on the unit hypercube: u = Phi(z), z ~ N(0, R)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed) if isinstance(seed, int) else seed
    g = rng.standard_normal((n, p.d))
    z = g @ p._chol.T
    return ndtr(z)
