"""Functional principal component analysis for dense, regular, noisy curves.

The covariance operator is discretised with trapezoid weights and the
measurement-error variance is stripped from the covariance diagonal before
the eigen-decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import ndtr


@dataclass(frozen=True)
class FunctionalDataset:
    """``n`` curves observed on a shared, strictly increasing grid."""

    grid: np.ndarray
    values: np.ndarray
    domain_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid must be a 1-D array with at least 2 points")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if values.shape[1] != grid.size:
            raise ValueError(f"values have {values.shape[1]} columns but grid has {grid.size} points")
        if values.shape[0] < 1:
            raise ValueError("at least one curve is required")
        if not np.all(np.isfinite(values)):
            raise ValueError("curve values contain missing or non-finite entries")
        bounds = self.domain_bounds if self.domain_bounds is not None else (grid[0], grid[-1])
        a, b = float(bounds[0]), float(bounds[1])
        if a > grid[0] or b < grid[-1]:
            raise ValueError("domain bounds must contain the grid")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "domain_bounds", (a, b))

    @property
    def n_curves(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.grid.size


@dataclass(frozen=True)
class FpcaFit:
    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    scores: np.ndarray
    transformed_scores: np.ndarray
    quadrature_weights: np.ndarray
    grid: np.ndarray = field(default=None)

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size

    def project(self, data: FunctionalDataset) -> tuple[np.ndarray, np.ndarray]:
        """Raw and transformed scores of new curves on the fitted components."""
        if self.grid is not None and (data.n_points != self.grid.size or not np.allclose(data.grid, self.grid)):
            raise ValueError("new curves are not observed on the training grid")
        scores = estimate_scores(data, self.mean, self.eigenfunctions, self.quadrature_weights)
        return scores, transform_scores(scores, self.eigenvalues)


def trapezoid_weights(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def estimate_mean(data: FunctionalDataset) -> np.ndarray:
    return data.values.mean(axis=0)


def estimate_covariance(data: FunctionalDataset, mean: np.ndarray, denoise: bool = True) -> np.ndarray:
    """Cross-sectional covariance with the noisy diagonal replaced.

    Each diagonal entry becomes the average of its two neighbours
    ``(j, j-1)`` and ``(j, j+1)`` (one-sided at the ends), which removes the
    white measurement-error variance. ``denoise=False`` keeps the raw
    diagonal, which is exact for noiseless finite-rank data.
    """
    centered = data.values - np.asarray(mean, dtype=float)[None, :]
    n = centered.shape[0]
    cov = centered.T @ centered / n
    cov = 0.5 * (cov + cov.T)
    if not denoise:
        return cov
    N = cov.shape[0]
    idx = np.arange(N)
    diag = np.empty(N)
    diag[0] = cov[0, 1]
    diag[-1] = cov[-1, -2]
    if N > 2:
        diag[1:-1] = 0.5 * (cov[idx[1:-1], idx[:-2]] + cov[idx[1:-1], idx[2:]])
    cov[idx, idx] = diag
    return cov


def _orient(phi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # sign convention: nonnegative integral, else first clearly nonzero value positive
    out = phi.copy()
    scale = np.sqrt(weights.sum())
    for k in range(out.shape[0]):
        integral = weights @ out[k]
        if abs(integral) > 1e-10 * scale:
            sign = np.sign(integral)
        else:
            big = np.flatnonzero(np.abs(out[k]) > 1e-10 * np.abs(out[k]).max())
            sign = np.sign(out[k, big[0]]) if big.size else 1.0
        out[k] *= sign
    return out


def eigendecompose(cov: np.ndarray, quadrature_weights: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Leading ``K`` eigenpairs of the discretised covariance operator.

    Returns
    -------
    eigenvalues : ndarray of shape (K,)
        Nonincreasing, negatives clamped to zero.
    eigenfunctions : ndarray of shape (K, N)
        Unit norm and mutually orthogonal under the quadrature weights.
    """
    cov = np.asarray(cov, dtype=float)
    w = np.asarray(quadrature_weights, dtype=float)
    N = cov.shape[0]
    if cov.shape != (N, N) or not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise ValueError("covariance must be a symmetric square matrix")
    if not 1 <= K <= N:
        raise ValueError(f"K must be in [1, {N}], got {K}")
    if np.any(w <= 0):
        raise ValueError("quadrature weights must be positive")
    sw = np.sqrt(w)
    op = sw[:, None] * cov * sw[None, :]
    op = 0.5 * (op + op.T)
    try:
        vals, vecs = linalg.eigh(op, subset_by_index=[N - K, N - 1])
    except linalg.LinAlgError as exc:
        raise RuntimeError("symmetric eigen-solver did not converge") from exc
    order = np.argsort(vals, kind="stable")[::-1]
    vals = np.maximum(vals[order], 0.0)
    phi = (vecs[:, order] / sw[:, None]).T
    norms = np.sqrt((phi**2) @ w)
    phi = phi / norms[:, None]
    return vals, _orient(phi, w)


def estimate_scores(data: FunctionalDataset, mean, eigenfunctions, quadrature_weights) -> np.ndarray:
    centered = data.values - np.asarray(mean)[None, :]
    return centered @ (np.asarray(eigenfunctions) * np.asarray(quadrature_weights)[None, :]).T


def transform_scores(scores, eigenvalues) -> np.ndarray:
    """Map raw scores into (0, 1) with the standard normal CDF of the standardised score."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    lam = np.asarray(eigenvalues, dtype=float)
    if np.any(lam <= 0):
        bad = np.flatnonzero(lam <= 0) + 1
        raise ValueError(f"components {bad.tolist()} have non-positive eigenvalues; cannot standardise")
    return ndtr(scores / np.sqrt(lam)[None, :])


def select_n_components(eigenvalues, fve: float = 0.999, cap: int | None = None) -> int:
    """Smallest count whose eigenvalues explain at least ``fve`` of their total."""
    lam = np.maximum(np.asarray(eigenvalues, dtype=float), 0.0)
    total = lam.sum()
    if total <= 0:
        K = 1
    else:
        K = int(np.searchsorted(np.cumsum(lam) / total, fve - 1e-12) + 1)
    K = min(K, lam.size)
    return min(K, cap) if cap is not None else K


def fit_fpca(
    data: FunctionalDataset,
    n_components: int | None = None,
    fve: float = 0.999,
    denoise: bool = True,
) -> FpcaFit:
    """Full pipeline: mean, corrected covariance, eigenpairs, scores.

    ``n_components`` fixes K; otherwise K is chosen by fraction of variance
    explained ``fve`` over the corrected covariance spectrum.
    """
    if data.n_curves < 2:
        raise ValueError("FPCA needs at least 2 curves")
    w = trapezoid_weights(data.grid)
    mean = estimate_mean(data)
    cov = estimate_covariance(data, mean, denoise=denoise)
    if n_components is None:
        all_vals, _ = eigendecompose(cov, w, data.n_points)
        n_components = select_n_components(all_vals, fve)
    vals, phi = eigendecompose(cov, w, n_components)
    scores = estimate_scores(data, mean, phi, w)
    return FpcaFit(
        mean=mean,
        eigenvalues=vals,
        eigenfunctions=phi,
        scores=scores,
        transformed_scores=transform_scores(scores, vals),
        quadrature_weights=w,
        grid=data.grid.copy(),
    )
