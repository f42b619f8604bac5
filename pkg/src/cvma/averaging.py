"""Candidate enumeration, Q-fold cross-validation weights and information criteria."""

from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .plfam import CandidateSpec, FitError, FittedCandidate, predict, refit

logger = logging.getLogger(__name__)

REPORT_THRESHOLD = 1e-5
SKIP_THRESHOLD = 1e-8


def _nonempty_subsets(pool):
    pool = list(pool)
    subsets = []
    for r in range(1, len(pool) + 1):
        subsets.extend(itertools.combinations(pool, r))
    return sorted(subsets)


def enumerate_candidates(mode: str, scalar_pool: Sequence[int], score_pool: Sequence[int], **spec_kwargs):
    """All candidate specs built from a scalar pool and a score pool.

    ``nested`` uses prefixes of each pool (``|scalar| * |score|`` models);
    ``non_nested`` uses every nonempty subset of each
    (``(2^p - 1) * (2^q - 1)`` models). Order is lexicographic in
    (scalar subset, score subset).
    """
    scalar_pool, score_pool = list(scalar_pool), list(score_pool)
    if not scalar_pool or not score_pool:
        raise ValueError("both pools must be nonempty")
    if mode == "nested":
        xs = [tuple(scalar_pool[:a]) for a in range(1, len(scalar_pool) + 1)]
        zs = [tuple(score_pool[:b]) for b in range(1, len(score_pool) + 1)]
    elif mode == "non_nested":
        xs, zs = _nonempty_subsets(scalar_pool), _nonempty_subsets(score_pool)
    else:
        raise ValueError(f"unknown candidate mode {mode!r}; expected 'nested' or 'non_nested'")
    return [CandidateSpec(scalar_columns=x, score_columns=z, **spec_kwargs) for x in xs for z in zs]


@dataclass(frozen=True)
class FoldPlan:
    """Fold membership; ``assignment[i]`` is the zero-based fold of row ``i``."""

    Q: int
    assignment: np.ndarray

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.Q)

    def folds(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == q) for q in range(self.Q)]


def make_fold_plan(n: int, Q: int, seed: int | None = 0) -> FoldPlan:
    """Seeded random permutation dealt round-robin into ``Q`` folds."""
    if not 2 <= Q <= n:
        raise ValueError(f"Q must satisfy 2 <= Q <= n={n}, got {Q}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=int)
    assignment[perm] = np.arange(n) % Q
    return FoldPlan(Q=Q, assignment=assignment)


@dataclass(frozen=True)
class CvPredictionMatrix:
    matrix: np.ndarray
    plan: FoldPlan


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("PLFAM_THREADS", "1")))
    except ValueError:
        return 1


def _oof_column(m: int, fit: FittedCandidate, scalars, scores, y, folds) -> np.ndarray:
    col = np.empty(y.size)
    for q, held in enumerate(folds):
        train = np.ones(y.size, dtype=bool)
        train[held] = False
        label = f"candidate {m} fold {q}"
        try:
            sub = refit(fit, scalars[train], scores[train], y[train], label=label)
        except FitError as exc:
            raise FitError(f"cross-validation refit failed ({label}): {exc}") from exc
        col[held] = predict(sub, scalars[held], scores[held])
    return col


def cv_prediction_matrix(
    fits: Sequence[FittedCandidate], scalars, scores, y, plan: FoldPlan, n_jobs: int | None = None
) -> CvPredictionMatrix:
    """Out-of-fold predictions for every candidate.

    Each fit keeps its layout and smoothing parameter; only coefficients are
    re-estimated on the complement of each fold.
    """
    y = np.asarray(y, dtype=float).ravel()
    scalars = np.asarray(scalars, dtype=float).reshape(y.size, -1)
    scores = np.asarray(scores, dtype=float).reshape(y.size, -1)
    if plan.assignment.size != y.size:
        raise ValueError("fold plan does not match the number of observations")
    folds = plan.folds()
    n_jobs = n_jobs or default_threads()
    out = np.empty((y.size, len(fits)))
    if n_jobs > 1 and len(fits) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            cols = list(pool.map(lambda mf: _oof_column(mf[0], mf[1], scalars, scores, y, folds), enumerate(fits)))
    else:
        cols = [_oof_column(m, f, scalars, scores, y, folds) for m, f in enumerate(fits)]
    for m, col in enumerate(cols):
        out[:, m] = col
    if not np.all(np.isfinite(out)):
        raise FitError("cross-validation produced non-finite predictions")
    return CvPredictionMatrix(matrix=out, plan=plan)


def cv_quadratic_form(cvmat, y) -> np.ndarray:
    """``E = R'R`` with ``R[:, m]`` the out-of-fold residuals of candidate ``m``."""
    P = cvmat.matrix if isinstance(cvmat, CvPredictionMatrix) else np.asarray(cvmat, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if P.shape[0] != y.size:
        raise ValueError(f"prediction matrix has {P.shape[0]} rows but response has {y.size}")
    R = P - y[:, None]
    E = R.T @ R
    return 0.5 * (E + E.T)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum(w) = 1}."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    objective: float
    iterations: int
    converged: bool


def _kkt_polish(E: np.ndarray, w: np.ndarray, tol: float):
    # Solve the equality-constrained problem on the current support and test optimality.
    support = np.flatnonzero(w > 0)
    k = support.size
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = 2.0 * E[np.ix_(support, support)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    cand = np.zeros_like(w)
    cand[support] = sol[:k]
    if np.any(cand < -1e-14) or abs(cand.sum() - 1.0) > 1e-12:
        return None
    cand = np.maximum(cand, 0.0)
    cand /= cand.sum()
    if _certified(E @ cand, cand, tol):
        return cand
    return None


def _certified(Ex: np.ndarray, x: np.ndarray, kkt_tol: float) -> bool:
    # E is PSD, so both 0 and f(x) - gap lower-bound the simplex minimum
    f = x @ Ex
    gap = 2.0 * (f - Ex.min())
    return min(f, gap) <= kkt_tol


def _fista(E: np.ndarray, x0: np.ndarray, L: float, tol: float, max_iter: int, kkt_tol: float):
    x = x0.copy()
    y = x.copy()
    t = 1.0
    f_prev = x @ E @ x
    for it in range(1, max_iter + 1):
        x_new = project_simplex(y - (2.0 / L) * (E @ y))
        Ex = E @ x_new
        f_new = x_new @ Ex
        if np.abs(x_new - x).max() <= tol or _certified(Ex, x_new, kkt_tol):
            return x_new, it, True
        if it % 10 == 0:
            polished = _kkt_polish(E, x_new, kkt_tol)
            if polished is not None:
                return polished, it, True
        if f_new > f_prev + 1e-15 * abs(f_prev):
            # adaptive restart: drop momentum when the objective goes up
            t = 1.0
            y = x.copy()
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t, f_prev = x_new, t_new, f_new
    return x, max_iter, False


def solve_simplex_qp(
    E, *, tol: float = 1e-12, max_iter: int = 100_000, restarts: int = 10, seed: int = 0
) -> WeightVector:
    """Minimise ``w' E w`` over the probability simplex.

    Accelerated projected gradient from the uniform vector, with periodic
    support-wise KKT polishing. When the result is not certified optimal,
    ``restarts`` random Dirichlet starts are tried and the best kept.
    """
    E = np.asarray(E, dtype=float)
    if E.ndim != 2 or E.shape[0] != E.shape[1] or E.shape[0] == 0:
        raise ValueError("E must be a nonempty square matrix")
    scale = max(1.0, np.abs(E).max())
    if not np.allclose(E, E.T, rtol=0, atol=1e-10 * scale):
        raise ValueError("E must be symmetric")
    E = 0.5 * (E + E.T)
    M = E.shape[0]
    if M == 1:
        return WeightVector(np.ones(1), float(E[0, 0]), 0, True)
    eig = np.linalg.eigvalsh(E)
    if eig[0] < -1e-10 * scale:
        raise ValueError(f"E is not positive semidefinite (min eigenvalue {eig[0]:.3e})")
    L = 2.0 * max(eig[-1], np.finfo(float).tiny)
    # FW-gap certificate: objective within 1e-9 * max|E| of the simplex minimum
    kkt_tol = 1e-9 * scale
    w0 = np.full(M, 1.0 / M)
    if _certified(E @ w0, w0, kkt_tol):
        return WeightVector(w0, float(w0 @ E @ w0), 0, True)

    w, iters, converged = _fista(E, w0, L, tol, max_iter, kkt_tol)
    certified = _certified(E @ w, w, kkt_tol)
    if not certified and restarts:
        rng = np.random.default_rng(seed)
        best = w @ E @ w
        for _ in range(restarts):
            cand, it, conv = _fista(E, rng.dirichlet(np.ones(M)), L, tol, max_iter, kkt_tol)
            iters += it
            if cand @ E @ cand < best:
                w, best, converged = cand, cand @ E @ cand, conv
    w = np.where(w < 0, 0.0, w)
    w = w / w.sum()
    if not converged:
        logger.warning("simplex QP stopped after %d iterations without converging", iters)
    return WeightVector(weights=w, objective=float(w @ E @ w), iterations=iters, converged=converged)


def frank_wolfe_gap(E, w) -> float:
    """Duality gap ``g'w - min(g)``; ``f(w) - gap`` lower-bounds the simplex minimum."""
    E = np.asarray(E, dtype=float)
    g = 2.0 * E @ w
    return float(g @ w - g.min())


@dataclass(frozen=True)
class CriterionScores:
    aic: np.ndarray
    bic: np.ndarray
    aic_index: int
    bic_index: int
    saic_weights: np.ndarray
    sbic_weights: np.ndarray


def smoothed_weights(scores) -> np.ndarray:
    """``exp(-s/2)`` normalised, computed after shifting by the minimum."""
    s = np.asarray(scores, dtype=float)
    z = np.exp(-(s - s.min()) / 2.0)
    return z / z.sum()


def criterion_scores(fits: Sequence[FittedCandidate], n: int) -> CriterionScores:
    sigma2 = np.array([f.sigma2_hat for f in fits], dtype=float)
    df = np.array([f.edf for f in fits], dtype=float)
    if np.any(sigma2 <= 0):
        bad = np.flatnonzero(sigma2 <= 0).tolist()
        raise FitError(f"candidates {bad} interpolate the data (zero residual variance)")
    base = n * np.log(sigma2)
    aic = base + 2.0 * df
    bic = base + np.log(n) * df
    return CriterionScores(
        aic=aic,
        bic=bic,
        aic_index=int(np.argmin(aic)),
        bic_index=int(np.argmin(bic)),
        saic_weights=smoothed_weights(aic),
        sbic_weights=smoothed_weights(bic),
    )


def averaged_predict(fits: Sequence[FittedCandidate], weights, scalars, scores, threshold: float = SKIP_THRESHOLD):
    """Weighted combination of candidate predictions; weights below ``threshold`` are skipped."""
    weights = np.asarray(weights, dtype=float)
    if weights.size != len(fits):
        raise ValueError(f"{weights.size} weights for {len(fits)} candidates")
    out = None
    for w, fit in zip(weights, fits):
        if w < threshold:
            continue
        contrib = w * predict(fit, scalars, scores)
        out = contrib if out is None else out + contrib
    if out is None:
        raise ValueError("all weights are below the skip threshold")
    return out
