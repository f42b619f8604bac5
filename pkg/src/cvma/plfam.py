"""Partially linear functional additive candidate models.

A candidate regresses the response on an intercept, a subset of scalar
covariates (unpenalised) and B-spline expansions of a subset of transformed
FPC scores, each penalised by ``tau * S_k`` with one shared ``tau``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .spline import SplineBasis, default_n_interior, eval_basis, make_basis, penalty_matrix

DEFAULT_TAU_GRID = np.logspace(-6, 4, 25)


class FitError(RuntimeError):
    """Penalised normal equations could not be solved."""


class LayoutError(ValueError):
    """Data columns do not match what a candidate references."""


@dataclass(frozen=True)
class CandidateSpec:
    """Which scalar columns and which transformed scores a candidate uses.

    Indices are zero-based and stored sorted. ``n_interior=None`` picks the
    default knot count from the training sample size at fit time.
    """

    scalar_columns: tuple[int, ...] = ()
    score_columns: tuple[int, ...] = ()
    n_interior: int | None = None
    order: int = 4
    include_intercept: bool = True

    def __post_init__(self):
        for name in ("scalar_columns", "score_columns"):
            cols = tuple(int(c) for c in getattr(self, name))
            if len(set(cols)) != len(cols):
                raise ValueError(f"{name} contains duplicates: {cols}")
            if any(c < 0 for c in cols):
                raise ValueError(f"{name} contains negative indices: {cols}")
            object.__setattr__(self, name, tuple(sorted(cols)))
        if not self.scalar_columns and not self.score_columns:
            raise ValueError("a candidate needs at least one scalar column or score")

    def describe(self, scalar_names: Sequence[str] | None = None) -> tuple[str, str]:
        if scalar_names is None:
            xs = [f"X{c + 1}" for c in self.scalar_columns]
        else:
            xs = [scalar_names[c] for c in self.scalar_columns]
        return ";".join(xs), ";".join(str(c + 1) for c in self.score_columns)


@dataclass(frozen=True)
class DesignLayout:
    """Column layout: [intercept | scalars ascending | score blocks ascending]."""

    include_intercept: bool
    scalar_columns: tuple[int, ...]
    score_columns: tuple[int, ...]
    bases: tuple[SplineBasis, ...]

    @property
    def n_columns(self) -> int:
        return int(self.include_intercept) + len(self.scalar_columns) + sum(b.n_basis for b in self.bases)

    def block_slices(self) -> list[slice]:
        start = int(self.include_intercept) + len(self.scalar_columns)
        out = []
        for b in self.bases:
            out.append(slice(start, start + b.n_basis))
            start += b.n_basis
        return out

    def penalty_blocks(self) -> list[tuple[slice, np.ndarray]]:
        return [(sl, penalty_matrix(b)) for sl, b in zip(self.block_slices(), self.bases)]

    def aliased_columns(self) -> tuple[int, ...]:
        """Columns fixed at zero to remove exact, penalty-free collinearity.

        Each B-spline block sums to one in every row, as does the intercept.
        The last column of each block is therefore redundant given the
        intercept (or given the first block when there is no intercept), and
        pinning it changes neither the fitted values nor the penalty.
        """
        slices = self.block_slices()
        if not self.include_intercept:
            slices = slices[1:]
        return tuple(sl.stop - 1 for sl in slices)


@dataclass(frozen=True)
class FittedCandidate:
    spec: CandidateSpec
    layout: DesignLayout | None
    coefficients: np.ndarray
    smoothing_tau: float
    edf: float
    sigma2_hat: float
    fitted: np.ndarray
    gcv_scores: np.ndarray | None = None

    def predict(self, scalars, scores) -> np.ndarray:
        return predict(self, scalars, scores)


def make_layout(spec: CandidateSpec, n: int) -> DesignLayout:
    n_int = default_n_interior(n) if spec.n_interior is None else spec.n_interior
    basis = make_basis(n_int, spec.order)
    return DesignLayout(
        include_intercept=spec.include_intercept,
        scalar_columns=spec.scalar_columns,
        score_columns=spec.score_columns,
        bases=tuple(basis for _ in spec.score_columns),
    )


def _as_2d(a, n_rows: int | None = None) -> np.ndarray:
    if a is None:
        return np.zeros((0 if n_rows is None else n_rows, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


def assemble_design(layout, scalars, transformed_scores) -> np.ndarray:
    """Design matrix for a candidate.

    ``layout`` may be a :class:`DesignLayout` or a :class:`CandidateSpec`;
    the latter resolves its knot count from the number of rows.
    """
    scores = _as_2d(transformed_scores)
    scalars = _as_2d(scalars, scores.shape[0])
    if scalars.shape[0] != scores.shape[0] and scalars.shape[1] and scores.shape[1]:
        raise LayoutError(f"scalars have {scalars.shape[0]} rows but scores have {scores.shape[0]}")
    n = scalars.shape[0] if scalars.shape[1] else scores.shape[0]
    if isinstance(layout, CandidateSpec):
        layout = make_layout(layout, n)
    if layout.scalar_columns and max(layout.scalar_columns) >= scalars.shape[1]:
        raise LayoutError(
            f"scalar column {max(layout.scalar_columns)} out of range for {scalars.shape[1]} columns"
        )
    if layout.score_columns and max(layout.score_columns) >= scores.shape[1]:
        raise LayoutError(f"score column {max(layout.score_columns)} out of range for {scores.shape[1]} scores")
    parts = []
    if layout.include_intercept:
        parts.append(np.ones((n, 1)))
    if layout.scalar_columns:
        parts.append(scalars[:, list(layout.scalar_columns)])
    for col, basis in zip(layout.score_columns, layout.bases):
        parts.append(eval_basis(basis, scores[:, col]))
    return np.hstack(parts) if parts else np.zeros((n, 0))


def _penalty(d: int, penalty_blocks, tau: float) -> np.ndarray:
    S = np.zeros((d, d))
    for sl, block in penalty_blocks:
        S[sl, sl] += tau * block
    return S


class _NormalEquations:
    # cross products reused across a tau grid
    def __init__(self, design, penalty_blocks, y, aliased=(), label="candidate"):
        self.Z = np.asarray(design, dtype=float)
        self.y = np.asarray(y, dtype=float).ravel()
        if self.Z.shape[0] != self.y.size:
            raise LayoutError(f"design has {self.Z.shape[0]} rows but response has {self.y.size}")
        d = self.Z.shape[1]
        self.keep = np.setdiff1d(np.arange(d), np.asarray(aliased, dtype=int))
        self.penalty_blocks = list(penalty_blocks)
        self.label = label
        Zk = self.Z[:, self.keep]
        self.ZtZ = Zk.T @ Zk
        self.Zty = Zk.T @ self.y
        self.S = _penalty(d, self.penalty_blocks, 1.0)[np.ix_(self.keep, self.keep)]

    def solve(self, tau: float):
        if self.penalty_blocks and not tau > 0:
            raise ValueError(f"tau must be positive when penalty blocks are present, got {tau}")
        A = self.ZtZ + tau * self.S
        try:
            factor = linalg.cho_factor(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            jitter = 1e-10 * np.trace(A)
            if not jitter > 0:
                raise FitError(f"{self.label}: penalised system is singular (zero trace)") from None
            try:
                factor = linalg.cho_factor(A + jitter * np.eye(A.shape[0]), lower=True, check_finite=False)
            except linalg.LinAlgError as exc:
                raise FitError(f"{self.label}: penalised system is singular even after ridge jitter") from exc
        theta_k = linalg.cho_solve(factor, self.Zty, check_finite=False)
        edf = float(np.trace(linalg.cho_solve(factor, self.ZtZ, check_finite=False)))
        if not np.all(np.isfinite(theta_k)):
            raise FitError(f"{self.label}: non-finite coefficients")
        theta = np.zeros(self.Z.shape[1])
        theta[self.keep] = theta_k
        fitted = self.Z @ theta
        return theta, fitted, edf


def fit_penalized(design, penalty_blocks, y, tau: float, *, aliased=(), label: str = "candidate") -> FittedCandidate:
    """Minimise ``||y - Z theta||^2 + theta' S_tau theta``.

    ``penalty_blocks`` is a sequence of ``(column slice, S_k)`` pairs; the
    remaining columns are unpenalised. Columns listed in ``aliased`` are held
    at zero. The returned candidate has no spec or layout attached.
    """
    ne = _NormalEquations(design, penalty_blocks, y, aliased, label)
    theta, fitted, edf = ne.solve(tau)
    n = ne.y.size
    return FittedCandidate(
        spec=None,
        layout=None,
        coefficients=theta,
        smoothing_tau=float(tau),
        edf=edf,
        sigma2_hat=float(np.sum((ne.y - fitted) ** 2) / n),
        fitted=fitted,
    )


def gcv_score(rss: float, edf: float, n: int) -> float:
    if edf >= n:
        return np.inf
    return n * rss / (n - edf) ** 2


def select_smoothing(design, penalty_blocks, y, grid=DEFAULT_TAU_GRID, *, aliased=(), label: str = "candidate"):
    """Grid search for the GCV-optimal shared smoothing parameter.

    Returns
    -------
    tau : float
        Minimiser of ``n * RSS / (n - edf)^2``; ties go to the smaller value.
    scores : ndarray
        GCV score at each grid point in ascending-tau order (``inf`` where
        the fit failed).
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("smoothing grid is empty")
    ne = _NormalEquations(design, penalty_blocks, y, aliased, label)
    n = ne.y.size
    scores = np.full(grid.size, np.inf)
    for i, tau in enumerate(grid):
        try:
            _, fitted, edf = ne.solve(tau)
        except FitError:
            continue
        scores[i] = gcv_score(float(np.sum((ne.y - fitted) ** 2)), edf, n)
    if not np.any(np.isfinite(scores)):
        raise FitError(f"{label}: no smoothing parameter on the grid gives a usable fit")
    return float(grid[int(np.argmin(scores))]), scores


def fit_candidate(
    spec: CandidateSpec,
    scalars,
    scores,
    y,
    tau: float | None = None,
    tau_grid=DEFAULT_TAU_GRID,
    label: str | None = None,
    layout: DesignLayout | None = None,
) -> FittedCandidate:
    """Fit one candidate, choosing ``tau`` by GCV unless it is given."""
    y = np.asarray(y, dtype=float).ravel()
    layout = layout or make_layout(spec, y.size)
    label = label or f"candidate(X={spec.scalar_columns}, xi={spec.score_columns})"
    Z = assemble_design(layout, scalars, scores)
    blocks = layout.penalty_blocks()
    aliased = layout.aliased_columns()
    gcv = None
    if tau is None:
        tau, gcv = select_smoothing(Z, blocks, y, tau_grid, aliased=aliased, label=label)
    fit = fit_penalized(Z, blocks, y, tau, aliased=aliased, label=label)
    return dataclasses.replace(fit, spec=spec, layout=layout, gcv_scores=gcv)


def refit(fit: FittedCandidate, scalars, scores, y, label: str | None = None) -> FittedCandidate:
    """Re-estimate coefficients on new rows, keeping layout and ``tau`` fixed."""
    return fit_candidate(fit.spec, scalars, scores, y, tau=fit.smoothing_tau, label=label, layout=fit.layout)


def predict(fit: FittedCandidate, new_scalars, new_transformed_scores) -> np.ndarray:
    if fit.layout is None:
        raise LayoutError("fit has no design layout attached")
    Z = assemble_design(fit.layout, new_scalars, new_transformed_scores)
    if Z.shape[1] != fit.coefficients.size:
        raise LayoutError(f"design has {Z.shape[1]} columns but the fit has {fit.coefficients.size} coefficients")
    return Z @ fit.coefficients
