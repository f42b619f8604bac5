"""End-to-end fit of a candidate family: FPCA, candidate fits, CV weights, criteria."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .averaging import (
    CriterionScores,
    FoldPlan,
    WeightVector,
    averaged_predict,
    criterion_scores,
    cv_prediction_matrix,
    cv_quadratic_form,
    make_fold_plan,
    solve_simplex_qp,
)
from .fpca import FpcaFit, FunctionalDataset, fit_fpca
from .plfam import DEFAULT_TAU_GRID, CandidateSpec, FitError, FittedCandidate, fit_candidate

METHODS = ("cvma", "aic", "bic", "saic", "sbic")


def normalize_method(method: str) -> str:
    m = str(method).lower()
    if m not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    return m


@dataclass
class EnsembleFit:
    """Everything needed to predict with any of the averaging or selection rules.

    Attributes
    ----------
    fpca : FpcaFit
        Functional decomposition estimated once on the full training sample.
    fits : list of FittedCandidate
        Candidates fitted on the full training sample with their GCV ``tau``.
    cv_form : ndarray, shape (M, M)
        Quadratic form of the Q-fold criterion.
    weights : WeightVector
        Minimiser of the Q-fold criterion over the simplex.
    """

    fpca: FpcaFit
    specs: list[CandidateSpec]
    fits: list[FittedCandidate]
    plan: FoldPlan
    cv_matrix: np.ndarray
    cv_form: np.ndarray
    weights: WeightVector
    criteria: CriterionScores
    scalar_names: tuple[str, ...] | None = None
    n_train: int = field(default=0)

    @property
    def n_candidates(self) -> int:
        return len(self.fits)

    @property
    def n_scores(self) -> int:
        """Number of transformed scores the candidates may reference."""
        return self.fpca.n_components

    def method_weights(self, method: str = "cvma") -> np.ndarray:
        m = normalize_method(method)
        M = self.n_candidates
        if m == "cvma":
            return self.weights.weights.copy()
        if m in ("aic", "bic"):
            w = np.zeros(M)
            w[self.criteria.aic_index if m == "aic" else self.criteria.bic_index] = 1.0
            return w
        return (self.criteria.saic_weights if m == "saic" else self.criteria.sbic_weights).copy()

    def transformed_scores(self, curves: FunctionalDataset) -> np.ndarray:
        _, xi = self.fpca.project(curves)
        return xi

    def predict(self, scalars, curves: FunctionalDataset, method: str = "cvma") -> np.ndarray:
        xi = self.transformed_scores(curves)
        return averaged_predict(self.fits, self.method_weights(method), scalars, xi)

    def fitted(self, method: str = "cvma") -> np.ndarray:
        """Training-sample fitted values of the weighted or selected model."""
        w = self.method_weights(method)
        out = np.zeros_like(self.fits[0].fitted)
        for wm, fit in zip(w, self.fits):
            if wm >= 1e-8:
                out = out + wm * fit.fitted
        return out

    def cv_objective(self) -> float:
        return float(self.weights.objective)

    def candidate_cv(self) -> np.ndarray:
        """Q-fold criterion of each candidate on its own (the diagonal of ``cv_form``)."""
        return np.diag(self.cv_form).copy()


def fit_ensemble(
    scalars,
    curves: FunctionalDataset,
    y,
    specs: Sequence[CandidateSpec],
    *,
    Q: int = 5,
    seed: int | None = 0,
    tau_grid=DEFAULT_TAU_GRID,
    n_components: int | None = None,
    n_jobs: int | None = None,
    scalar_names: Sequence[str] | None = None,
) -> EnsembleFit:
    """Fit every candidate, the Q-fold averaging weights and the criterion baselines.

    The number of FPCA components defaults to the largest score index any
    candidate uses, so every requested score exists.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    scalars = np.asarray(scalars, dtype=float).reshape(n, -1)
    if curves.n_curves != n:
        raise ValueError(f"{curves.n_curves} curves but {n} responses")
    specs = list(specs)
    if not specs:
        raise ValueError("no candidate models given")
    needed_x = max((max(s.scalar_columns) + 1 for s in specs if s.scalar_columns), default=0)
    if needed_x > scalars.shape[1]:
        raise ValueError(f"candidates use {needed_x} scalar columns but only {scalars.shape[1]} were given")
    needed_k = max((max(s.score_columns) + 1 for s in specs if s.score_columns), default=1)
    K = needed_k if n_components is None else n_components
    if K < needed_k:
        raise ValueError(f"candidates use {needed_k} scores but n_components={K}")
    fp = fit_fpca(curves, n_components=K)
    xi = fp.transformed_scores
    fits = [
        fit_candidate(s, scalars, xi, y, tau_grid=tau_grid, label=f"candidate {m}")
        for m, s in enumerate(specs)
    ]
    plan = make_fold_plan(n, Q, seed)
    cvmat = cv_prediction_matrix(fits, scalars, xi, y, plan, n_jobs=n_jobs)
    E = cv_quadratic_form(cvmat, y)
    wv = solve_simplex_qp(E)
    crit = criterion_scores(fits, n)
    if not np.all(np.isfinite(wv.weights)):
        raise FitError("averaging weights are not finite")
    return EnsembleFit(
        fpca=fp,
        specs=specs,
        fits=fits,
        plan=plan,
        cv_matrix=cvmat.matrix,
        cv_form=E,
        weights=wv,
        criteria=crit,
        scalar_names=None if scalar_names is None else tuple(scalar_names),
        n_train=n,
    )
