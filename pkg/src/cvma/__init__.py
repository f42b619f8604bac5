"""Cross-validation model averaging for partially linear functional additive models."""

from .averaging import (
    CriterionScores,
    FoldPlan,
    WeightVector,
    averaged_predict,
    criterion_scores,
    cv_prediction_matrix,
    cv_quadratic_form,
    enumerate_candidates,
    make_fold_plan,
    solve_simplex_qp,
)
from .ensemble import EnsembleFit, fit_ensemble
from .fpca import FpcaFit, FunctionalDataset, fit_fpca
from .plfam import CandidateSpec, FitError, FittedCandidate, fit_candidate, predict
from .spline import SplineBasis, eval_basis, make_basis, penalty_matrix

__version__ = "0.1.0"

__all__ = [
    "CandidateSpec",
    "CriterionScores",
    "EnsembleFit",
    "FitError",
    "FittedCandidate",
    "FoldPlan",
    "FpcaFit",
    "FunctionalDataset",
    "SplineBasis",
    "WeightVector",
    "averaged_predict",
    "criterion_scores",
    "cv_prediction_matrix",
    "cv_quadratic_form",
    "enumerate_candidates",
    "eval_basis",
    "fit_candidate",
    "fit_ensemble",
    "fit_fpca",
    "make_basis",
    "make_fold_plan",
    "penalty_matrix",
    "predict",
    "solve_simplex_qp",
]
