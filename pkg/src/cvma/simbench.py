"""Simulation designs and replicated benchmarks of averaging versus selection rules."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .averaging import averaged_predict, enumerate_candidates
from .ensemble import METHODS, fit_ensemble
from .fpca import FunctionalDataset
from .plfam import DEFAULT_TAU_GRID, FitError

logger = logging.getLogger(__name__)

N_SCALARS = 50
CALIBRATION_DRAWS = 100_000
CALIBRATION_SEED = 20_240_601
REPORT_METHODS = tuple(m.upper() for m in METHODS[1:]) + ("CVMA",)


@dataclass(frozen=True)
class DesignConfig:
    design: int
    n_train: int
    R2: float
    n_test: int = 500
    n_grid: int = 100
    measurement_var: float = 0.2
    seed: int = 0
    replications: int = 1

    def __post_init__(self):
        if self.design not in (1, 2, 3):
            raise ValueError(f"design must be 1, 2 or 3, got {self.design}")
        if not 0.0 < self.R2 < 1.0:
            raise ValueError(f"R2 must lie strictly between 0 and 1, got {self.R2}")
        for name in ("n_train", "n_test", "n_grid", "replications"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.measurement_var < 0:
            raise ValueError("measurement_var must be nonnegative")


@dataclass(frozen=True)
class CandidateConfig:
    mode: str = "nested"
    scalar_pool: tuple[int, ...] = (0, 1, 2, 3, 4)
    score_pool: tuple[int, ...] = (0, 1, 2)
    Q: int = 5

    def specs(self):
        return enumerate_candidates(self.mode, self.scalar_pool, self.score_pool)


@dataclass(frozen=True)
class _DesignParams:
    beta: np.ndarray
    eigenvalues: np.ndarray
    domain: tuple[float, float]
    correlated: bool
    variance_multiplier_mean: float


def _params(design: int) -> _DesignParams:
    j = np.arange(1, N_SCALARS + 1, dtype=float)
    if design == 1:
        return _DesignParams(j**-1.5, np.arange(1, 51, dtype=float) ** -1.5, (0.0, 1.0), False, 1.0)
    if design == 2:
        return _DesignParams(j**-0.5, np.arange(1, 21, dtype=float) ** -2.0, (0.0, 10.0), True, 1.0 / 3.0 + 0.01)
    return _DesignParams(j**-1.0, np.arange(1, 51, dtype=float) ** -1.5, (0.0, 1.0), True, 1.01)


def eigenfunctions(design: int, t) -> np.ndarray:
    """True eigenfunctions evaluated at ``t``; shape ``(len(t), K0)``."""
    t = np.asarray(t, dtype=float)
    K0 = _params(design).eigenvalues.size
    k = np.arange(1, K0 + 1, dtype=float)
    if design == 2:
        return np.cos(np.outer(t, k) * np.pi / 5.0) / math.sqrt(5.0)
    return math.sqrt(2.0) * np.sin(np.outer(t, k) * np.pi)


def additive_components(design: int, xi) -> np.ndarray:
    """Centred additive components ``f_k(xi_k)``, one column per supplied score.

    Each column has mean zero when ``xi_k`` is uniform on (0, 1).
    """
    xi = np.asarray(xi, dtype=float)
    out = np.empty_like(xi)
    K = xi.shape[1]
    if design == 2:
        first = (
            lambda u: 2.0 * (u - 0.5),
            lambda u: 1.5 * (np.exp(u) - math.e + 1.0),
            lambda u: (u - 0.5) ** 2 - 1.0 / 12.0,
        )
        slope = 3.0
    else:
        first = (
            lambda u: 1.5 * ((u - 0.5) ** 2 - 1.0 / 12.0),
            lambda u: u - 0.5,
            lambda u: 1.5 * (np.sin(np.pi * u) - 2.0 / np.pi),
        )
        slope = 1.0
    for k in range(min(K, 3)):
        out[:, k] = first[k](xi[:, k])
    if K > 3:
        out[:, 3:] = (xi[:, 3:] - 0.5) * (slope / np.arange(4, K + 1, dtype=float))
    return out


def additive_part(design: int, xi) -> np.ndarray:
    """Sum of the additive components over the supplied transformed scores."""
    return additive_components(design, xi).sum(axis=1)


@lru_cache(maxsize=None)
def _toeplitz_factor(dim: int) -> np.ndarray:
    idx = np.arange(dim)
    return np.linalg.cholesky(0.5 ** np.abs(idx[:, None] - idx[None, :]))


def _latent(design: int, n: int, rng: np.random.Generator):
    """Scalars ``X``, scores ``zeta`` and exact transformed scores for ``n`` rows."""
    p = _params(design)
    K0 = p.eigenvalues.size
    dim = N_SCALARS + 1 if p.correlated else N_SCALARS
    joint = rng.standard_normal((n, dim)) @ _toeplitz_factor(dim).T
    X = joint[:, :N_SCALARS]
    zeta = rng.standard_normal((n, K0)) * np.sqrt(p.eigenvalues)
    if p.correlated:
        # zeta_1 is the last coordinate of the joint normal; its variance is 1 = lambda_1
        zeta[:, 0] = joint[:, N_SCALARS]
    xi = ndtr(zeta / np.sqrt(p.eigenvalues))
    mu = X @ p.beta + additive_part(design, xi)
    return X, zeta, xi, mu


def _variance_multiplier(design: int, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if design == 1:
        return np.ones(X.shape[0])
    if design == 2:
        return rng.uniform(-1.0, 1.0, X.shape[0]) ** 2 + 0.01
    return X[:, 1] ** 2 + 0.01


@lru_cache(maxsize=None)
def mu_variance(design: int, draws: int = CALIBRATION_DRAWS) -> float:
    """Large-sample variance of the true mean, from one fixed-seed Monte Carlo pass."""
    rng = np.random.default_rng(CALIBRATION_SEED + design)
    return float(np.var(_latent(design, draws, rng)[3]))


def calibrate_noise(config: DesignConfig, mu_var: float | None = None) -> float:
    """Noise scale ``eta`` giving ``var(mu) / var(Y) = R2`` on average.

    Returns
    -------
    float
        ``eta`` with ``eta**2 = var(mu) (1 - R2) / (R2 V)``, ``V`` the mean of
        the heteroscedastic variance multiplier.
    """
    if not 0.0 < config.R2 < 1.0:
        raise ValueError(f"R2 must lie strictly between 0 and 1, got {config.R2}")
    if mu_var is None:
        mu_var = mu_variance(config.design)
    V = _params(config.design).variance_multiplier_mean
    return math.sqrt(mu_var * (1.0 - config.R2) / (config.R2 * V))


@dataclass(frozen=True)
class SimulatedSplit:
    scalars: np.ndarray
    curves: FunctionalDataset
    y: np.ndarray
    mu: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray


def _simulate(design: int, n: int, grid: np.ndarray, eta: float, measurement_var: float, rng) -> SimulatedSplit:
    X, zeta, xi, mu = _latent(design, n, rng)
    U = zeta @ eigenfunctions(design, grid).T
    W = U + math.sqrt(measurement_var) * rng.standard_normal(U.shape)
    eps = eta * np.sqrt(_variance_multiplier(design, X, rng)) * rng.standard_normal(n)
    lo, hi = _params(design).domain
    return SimulatedSplit(X, FunctionalDataset(grid, W, (lo, hi)), mu + eps, mu, zeta, xi)


def design_grid(config: DesignConfig) -> np.ndarray:
    lo, hi = _params(config.design).domain
    return np.linspace(lo, hi, config.n_grid)


def generate_design(config: DesignConfig, seed: int | None = None, eta: float | None = None):
    """Draw a training and a test split; returns ``(train, test)``.

    Each split carries scalars, noisy curves on the design grid, responses
    and the true mean ``mu``.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    eta = calibrate_noise(config) if eta is None else eta
    grid = design_grid(config)
    train = _simulate(config.design, config.n_train, grid, eta, config.measurement_var, rng)
    test = _simulate(config.design, config.n_test, grid, eta, config.measurement_var, rng)
    return train, test


@dataclass
class ReplicationReport:
    """Per-replication errors for every method at one design setting.

    ``mspe[method]`` and ``mse[method]`` hold one value per successful
    replication, in replication order.
    """

    config: DesignConfig
    methods: tuple[str, ...]
    replications: list[int] = field(default_factory=list)
    mspe: dict[str, list[float]] = field(default_factory=dict)
    mse: dict[str, list[float]] = field(default_factory=dict)
    cv_objective: list[float] = field(default_factory=list)
    min_candidate_cv: list[float] = field(default_factory=list)
    failed: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return len(self.failed)

    def mean_mspe(self, method: str) -> float:
        return float(np.mean(self.mspe[method]))

    def mean_mse(self, method: str) -> float:
        return float(np.mean(self.mse[method]))

    def nmspe(self, method: str) -> float:
        return self.mean_mspe(method) / self.mean_mspe("AIC")

    def nmse(self, method: str) -> float:
        return self.mean_mse(method) / self.mean_mse("AIC")


def _canonical_methods(methods) -> tuple[str, ...]:
    out = []
    for m in methods:
        u = str(m).upper()
        if u not in REPORT_METHODS:
            raise ValueError(f"unknown method {m!r}; expected a subset of {REPORT_METHODS}")
        if u not in out:
            out.append(u)
    if "AIC" not in out:
        # every report is normalised by AIC, so it is always computed
        out.insert(0, "AIC")
    return tuple(out)


def run_one(config: DesignConfig, candidates: CandidateConfig, replication: int, methods, tau_grid=DEFAULT_TAU_GRID):
    """One replication: returns ``(mspe, mse, cv_objective, min_candidate_cv)``."""
    seed = config.seed + replication
    train, test = generate_design(config, seed=seed)
    ens = fit_ensemble(
        train.scalars, train.curves, train.y, candidates.specs(), Q=candidates.Q, seed=seed, tau_grid=tau_grid
    )
    xi_test = ens.transformed_scores(test.curves)
    mspe, mse = {}, {}
    for m in methods:
        pred = averaged_predict(ens.fits, ens.method_weights(m), test.scalars, xi_test)
        mspe[m] = float(np.mean((pred - test.y) ** 2))
        mse[m] = float(np.mean((ens.fitted(m) - train.mu) ** 2))
    return mspe, mse, ens.cv_objective(), float(ens.candidate_cv().min())


def run_replications(
    config: DesignConfig,
    candidates: CandidateConfig | None = None,
    methods: Sequence[str] = REPORT_METHODS,
    tau_grid=DEFAULT_TAU_GRID,
) -> ReplicationReport:
    """Run ``config.replications`` replications; replication ``d`` uses seed ``config.seed + d``.

    A replication whose fit fails is recorded in ``failed`` and excluded.
    """
    candidates = candidates or CandidateConfig()
    methods = _canonical_methods(methods)
    report = ReplicationReport(config=config, methods=methods)
    for m in methods:
        report.mspe[m] = []
        report.mse[m] = []
    for d in range(config.replications):
        try:
            mspe, mse, cvo, cvmin = run_one(config, candidates, d, methods, tau_grid)
        except (FitError, np.linalg.LinAlgError) as exc:
            logger.warning("replication %d failed: %s", d, exc)
            report.failed.append((d, str(exc)))
            continue
        report.replications.append(d)
        for m in methods:
            report.mspe[m].append(mspe[m])
            report.mse[m].append(mse[m])
        report.cv_objective.append(cvo)
        report.min_candidate_cv.append(cvmin)
    if not report.replications:
        raise FitError(f"all {config.replications} replications failed")
    return report


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def raw_csv(reports: Sequence[ReplicationReport]) -> str:
    """Per-replication CSV with header ``design,R2,n,method,replication,mspe,mse``."""
    buf = io.StringIO()
    buf.write("design,R2,n,method,replication,mspe,mse\n")
    for r in reports:
        c = r.config
        for m in r.methods:
            for d, a, b in zip(r.replications, r.mspe[m], r.mse[m]):
                buf.write(f"{c.design},{_fmt(c.R2)},{c.n_train},{m},{d},{_fmt(a)},{_fmt(b)}\n")
    return buf.getvalue()


def summary_csv(reports: Sequence[ReplicationReport]) -> str:
    """Normalised CSV with header ``design,R2,n,method,nmspe,nmse``."""
    buf = io.StringIO()
    buf.write("design,R2,n,method,nmspe,nmse\n")
    for r in reports:
        c = r.config
        for m in r.methods:
            buf.write(f"{c.design},{_fmt(c.R2)},{c.n_train},{m},{_fmt(r.nmspe(m))},{_fmt(r.nmse(m))}\n")
    return buf.getvalue()


def nmspe_table(reports: Sequence[ReplicationReport] | ReplicationReport):
    """NMSPE with methods as rows and R2 levels as columns.

    Returns
    -------
    r2_levels : list of float
    methods : list of str
    table : ndarray, shape (n_methods, n_levels)
    """
    if isinstance(reports, ReplicationReport):
        reports = [reports]
    levels = sorted({r.config.R2 for r in reports})
    methods: list[str] = []
    for r in reports:
        methods.extend(m for m in r.methods if m not in methods)
    table = np.full((len(methods), len(levels)), np.nan)
    for r in reports:
        j = levels.index(r.config.R2)
        for m in r.methods:
            table[methods.index(m), j] = r.nmspe(m)
    return levels, methods, table


def render_table(reports) -> str:
    levels, methods, table = nmspe_table(reports)
    head = "method  " + "".join(f"R2={lv:<8g}" for lv in levels)
    lines = [head]
    for m, row in zip(methods, table):
        lines.append(f"{m:<8}" + "".join(f"{v:<11.4f}" for v in row))
    return "\n".join(lines)
