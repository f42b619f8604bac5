import numpy as np
import pytest

from cvma.plfam import (
    DEFAULT_TAU_GRID,
    CandidateSpec,
    FitError,
    LayoutError,
    assemble_design,
    fit_candidate,
    fit_penalized,
    make_layout,
    predict,
    refit,
    select_smoothing,
)
from cvma.spline import make_basis, penalty_matrix


def _data(rng, n=80, p=3, k=3):
    return rng.normal(size=(n, p)), rng.uniform(0.01, 0.99, size=(n, k))


class TestSpec:
    def test_sorted(self):
        s = CandidateSpec((2, 0), (1, 0))
        assert s.scalar_columns == (0, 2) and s.score_columns == (0, 1)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            CandidateSpec((), ())

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            CandidateSpec((1, 1), ())


class TestAssembleDesign:
    def test_scalar_only(self, rng):
        X = rng.normal(size=(10, 2))
        Z = assemble_design(CandidateSpec((1,), ()), X, None)
        np.testing.assert_array_equal(Z, np.column_stack([np.ones(10), X[:, 1]]))

    def test_bernstein_block(self, rng):
        xi = rng.uniform(size=(12, 2))
        Z = assemble_design(CandidateSpec((), (1,), n_interior=0), None, xi)
        assert Z.shape == (12, 5)
        np.testing.assert_allclose(Z[:, 1:].sum(axis=1), 1.0, atol=1e-12)

    def test_column_order(self, rng):
        X, xi = _data(rng, n=20)
        spec = CandidateSpec((2, 0), (2, 0), n_interior=1)
        Z = assemble_design(spec, X, xi)
        assert Z.shape == (20, 1 + 2 + 5 + 5)
        np.testing.assert_array_equal(Z[:, 1], X[:, 0])
        np.testing.assert_array_equal(Z[:, 2], X[:, 2])
        np.testing.assert_allclose(Z[:, 3:8], assemble_design(CandidateSpec((), (0,), n_interior=1), None, xi)[:, 1:])

    def test_index_out_of_range(self, rng):
        X, xi = _data(rng, n=10, p=2, k=2)
        with pytest.raises(LayoutError):
            assemble_design(CandidateSpec((5,), ()), X, xi)
        with pytest.raises(LayoutError):
            assemble_design(CandidateSpec((0,), (3,)), X, xi)


class TestFitPenalized:
    def test_ols_equivalence(self, rng):
        X = rng.normal(size=(50, 4))
        Z = np.column_stack([np.ones(50), X])
        y = rng.normal(size=50)
        ref, *_ = np.linalg.lstsq(Z, y, rcond=None)
        for tau in (1e-6, 1.0, 1e6):
            fit = fit_penalized(Z, [], y, tau)
            np.testing.assert_allclose(fit.coefficients, ref, atol=1e-8)

    def test_heavy_penalty_leaves_affine(self, rng):
        X, xi = _data(rng, n=80, p=2, k=1)
        y = rng.normal(size=80)
        spec = CandidateSpec((0, 1), (0,), n_interior=3)
        fit = fit_candidate(spec, X, xi, y, tau=1e12)
        # oracle: rank of the surviving span {1, X, xi}
        oracle = np.linalg.matrix_rank(np.column_stack([np.ones(80), X, xi]))
        assert oracle == 4
        assert fit.edf == pytest.approx(oracle, abs=0.1)
        grid = np.linspace(0, 1, 101)
        component = assemble_design(fit.layout, np.zeros((101, 2)), grid[:, None])[:, 3:] @ fit.coefficients[3:]
        assert np.abs(np.diff(component, 2)).max() < 1e-6

    def test_interpolates_representable_signal(self, rng):
        X, xi = _data(rng, n=60, p=2, k=2)
        spec = CandidateSpec((0, 1), (0, 1), n_interior=2)
        layout = make_layout(spec, 60)
        Z = assemble_design(layout, X, xi)
        theta = rng.normal(size=Z.shape[1])
        theta[list(layout.aliased_columns())] = 0.0
        y = Z @ theta
        fit = fit_candidate(spec, X, xi, y, tau=1e-12)
        np.testing.assert_allclose(fit.fitted, y, atol=1e-6)

    def test_tau_must_be_positive(self, rng):
        X, xi = _data(rng)
        with pytest.raises(ValueError):
            fit_candidate(CandidateSpec((0,), (0,)), X, xi, rng.normal(size=80), tau=0.0)

    def test_singular_raises_named(self):
        Z = np.zeros((5, 2))
        with pytest.raises(FitError, match="cand-7"):
            fit_penalized(Z, [], np.ones(5), 1.0, label="cand-7")

    def test_edf_equals_rank_small_tau(self, rng):
        Z = np.column_stack([np.ones(40), rng.normal(size=(40, 5))])
        fit = fit_penalized(Z, [], rng.normal(size=40), 1e-12)
        assert fit.edf == pytest.approx(np.linalg.matrix_rank(Z), abs=1e-6)

    def test_edf_equals_rank_with_blocks(self, rng):
        X, xi = _data(rng, n=100, p=2, k=2)
        spec = CandidateSpec((0, 1), (0, 1), n_interior=3)
        Z = assemble_design(spec, X, xi)
        fit = fit_candidate(spec, X, xi, rng.normal(size=100), tau=1e-12)
        assert fit.edf == pytest.approx(np.linalg.matrix_rank(Z), abs=1e-6)

    def test_objective_is_minimal(self, rng):
        X, xi = _data(rng)
        y = rng.normal(size=80)
        spec = CandidateSpec((0, 2), (0, 1), n_interior=3)
        fit = fit_candidate(spec, X, xi, y, tau=0.3)
        Z = assemble_design(fit.layout, X, xi)
        S = np.zeros((Z.shape[1], Z.shape[1]))
        for sl, block in fit.layout.penalty_blocks():
            S[sl, sl] = 0.3 * block

        def objective(theta):
            return np.sum((y - Z @ theta) ** 2) + theta @ S @ theta

        best = objective(fit.coefficients)
        for _ in range(50):
            delta = rng.normal(scale=1e-3, size=fit.coefficients.size)
            assert best <= objective(fit.coefficients + delta) + 1e-12

    def test_block_order_invariance(self, rng):
        X, xi = _data(rng)
        y = rng.normal(size=80)
        basis = make_basis(3, 4)
        from cvma.spline import eval_basis

        B0, B1 = eval_basis(basis, xi[:, 0]), eval_basis(basis, xi[:, 1])
        S = penalty_matrix(basis)
        one = np.ones((80, 1))
        Za = np.hstack([one, X[:, :1], B0, B1])
        Zb = np.hstack([one, X[:, :1], B1, B0])
        blocks = [(slice(2, 9), S), (slice(9, 16), S)]
        fa = fit_penalized(Za, blocks, y, 0.5, aliased=(8, 15))
        fb = fit_penalized(Zb, blocks, y, 0.5, aliased=(8, 15))
        np.testing.assert_allclose(fa.fitted, fb.fitted, atol=1e-10)

    def test_aliasing_does_not_change_fit(self, rng):
        # pinned columns vs. an unconstrained minimum-norm solve of the same objective
        X, xi = _data(rng, n=70, p=1, k=2)
        y = rng.normal(size=70)
        spec = CandidateSpec((0,), (0, 1), n_interior=2)
        fit = fit_candidate(spec, X, xi, y, tau=0.1)
        Z = assemble_design(fit.layout, X, xi)
        S = np.zeros((Z.shape[1],) * 2)
        for sl, block in fit.layout.penalty_blocks():
            S[sl, sl] = 0.1 * block
        theta = np.linalg.pinv(Z.T @ Z + S) @ Z.T @ y
        np.testing.assert_allclose(fit.fitted, Z @ theta, atol=1e-8)

    def test_sigma2_nested(self, rng):
        X, xi = _data(rng, n=90, p=3, k=3)
        y = rng.normal(size=90)
        specs = [CandidateSpec((0,), (0,)), CandidateSpec((0, 1), (0,)), CandidateSpec((0, 1), (0, 1)),
                 CandidateSpec((0, 1, 2), (0, 1, 2))]
        s2 = [fit_candidate(s, X, xi, y, tau=1e-12).sigma2_hat for s in specs]
        assert all(a >= b - 1e-12 for a, b in zip(s2, s2[1:]))


class TestSelectSmoothing:
    def test_linear_model_constant_gcv(self, rng):
        Z = np.column_stack([np.ones(30), rng.normal(size=30)])
        tau, scores = select_smoothing(Z, [], rng.normal(size=30))
        assert np.all(scores == scores[0])
        assert tau == DEFAULT_TAU_GRID.min()

    def test_smooth_noiseless_signal_picks_min(self, rng):
        n = 100
        xi = rng.uniform(size=(n, 1))
        spec = CandidateSpec((), (0,), n_interior=3)
        layout = make_layout(spec, n)
        Z = assemble_design(layout, None, xi)
        theta = np.zeros(Z.shape[1])
        theta[1:8] = [0.0, 2.0, -1.0, 3.0, 0.5, -2.0, 0.0]
        y = Z @ theta
        tau, _ = select_smoothing(Z, layout.penalty_blocks(), y, aliased=layout.aliased_columns())
        assert tau == DEFAULT_TAU_GRID.min()

    @staticmethod
    def _noise_fits():
        spec = CandidateSpec((), (0,), n_interior=3)
        fits = []
        for seed in range(100):
            r = np.random.default_rng(seed)
            xi = r.uniform(size=(100, 1))
            fits.append(fit_candidate(spec, None, xi, r.normal(size=100)))
        return fits

    @pytest.mark.xfail(strict=True, reason="GCV undersmooths pure noise in ~40% of replications")
    def test_pure_noise_picks_heavy_smoothing(self):
        top = np.sort(DEFAULT_TAU_GRID)[-5:]
        hits = sum(f.smoothing_tau >= top[0] for f in self._noise_fits())
        assert hits >= 90

    def test_pure_noise_mostly_near_linear(self):
        fits = self._noise_fits()
        top = np.sort(DEFAULT_TAU_GRID)[-1]
        taus = np.array([f.smoothing_tau for f in fits])
        # grid maximum is the modal choice and most selected fits stay close to a line
        assert np.mean(taus == top) >= 0.5
        assert np.mean([f.edf < 3.0 for f in fits]) >= 0.75

    def test_ties_prefer_smaller(self, rng):
        Z = np.ones((10, 1))
        tau, _ = select_smoothing(Z, [], rng.normal(size=10), grid=[5.0, 1.0, 3.0])
        assert tau == 1.0

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            select_smoothing(np.ones((3, 1)), [], np.ones(3), grid=[])


class TestPredict:
    def test_training_rows(self, rng):
        X, xi = _data(rng)
        y = rng.normal(size=80)
        fit = fit_candidate(CandidateSpec((0, 1), (0, 2)), X, xi, y)
        np.testing.assert_allclose(predict(fit, X, xi), fit.fitted, atol=1e-12)

    def test_intercept_only(self, rng):
        y = rng.normal(size=25)
        fit = fit_penalized(np.ones((25, 1)), [], y, 1.0)
        np.testing.assert_allclose(fit.fitted, y.mean(), atol=1e-12)

    def test_linear_extrapolation(self):
        x = np.arange(1.0, 6.0)[:, None]
        fit = fit_candidate(CandidateSpec((0,), ()), x, None, 2 * x[:, 0])
        assert predict(fit, np.array([[3.0]]), None)[0] == pytest.approx(6.0, abs=1e-8)

    def test_layout_mismatch(self, rng):
        X, xi = _data(rng)
        fit = fit_candidate(CandidateSpec((2,), (2,)), X, xi, rng.normal(size=80))
        with pytest.raises(LayoutError):
            predict(fit, X[:, :2], xi)

    def test_clamps_scores(self, rng):
        X, xi = _data(rng)
        fit = fit_candidate(CandidateSpec((0,), (0,)), X, xi, rng.normal(size=80))
        new = xi[:3].copy()
        new[0, 0] = 1.2
        with pytest.warns(RuntimeWarning):
            out = predict(fit, X[:3], new)
        new[0, 0] = 1.0
        np.testing.assert_allclose(out, predict(fit, X[:3], new))

    def test_refit_keeps_tau_and_layout(self, rng):
        X, xi = _data(rng)
        y = rng.normal(size=80)
        fit = fit_candidate(CandidateSpec((0,), (0, 1)), X, xi, y)
        sub = refit(fit, X[:60], xi[:60], y[:60])
        assert sub.smoothing_tau == fit.smoothing_tau
        assert sub.layout == fit.layout
