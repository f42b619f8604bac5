import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvma.fpca import (
    FunctionalDataset,
    eigendecompose,
    estimate_covariance,
    estimate_mean,
    estimate_scores,
    fit_fpca,
    select_n_components,
    transform_scores,
    trapezoid_weights,
)

from conftest import sine_curves


def phi_oracle(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


class TestDataset:
    def test_rejects_unsorted_grid(self):
        with pytest.raises(ValueError):
            FunctionalDataset(grid=[0.0, 0.5, 0.4], values=np.zeros((2, 3)))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            FunctionalDataset(grid=[0.0, 1.0], values=[[0.0, np.nan], [1.0, 2.0]])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            FunctionalDataset(grid=[0.0, 1.0], values=np.zeros((2, 3)))

    def test_default_bounds(self):
        d = FunctionalDataset(grid=[0.2, 0.7], values=np.zeros((2, 2)))
        assert d.domain_bounds == (0.2, 0.7)


class TestMean:
    def test_two_constants(self):
        d = FunctionalDataset(grid=np.linspace(0, 1, 5), values=np.vstack([np.ones(5), 3 * np.ones(5)]))
        np.testing.assert_array_equal(estimate_mean(d), 2.0)

    def test_identical_curves(self, rng):
        curve = rng.normal(size=20)
        d = FunctionalDataset(grid=np.linspace(0, 1, 20), values=np.tile(curve, (7, 1)))
        np.testing.assert_allclose(estimate_mean(d), curve, rtol=0, atol=1e-15)

    def test_design1_mean_near_zero(self, rng):
        t, U, *_ = sine_curves(rng, 500, noise_var=0.2)
        mean = estimate_mean(FunctionalDataset(grid=t, values=U))
        stderr = U.std(axis=0, ddof=1) / np.sqrt(U.shape[0])
        assert np.all(np.abs(mean) <= 3 * stderr)


class TestCovariance:
    def test_rank_one_off_diagonal(self, rng):
        t = np.linspace(0, 1, 30)
        psi = np.sqrt(2) * np.sin(np.pi * t)
        zeta = rng.normal(size=40)
        d = FunctionalDataset(grid=t, values=np.outer(zeta, psi))
        cov = estimate_covariance(d, estimate_mean(d))
        expected = zeta.var() * np.outer(psi, psi)
        off = ~np.eye(30, dtype=bool)
        np.testing.assert_allclose(cov[off], expected[off], atol=1e-10)

    def test_identical_curves_zero(self):
        d = FunctionalDataset(grid=np.linspace(0, 1, 6), values=np.tile(np.arange(6.0), (4, 1)))
        np.testing.assert_allclose(estimate_covariance(d, estimate_mean(d)), 0.0, atol=1e-15)

    def test_diagonal_uses_neighbours(self, rng):
        d = FunctionalDataset(grid=np.linspace(0, 1, 8), values=rng.normal(size=(10, 8)))
        cov = estimate_covariance(d, estimate_mean(d))
        assert cov[0, 0] == cov[0, 1]
        assert cov[7, 7] == cov[7, 6]
        assert cov[3, 3] == pytest.approx(0.5 * (cov[3, 2] + cov[3, 4]))

    def test_noise_removed_from_diagonal(self, rng):
        t, U, _, lam, psi = sine_curves(rng, 2000, noise_var=0.2)
        d = FunctionalDataset(grid=t, values=U)
        cov = estimate_covariance(d, estimate_mean(d))
        truth = (lam[:, None] * psi**2).sum(axis=0)
        # the true variance vanishes at both ends; stay away from them
        interior = (t >= 0.1) & (t <= 0.9)
        rel = np.abs(np.diag(cov)[interior] - truth[interior]) / truth[interior]
        assert rel.max() < 0.15


class TestEigendecompose:
    def test_analytic_covariance(self):
        t = np.linspace(0, 1, 100)
        k = np.arange(1, 4)
        psi = np.sqrt(2) * np.sin(np.pi * np.outer(k, t))
        cov = (psi.T * k**-1.5) @ psi
        vals, phi = eigendecompose(cov, trapezoid_weights(t), 3)
        assert vals[0] == pytest.approx(1.0, rel=0.01)
        assert np.abs(phi[0] - psi[0]).max() < 0.02

    def test_scaled_identity(self):
        t = np.linspace(0, 1, 11)
        w = trapezoid_weights(t)
        vals, phi = eigendecompose(2.0 * np.eye(11), w, 11)
        np.testing.assert_allclose((phi * w) @ phi.T, np.eye(11), atol=1e-8)
        # W^{1/2} (cI) W^{1/2} has eigenvalues c * w_j
        np.testing.assert_allclose(np.sort(vals), np.sort(2.0 * w), rtol=1e-12)

    def test_rank_one(self, rng):
        t = np.linspace(0, 1, 25)
        psi = rng.normal(size=25)
        vals, _ = eigendecompose(np.outer(psi, psi), trapezoid_weights(t), 5)
        assert vals[0] > 0
        np.testing.assert_allclose(vals[1:], 0.0, atol=1e-12)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            eigendecompose(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2), 1)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            eigendecompose(np.eye(3), np.ones(3), 4)

    def test_sign_convention(self, rng):
        t, U, *_ = sine_curves(rng, 300)
        fit = fit_fpca(FunctionalDataset(grid=t, values=U), n_components=4)
        w = fit.quadrature_weights
        for k in range(4):
            integral = w @ fit.eigenfunctions[k]
            if abs(integral) > 1e-8:
                assert integral > 0
            else:
                first = fit.eigenfunctions[k][np.abs(fit.eigenfunctions[k]) > 1e-8][0]
                assert first > 0

    def test_sign_determinism(self, rng):
        t, U, *_ = sine_curves(rng, 200, noise_var=0.2)
        d = FunctionalDataset(grid=t, values=U)
        a = fit_fpca(d, n_components=5)
        b = fit_fpca(FunctionalDataset(grid=t, values=U.copy()), n_components=5)
        np.testing.assert_array_equal(np.sign(a.eigenfunctions), np.sign(b.eigenfunctions))


class TestScores:
    def test_exact_component(self):
        t = np.linspace(0, 1, 200)
        k = np.arange(1, 4)
        psi = np.sqrt(2) * np.sin(np.pi * np.outer(k, t))
        w = trapezoid_weights(t)
        # orthonormalise under quadrature so the oracle is exact
        _, phi = eigendecompose((psi.T * np.array([3.0, 2.0, 1.0])) @ psi, w, 3)
        nu = np.cos(t)
        d = FunctionalDataset(grid=t, values=(nu + 2.0 * phi[0])[None, :])
        s = estimate_scores(d, nu, phi, w)
        assert s[0, 0] == pytest.approx(2.0, abs=1e-6)
        np.testing.assert_allclose(s[0, 1:], 0.0, atol=1e-6)

    def test_mean_curve_scores_zero(self, rng):
        t = np.linspace(0, 1, 50)
        nu = rng.normal(size=50)
        phi = rng.normal(size=(3, 50))
        s = estimate_scores(FunctionalDataset(grid=t, values=np.tile(nu, (4, 1))), nu, phi, trapezoid_weights(t))
        np.testing.assert_array_equal(s, 0.0)

    def test_first_score_variance(self, rng):
        t, U, *_ = sine_curves(rng, 1000, noise_var=0.2)
        fit = fit_fpca(FunctionalDataset(grid=t, values=U), n_components=3)
        assert fit.scores[:, 0].var(ddof=1) == pytest.approx(1.0, rel=0.15)


class TestTransform:
    def test_zero(self):
        assert transform_scores([[0.0]], [2.0])[0, 0] == 0.5

    @pytest.mark.parametrize("z", [1.0, -2.0, 0.3])
    def test_against_erf(self, z):
        lam = 0.7
        got = transform_scores([[z * math.sqrt(lam)]], [lam])[0, 0]
        assert got == pytest.approx(phi_oracle(z), abs=1e-12)

    def test_reported_values(self):
        got = transform_scores([[1.0, -2.0]], [1.0, 1.0])[0]
        np.testing.assert_allclose(got, [0.841345, 0.022750], atol=1e-6)

    def test_zero_eigenvalue_raises(self):
        with pytest.raises(ValueError, match="non-positive"):
            transform_scores([[1.0, 1.0]], [1.0, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=30), st.floats(1e-3, 10))
    def test_monotone(self, col, lam):
        col = np.array(col)
        xi = transform_scores(col[:, None], [lam])[:, 0]
        order = np.argsort(col, kind="stable")
        assert np.all(np.diff(xi[order]) >= 0)


class TestProperties:
    def test_reconstruction_rank_k(self, rng):
        t = np.linspace(0, 1, 60)
        k = np.arange(1, 4)
        psi = np.sqrt(2) * np.sin(np.pi * np.outer(k, t))
        zeta = rng.normal(size=(50, 3)) * np.array([1.0, 0.5, 0.25])
        nu = t**2
        U = nu + zeta @ psi
        d = FunctionalDataset(grid=t, values=U)
        fit = fit_fpca(d, n_components=3, denoise=False)
        recon = fit.mean + fit.scores @ fit.eigenfunctions
        assert np.abs(recon - U).max() <= 1e-6
        # the neighbour-average diagonal is only O(h^2) accurate on smooth covariances
        fit = fit_fpca(d, n_components=3)
        recon = fit.mean + fit.scores @ fit.eigenfunctions
        assert np.abs(recon - U).max() <= 1e-2

    def test_orthonormal(self, rng):
        t, U, *_ = sine_curves(rng, 300, noise_var=0.2)
        fit = fit_fpca(FunctionalDataset(grid=t, values=U), n_components=8)
        G = (fit.eigenfunctions * fit.quadrature_weights) @ fit.eigenfunctions.T
        np.testing.assert_allclose(G, np.eye(8), atol=1e-8)

    def test_monotone_spectrum(self, rng):
        t, U, *_ = sine_curves(rng, 100, noise_var=0.2)
        fit = fit_fpca(FunctionalDataset(grid=t, values=U), n_components=30)
        assert np.all(np.diff(fit.eigenvalues) <= 0)
        assert np.all(fit.eigenvalues >= 0)

    def test_transformed_in_unit_interval(self, rng):
        t, U, *_ = sine_curves(rng, 100, noise_var=0.2)
        fit = fit_fpca(FunctionalDataset(grid=t, values=U), n_components=3)
        assert np.all((fit.transformed_scores > 0) & (fit.transformed_scores < 1))

    def test_project_matches_training(self, rng):
        t, U, *_ = sine_curves(rng, 100)
        d = FunctionalDataset(grid=t, values=U)
        fit = fit_fpca(d, n_components=3)
        raw, xi = fit.project(d)
        np.testing.assert_allclose(raw, fit.scores, atol=1e-14)
        np.testing.assert_allclose(xi, fit.transformed_scores, atol=1e-14)

    def test_fve_selection(self):
        assert select_n_components([5.0, 3.0, 1.0, 1e-6], fve=0.999) == 3
        assert select_n_components([5.0, 3.0, 1.0, 1e-6], fve=0.999, cap=2) == 2
        assert select_n_components([1.0, 0.0, 0.0]) == 1
