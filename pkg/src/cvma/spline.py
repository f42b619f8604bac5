"""Clamped B-spline bases on [0, 1] and their curvature penalties."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis on the unit interval.

    Parameters
    ----------
    order : int
        Spline order (degree + 1). 4 gives cubic splines.
    interior_knots : tuple of float
        Sorted knots strictly inside (0, 1).
    """

    order: int
    interior_knots: tuple[float, ...]

    def __post_init__(self):
        if self.order < 2:
            raise ValueError(f"order must be >= 2, got {self.order}")
        knots = np.asarray(self.interior_knots, dtype=float)
        if knots.size and (knots.min() <= 0.0 or knots.max() >= 1.0):
            raise ValueError("interior knots must lie strictly inside (0, 1)")
        if np.any(np.diff(knots) < 0):
            raise ValueError("interior knots must be sorted")

    @property
    def n_interior(self) -> int:
        return len(self.interior_knots)

    @property
    def n_basis(self) -> int:
        return self.n_interior + self.order

    @property
    def full_knot_vector(self) -> np.ndarray:
        return np.concatenate(
            [np.zeros(self.order), np.asarray(self.interior_knots, dtype=float), np.ones(self.order)]
        )


def make_basis(n_interior: int, order: int = 4) -> SplineBasis:
    """Basis with ``n_interior`` equally spaced knots at i / (n_interior + 1)."""
    if n_interior < 0:
        raise ValueError(f"n_interior must be >= 0, got {n_interior}")
    knots = tuple(i / (n_interior + 1) for i in range(1, n_interior + 1))
    return SplineBasis(order=order, interior_knots=knots)


def default_n_interior(n: int) -> int:
    """floor(n ** (1/4)) interior knots, clamped to [2, 10]."""
    # integer fourth root, robust to float rounding at perfect powers
    root = math.isqrt(math.isqrt(max(n, 0)))
    return int(min(max(root, 2), 10))


def _cox_de_boor(x: np.ndarray, t: np.ndarray, order: int) -> np.ndarray:
    # Order-1 indicators use half-open spans; x == t[-1] goes to the last nonempty span.
    n_funcs = len(t) - 1
    B = np.zeros((x.size, n_funcs))
    for i in range(n_funcs):
        if t[i + 1] > t[i]:
            B[:, i] = (x >= t[i]) & (x < t[i + 1])
    last = np.flatnonzero(t[1:] > t[:-1])[-1]
    B[x == t[-1], :] = 0.0
    B[x == t[-1], last] = 1.0

    for k in range(2, order + 1):
        n_funcs = len(t) - k
        new = np.zeros((x.size, n_funcs))
        for i in range(n_funcs):
            left = t[i + k - 1] - t[i]
            right = t[i + k] - t[i + 1]
            if left > 0:
                new[:, i] += (x - t[i]) / left * B[:, i]
            if right > 0:
                new[:, i] += (t[i + k] - x) / right * B[:, i + 1]
        B = new
    return B


def _clamp_unit(x: np.ndarray) -> np.ndarray:
    if np.any((x < 0.0) | (x > 1.0)):
        warnings.warn("spline argument outside [0, 1] clamped to the boundary", RuntimeWarning, stacklevel=3)
        x = np.clip(x, 0.0, 1.0)
    return x


def eval_basis(basis: SplineBasis, x, deriv: int = 0) -> np.ndarray:
    """Evaluate all basis functions (or a derivative of them) at ``x``.

    A scalar ``x`` gives a vector of length ``n_basis``; an array gives a
    ``(len(x), n_basis)`` matrix. Points outside [0, 1] are clamped with a
    ``RuntimeWarning``.
    """
    scalar = np.ndim(x) == 0
    xs = _clamp_unit(np.atleast_1d(np.asarray(x, dtype=float)).ravel())
    t = basis.full_knot_vector
    k = basis.order
    if deriv >= k:
        out = np.zeros((xs.size, basis.n_basis))
        return out[0] if scalar else out
    B = _cox_de_boor(xs, t, k - deriv)
    for j in range(k - deriv + 1, k + 1):
        n_funcs = len(t) - j
        new = np.zeros((xs.size, n_funcs))
        for i in range(n_funcs):
            left = t[i + j - 1] - t[i]
            right = t[i + j] - t[i + 1]
            if left > 0:
                new[:, i] += (j - 1) / left * B[:, i]
            if right > 0:
                new[:, i] -= (j - 1) / right * B[:, i + 1]
        B = new
    return B[0] if scalar else B


def penalty_matrix(basis: SplineBasis) -> np.ndarray:
    """Gram matrix of second derivatives, ``S[a, b] = int_0^1 b_a'' b_b'' dx``.

    The integrand is a piecewise polynomial of degree ``2 * (order - 3)``, so
    Gauss-Legendre with ``order - 2`` nodes per knot span is exact.
    """
    nb = basis.n_basis
    S = np.zeros((nb, nb))
    if basis.order < 3:
        return S
    nodes, weights = np.polynomial.legendre.leggauss(max(basis.order - 2, 1))
    breaks = np.unique(basis.full_knot_vector)
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b - a)
        x = a + half * (nodes + 1.0)
        D2 = eval_basis(basis, x, deriv=2)
        S += D2.T @ (D2 * (half * weights)[:, None])
    return 0.5 * (S + S.T)


def greville_abscissae(basis: SplineBasis) -> np.ndarray:
    """Knot averages; coefficients equal to an affine function reproduce it."""
    t = basis.full_knot_vector
    k = basis.order
    return np.array([t[i + 1 : i + k].mean() for i in range(basis.n_basis)])
