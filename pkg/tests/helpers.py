"""Shared fixtures-as-functions and independent oracles for the test suite."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from jntsel.data_model import CalibrationRecord, Dataset, RunSpectrum


def make_dataset(s_r, s_q=None, freqs=None, a0_calc=None, hours=None, days=None):
    """Dataset from an (n_runs, n_blocks) array of s_r values."""
    s_r = np.atleast_2d(np.asarray(s_r, dtype=float))
    n, m = s_r.shape
    s_q = np.ones_like(s_r) if s_q is None else np.broadcast_to(np.asarray(s_q, float), s_r.shape)
    freqs = np.arange(1, m + 1) * 1000.0 if freqs is None else np.asarray(freqs, float)
    a0_calc = [1.0] * n if a0_calc is None else a0_calc
    hours = [1.0] * n if hours is None else hours
    days = list(range(n)) if days is None else days
    runs = [RunSpectrum(i + 1, freqs, s_r[i], s_q[i], hours[i], float(days[i])) for i in range(n)]
    cals = [CalibrationRecord(i + 1, a0_calc[i]) for i in range(n)]
    return Dataset.build(runs, cals)


def poly_values(coeffs, freqs, f0=1e6):
    x2 = (np.asarray(freqs, float) / f0) ** 2
    return sum(c * x2**i for i, c in enumerate(coeffs))


def exact_inverse(matrix):
    """Inverse of a float matrix by exact rational elimination."""
    inv = _rational_inverse([[Fraction(float(v)) for v in row] for row in np.asarray(matrix)])
    return np.array([[float(v) for v in row] for row in inv])


def _rational_inverse(a):
    """Gauss-Jordan elimination with partial pivoting on Fraction entries."""
    a = [list(row) for row in a]
    n = len(a)
    inv = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for c in range(n):
        piv = max(range(c, n), key=lambda r: abs(a[r][c]))
        if a[piv][c] == 0:
            raise ZeroDivisionError("singular")
        a[c], a[piv] = a[piv], a[c]
        inv[c], inv[piv] = inv[piv], inv[c]
        p = a[c][c]
        a[c] = [v / p for v in a[c]]
        inv[c] = [v / p for v in inv[c]]
        for r in range(n):
            if r != c and a[r][c] != 0:
                m = a[r][c]
                a[r] = [x - m * y for x, y in zip(a[r], a[c])]
                inv[r] = [x - m * y for x, y in zip(inv[r], inv[c])]
    return inv


def normal_equations(X, y, w=None):
    """Weighted LS from normal equations formed and solved in exact rationals.

    Returns ``(beta, (X^T W X)^{-1})`` for the given float inputs, rounded
    to float only at the end.
    """
    X = [[Fraction(float(v)) for v in row] for row in np.asarray(X, float)]
    y = [Fraction(float(v)) for v in np.asarray(y, float)]
    w = [Fraction(1)] * len(y) if w is None else [Fraction(float(v)) for v in np.asarray(w, float)]
    p = len(X[0])
    xtwx = [[sum(w[k] * X[k][i] * X[k][j] for k in range(len(y))) for j in range(p)] for i in range(p)]
    xtwy = [sum(w[k] * X[k][i] * y[k] for k in range(len(y))) for i in range(p)]
    inv = _rational_inverse(xtwx)
    beta = [sum(inv[i][j] * xtwy[j] for j in range(p)) for i in range(p)]
    return np.array([float(b) for b in beta]), np.array([[float(v) for v in row] for row in inv])
