"""Separable squared-exponential prior and its whitening basis."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynct.errors import ConfigError, NumericError
from dynct.prior import (PriorConfig, build_projection, dense_covariance,
                         se_covariance_entry, se_kernel_1d)
from oracles import dense_se_covariance


def test_dense_covariance_matches_pairwise_oracle():
    for n_x, n_y, alpha, ell in ((5, 4, 1.3, 2.0), (6, 6, 0.28, 1.1)):
        got = dense_covariance(n_x, n_y, alpha, ell)
        want = dense_se_covariance(n_x, n_y, alpha, ell)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_entry_function_agrees_with_dense():
    alpha, ell = 0.9, 1.7
    sig = dense_covariance(4, 3, alpha, ell)
    for p_flat in range(12):
        for q_flat in range(12):
            p = divmod(p_flat, 3)
            q = divmod(q_flat, 3)
            assert np.isclose(sig[p_flat, q_flat],
                              se_covariance_entry(p, q, alpha, ell),
                              atol=1e-14)


def test_full_rank_basis_reproduces_covariance():
    n_x, n_y = 7, 6
    cfg = PriorConfig(alpha=1.1, ell=0.9, rank=n_x * n_y)
    basis = build_projection(n_x, n_y, cfg)
    np.testing.assert_allclose(basis.P @ basis.P.T,
                               dense_covariance(n_x, n_y, 1.1, 0.9),
                               atol=1e-10)


def test_truncated_basis_is_best_rank_r():
    n_x = n_y = 6
    sig = dense_covariance(n_x, n_y, 1.0, 1.4)
    vals = np.linalg.eigvalsh(sig)[::-1]
    r = 10
    basis = build_projection(n_x, n_y, PriorConfig(alpha=1.0, ell=1.4, rank=r))
    # retained spectrum matches the top of the dense spectrum
    np.testing.assert_allclose(np.sort(basis.eigenvalues)[::-1], vals[:r],
                               rtol=1e-10)
    # approximation error equals the tail eigenvalue sum (in trace norm)
    err = np.trace(sig - basis.P @ basis.P.T)
    np.testing.assert_allclose(err, vals[r:].sum(), rtol=1e-8)


def test_eigenvalues_descending_with_lexicographic_ties():
    basis = build_projection(5, 5, PriorConfig(alpha=1.0, ell=1.2, rank=25))
    vals = basis.eigenvalues
    assert np.all(np.diff(vals) <= 1e-12 * vals[0])
    for k in range(len(vals) - 1):
        if np.isclose(vals[k], vals[k + 1], rtol=1e-12):
            assert tuple(basis.index_pairs[k]) <= tuple(basis.index_pairs[k + 1])


def test_sign_convention_first_nonzero_positive():
    basis = build_projection(6, 5, PriorConfig(alpha=1.0, ell=1.3, rank=30))
    for k in range(basis.P.shape[1]):
        col = basis.P[:, k]
        nz = np.flatnonzero(np.abs(col) > 0)
        assert col[nz[0]] > 0


def test_tiny_ell_gives_scaled_identity():
    alpha = 0.7
    basis = build_projection(4, 4, PriorConfig(alpha=alpha, ell=0.01, rank=16))
    np.testing.assert_allclose(basis.P, alpha * np.eye(16), atol=1e-12)


def test_whitening_invariant():
    n_x, n_y, alpha, ell = 6, 5, 1.2, 1.5
    sig = dense_covariance(n_x, n_y, alpha, ell)
    for r in (5, 12, 30):
        basis = build_projection(n_x, n_y,
                                 PriorConfig(alpha=alpha, ell=ell, rank=r))
        white = basis.P.T @ np.linalg.solve(sig, basis.P)
        np.testing.assert_allclose(white, np.eye(r), atol=1e-8)


def test_scalar_grid():
    basis = build_projection(1, 1, PriorConfig(alpha=0.4, ell=2.0, rank=1))
    np.testing.assert_allclose(basis.P, [[0.4]], atol=1e-15)


def test_underflow_guard():
    with pytest.raises(NumericError):
        build_projection(12, 12, PriorConfig(alpha=1.0, ell=1e8, rank=144))


def test_rank_validation():
    with pytest.raises(ConfigError):
        build_projection(4, 4, PriorConfig(alpha=1.0, ell=1.0, rank=17))
    with pytest.raises(ConfigError):
        PriorConfig(alpha=0.0, ell=1.0, rank=4)
    with pytest.raises(ConfigError):
        PriorConfig(alpha=1.0, ell=-1.0, rank=4)
    with pytest.raises(ConfigError):
        PriorConfig(alpha=1.0, ell=1.0, rank=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 7), st.integers(2, 7),
       st.floats(0.2, 3.0), st.floats(0.3, 4.0))
def test_kernel_symmetric_psd(n_x, n_y, alpha, ell):
    sig = dense_covariance(n_x, n_y, alpha, ell)
    np.testing.assert_allclose(sig, sig.T, atol=1e-13)
    vals = np.linalg.eigvalsh(sig)
    assert vals.min() >= -1e-10 * max(vals.max(), 1.0)


def test_1d_kernel_unit_diagonal():
    k = se_kernel_1d(9, 1.7)
    np.testing.assert_allclose(np.diag(k), 1.0, atol=1e-15)
    assert k.max() <= 1.0 + 1e-15
