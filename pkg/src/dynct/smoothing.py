"""Backward (RTS-type) smoother on the reduced filter output.

The mean recursion needs only operator-vector products: with
d = x_i^sm - x_i^p and the Woodbury expansion of (C_i^p)^{-1},

    x_{i-1}^sm = x_{i-1}^est + P Psi_{i-1}^est (M P)^T (C_i^p)^{-1} d,

where (M P)^T v = P^T (M^T v) and (C_i^p)^{-1} d unrolls to diagonal scalings
plus r-vector solves.  Covariance quantities (needed by the EM updates) run
on r x r matrices with the same chunked Gramians the filter uses:

    gain                 K_i = P^T (C_i^p)^{-1} (M_i P)
    Psi_{i-1}^sm = Psi_{i-1}^est
        + Psi_{i-1}^est (K_i^T Psi_i^sm K_i - N_i) Psi_{i-1}^est,
    N_i = (M_i P)^T (C_i^p)^{-1} (M_i P).

The lag-one cross covariance is C_{i,i-1}^sm = P Psi_i^sm K_i Psi_{i-1}^est P^T,
available in factored form and never assembled densely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import motion_gram_triple, psd_sqrt, sym_solve, symmetrize
from .errors import ConfigError
from .filtering import FilterResult, NoiseModel
from .linops import LinearOperator
from .metrics import MemoryTracker, NullTracker
from .prior import ProjectionBasis


@dataclass
class SmootherResult:
    x_sm: np.ndarray           # (T+1, n_s) smoothed means
    psi_sm: list | None        # T+1 reduced covariances, or None
    gains: list | None         # K_i for i = 1..T (gains[i-1]), or None


def smooth_step(x_est_prev, psi_est_prev, x_pred_i, x_sm_i, psi_sm_i,
                motion: LinearOperator, q_diag, P,
                with_covariance: bool = False):
    """One backward step; returns (x_sm_prev, psi_sm_prev, K_i).

    psi_sm_prev and K_i are None unless with_covariance is set.
    """
    r = P.shape[1]
    q_inv = 1.0 / np.asarray(q_diag, dtype=float)
    A = psd_sqrt(psi_est_prev)
    d = x_sm_i - x_pred_i

    g_mm, g_mp, _ = motion_gram_triple(motion, P, q_inv)
    S = symmetrize(A.T @ g_mm @ A) + np.eye(r)

    # v = (C^p)^{-1} d via the Woodbury identity, vectors only
    w = P.T @ motion.apply_transpose(q_inv * d)
    z = A @ sym_solve(S, A.T @ w, "smoother capacitance")
    v = q_inv * d - q_inv * motion.apply(P @ z)

    x_sm_prev = x_est_prev + P @ (psi_est_prev @ (P.T @ motion.apply_transpose(v)))

    psi_sm_prev = None
    K = None
    if with_covariance:
        E = A.T @ g_mp
        F = A.T @ g_mm
        S_inv_F = sym_solve(S, F, "smoother gain")
        K = g_mp.T - E.T @ S_inv_F
        N = symmetrize(g_mm - F.T @ S_inv_F)
        bracket = symmetrize(K.T @ psi_sm_i @ K) - N
        psi_sm_prev = symmetrize(
            psi_est_prev + psi_est_prev @ bracket @ psi_est_prev)
    return x_sm_prev, psi_sm_prev, K


def run_smoother(filt: FilterResult, motions, noise: NoiseModel,
                 basis: ProjectionBasis, with_covariance: bool = False,
                 tracker: MemoryTracker | None = None) -> SmootherResult:
    """Backward pass from the last filtered state.

    Result arrays stay charged on the tracker; the caller releases them
    (release_smoother_result) when it drops the SmootherResult.
    """
    tracker = tracker or NullTracker()
    n_steps = noise.n_steps
    if len(motions) != n_steps or len(filt.psi_est) != n_steps + 1:
        raise ConfigError("run_smoother: step counts disagree with filter output")
    P = basis.P

    x_sm = tracker.add_array(np.zeros_like(filt.x_est))
    x_sm[n_steps] = filt.x_est[n_steps]
    psi_sm = None
    gains = None
    if with_covariance:
        psi_sm = [None] * (n_steps + 1)
        psi_sm[n_steps] = tracker.add_reduced_array(filt.psi_est[n_steps].copy())
        gains = [None] * n_steps

    for i in range(n_steps, 0, -1):
        psi_i = psi_sm[i] if with_covariance else None
        xs, ps, K = smooth_step(
            filt.x_est[i - 1], filt.psi_est[i - 1], filt.x_pred[i], x_sm[i],
            psi_i, motions[i - 1], noise.q_diags[i - 1], P, with_covariance)
        x_sm[i - 1] = xs
        if with_covariance:
            psi_sm[i - 1] = tracker.add_reduced_array(ps)
            gains[i - 1] = tracker.add_reduced_array(K)

    return SmootherResult(x_sm=x_sm, psi_sm=psi_sm, gains=gains)


def release_smoother_result(sm: SmootherResult, tracker: MemoryTracker) -> None:
    """Return the tracker charge taken out by run_smoother."""
    tracker.release_array(sm.x_sm)
    if sm.psi_sm is not None:
        for p in sm.psi_sm:
            tracker.release_reduced_array(p)
    if sm.gains is not None:
        for g in sm.gains:
            tracker.release_reduced_array(g)


def cross_covariance_factors(psi_sm_i, K_i, psi_est_prev, P):
    """Factors (L, R) with C_{i,i-1}^sm = L @ R.T in full space.

    Materializes two n_s x r blocks; intended for oracle-scale checks, not
    the chunked EM path (which consumes the reduced factors directly).
    """
    return P @ psi_sm_i, P @ (psi_est_prev @ K_i.T)
