"""Shared builders for the test suite."""

import numpy as np

from dynct.filtering import initial_noise, static_init
from dynct.phantom import default_blocks_config, generate_frames
from dynct.prior import PriorConfig, build_projection
from dynct.radon import build_operators, make_geometry, simulate_sinograms


def build_problem(n_x=12, n_y=12, n_steps=4, n_angles=5, sigma=0.05,
                  alpha=1.0, ell=0.7, rank=None, seed=0, angle_offset=0.2,
                  q_scale=1.0, r_scale=1.0, detector_count=None):
    """Small end-to-end problem with everything the oracles need.

    rank=None keeps every mode (r = n_s), which makes the reduced
    recursions algebraically exact against dense references.
    """
    n_s = n_x * n_y
    rank = n_s if rank is None else rank
    frames = generate_frames(default_blocks_config(n_x, n_y, n_steps, seed))
    geom = make_geometry(n_x, n_y, n_angles, n_steps + 1,
                         angle_offset=angle_offset,
                         detector_count=detector_count)
    h_ops = build_operators(geom)
    sino = simulate_sinograms(frames, geom, sigma, seed + 1)
    basis = build_projection(n_x, n_y, PriorConfig(alpha=alpha, ell=ell,
                                                   rank=rank))
    noise = initial_noise(alpha, n_s, [op.shape[0] for op in h_ops[1:]],
                          q_scale=q_scale, r_scale=r_scale)
    x0, psi0 = static_init(h_ops[0], basis, sino.sinograms[0])
    return {
        "frames": frames, "geom": geom, "h_ops": h_ops, "sino": sino,
        "basis": basis, "noise": noise, "x0": x0, "psi0": psi0,
        "h_dense": [op.to_dense() for op in h_ops],
        "n_s": n_s, "n_steps": n_steps,
    }


def dense_noise(problem):
    """Dense covariance lists matching the problem's diagonal NoiseModel."""
    q_covs = [np.diag(d) for d in problem["noise"].q_diags]
    r_covs = [np.diag(d) for d in problem["noise"].r_diags]
    return q_covs, r_covs


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))
                 / max(np.linalg.norm(np.asarray(b)), 1e-300))
