"""Parallel-beam Radon operators as sparse matrices.

Geometry conventions
--------------------
The image occupies the box [-n_x/2, n_x/2] x [-n_y/2, n_y/2] with unit
pixels; pixel (i, j) is centered at (i - (n_x-1)/2, j - (n_y-1)/2). A ray
with angle theta in [0, pi) and detector offset t is the line

    p(s) = t * (sin \theta, cos \theta) + s * (cos \theta, -sin \theta),

so theta = 0 integrates along axis 0 (one image column per detector cell)
and theta = pi/2 along axis 1. Detector cells have unit spacing and offsets
t_k = k - (D - 1)/2 for k = 0..D-1.

Each operator row holds the exact intersection lengths of one ray with the
pixel grid (Siddon-style traversal): nonnegative weights, at most
n_x + n_y nonzeros per row. Rows are ordered angle-major: row = a * D + k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .linops import SparseCSR

_PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class ScanGeometry:
    """Per-frame angle sets over a fixed image/detector grid."""

    n_x: int
    n_y: int
    angles_per_frame: tuple[tuple[float, ...], ...]
    detector_count: int

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ConfigError("image dimensions must be positive")
        if self.detector_count < 1:
            raise ConfigError("detector_count must be positive")
        if not self.angles_per_frame:
            raise ConfigError("at least one frame of angles is required")
        for angles in self.angles_per_frame:
            for a in angles:
                if not (0.0 <= a < math.pi):
                    raise ConfigError(f"angles must lie in [0, pi), got {a}")

    @property
    def n_frames(self) -> int:
        return len(self.angles_per_frame)

    def frame_rows(self, t: int) -> int:
        return len(self.angles_per_frame[t]) * self.detector_count


def default_detector_count(n_x: int, n_y: int) -> int:
    return math.ceil(math.hypot(n_x, n_y))


def make_geometry(n_x, n_y, n_angles, n_frames, angle_offset=0.0,
                  detector_count=None) -> ScanGeometry:
    """Equispaced angles in [0, pi) with an optional per-frame rotation.

    Frame t uses angles (k*pi/n_angles + t*angle_offset) mod pi.
    """
    if n_angles < 1 or n_frames < 1:
        raise ConfigError("n_angles and n_frames must be positive")
    if detector_count is None:
        detector_count = default_detector_count(n_x, n_y)
    base = np.arange(n_angles) * (math.pi / n_angles)
    frames = []
    for t in range(n_frames):
        ang = np.mod(base + t * angle_offset, math.pi)
        frames.append(tuple(float(a) for a in ang))
    return ScanGeometry(n_x=n_x, n_y=n_y, angles_per_frame=tuple(frames),
                        detector_count=int(detector_count))


def _trace_ray(theta, t, n_x, n_y):
    """Pixel indices and intersection lengths for one ray.

    Returns (flat_cols, lengths); both empty when the ray misses the grid.
    """
    o = np.array([t * math.sin(theta), t * math.cos(theta)])
    d = np.array([math.cos(theta), -math.sin(theta)])
    half = np.array([n_x / 2.0, n_y / 2.0])

    # Slab clipping to the bounding box.
    s_lo, s_hi = -np.inf, np.inf
    for a in range(2):
        if abs(d[a]) < _PARALLEL_EPS:
            if not (-half[a] <= o[a] <= half[a]):
                return np.empty(0, dtype=np.int64), np.empty(0)
        else:
            sa = (-half[a] - o[a]) / d[a]
            sb = (half[a] - o[a]) / d[a]
            s_lo = max(s_lo, min(sa, sb))
            s_hi = min(s_hi, max(sa, sb))
    if not (s_lo < s_hi):
        return np.empty(0, dtype=np.int64), np.empty(0)

    crossings = [np.array([s_lo, s_hi])]
    for a, n in zip(range(2), (n_x, n_y)):
        if abs(d[a]) >= _PARALLEL_EPS:
            bounds = np.arange(n + 1) - half[a]
            s = (bounds - o[a]) / d[a]
            crossings.append(s[(s > s_lo) & (s < s_hi)])
    s_all = np.unique(np.concatenate(crossings))
    lengths = np.diff(s_all)
    keep = lengths > _PARALLEL_EPS
    if not np.any(keep):
        return np.empty(0, dtype=np.int64), np.empty(0)
    mids = 0.5 * (s_all[:-1] + s_all[1:])[keep]
    lengths = lengths[keep]
    i = np.clip(np.floor(o[0] + mids * d[0] + half[0]).astype(np.int64), 0, n_x - 1)
    j = np.clip(np.floor(o[1] + mids * d[1] + half[1]).astype(np.int64), 0, n_y - 1)
    return i * n_y + j, lengths


def build_operator(geom: ScanGeometry, t: int) -> SparseCSR:
    """Sparse Radon operator for frame t: (|angles_t| * D) x (n_x * n_y)."""
    if not (0 <= t < geom.n_frames):
        raise ConfigError(f"frame index {t} out of range [0, {geom.n_frames})")
    angles = geom.angles_per_frame[t]
    D = geom.detector_count
    offsets = np.arange(D) - (D - 1) / 2.0
    rows, cols, vals = [], [], []
    for a, theta in enumerate(angles):
        for k, off in enumerate(offsets):
            c, w = _trace_ray(theta, off, geom.n_x, geom.n_y)
            if c.size:
                rows.append(np.full(c.size, a * D + k, dtype=np.int64))
                cols.append(c)
                vals.append(w)
    n_rows = len(angles) * D
    n_cols = geom.n_x * geom.n_y
    if rows:
        m = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_rows, n_cols),
        )
    else:
        m = sp.csr_matrix((n_rows, n_cols))
    return SparseCSR(m)


def build_operators(geom: ScanGeometry) -> list[SparseCSR]:
    return [build_operator(geom, t) for t in range(geom.n_frames)]


@dataclass
class SinogramSet:
    """Stacked measurement data for one scan: sinograms[t] has length
    |angles_t| * detector_count, ordered angle-major."""

    geometry: ScanGeometry
    sinograms: list[np.ndarray]
    noise_level: float
    seed: int

    def __post_init__(self):
        if len(self.sinograms) != self.geometry.n_frames:
            raise ConfigError("one sinogram per frame required")
        for t, y in enumerate(self.sinograms):
            if y.shape != (self.geometry.frame_rows(t),):
                raise ConfigError(
                    f"sinogram {t} has shape {y.shape}, expected ({self.geometry.frame_rows(t)},)"
                )


def simulate_sinograms(frames, geom: ScanGeometry, noise_level, seed,
                       operators=None) -> SinogramSet:
    """Forward-project frames and add white Gaussian noise.

    The noise draw is rescaled after the fact so the realized global noise
    level ||y - Hx|| / ||Hx|| equals ``noise_level`` exactly (all frames
    stacked). A zero clean signal or zero requested level yields y = Hx.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] != geom.n_frames:
        raise ConfigError(
            f"frames must be ({geom.n_frames}, {geom.n_x * geom.n_y}), got {frames.shape}"
        )
    if noise_level < 0:
        raise ConfigError("noise level must be nonnegative")
    if operators is None:
        operators = build_operators(geom)
    clean = [operators[t].apply(frames[t]) for t in range(geom.n_frames)]
    rng = np.random.default_rng(seed)
    noise = [rng.standard_normal(c.shape[0]) for c in clean]
    clean_norm = math.sqrt(sum(float(c @ c) for c in clean))
    noise_norm = math.sqrt(sum(float(e @ e) for e in noise))
    if noise_level == 0.0 or clean_norm == 0.0 or noise_norm == 0.0:
        scale = 0.0
    else:
        scale = noise_level * clean_norm / noise_norm
    y = [c + scale * e for c, e in zip(clean, noise)]
    return SinogramSet(geometry=geom, sinograms=y, noise_level=float(noise_level),
                       seed=int(seed))
