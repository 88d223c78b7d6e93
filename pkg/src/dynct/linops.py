"""Matrix-free linear operators used throughout the package.

Every operator supports ``apply`` (forward), ``apply_transpose`` (exact
adjoint of the same coefficients) and ``apply_block`` (column-by-column
forward application; bitwise identical to looping ``apply`` over columns,
which is exactly how it is implemented). Dense materialization is available
through :func:`to_dense` for debugging and oracle tests only and refuses to
build anything with more than ``DENSE_LIMIT`` state columns.

All vectors are 1-D float64 arrays; blocks are (n, k) float64 arrays.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

# Largest state dimension for which dense materialization is permitted.
DENSE_LIMIT = 4096


def _as_vector(x, n, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != n:
        raise ConfigError(f"{name} must be a 1-D vector of length {n}, got shape {x.shape}")
    return x


class LinearOperator:
    """Base class: shape (m, n), forward/adjoint application."""

    shape: tuple[int, int]

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_block(self, X: np.ndarray) -> np.ndarray:
        """Forward-apply to each column of X. Implemented as a plain column
        loop so the result is bitwise equal to per-column ``apply``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.shape[1]:
            raise ConfigError(f"block must have shape ({self.shape[1]}, k), got {X.shape}")
        out = np.empty((self.shape[0], X.shape[1]), dtype=np.float64)
        for j in range(X.shape[1]):
            out[:, j] = self.apply(X[:, j])
        return out

    def apply_transpose_block(self, Y: np.ndarray) -> np.ndarray:
        """Adjoint-apply to each column of Y (column loop, like apply_block)."""
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[0] != self.shape[0]:
            raise ConfigError(f"block must have shape ({self.shape[0]}, k), got {Y.shape}")
        out = np.empty((self.shape[1], Y.shape[1]), dtype=np.float64)
        for j in range(Y.shape[1]):
            out[:, j] = self.apply_transpose(Y[:, j])
        return out

    def apply_block_rows(self, X: np.ndarray, rows: slice) -> np.ndarray:
        """Rows ``rows`` of ``op @ X`` without holding the full product.

        The generic fallback materializes the product columnwise with one
        output-length vector live at a time; structured operators override
        this with direct row-slice kernels. This is what lets Gramians of
        operator-times-basis products be accumulated chunk by chunk.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.shape[1]:
            raise ConfigError(f"block must have shape ({self.shape[1]}, k), got {X.shape}")
        n_rows = len(range(*rows.indices(self.shape[0])))
        out = np.empty((n_rows, X.shape[1]), dtype=np.float64)
        for j in range(X.shape[1]):
            out[:, j] = self.apply(X[:, j])[rows]
        return out

    def to_dense(self) -> np.ndarray:
        if max(self.shape) > DENSE_LIMIT:
            raise ConfigError(
                f"refusing to densify operator of shape {self.shape} (limit {DENSE_LIMIT})"
            )
        return self.apply_block(np.eye(self.shape[1]))


class SparseCSR(LinearOperator):
    """CSR-backed sparse operator.

    Invariants enforced at construction: canonical CSR (sorted indices, no
    duplicates, no stored zeros), float64 data. The transpose is converted to
    CSR once so repeated adjoint applications reuse the same kernel.
    """

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix, dtype=np.float64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        self.matrix = m
        self._matrix_t = m.T.tocsr()
        self.shape = m.shape

    def apply(self, x):
        x = _as_vector(x, self.shape[1])
        return self.matrix @ x

    def apply_transpose(self, y):
        y = _as_vector(y, self.shape[0], "y")
        return self._matrix_t @ y

    def apply_block_rows(self, X, rows):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.shape[1]:
            raise ConfigError(f"block must have shape ({self.shape[1]}, k), got {X.shape}")
        return np.asarray(self.matrix[rows] @ X)

    @property
    def nnz(self):
        return self.matrix.nnz

    def row_nnz(self):
        return np.diff(self.matrix.indptr)


class Identity(LinearOperator):
    def __init__(self, n: int):
        self.shape = (n, n)

    def apply(self, x):
        return _as_vector(x, self.shape[1]).copy()

    def apply_transpose(self, y):
        return _as_vector(y, self.shape[0], "y").copy()

    def apply_block_rows(self, X, rows):
        X = np.asarray(X, dtype=np.float64)
        return X[rows].copy()


class Scaled(LinearOperator):
    """gamma * base."""

    def __init__(self, base: LinearOperator, gamma: float):
        self.base = base
        self.gamma = float(gamma)
        self.shape = base.shape

    def apply(self, x):
        return self.gamma * self.base.apply(x)

    def apply_transpose(self, y):
        return self.gamma * self.base.apply_transpose(y)

    def apply_block_rows(self, X, rows):
        return self.gamma * self.base.apply_block_rows(X, rows)


class Rank1(LinearOperator):
    """x -> u * (v @ x) / denom with denom > 0."""

    def __init__(self, u: np.ndarray, v: np.ndarray, denom: float):
        self.u = np.asarray(u, dtype=np.float64).ravel()
        self.v = np.asarray(v, dtype=np.float64).ravel()
        if not np.isfinite(denom) or denom <= 0.0:
            raise ConfigError(f"rank-1 denominator must be positive, got {denom}")
        self.denom = float(denom)
        self.shape = (self.u.size, self.v.size)

    def apply(self, x):
        x = _as_vector(x, self.shape[1])
        return self.u * (self.v @ x / self.denom)

    def apply_transpose(self, y):
        y = _as_vector(y, self.shape[0], "y")
        return self.v * (self.u @ y / self.denom)

    def apply_block_rows(self, X, rows):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.shape[1]:
            raise ConfigError(f"block must have shape ({self.shape[1]}, k), got {X.shape}")
        coef = (self.v @ X) / self.denom
        return self.u[rows, None] * coef[None, :]


class PatchRank1(LinearOperator):
    """Block-diagonal rank-1 action on non-overlapping image patches.

    The image grid (n_x, n_y) is tiled by (z_x, z_y) patches (z_x | n_x,
    z_y | n_y). Patch j carries vectors u_j, v_j (flattened patch contents)
    and a positive denominator d_j; the operator maps patch content p_j to
    u_j * (v_j @ p_j) / d_j. Equivalent to sum_j S_j u_j (S_j v_j)^T / d_j
    with S_j the patch scatter maps.
    """

    def __init__(self, n_x, n_y, z_x, z_y, U, V, denoms):
        if n_x % z_x or n_y % z_y:
            raise ConfigError(f"patch ({z_x},{z_y}) must tile image ({n_x},{n_y}) exactly")
        self.n_x, self.n_y = int(n_x), int(n_y)
        self.z_x, self.z_y = int(z_x), int(z_y)
        n_patches = (n_x // z_x) * (n_y // z_y)
        self.U = np.asarray(U, dtype=np.float64).reshape(n_patches, z_x * z_y)
        self.V = np.asarray(V, dtype=np.float64).reshape(n_patches, z_x * z_y)
        self.denoms = np.asarray(denoms, dtype=np.float64).ravel()
        if self.denoms.shape != (n_patches,):
            raise ConfigError("one denominator per patch required")
        if not np.all(self.denoms > 0):
            raise ConfigError("patch denominators must be positive")
        n_s = self.n_x * self.n_y
        self.shape = (n_s, n_s)

    def _to_patches(self, x):
        bx, by = self.n_x // self.z_x, self.n_y // self.z_y
        img = x.reshape(self.n_x, self.n_y)
        return img.reshape(bx, self.z_x, by, self.z_y).transpose(0, 2, 1, 3).reshape(
            bx * by, self.z_x * self.z_y
        )

    def _from_patches(self, P):
        bx, by = self.n_x // self.z_x, self.n_y // self.z_y
        img = P.reshape(bx, by, self.z_x, self.z_y).transpose(0, 2, 1, 3).reshape(
            self.n_x, self.n_y
        )
        return img.reshape(-1)

    def apply(self, x):
        x = _as_vector(x, self.shape[1])
        P = self._to_patches(x)
        coef = np.einsum("ij,ij->i", self.V, P) / self.denoms
        return self._from_patches(self.U * coef[:, None])

    def apply_transpose(self, y):
        y = _as_vector(y, self.shape[0], "y")
        P = self._to_patches(y)
        coef = np.einsum("ij,ij->i", self.U, P) / self.denoms
        return self._from_patches(self.V * coef[:, None])


class Warp(SparseCSR):
    """Backward-warping interpolation operator (see motion.build_warp).

    A SparseCSR whose rows are bilinear interpolation stencils: at most four
    nonnegative entries per row summing exactly to one.
    """

    def __init__(self, matrix, n_x, n_y):
        super().__init__(matrix)
        self.n_x, self.n_y = int(n_x), int(n_y)
        if self.shape != (n_x * n_y, n_x * n_y):
            raise ConfigError("warp operator must be square over the image grid")


# Module-level wrappers, convenient for call sites that treat operators
# generically.

def apply(op: LinearOperator, x):
    return op.apply(x)


def apply_transpose(op: LinearOperator, y):
    return op.apply_transpose(y)


def apply_block(op: LinearOperator, X):
    return op.apply_block(X)


def to_dense(op: LinearOperator):
    return op.to_dense()


def payload_nbytes(op: LinearOperator) -> int:
    """Bytes of array storage an operator instance owns.

    Used by run bookkeeping to charge motion operators against the working
    set. Identity owns nothing; Scaled owns only its base.
    """
    if isinstance(op, Scaled):
        return payload_nbytes(op.base)
    if isinstance(op, SparseCSR):
        m, mt = op.matrix, op._matrix_t
        return int(m.data.nbytes + m.indices.nbytes + m.indptr.nbytes +
                   mt.data.nbytes + mt.indices.nbytes + mt.indptr.nbytes)
    if isinstance(op, Rank1):
        return int(op.u.nbytes + op.v.nbytes)
    if isinstance(op, PatchRank1):
        return int(op.U.nbytes + op.V.nbytes + op.denoms.nbytes)
    return 0
