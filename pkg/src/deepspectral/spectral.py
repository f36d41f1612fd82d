"""Sparse symmetric matrices and the graph-Laplacian eigenproblem.

The solver computes the m smallest eigenpairs of a symmetric matrix by
Lanczos iteration with full reorthogonalization. It iterates on the
shifted operator S = 2I - L, whose algebraically largest eigenvalues map
back to the smallest eigenvalues of L; because a normalized Laplacian has
spectrum inside [0, 2], the shift avoids shift-invert linear solves while
keeping the targets at the well-converging end of the Krylov spectrum.

A dense eigensolver (``dense_eigen_oracle``) provides an independent
reference for tests and small instances.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ._kernels import csr_matvec

DEGREE_REGULARIZATION = 1e-12
DEFAULT_TOL = 1e-8
DENSE_ORACLE_MAX_N = 2048


class ConvergenceError(RuntimeError):
    """Eigensolver failed to reach the residual tolerance within its budget."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass
class SparseMatrix:
    """Square sparse matrix in CSR form with sorted, deduplicated columns."""

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    symmetric: bool = False

    @classmethod
    def from_coo(cls, n, rows, cols, vals, symmetric=False, drop_zeros=True):
        """Build from triplets; duplicate entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size:
            order = np.lexsort((cols, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
            key_change = np.empty(rows.size, dtype=bool)
            key_change[0] = True
            key_change[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(key_change)
            sums = np.add.reduceat(vals, starts)
            rows, cols, vals = rows[starts], cols[starts], sums
            if drop_zeros:
                keep = vals != 0.0
                rows, cols, vals = rows[keep], cols[keep], vals[keep]
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(row_ptr, rows + 1, 1)
        np.cumsum(row_ptr, out=row_ptr)
        return cls(n=n, row_ptr=row_ptr, col_idx=cols, values=vals, symmetric=symmetric)

    @classmethod
    def from_dense(cls, a, symmetric=None, drop_zeros=True):
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(a) if drop_zeros else np.indices(a.shape).reshape(2, -1)
        sym = bool(np.allclose(a, a.T)) if symmetric is None else symmetric
        return cls.from_coo(a.shape[0], rows, cols, a[rows, cols], symmetric=sym)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: matrix is {self.n}, vector is {x.shape[0]}")
        return csr_matvec(self.row_ptr, self.col_idx, self.values, x)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        out[rows, self.col_idx] = self.values
        return out

    def diagonal(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        diag = np.zeros(self.n)
        on_diag = rows == self.col_idx
        diag[rows[on_diag]] = self.values[on_diag]
        return diag

    def row_sums(self) -> np.ndarray:
        return csr_matvec(self.row_ptr, self.col_idx, self.values, np.ones(self.n))

    def scaled(self, factor: float) -> "SparseMatrix":
        return SparseMatrix(self.n, self.row_ptr, self.col_idx, self.values * factor, self.symmetric)

    def add(self, other: "SparseMatrix") -> "SparseMatrix":
        if other.n != self.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")
        rows_a = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        rows_b = np.repeat(np.arange(other.n), np.diff(other.row_ptr))
        return SparseMatrix.from_coo(
            self.n,
            np.concatenate([rows_a, rows_b]),
            np.concatenate([self.col_idx, other.col_idx]),
            np.concatenate([self.values, other.values]),
            symmetric=self.symmetric and other.symmetric,
        )


@dataclass
class EigenDecomposition:
    """Ascending eigenvalues with row-stored unit eigenvectors.

    ``grid`` carries the (rows, cols) shape used to view each eigenvector as
    an image-aligned map; it is attached by pipeline code, not the solver.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    grid: Optional[Tuple[int, int]] = None
    seed: Optional[int] = field(default=None)

    def vector_as_grid(self, i: int) -> np.ndarray:
        if self.grid is None:
            raise ValueError("no grid shape attached to this decomposition")
        return self.eigenvectors[i].reshape(self.grid)


def _as_sparse(w) -> SparseMatrix:
    # Accepts a SparseMatrix or anything carrying one in a .matrix attribute
    # (AffinityMatrix does), keeping module dependencies one-directional.
    return w if isinstance(w, SparseMatrix) else w.matrix


def build_normalized_laplacian(w) -> SparseMatrix:
    """Symmetrically normalized Laplacian of a nonnegative affinity matrix.

    Degrees are regularized by 1e-12 before inversion so zero-degree nodes
    stay finite; the (D - W) part keeps raw degrees, which leaves isolated
    nodes on eigenvalue 0 and keeps the spectrum inside [0, 2].
    """
    mat = _as_sparse(w)
    degrees = mat.row_sums()
    inv_sqrt = 1.0 / np.sqrt(degrees + DEGREE_REGULARIZATION)

    rows = np.repeat(np.arange(mat.n), np.diff(mat.row_ptr))
    off_vals = -mat.values * inv_sqrt[rows] * inv_sqrt[mat.col_idx]
    diag_vals = (degrees - mat.diagonal()) * inv_sqrt * inv_sqrt

    all_rows = np.concatenate([rows[rows != mat.col_idx], np.arange(mat.n)])
    all_cols = np.concatenate([mat.col_idx[rows != mat.col_idx], np.arange(mat.n)])
    all_vals = np.concatenate([off_vals[rows != mat.col_idx], diag_vals])
    return SparseMatrix.from_coo(mat.n, all_rows, all_cols, all_vals, symmetric=True, drop_zeros=False)


def build_laplacian(w) -> SparseMatrix:
    """Unnormalized Laplacian D - W; here x'Lx equals the edge sum exactly."""
    mat = _as_sparse(w)
    degrees = mat.row_sums()
    rows = np.repeat(np.arange(mat.n), np.diff(mat.row_ptr))
    off = rows != mat.col_idx
    all_rows = np.concatenate([rows[off], np.arange(mat.n)])
    all_cols = np.concatenate([mat.col_idx[off], np.arange(mat.n)])
    all_vals = np.concatenate([-mat.values[off], degrees - mat.diagonal()])
    return SparseMatrix.from_coo(mat.n, all_rows, all_cols, all_vals, symmetric=True, drop_zeros=False)


def quadratic_form(l: SparseMatrix, x: np.ndarray) -> float:
    """x' L x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != l.n:
        raise ValueError(f"dimension mismatch: matrix is {l.n}, vector is {x.shape[0]}")
    return float(x @ l.matvec(x))


def cut_value(w, partition: np.ndarray) -> float:
    """Total weight of edges crossing a binary partition."""
    mat = _as_sparse(w)
    part = np.asarray(partition).astype(bool)
    if part.shape[0] != mat.n:
        raise ValueError(f"dimension mismatch: matrix is {mat.n}, partition is {part.shape[0]}")
    rows = np.repeat(np.arange(mat.n), np.diff(mat.row_ptr))
    crossing = part[rows] & ~part[mat.col_idx]
    return float(np.sum(mat.values[crossing]))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # Deterministic sign: the entry of largest magnitude is made positive.
    for i in range(vectors.shape[0]):
        j = int(np.argmax(np.abs(vectors[i])))
        if vectors[i, j] < 0:
            vectors[i] = -vectors[i]
    return vectors


def dense_eigen_oracle(l: SparseMatrix) -> EigenDecomposition:
    """Full spectrum by direct dense diagonalization; for tests and small n."""
    if l.n > DENSE_ORACLE_MAX_N:
        raise ValueError(f"dense oracle capped at n={DENSE_ORACLE_MAX_N}, got {l.n}")
    vals, vecs = np.linalg.eigh(l.to_dense())
    return EigenDecomposition(eigenvalues=vals, eigenvectors=_fix_signs(vecs.T.copy()))


def smallest_eigenpairs(l: SparseMatrix, m: int, tol: float = DEFAULT_TOL,
                        max_iter: Optional[int] = None, seed: int = 0) -> EigenDecomposition:
    """The m smallest eigenpairs of a symmetric matrix, ascending.

    Block Lanczos with full reorthogonalization on S = 2I - L, started from
    m seeded random orthonormal vectors so eigenvalue multiplicities up to m
    (disconnected graphs, flat regions) are resolved. The projected matrix
    H = Q'SQ is accumulated exactly from computed coefficients, so the
    Rayleigh-Ritz solve stays valid across breakdown restarts. Ritz pairs
    are accepted once every true residual ||L y - lambda y|| is below
    ``tol``.

    Deterministic for a fixed seed. Raises ConvergenceError (carrying the
    achieved residuals) if the iteration budget runs out.
    """
    n = l.n
    if not 1 <= m <= n:
        raise ValueError(f"m must be in 1..{n}, got {m}")
    if max_iter is None:
        max_iter = 20 * m + 100
    kmax = min(n, max_iter)

    rng = np.random.default_rng(seed)

    def op(x):
        return 2.0 * x - l.matvec(x)

    capacity = min(n, max(2 * m + 16, 32))
    q_basis = np.zeros((capacity, n))
    h = np.zeros((capacity, capacity))
    k = 0  # current basis size

    def ensure_capacity(size):
        nonlocal q_basis, h, capacity
        if size <= capacity:
            return
        capacity = min(n, max(2 * capacity, size))
        q_new = np.zeros((capacity, n))
        q_new[:k] = q_basis[:k]
        h_new = np.zeros((capacity, capacity))
        h_new[:k, :k] = h[:k, :k]
        q_basis, h = q_new, h_new

    def fresh_vector():
        # Random direction orthogonalized against everything found so far.
        for _ in range(50):
            v = rng.standard_normal(n)
            if k:
                v -= q_basis[:k].T @ (q_basis[:k] @ v)
                v -= q_basis[:k].T @ (q_basis[:k] @ v)
            norm = np.linalg.norm(v)
            if norm > 1e-8:
                return v / norm
        raise ConvergenceError("could not generate a vector outside the current Krylov basis")

    for _ in range(min(m, n)):
        q_basis[k] = fresh_vector()
        k += 1

    p = 0  # processed columns; h[:p, :p] is the exact projection of S
    check_every = max(1, m // 2)
    best = None

    while True:
        s_q = op(q_basis[p])
        coeffs = q_basis[:k] @ s_q
        h[:k, p] = coeffs
        h[p, :k] = coeffs
        r = s_q - q_basis[:k].T @ coeffs
        r -= q_basis[:k].T @ (q_basis[:k] @ r)
        if k < n:
            ensure_capacity(k + 1)
            beta = np.linalg.norm(r)
            q_basis[k] = r / beta if beta > 1e-10 else fresh_vector()
            k += 1
        p += 1

        exhausted = p == kmax or p == k
        if p % check_every == 0 or exhausted:
            theta, v = np.linalg.eigh(h[:p, :p])
            take = min(m, p)
            # Largest Ritz values of S are the smallest eigenvalues of L.
            sel = np.argsort(-theta)[:take]
            vecs = (q_basis[:p].T @ v[:, sel]).T
            vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
            lams = 2.0 - theta[sel]
            order = np.argsort(lams, kind="stable")
            lams, vecs = lams[order], vecs[order]
            residuals = np.array([np.linalg.norm(l.matvec(vecs[i]) - lams[i] * vecs[i]) for i in range(take)])
            best = (lams, vecs, residuals)
            if take == m and np.all(residuals <= tol):
                break

        if exhausted:
            lams, vecs, residuals = best
            raise ConvergenceError(
                f"no convergence after {p} Lanczos steps "
                f"(tol={tol:g}, worst residual={residuals.max():g})",
                residuals=residuals,
            )

    lams, vecs, _ = best
    return EigenDecomposition(eigenvalues=lams, eigenvectors=_fix_signs(vecs), seed=seed)
