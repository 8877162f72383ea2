"""Rank-revealing linear algebra shared by the certificate computations.

Every rank decision goes through :func:`svd` with an explicit tolerance so
that the pseudoinverse, the kernel basis and the consistency checks of one
matrix all agree on its numerical rank.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

DEFAULT_TOL_RANK = 1e-10


class InvalidInputError(ValueError):
    """Raised for malformed problem data (shapes, NaNs, bad partitions)."""


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be two-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def as_vector(x, name="vector", size=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {x.shape}")
    if size is not None and x.shape[0] != size:
        raise InvalidInputError(f"{name} has length {x.shape[0]}, expected {size}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return x


def _fix_signs(basis):
    # make each column's largest-magnitude entry positive (first index on ties)
    if basis.size == 0:
        return basis
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


@dataclass(frozen=True)
class Decomposition:
    """Thin SVD of a matrix together with its numerical rank."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    shape: tuple
    rank: int
    tol_rank: float

    @cached_property
    def pinv(self):
        r = self.rank
        if r == 0:
            return np.zeros(self.shape[::-1])
        return (self.vt[:r].T / self.s[:r]) @ self.u[:, :r].T

    @cached_property
    def kernel(self):
        """Orthonormal basis of the null space, one column per direction."""
        return _fix_signs(self.vt[self.rank:].T.copy())

    @cached_property
    def row_space(self):
        return self.vt[: self.rank].T.copy()

    @cached_property
    def range(self):
        return self.u[:, : self.rank].copy()

    @property
    def norm(self):
        return float(self.s[0]) if self.s.size else 0.0

    @property
    def smallest_positive(self):
        return float(self.s[self.rank - 1]) if self.rank else 0.0

    def solve(self, b):
        """Minimum-norm least-squares solution of ``A z = b``."""
        r = self.rank
        if r == 0:
            return np.zeros(self.shape[1])
        return self.vt[:r].T @ ((self.u[:, :r].T @ b) / self.s[:r])

    def project_range(self, b):
        r = self.rank
        ur = self.u[:, :r]
        return ur @ (ur.T @ b)


def svd(a, tol_rank=DEFAULT_TOL_RANK):
    """Full SVD with numerical rank ``#{s_i > tol_rank * s_max}``."""
    a = as_matrix(a)
    m, n = a.shape
    if m == 0 or n == 0:
        return Decomposition(
            np.zeros((m, 0)), np.zeros(0), np.eye(n), (m, n), 0, tol_rank
        )
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol_rank * smax))
    return Decomposition(u, s, vt, (m, n), rank, tol_rank)


def pseudoinverse(a, tol_rank=DEFAULT_TOL_RANK):
    return svd(a, tol_rank).pinv


def kernel_basis(a, tol_rank=DEFAULT_TOL_RANK):
    """Orthonormal, sign-normalized basis of ``Ker a`` as columns."""
    return svd(a, tol_rank).kernel


def cokernel_rows(phi, tol_rank=DEFAULT_TOL_RANK):
    """Rows spanning ``Ker phi``; the resulting matrix has kernel ``Im phi^T``."""
    return kernel_basis(phi, tol_rank).T


def affine_project(x, phi, x_ref, tol_rank=DEFAULT_TOL_RANK):
    """Project ``x`` onto ``{z : phi z = phi x_ref}``."""
    dec = phi if isinstance(phi, Decomposition) else svd(phi, tol_rank)
    x = np.asarray(x, dtype=np.float64)
    k = dec.row_space
    return x - k @ (k.T @ (x - x_ref))


def smallest_singular_value(b):
    """Smallest singular value counting the missing ones of a wide matrix as 0.

    An operator with no input directions is vacuously injective, hence ``inf``.
    """
    b = np.asarray(b, dtype=np.float64)
    rows, cols = b.shape
    if cols == 0:
        return np.inf
    if rows < cols:
        return 0.0
    return float(np.linalg.svd(b, compute_uv=False)[-1])


def restricted_smallest_gain(b, k):
    """``min |b w|`` over unit ``w`` in the column span of the orthonormal ``k``."""
    return smallest_singular_value(np.asarray(b) @ np.asarray(k))


def is_consistent(a, b, tol=1e-9, tol_rank=DEFAULT_TOL_RANK):
    """Whether ``a z = b`` is solvable up to ``tol * max(1, |b|)``."""
    dec = a if isinstance(a, Decomposition) else svd(a, tol_rank)
    resid = np.linalg.norm(dec.project_range(b) - b)
    return resid <= tol * max(1.0, float(np.linalg.norm(b)))
