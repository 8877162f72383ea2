"""Group partitions, the analysis-type group norm and its local geometry.

The regularizer is ``J(x) = sum_g |(D^T x)_g|``.  Around a reference point
``x0`` the groups split into *active* ones (``(D^T x0)_g != 0``) and
*inactive* ones; the unit directions ``e_g`` of the active blocks, the
inactive coordinates ``S`` and the subspace ``E`` on which ``J`` is linear
along segments drive every certificate in :mod:`sharpcert.certificates`.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .linalg import (
    DEFAULT_TOL_RANK,
    InvalidInputError,
    as_matrix,
    as_vector,
    kernel_basis,
    svd,
)


class GroupStructure:
    """A partition of ``{0, ..., p-1}`` into non-empty groups.

    Parameters
    ----------
    p : int
        Number of coordinates.
    groups : sequence of sequences of int
        The groups, 0-based.  Their union must be exactly ``range(p)`` and
        they must be pairwise disjoint.
    """

    def __init__(self, p, groups):
        p = int(p)
        groups = tuple(tuple(int(i) for i in g) for g in groups)
        if p < 0:
            raise InvalidInputError("p must be non-negative")
        seen = np.zeros(p, dtype=bool)
        for g in groups:
            if not g:
                raise InvalidInputError("groups must be non-empty")
            for i in g:
                if i < 0 or i >= p:
                    raise InvalidInputError(f"group index {i} outside 0..{p - 1}")
                if seen[i]:
                    raise InvalidInputError(f"coordinate {i} belongs to two groups")
                seen[i] = True
        if not seen.all():
            missing = np.flatnonzero(~seen)[:5].tolist()
            raise InvalidInputError(f"coordinates {missing} belong to no group")
        self.p = p
        self.groups = groups
        self.sizes = np.array([len(g) for g in groups], dtype=np.int64)
        self.perm = np.fromiter((i for g in groups for i in g), dtype=np.int64, count=p)
        self.ptr = np.concatenate(([0], np.cumsum(self.sizes))).astype(np.int64)
        self.group_of = np.empty(p, dtype=np.int64)
        self.group_of[self.perm] = np.repeat(np.arange(len(groups)), self.sizes)

    @classmethod
    def contiguous(cls, p, size):
        if size <= 0 or p % size:
            raise InvalidInputError(f"cannot split {p} coordinates into groups of {size}")
        return cls(p, [range(k, k + size) for k in range(0, p, size)])

    @property
    def q(self):
        return len(self.groups)

    def __len__(self):
        return self.q

    def __eq__(self, other):
        return isinstance(other, GroupStructure) and self.p == other.p and self.groups == other.groups

    def __hash__(self):
        return hash((self.p, self.groups))

    def __repr__(self):
        return f"GroupStructure(p={self.p}, q={self.q})"

    def coords(self, group_ids):
        """Coordinates of the given groups, in group order."""
        ids = list(group_ids)
        if not ids:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([self.perm[self.ptr[g] : self.ptr[g + 1]] for g in ids])

    def restrict(self, group_ids):
        """Groups ``group_ids`` re-indexed over their own coordinates.

        Returns the sub-structure and the original coordinates; position ``k``
        of a restricted vector corresponds to coordinate ``coords[k]``.
        """
        ids = list(group_ids)
        coords = self.coords(ids)
        sizes = self.sizes[ids] if ids else np.zeros(0, dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
        sub = GroupStructure(
            len(coords), [range(offsets[k], offsets[k + 1]) for k in range(len(ids))]
        )
        return sub, coords

    def norms(self, u):
        return kernels.block_norms(u, self.perm, self.ptr)

    def expand(self, per_group):
        """Broadcast one value per group to one value per coordinate."""
        out = np.empty(self.p)
        out[self.perm] = np.repeat(np.asarray(per_group, dtype=np.float64), self.sizes)
        return out


def group_norm(u, groups):
    """``sum_g |u_g|``."""
    return float(np.sum(groups.norms(u)))


def dual_group_norm(v, groups):
    """``max_g |v_g|`` (0 for an empty partition)."""
    n = groups.norms(v)
    return float(n.max()) if n.size else 0.0


def block_soft_threshold(u, lam, groups):
    """Proximal map of ``lam * sum_g |.|`` (block soft-thresholding)."""
    if lam < 0:
        raise InvalidInputError("threshold must be non-negative")
    return kernels.block_soft_threshold(u, float(lam), groups.perm, groups.ptr)


def subgradient_residual(z, g, groups, atol=0.0):
    """Distance-type residual of ``g`` in the subdifferential of ``sum |.|`` at ``z``.

    Blocks with ``|z_g| > atol`` must equal ``z_g / |z_g|``; the others must lie
    in the unit ball.  Returns the Euclidean norm of the per-block violations.
    """
    zn = groups.norms(z)
    gn = groups.norms(g)
    on = zn > atol
    unit = np.zeros_like(z)
    scale = np.where(on, 1.0 / np.where(on, zn, 1.0), 0.0)
    unit[groups.perm] = z[groups.perm] * np.repeat(scale, groups.sizes)
    diff = np.where(groups.expand(on.astype(float)) > 0, g - unit, 0.0)
    on_viol = groups.norms(diff)[on]
    off_viol = np.maximum(gn[~on] - 1.0, 0.0)
    return float(np.sqrt(np.sum(on_viol**2) + np.sum(off_viol**2)))


def nuclear_norm_2x2(x):
    """Sum of singular values of a 2x2 matrix, ``sqrt(|X|_F^2 + 2|det X|)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2, 2):
        raise InvalidInputError("expected a 2x2 matrix")
    det = x[0, 0] * x[1, 1] - x[0, 1] * x[1, 0]
    return float(np.sqrt(np.sum(x * x) + 2.0 * abs(det)))


class Problem:
    """Measurement operator, analysis operator, partition and reference point.

    ``D=None`` stands for the identity (plain group sparsity); otherwise ``D``
    is ``n x p`` and the regularizer acts on ``D^T x``.
    """

    def __init__(self, phi, groups, x0, D=None, tol_rank=DEFAULT_TOL_RANK):
        self.phi = as_matrix(phi, "Phi")
        self.m, self.n = self.phi.shape
        if D is None:
            self.D = None
            self.p = self.n
        else:
            self.D = as_matrix(D, "D")
            if self.D.shape[0] != self.n:
                raise InvalidInputError(f"D has {self.D.shape[0]} rows, Phi has {self.n} columns")
            self.p = self.D.shape[1]
        if not isinstance(groups, GroupStructure):
            groups = GroupStructure(self.p, groups)
        if groups.p != self.p:
            raise InvalidInputError(f"partition covers {groups.p} coordinates, expected {self.p}")
        self.groups = groups
        self.x0 = as_vector(x0, "x0", self.n)
        self.tol_rank = tol_rank

    @property
    def identity_D(self):
        return self.D is None

    @cached_property
    def D_matrix(self):
        return np.eye(self.n) if self.D is None else self.D

    def Dt(self, x):
        """Apply ``D^T`` (to a vector or to the columns of a matrix)."""
        return x if self.D is None else self.D.T @ x

    def Dmul(self, v):
        return v if self.D is None else self.D @ v

    def D_cols(self, coords):
        coords = np.asarray(coords, dtype=np.int64)
        if self.D is None:
            out = np.zeros((self.n, coords.size))
            out[coords, np.arange(coords.size)] = 1.0
            return out
        return self.D[:, coords]

    def J(self, x):
        return group_norm(self.Dt(np.asarray(x, dtype=np.float64)), self.groups)

    @cached_property
    def y0(self):
        return self.phi @ self.x0

    @cached_property
    def phi_svd(self):
        return svd(self.phi, self.tol_rank)

    @cached_property
    def kernel(self):
        """Orthonormal basis of ``Ker Phi`` (columns)."""
        return self.phi_svd.kernel

    @cached_property
    def D_norm(self):
        return 1.0 if self.D is None else float(np.linalg.norm(self.D, 2))

    @cached_property
    def phi_pinv_norm(self):
        s = self.phi_svd.smallest_positive
        return 1.0 / s if s > 0 else np.inf


@dataclass(frozen=True)
class ModelDecomposition:
    """Local structure of ``J`` at ``x0``.

    Attributes
    ----------
    u0 : ndarray
        ``D^T x0``.
    active, inactive : tuple of int
        Group ids with nonzero / zero blocks in ``u0``.
    e : ndarray
        Length ``p``; ``u0_g / |u0_g|`` on active groups, zero elsewhere.
    T, S : ndarray
        Coordinates of the active and inactive groups.
    sub_groups : GroupStructure
        The inactive groups re-indexed over ``S``.
    active_groups : GroupStructure
        The active groups re-indexed over ``T``.
    """

    u0: np.ndarray
    block_norms: np.ndarray
    active: tuple
    inactive: tuple
    e: np.ndarray
    T: np.ndarray
    S: np.ndarray
    sub_groups: GroupStructure
    active_groups: GroupStructure
    tol_active: float
    groups: GroupStructure = field(repr=False, default=None)
    problem: object = field(repr=False, compare=False, default=None)

    @property
    def e_T(self):
        return self.e[self.T]

    @property
    def s(self):
        return len(self.active)

    @cached_property
    def S_blk(self):
        """``p x |I|`` matrix whose columns are the active blocks of ``u0``."""
        out = np.zeros((self.u0.size, len(self.active)))
        for j, g in enumerate(self.active):
            c = self.groups.coords([g])
            out[c, j] = self.u0[c]
        return out

    @cached_property
    def e_basis(self):
        """Orthonormal basis (columns) of the subspace ``E``; see :func:`q_operator`."""
        return e_subspace_basis(self.problem, self)


def model_decomposition(prob, tol_active=None):
    """Split the groups of ``prob`` at ``x0`` into active and inactive ones.

    A block counts as active when its norm exceeds ``tol_active``, which by
    default is ``1e-9 * max_g |u0_g|`` with an absolute floor of ``1e-12``.
    """
    u0 = prob.Dt(prob.x0)
    norms = prob.groups.norms(u0)
    if tol_active is None:
        top = float(norms.max()) if norms.size else 0.0
        tol_active = max(1e-9 * top, 1e-12)
    on = norms > tol_active
    active = tuple(int(g) for g in np.flatnonzero(on))
    inactive = tuple(int(g) for g in np.flatnonzero(~on))
    e = np.zeros(prob.p)
    for g in active:
        c = prob.groups.coords([g])
        e[c] = u0[c] / norms[g]
    sub, S = prob.groups.restrict(inactive)
    act, T = prob.groups.restrict(active)
    return ModelDecomposition(u0, norms, active, inactive, e, T, S, sub, act, tol_active,
                              prob.groups, prob)


def subdifferential_member(v, decomp, tol=1e-8, interior=False):
    """Whether ``v`` (length ``p``) lies in the subdifferential of the group norm at ``u0``.

    Active blocks must equal ``e_g`` and inactive blocks lie in the unit ball.
    With ``interior=True`` the inactive blocks must lie strictly inside it
    (norm below ``1 - tol``), i.e. ``v`` is in the relative interior.
    """
    v = np.asarray(v, dtype=np.float64)
    groups = decomp.groups
    for g in decomp.active:
        c = groups.coords([g])
        if np.linalg.norm(v[c] - decomp.e[c]) > tol:
            return False
    inactive = decomp.sub_groups.norms(v[decomp.S])
    if interior:
        return bool(np.all(inactive < 1 - tol))
    return bool(np.all(inactive <= 1 + tol))


def q_operator(prob, decomp):
    """Rows ``(I - e_g e_g^T) (D^T)_g`` of the active groups (zero elsewhere).

    ``J`` is affine along ``x0 + t w`` for small ``t`` exactly when every
    active block of ``D^T w`` is parallel to ``e_g``, i.e. when ``w`` lies in
    the kernel of this operator.
    """
    Dt = prob.D_matrix.T
    Q = np.zeros((prob.p, prob.n))
    for g in decomp.active:
        c = prob.groups.coords([g])
        eg = decomp.e[c]
        block = Dt[c]
        Q[c] = block - np.outer(eg, eg @ block)
    return Q


def e_subspace_basis(prob, decomp):
    """Orthonormal basis (columns) of ``E = {w : (D^T w)_g parallel to e_g, g active}``."""
    return kernel_basis(q_operator(prob, decomp), prob.tol_rank)


def kernel_e_basis(prob, decomp):
    """Orthonormal basis (columns) of ``Ker Phi`` intersected with ``E``."""
    K = prob.kernel
    if K.shape[1] == 0:
        return K
    Z = kernel_basis(q_operator(prob, decomp) @ K, prob.tol_rank)
    return K @ Z


def directional_derivative(prob, decomp, w):
    """One-sided derivative ``<e, D^T w> + sum_{inactive} |(D^T w)_g|``."""
    a = prob.Dt(np.asarray(w, dtype=np.float64))
    inactive = np.sum(decomp.sub_groups.norms(a[decomp.S]))
    return float(decomp.e @ a + inactive)


def _kernel_residual(prob, w):
    return float(np.linalg.norm(prob.phi @ w))


def second_subderivative(prob, decomp, w, tol=1e-8):
    """Second subderivative of ``J + indicator(Phi x = Phi x0)`` at ``x0`` for
    the zero subgradient, evaluated at ``w``.

    Requires ``x0`` to be a minimizer.  Returns ``inf`` off the critical cone
    ``{w in Ker Phi : derivative along w is 0}``; on it the value is the
    curvature of the active blocks,
    ``sum_g (|a_g|^2 |u_g|^2 - <u_g, a_g>^2) / |u_g|^3`` with ``a = D^T w``.
    """
    w = np.asarray(w, dtype=np.float64)
    scale = max(1.0, float(np.linalg.norm(w)))
    if _kernel_residual(prob, w) > tol * scale * max(1.0, prob.phi_svd.norm):
        return np.inf
    if abs(directional_derivative(prob, decomp, w)) > tol * scale * prob.D_norm:
        return np.inf
    a = prob.Dt(w)
    total = 0.0
    for g in decomp.active:
        c = prob.groups.coords([g])
        ug, ag = decomp.u0[c], a[c]
        nu = decomp.block_norms[g]
        total += (np.dot(ag, ag) * nu * nu - np.dot(ug, ag) ** 2) / nu**3
    return float(max(total, 0.0))


def descent_cone_member(prob, decomp, w, tol=1e-8):
    """Whether ``w`` lies in the cone of directions where ``J`` does not increase.

    This is the open half-space of strict first-order decrease together with
    its boundary directions inside ``E`` (where ``J`` is affine, so first-order
    stationarity means ``J`` stays constant for small steps).
    """
    w = np.asarray(w, dtype=np.float64)
    scale = max(1.0, float(np.linalg.norm(w)))
    dj = directional_derivative(prob, decomp, w)
    if dj < -tol * scale:
        return True
    if abs(dj) > tol * scale:
        return False
    a = prob.Dt(w)
    resid = 0.0
    for g in decomp.active:
        c = prob.groups.coords([g])
        eg = decomp.e[c]
        resid += float(np.sum((a[c] - eg * (eg @ a[c])) ** 2))
    return np.sqrt(resid) <= tol * scale * prob.D_norm


def active_coefficients(prob, decomp, w):
    """``lambda_g`` with ``(D^T w)_g = lambda_g u0_g`` on the active groups."""
    a = prob.Dt(np.asarray(w, dtype=np.float64))
    out = {}
    for g in decomp.active:
        c = prob.groups.coords([g])
        ug = decomp.u0[c]
        out[g] = float(ug @ a[c]) / float(ug @ ug)
    return out


def flat_step(prob, decomp, w):
    """Largest step ``t`` keeping every active block of ``x0 + t w`` from flipping.

    For ``w`` in ``E`` this is ``min(-1/lambda_g)`` over the groups that
    shrink, or 1 if none does.
    """
    lam = active_coefficients(prob, decomp, w)
    neg = [-1.0 / v for v in lam.values() if v < 0]
    return min(neg) if neg else 1.0
