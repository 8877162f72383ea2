"""Minimize the largest block norm over an affine set.

Solves ``min_z max_g |z_g|  s.t.  A z = b`` where the blocks ``z_g`` come from
a :class:`~sharpcert.groups.GroupStructure` over the columns of ``A``.

The method is over-relaxed ADMM on the epigraph ``{(z, t) : max_g |z_g| <= t}``
with the affine constraint handled by an exact projection.  Every iterate
yields a feasible point (an upper bound) and, through the scaled multiplier,
a vector ``y`` in the row space of ``A``; since ``<z, y> = <z_p, y>`` for every
feasible ``z``, duality of the ``(inf, 2)`` and ``(1, 2)`` norms gives the lower
bound ``<z_p, y> / |y|_{1,2}``.  The solver stops on a certified gap.  Near the
end an active-set Newton step on the KKT system usually closes the gap to
machine precision.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from . import kernels
from .groups import GroupStructure
from .linalg import DEFAULT_TOL_RANK, InvalidInputError, as_matrix, as_vector, svd

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max-iterations"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass
class ConeProgram:
    """``min max_g |z_g|`` subject to ``A z = b``.

    ``groups`` partitions the columns of ``A``.  When ``free`` is given, only
    those columns (a union of groups) are variables and the rest are fixed
    to zero.
    """

    A: np.ndarray
    b: np.ndarray
    groups: GroupStructure
    free: np.ndarray = None
    tol_primal: float = 1e-9
    tol_stationarity: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: int = 50000
    tol_rank: float = DEFAULT_TOL_RANK

    def __post_init__(self):
        self.A = as_matrix(np.atleast_2d(self.A), "A")
        self.b = as_vector(self.b, "b", self.A.shape[0])
        if self.groups.p != self.A.shape[1]:
            raise InvalidInputError(
                f"partition covers {self.groups.p} coordinates, A has {self.A.shape[1]} columns"
            )
        if self.free is not None:
            self.free = np.asarray(sorted(int(i) for i in self.free), dtype=np.int64)
            ids = sorted(set(self.groups.group_of[self.free].tolist()))
            if len(self.groups.coords(ids)) != self.free.size:
                raise InvalidInputError("free coordinates must be a union of groups")


@dataclass
class ConeSolution:
    z: np.ndarray
    value: float
    status: str
    primal_residual: float = 0.0
    stationarity: float = 0.0
    gap: float = 0.0
    lower_bound: float = 0.0
    iterations: int = 0
    dual: np.ndarray = None
    farkas: np.ndarray = None
    history: list = field(default_factory=list, repr=False)

    @property
    def optimal(self):
        return self.status == OPTIMAL


def _min_norm_in_hull(B):
    """``min |B mu|`` over the probability simplex, via penalized NNLS."""
    if B.shape[1] == 1 or B.shape[0] == 0:
        return float(np.linalg.norm(B[:, 0])) if B.shape[0] else 0.0
    w = 1e3 * max(1.0, float(np.linalg.norm(B)))
    aug = np.vstack([B, w * np.ones((1, B.shape[1]))])
    rhs = np.zeros(aug.shape[0])
    rhs[-1] = w
    mu, _ = nnls(aug, rhs, maxiter=50 * B.shape[1])
    total = mu.sum()
    if total <= 0:
        return float(np.min(np.linalg.norm(B, axis=0)))
    return float(np.linalg.norm(B @ (mu / total)))


class _Solver:
    def __init__(self, prog):
        self.prog = prog
        self.kern = kernels.get_backend()
        if prog.free is not None:
            ids = sorted(set(prog.groups.group_of[prog.free].tolist()))
            self.groups, self.coords = prog.groups.restrict(ids)
        else:
            self.groups, self.coords = prog.groups, np.arange(prog.groups.p)
        self.A = prog.A[:, self.coords]
        self.b = prog.b
        self.dec = svd(self.A, prog.tol_rank)
        self.K = self.dec.kernel
        self.V = self.dec.row_space
        self.k = self.K.shape[1]
        self.use_kernel = self.k <= self.V.shape[1]
        self.group_slices = [
            self.groups.perm[self.groups.ptr[g] : self.groups.ptr[g + 1]] for g in range(self.groups.q)
        ]

    # projections -----------------------------------------------------------

    def project_affine(self, v):
        if self.use_kernel:
            return self.zp + self.K @ (self.K.T @ v)
        return v - self.V @ (self.V.T @ v) + self.zp

    def project_row(self, v):
        if self.use_kernel:
            return v - self.K @ (self.K.T @ v)
        return self.V @ (self.V.T @ v)

    def norms(self, z):
        return self.kern.block_norms(z, self.groups.perm, self.groups.ptr)

    def maxnorm(self, z):
        n = self.norms(z)
        return float(n.max()) if n.size else 0.0

    def lower_bound(self, y):
        w = self.project_row(y)
        den = float(np.sum(self.norms(w)))
        if den <= 0.0:
            return 0.0, None
        val = float(self.zp @ w)
        if val < 0:
            w, val = -w, -val
        return val / den, w / den

    def stationarity(self, z, active_tol):
        if self.k == 0:
            return 0.0
        n = self.norms(z)
        f = float(n.max()) if n.size else 0.0
        if f <= 0.0:
            return 0.0
        act = np.flatnonzero(n >= f - active_tol)
        cols = [self.K[self.group_slices[g]].T @ (z[self.group_slices[g]] / n[g]) for g in act]
        return _min_norm_in_hull(np.column_stack(cols))

    # the solve ---------------------------------------------------------------

    def run(self):
        prog = self.prog
        d = self.A.shape[1]
        b_scale = max(1.0, float(np.linalg.norm(self.b)))
        zp = self.dec.solve(self.b)
        resid = float(np.linalg.norm(self.A @ zp - self.b))
        if resid > prog.tol_primal * b_scale:
            farkas = self.b - self.A @ zp
            farkas /= np.linalg.norm(farkas)
            return self._finish(
                np.zeros(d), np.inf, INFEASIBLE, primal=resid, farkas=farkas, scale=1.0
            )
        s0 = self.maxnorm(zp)
        if s0 == 0.0:
            return self._finish(np.zeros(d), 0.0, OPTIMAL, primal=resid, scale=1.0)
        self.zp = zp / s0
        if self.k == 0:
            z = self.zp
            n = self.norms(z)
            y = np.zeros(d)
            top = self.group_slices[int(np.argmax(n))]
            y[top] = z[top] / n.max()
            return self._finish(z, 1.0, OPTIMAL, lb=1.0, dual=y, scale=s0, primal=resid / s0)
        return self._admm(s0)

    def _admm(self, s0):
        prog = self.prog
        kern, perm, ptr = self.kern, self.groups.perm, self.groups.ptr
        alpha, rho = 1.6, 1.0
        zt = self.zp.copy()
        tt = self.maxnorm(zt)
        uz = np.zeros_like(zt)
        ut = 0.0
        best_p, best_z = tt, zt.copy()
        best_lb, best_y = 0.0, None
        last_polish_gap = np.inf
        it = 0
        history = []
        for it in range(1, prog.max_iter + 1):
            z = self.project_affine(zt - uz)
            t = tt - ut - 1.0 / rho
            zr = alpha * z + (1 - alpha) * zt
            tr = alpha * t + (1 - alpha) * tt
            zt_old, tt_old = zt, tt
            zt, tt = kern.project_epigraph_maxnorm(zr + uz, tr + ut, perm, ptr)
            uz += zr - zt
            ut += tr - tt

            if it % 10:
                continue
            cand = self.project_affine(zt)
            p = self.maxnorm(cand)
            if p < best_p:
                best_p, best_z = p, cand
            lb, y = self.lower_bound(uz)
            if lb > best_lb:
                best_lb, best_y = lb, y
            gap = best_p - best_lb
            history.append((it, best_p, best_lb))
            if gap <= prog.tol_gap * max(1.0, best_p):
                break
            if gap < 1e-2 and gap < 0.1 * last_polish_gap and best_y is not None:
                last_polish_gap = gap
                pz, py = self._polish(best_z, best_y, gap)
                if pz is not None:
                    p2 = self.maxnorm(pz)
                    lb2, y2 = self.lower_bound(py)
                    if p2 < best_p:
                        best_p, best_z = p2, pz
                    if lb2 > best_lb:
                        best_lb, best_y = lb2, y2
                    if best_p - best_lb <= prog.tol_gap * max(1.0, best_p):
                        break
            if it % 50 == 0:
                r_p = np.sqrt(np.sum((z - zt) ** 2) + (t - tt) ** 2)
                r_d = rho * np.sqrt(np.sum((zt - zt_old) ** 2) + (tt - tt_old) ** 2)
                if r_p > 10 * r_d:
                    rho *= 2.0
                    uz /= 2.0
                    ut /= 2.0
                elif r_d > 10 * r_p:
                    rho /= 2.0
                    uz *= 2.0
                    ut *= 2.0
        if self.maxnorm(self.zp) <= best_p * (1 + 1e-12):
            # the least-norm feasible point is optimal: prefer it among ties
            best_z = self.zp
        gap = max(best_p - best_lb, 0.0)
        ok = gap <= prog.tol_gap * max(1.0, best_p)
        sol = self._finish(
            best_z, best_p, OPTIMAL if ok else MAX_ITERATIONS,
            lb=best_lb, dual=best_y, scale=s0, iterations=it,
        )
        sol.history = history
        return sol

    def _polish(self, z, y, gap):
        """Newton's method on the KKT system restricted to the near-maximal blocks.

        Unknowns are the kernel coordinates ``c`` (``z = z_p + K c``), the level
        ``t`` and one multiplier per active block.  Equations: stationarity
        ``sum_g mu_g K_g^T z_g = 0``, normalization ``t sum mu = 1`` and
        ``|z_g|^2 = t^2`` on the active blocks.
        """
        K, sl = self.K, self.group_slices
        n = self.norms(z)
        t = float(n.max())
        thr = max(10.0 * gap, 1e-9 * t)
        act = [int(g) for g in np.flatnonzero(n >= t - thr)]
        yn = self.norms(y)
        c = K.T @ (z - self.zp)
        best_z = best_y = None
        best_p, best_lb = np.inf, -np.inf
        dropped = set()
        for _ in range(10):
            mu = np.array([yn[g] / max(n[g], 1e-300) for g in act])
            if mu.sum() <= 0:
                mu = np.ones(len(act))
            mu /= t * mu.sum()
            c, t, mu, ok, converged = self._newton(c, t, mu, act)
            if not ok:
                break
            zc = self.zp + K @ c
            yc = np.zeros_like(zc)
            for g, m in zip(act, mu):
                yc[sl[g]] = max(m, 0.0) * zc[sl[g]]
            # rounds can trade primal for dual quality: keep the best of each
            nc = self.norms(zc)
            tc = float(nc.max())
            lb, _ = self.lower_bound(yc)
            if tc < best_p:
                best_p, best_z = tc, zc
            if lb > best_lb:
                best_lb, best_y = lb, yc
            extra = [int(g) for g in np.flatnonzero(nc > t * (1 + 1e-12)) if g not in act]
            neg = [g for g, m in zip(act, mu) if m < -1e-12 * abs(mu).max()]
            if not extra and not neg:
                if converged:
                    break
                # the KKT system has no solution on this set: widen it by the next block
                rest = [int(g) for g in np.argsort(-nc) if g not in act and g not in dropped]
                if not rest:
                    break
                extra = rest[:1]
            dropped.update(neg[:1])
            act = sorted((set(act) - set(neg[:1])) | set(extra))
            n, t = nc, tc
            if not act:
                break
        if best_z is None:
            return None, None
        return best_z, best_y

    def _newton(self, c, t, mu, act):
        K, sl = self.K, self.group_slices
        k, a = self.k, len(act)
        Kg = [K[sl[g]] for g in act]

        def residual(c, t, mu):
            z = self.zp + K @ c
            zg = [z[sl[g]] for g in act]
            f1 = sum(m * (Kb.T @ v) for m, Kb, v in zip(mu, Kg, zg))
            f2 = t * mu.sum() - 1.0
            f3 = np.array([0.5 * (v @ v - t * t) for v in zg])
            return np.concatenate([np.atleast_1d(f1), [f2], f3]), zg

        F, zg = residual(c, t, mu)
        nf = np.linalg.norm(F)
        for _ in range(60):
            nf = np.linalg.norm(F)
            if not np.isfinite(nf):
                return c, t, mu, False, False
            if nf < 1e-15:
                break
            Jm = np.zeros((k + 1 + a, k + 1 + a))
            for j, (m, Kb, v) in enumerate(zip(mu, Kg, zg)):
                Jm[:k, :k] += m * (Kb.T @ Kb)
                col = Kb.T @ v
                Jm[:k, k + 1 + j] = col
                Jm[k + 1 + j, :k] = col
                Jm[k + 1 + j, k] = -t
            Jm[k, k] = mu.sum()
            Jm[k, k + 1 :] = t
            step = np.linalg.lstsq(Jm, -F, rcond=None)[0]
            lam = 1.0
            while lam > 1e-6:
                c2, t2, mu2 = c + lam * step[:k], t + lam * step[k], mu + lam * step[k + 1 :]
                F2, zg2 = residual(c2, t2, mu2)
                if np.linalg.norm(F2) < (1 - 1e-4 * lam) * nf:
                    break
                lam *= 0.5
            else:
                break
            c, t, mu, F, zg = c2, t2, mu2, F2, zg2
            nf = np.linalg.norm(F)
        return c, t, mu, True, nf <= 1e-10 * max(1.0, t)

    def _finish(self, z, value, status, *, scale, lb=None, dual=None, primal=None,
                farkas=None, iterations=0):
        prog = self.prog
        full = np.zeros(prog.A.shape[1])
        full[self.coords] = z * scale
        if status == INFEASIBLE:
            return ConeSolution(full, np.inf, INFEASIBLE, primal_residual=primal,
                                stationarity=np.inf, gap=np.inf, lower_bound=np.inf,
                                farkas=farkas)
        primal = float(np.linalg.norm(prog.A @ full - prog.b))
        lb = value if lb is None else lb
        gap = max(value - lb, 0.0)
        stat = self.stationarity(z, max(10.0 * gap, 1e-9 * max(value, 1e-300))) if value > 0 else 0.0
        b_scale = max(1.0, float(np.linalg.norm(prog.b)))
        if status == OPTIMAL and (
            primal > prog.tol_primal * b_scale or stat > prog.tol_stationarity
        ):
            status = MAX_ITERATIONS if gap > prog.tol_gap * max(1.0, value) else NUMERICAL_FAILURE
        y = None
        if dual is not None:
            y = np.zeros(prog.A.shape[1])
            y[self.coords] = dual
        # report the objective of the returned vector itself
        norms = self.norms(full[self.coords])
        value = float(norms.max()) if norms.size else 0.0
        return ConeSolution(
            full, value, status, primal_residual=primal, stationarity=stat,
            gap=max(value - lb * scale, 0.0), lower_bound=lb * scale, iterations=iterations,
            dual=y,
        )


def solve_minmax_group_norm(prog):
    """Solve a :class:`ConeProgram`; see the module docstring for the method."""
    return _Solver(prog).run()


def kkt_residuals(prog, z, active_tol=None):
    """Primal residual and first-order stationarity residual of ``z``.

    Stationarity is the distance from 0 to the convex hull of the unit
    directions of the maximal blocks, projected onto ``Ker A``; it vanishes
    exactly at minimizers.
    """
    s = _Solver(prog)
    zf = np.asarray(z, dtype=np.float64)[s.coords]
    primal = float(np.linalg.norm(prog.A @ np.asarray(z, dtype=np.float64) - prog.b))
    n = s.norms(zf)
    f = float(n.max()) if n.size else 0.0
    if active_tol is None:
        active_tol = 1e-7 * max(f, 1e-300)
    return primal, s.stationarity(zf, active_tol)
