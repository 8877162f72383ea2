"""Noisy recovery with group-sparse regularizers and empirical error rates.

Two estimators are provided for ``y = Phi x0 + w`` with ``|w| <= delta``:

* :func:`solve_lagrangian` for ``min 1/2 |Phi x - y|^2 + mu J(x)``;
* :func:`solve_constrained` for ``min J(x) s.t. |Phi x - y| <= delta``,
  computed by root finding on ``mu`` (the two problems share their solution
  path) and by ADMM in the noiseless case.

:func:`rate_experiment` sweeps a noise grid, compares errors with the bounds
of :func:`sharpcert.certificates.recovery_bounds` and fits log-log slopes.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import brentq

from .certificates import SHARP, STRONG, Thresholds, classify, recovery_bounds
from .groups import block_soft_threshold, dual_group_norm, subgradient_residual
from .linalg import kernel_basis, svd

OPTIMAL = "optimal"
MAX_ITERATIONS = "max-iterations"
BRACKET_FAILURE = "bracket-failure"


@dataclass
class RecoveryRun:
    mode: str
    delta: float
    mu: float
    x: np.ndarray
    error: float
    kkt_residual: float
    iterations: int
    status: str
    residual_norm: float = np.nan
    objective: list = field(default_factory=list, repr=False)
    wall_time: float = 0.0
    seed: tuple = None


def _objective(prob, x, y, mu):
    r = prob.phi @ x - y
    return 0.5 * float(r @ r) + mu * prob.J(x)


def lagrangian_residual(prob, x, y, mu, atol=0.0, dual=None):
    """Fermat-rule residual: ``-Phi^T (Phi x - y) / mu`` against ``D dJ0(D^T x)``.

    For ``D = I`` this is exactly the blockwise distance to the subdifferential.
    For general ``D`` a subgradient ``v`` is built from a candidate ``s`` (the
    given ``dual``, else the least-norm solution of ``D s = g``): unit
    directions on the nonzero blocks of ``D^T x``, ``s`` clipped to the unit
    ball elsewhere.  The residual ``|D v - g|`` bounds the distance from above.
    """
    g = -prob.phi.T @ (prob.phi @ x - y) / mu
    if prob.identity_D:
        return subgradient_residual(x, g, prob.groups, atol)
    v = svd(prob.D_matrix, prob.tol_rank).solve(g) if dual is None else np.asarray(dual)
    u = prob.Dt(x)
    groups = prob.groups
    un = groups.norms(u)
    vn = groups.norms(v)
    on = un > atol
    scale = np.where(on, 1.0 / np.where(on, un, 1.0), 0.0)
    unit = np.zeros_like(u)
    unit[groups.perm] = u[groups.perm] * np.repeat(scale, groups.sizes)
    clip = np.minimum(1.0, 1.0 / np.where(vn > 0, vn, 1.0))
    clipped = np.zeros_like(v)
    clipped[groups.perm] = v[groups.perm] * np.repeat(clip, groups.sizes)
    sub = np.where(groups.expand(on.astype(float)) > 0, unit, clipped)
    return float(np.linalg.norm(prob.Dmul(sub) - g))


def _newton_polish(prob, x, y, mu, max_iter=50):
    """Newton's method on the smooth problem restricted to the current support."""
    groups = prob.groups
    norms = groups.norms(x)
    support = np.flatnonzero(norms > 0)
    if support.size == 0:
        return x
    coords = groups.coords(support)
    sub, _ = groups.restrict(support)
    P = prob.phi[:, coords]
    PtP = P.T @ P
    Pty = P.T @ y
    z = x[coords].copy()

    def f(z):
        r = P @ z - y
        return 0.5 * float(r @ r) + mu * float(np.sum(sub.norms(z)))

    fz = f(z)
    for _ in range(max_iter):
        zn = sub.norms(z)
        if np.any(zn <= 1e-300):
            return None
        unit = z / sub.expand(zn)
        grad = PtP @ z - Pty + mu * unit
        if np.linalg.norm(grad) <= 1e-15 * max(1.0, np.linalg.norm(Pty)):
            break
        H = PtP.copy()
        for k in range(sub.q):
            c = sub.coords([k])
            H[np.ix_(c, c)] += mu * (np.eye(len(c)) - np.outer(unit[c], unit[c])) / zn[k]
        try:
            step = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, grad, rcond=None)[0]
        if np.linalg.norm(step) <= 1e-14 * max(1.0, np.linalg.norm(z)):
            break
        t = 1.0
        while t > 1e-10:
            z2 = z + t * step
            f2 = f(z2)
            if f2 <= fz + 1e-4 * t * float(grad @ step):
                break
            t *= 0.5
        else:
            break
        if np.any(sub.norms(z2) <= 1e-14 * max(1.0, np.linalg.norm(z2))):
            return None
        z, fz = z2, f2
    out = np.zeros_like(x)
    out[coords] = z
    return out


def _fista(prob, y, mu, tol, max_iter, x_init, polish):
    phi = prob.phi
    L = prob.phi_svd.norm ** 2
    step = 1.0 / L if L > 0 else 1.0
    x = np.zeros(prob.n) if x_init is None else np.array(x_init, dtype=np.float64)
    z = x.copy()
    theta = 1.0
    obj = _objective(prob, x, y, mu)
    trace = [obj]
    best = (lagrangian_residual(prob, x, y, mu), x)
    support = None
    polished = None
    stable = 0
    it = 0
    for it in range(1, max_iter + 1):
        grad = phi.T @ (phi @ z - y)
        x_new = block_soft_threshold(z - step * grad, step * mu, prob.groups)
        obj_new = _objective(prob, x_new, y, mu)
        if obj_new > obj:
            # restart: a plain proximal-gradient step from x is a descent step
            theta = 1.0
            grad = phi.T @ (phi @ x - y)
            x_new = block_soft_threshold(x - step * grad, step * mu, prob.groups)
            obj_new = _objective(prob, x_new, y, mu)
            z = x_new.copy()
        else:
            theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta * theta))
            z = x_new + ((theta - 1) / theta_new) * (x_new - x)
            theta = theta_new
        x, obj = x_new, obj_new
        trace.append(obj)
        if it % 10:
            continue
        res = lagrangian_residual(prob, x, y, mu)
        if res < best[0]:
            best = (res, x)
        if res <= tol:
            break
        supp = tuple(np.flatnonzero(prob.groups.norms(x) > 0))
        stable = stable + 1 if supp == support else 0
        support = supp
        if polish and stable >= 3 and supp != polished:
            stable = 0
            polished = supp
            xp = _newton_polish(prob, x, y, mu)
            if xp is not None:
                rp = lagrangian_residual(prob, xp, y, mu)
                op = _objective(prob, xp, y, mu)
                if rp < best[0] and op <= obj + 1e-12 * max(1.0, abs(obj)):
                    best = (rp, xp)
                    x, z, obj, theta = xp, xp.copy(), op, 1.0
                    trace.append(obj)
                    if rp <= tol:
                        break
    return best[1], best[0], it, trace


def _primal_dual(prob, y, mu, tol, max_iter, x_init):
    """Chambolle-Pock on ``min_x max_{|p|_{inf,2} <= mu} <D^T x, p> + 1/2 |Phi x - y|^2``."""
    D = prob.D_matrix
    groups = prob.groups
    dn = prob.D_norm
    tau = sigma = np.sqrt(0.95) / dn
    chol = cho_factor(np.eye(prob.n) + tau * prob.phi.T @ prob.phi)
    pty = prob.phi.T @ y
    x = np.zeros(prob.n) if x_init is None else np.array(x_init, dtype=np.float64)
    p = np.zeros(prob.p)
    trace = [_objective(prob, x, y, mu)]
    best = (np.inf, x)
    it = 0
    for it in range(1, max_iter + 1):
        x_new = cho_solve(chol, x - tau * (D @ p) + tau * pty)
        v = p + sigma * (D.T @ (2 * x_new - x))
        vn = groups.norms(v)
        p = v * groups.expand(np.minimum(1.0, mu / np.where(vn > 0, vn, 1.0)))
        x = x_new
        if it % 10:
            continue
        trace.append(_objective(prob, x, y, mu))
        res = lagrangian_residual(prob, x, y, mu, atol=1e-9 * max(1.0, np.linalg.norm(x)),
                                  dual=p / mu)
        if res < best[0]:
            best = (res, x)
        if res <= tol:
            break
    return best[1], best[0], it, trace


def residual_floor(prob, y, mu):
    """Rounding-error level of :func:`lagrangian_residual` (it divides by ``mu``)."""
    nphi = prob.phi_svd.norm
    return 10 * np.finfo(float).eps * nphi * (nphi * np.linalg.norm(prob.x0) + np.linalg.norm(y)) / mu


def solve_lagrangian(prob, y, mu, tol=1e-10, max_iter=20000, x_init=None, polish=True):
    """Minimize ``1/2 |Phi x - y|^2 + mu J(x)``.

    Accelerated proximal gradient with restarts (plus a Newton step on the
    detected support) when ``D`` is the identity, a primal-dual method
    otherwise.  The status is ``optimal`` when the Fermat-rule residual of
    :func:`lagrangian_residual` is at most ``tol``, or at most its rounding
    floor :func:`residual_floor` when that is larger (very small ``mu``).
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    y = np.asarray(y, dtype=np.float64)
    t0 = time.perf_counter()
    tol = max(tol, residual_floor(prob, y, mu))
    if prob.identity_D:
        x, res, it, trace = _fista(prob, y, mu, tol, max_iter, x_init, polish)
    else:
        x, res, it, trace = _primal_dual(prob, y, mu, tol, max_iter, x_init)
    return RecoveryRun(
        mode="lagrangian", delta=np.nan, mu=float(mu), x=x,
        error=float(np.linalg.norm(x - prob.x0)), kkt_residual=res, iterations=it,
        status=OPTIMAL if res <= tol else MAX_ITERATIONS,
        residual_norm=float(np.linalg.norm(prob.phi @ x - y)),
        objective=trace, wall_time=time.perf_counter() - t0,
    )


def _basis_pursuit(prob, y, tol, max_iter):
    """ADMM for ``min J(x) s.t. Phi x = y`` with the split ``s = D^T x``."""
    n, m = prob.n, prob.m
    D = prob.D_matrix
    kkt = np.block([[D @ D.T, prob.phi.T], [prob.phi, np.zeros((m, m))]])
    kinv = svd(kkt, prob.tol_rank).pinv
    rho = 1.0
    s = np.zeros(prob.p)
    u = np.zeros(prob.p)
    x = kinv[:n] @ np.concatenate([np.zeros(n), y])
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        x = kinv[:n] @ np.concatenate([D @ (s - u), y])
        dtx = D.T @ x
        s_old = s
        s = block_soft_threshold(dtx + u, 1.0 / rho, prob.groups)
        u += dtx - s
        r_p = np.linalg.norm(dtx - s)
        r_d = rho * np.linalg.norm(D @ (s - s_old))
        res = max(r_p, r_d)
        if res <= tol * max(1.0, np.linalg.norm(dtx)):
            break
    return x, res, it


class _Matched(Exception):
    pass


def solve_constrained(prob, y, delta, tol=1e-10, max_iter=20000, tol_match=1e-6,
                      max_bisect=200):
    """Minimize ``J(x)`` subject to ``|Phi x - y| <= delta``.

    For ``delta > 0`` the solution is the Lagrangian solution whose residual
    norm equals ``delta``; ``mu`` is found by bracketed root finding in log
    scale (Brent's method, which falls back to bisection steps).  If a
    minimizer of ``J`` (a point of ``Ker D^T``) is already feasible, it is
    returned directly.
    """
    y = np.asarray(y, dtype=np.float64)
    t0 = time.perf_counter()
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if delta == 0:
        x, res, it = _basis_pursuit(prob, y, tol, max_iter)
        return RecoveryRun(
            mode="constrained", delta=0.0, mu=0.0, x=x,
            error=float(np.linalg.norm(x - prob.x0)), kkt_residual=float(res),
            iterations=it, status=OPTIMAL if res <= tol * max(1.0, np.linalg.norm(x)) else MAX_ITERATIONS,
            residual_norm=float(np.linalg.norm(prob.phi @ x - y)),
            wall_time=time.perf_counter() - t0,
        )
    if prob.identity_D:
        x_flat = np.zeros(prob.n)
    else:
        Z = kernel_basis(prob.D_matrix.T, prob.tol_rank)
        x_flat = Z @ svd(prob.phi @ Z, prob.tol_rank).solve(y)
    r_flat = y - prob.phi @ x_flat
    if np.linalg.norm(r_flat) <= delta:
        return RecoveryRun(
            mode="constrained", delta=float(delta), mu=np.inf, x=x_flat,
            error=float(np.linalg.norm(x_flat - prob.x0)), kkt_residual=0.0,
            iterations=0, status=OPTIMAL, residual_norm=float(np.linalg.norm(r_flat)),
            wall_time=time.perf_counter() - t0,
        )
    g = prob.phi.T @ r_flat
    mu_hi = dual_group_norm(g if prob.identity_D else svd(prob.D_matrix, prob.tol_rank).solve(g),
                            prob.groups)
    total_it = 0

    def run(mu, x_init):
        nonlocal total_it
        r = solve_lagrangian(prob, y, mu, tol=tol, max_iter=max_iter, x_init=x_init)
        total_it += r.iterations
        return r

    hi_run = run(mu_hi, None)
    for _ in range(60):
        if hi_run.residual_norm >= delta:
            break
        mu_hi *= 2.0
        hi_run = run(mu_hi, hi_run.x)
    # as mu -> 0 the residual norm decreases to the distance from y to Im Phi
    mu_lo = 1e-12 * mu_hi
    r_lo = float(np.linalg.norm(y - prob.phi_svd.project_range(y)))
    best = hi_run
    status = OPTIMAL
    if r_lo > delta or hi_run.residual_norm < delta:
        status = BRACKET_FAILURE
    else:
        # the residual norm is monotone in mu: bracketed root finding on log(mu)
        warm = {"x": hi_run.x}
        s_lo, s_hi = np.log(mu_lo), np.log(mu_hi)

        def gap(s):
            nonlocal best
            if s == s_lo:
                return r_lo - delta
            if s == s_hi:
                return hi_run.residual_norm - delta
            r = run(float(np.exp(s)), warm["x"])
            warm["x"] = r.x
            if abs(r.residual_norm - delta) < abs(best.residual_norm - delta):
                best = r
            if abs(r.residual_norm - delta) <= tol_match * delta:
                raise _Matched
            return r.residual_norm - delta

        try:
            brentq(gap, s_lo, s_hi, xtol=1e-15, maxiter=max_bisect)
        except (_Matched, RuntimeError):
            pass
        if abs(best.residual_norm - delta) > tol_match * delta:
            status = MAX_ITERATIONS
    return RecoveryRun(
        mode="constrained", delta=float(delta), mu=best.mu, x=best.x,
        error=float(np.linalg.norm(best.x - prob.x0)), kkt_residual=best.kkt_residual,
        iterations=total_it, status=status if best.status == OPTIMAL else best.status,
        residual_norm=best.residual_norm, wall_time=time.perf_counter() - t0,
    )


# noise experiments -------------------------------------------------------------


def noise_rng(seed, delta_index, draw_index):
    """Independent counter-based stream for one cell of a noise experiment."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, delta_index, draw_index])))


def sphere_noise(rng, m, delta):
    g = rng.standard_normal(m)
    nrm = np.linalg.norm(g)
    return delta * g / nrm if nrm > 0 else g


def worker_count():
    env = os.environ.get("SHARPCERT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class RateFit:
    deltas: np.ndarray
    rows: list
    medians: dict
    bounds: dict
    slopes: dict
    intercepts: dict
    verdict: str
    failures: int = 0


def _fit(deltas, errors):
    keep = (deltas > 0) & (errors > 0) & np.isfinite(errors)
    if keep.sum() < 2:
        return np.nan, np.nan
    slope, intercept = np.polyfit(np.log(deltas[keep]), np.log(errors[keep]), 1)
    return float(slope), float(intercept)


def rate_experiment(prob, deltas, mu_ratio=1.0, draws=5, seed=0, report=None,
                    tol=1e-10, max_iter=20000, threads=None):
    """Recovery errors over a decreasing noise grid, with bounds and fitted slopes.

    Each ``(delta, draw)`` cell draws noise uniformly on the sphere of radius
    ``delta`` from its own counter-based stream, solves both problems
    (``mu = mu_ratio * delta`` for the Lagrangian one) and records one row per
    mode.  Bounds follow the verdict: sharp instances get the linear bounds,
    strong-but-not-sharp ones the square-root bounds.
    """
    grid = np.asarray(sorted({float(d) for d in deltas}, reverse=True))
    if grid.size == 0 or grid[-1] < 0:
        raise ValueError("noise levels must be non-negative")
    if report is None:
        report = classify(prob, Thresholds.exact())

    def bound_for(delta, mode):
        if delta == 0:
            return 0.0
        b = recovery_bounds(report, prob, delta, mu_ratio)
        if report.verdict == SHARP:
            return b.sharp_lagrangian if mode == "lagrangian" else b.sharp_constrained
        if report.verdict == STRONG:
            return b.strong_lagrangian if mode == "lagrangian" else b.strong_constrained
        return np.nan

    def cell(i, j):
        delta = grid[i]
        rng = noise_rng(seed, i, j)
        y = prob.y0 + sphere_noise(rng, prob.m, delta)
        out = []
        if delta > 0:
            out.append(solve_lagrangian(prob, y, mu_ratio * delta, tol=tol, max_iter=max_iter))
        out.append(solve_constrained(prob, y, delta, tol=tol, max_iter=max_iter))
        return i, j, out

    jobs = [(i, j) for i in range(grid.size) for j in range(draws)]
    workers = threads or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda ij: cell(*ij), jobs))
    else:
        results = [cell(i, j) for i, j in jobs]

    rows, failures = [], 0
    per = {}
    for i, j, runs in results:
        for run in runs:
            ok = run.status == OPTIMAL
            failures += not ok
            row = {
                "delta": grid[i], "draw": j, "mode": run.mode, "error": run.error,
                "bound": bound_for(grid[i], run.mode), "iterations": run.iterations,
                "kkt_residual": run.kkt_residual, "status": run.status,
            }
            rows.append(row)
            if ok:
                per.setdefault((run.mode, i), []).append(run.error)
    medians, bounds, slopes, intercepts = {}, {}, {}, {}
    for mode in ("lagrangian", "constrained"):
        med = np.array([np.median(per[(mode, i)]) if (mode, i) in per else np.nan
                        for i in range(grid.size)])
        medians[mode] = med
        bounds[mode] = np.array([bound_for(d, mode) for d in grid])
        slopes[mode], intercepts[mode] = _fit(grid, med)
    return RateFit(grid, rows, medians, bounds, slopes, intercepts, report.verdict, failures)
