"""Certificates for optimality, sharpness and strong minimality of ``x0``.

All quantities refer to ``min J(x) s.t. Phi x = Phi x0`` with the group
regularizer of a :class:`~sharpcert.groups.Problem`.  With ``N`` a matrix whose
rows span ``Ker Phi``, ``S``/``T`` the inactive/active coordinates and ``e``
the active unit directions:

* the *source coefficient* ``rho`` is the least ``max_g |z_g|`` over
  ``z`` on ``S`` with ``N D_S z = -N D_T e``; ``x0`` is a minimizer iff the
  system is consistent and ``rho <= 1``;
* ``tau`` bounds ``rho`` by the least-norm solution of the same system;
* restricted injectivity (``Ker Phi`` meets ``Ker D_S^T`` trivially) with
  ``rho < 1`` makes ``x0`` a sharp minimizer with constant ``(1 - rho) c1``;
* ``zeta`` and ``gamma`` repeat ``rho``/``tau`` with ``N`` replaced by a basis
  ``M`` of ``Ker Phi`` intersected with the subspace ``E`` on which ``J`` is
  linear; together with strong restricted injectivity they decide whether an
  optimal ``x0`` is the unique (equivalently, strong) minimizer.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .cone import (
    INFEASIBLE,
    OPTIMAL,
    ConeProgram,
    solve_minmax_group_norm,
)
from .groups import (
    directional_derivative,
    kernel_e_basis,
    model_decomposition,
    second_subderivative,
)
from .linalg import smallest_singular_value, svd

NOT_A_SOLUTION = "not-a-solution"
NONUNIQUE = "solution-nonunique-or-undetermined"
STRONG = "unique-strong-not-sharp"
SHARP = "sharp"
BORDERLINE = "borderline"
VERDICTS = (NOT_A_SOLUTION, NONUNIQUE, STRONG, SHARP, BORDERLINE)

NOT_COMPUTED = "not-computed"
NOT_COMPUTABLE = "not-computable"
NOT_APPLICABLE = "not-applicable"
CLOSED_FORM = "closed-form"


@dataclass(frozen=True)
class Thresholds:
    """Decision thresholds for :func:`classify`."""

    tau: float = 0.99
    rho_lo: float = 0.95
    rho_hi: float = 1.05
    gamma: float = 0.99
    zeta: float = 0.95
    name: str = "default"

    @classmethod
    def exact(cls, eps=1e-6):
        """Thresholds hugging 1, for instances whose answer is known exactly."""
        return cls(1 - eps, 1 - eps, 1 + eps, 1 - eps, 1 - eps, name=f"exact(eps={eps:g})")

    @classmethod
    def parse(cls, text):
        """Parse ``"tau=0.9,rho_lo=0.9"``-style overrides of the defaults."""
        values = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            key, _, val = item.partition("=")
            key = key.strip()
            if key not in ("tau", "rho_lo", "rho_hi", "gamma", "zeta"):
                raise ValueError(f"unknown threshold {key!r}")
            values[key] = float(val)
        return replace(cls(), name="custom", **values)


@dataclass
class Coefficient:
    """A certificate value together with how it was obtained."""

    value: float
    status: str = CLOSED_FORM
    gap: float = 0.0

    def __float__(self):
        return float(self.value)

    @property
    def ok(self):
        return self.status in (OPTIMAL, CLOSED_FORM)


@dataclass
class CertificateReport:
    verdict: str
    thresholds: Thresholds
    consistency_ok: bool
    tau: Coefficient = None
    rho: Coefficient = None
    gamma: Coefficient = None
    zeta: Coefficient = None
    ic: Coefficient = None
    ri_holds: bool = None
    c1: float = None
    sri_holds: bool = None
    sharpness_constant_c: float = None
    lipschitz_L: float = None
    phi_pinv_norm: float = None
    kappa: float = None
    kappa_lower_bound: float = None
    kappa_samples: int = 0
    decided_by: str = ""
    notes: list = field(default_factory=list)
    certificate: np.ndarray = field(default=None, repr=False)
    witness: np.ndarray = field(default=None, repr=False)


def _not_computed():
    return Coefficient(np.nan, NOT_COMPUTED, np.nan)


def _from_solution(sol):
    if sol.status == INFEASIBLE:
        return Coefficient(np.inf, INFEASIBLE, np.inf)
    return Coefficient(sol.value, sol.status, sol.gap)


def _cone(A, b, groups, options):
    return solve_minmax_group_norm(ConeProgram(A, b, groups, **(options or {})))


# the linear systems --------------------------------------------------------


def source_system(prob, decomp):
    """``(N D_S, -N D_T e)`` with the rows of ``N`` spanning ``Ker Phi``."""
    N = prob.kernel.T
    A = N @ prob.D_cols(decomp.S)
    b = -N @ (prob.D_cols(decomp.T) @ decomp.e_T)
    return A, b


def strong_source_system(prob, decomp, M):
    A = M @ prob.D_cols(decomp.S)
    b = -M @ (prob.D_cols(decomp.T) @ decomp.e_T)
    return A, b


def consistency(prob, decomp, tol=1e-9):
    """Whether ``N D_S z = -N D_T e`` is solvable."""
    A, b = source_system(prob, decomp)
    dec = svd(A, prob.tol_rank)
    resid = np.linalg.norm(dec.project_range(b) - b)
    return bool(resid <= tol * max(1.0, float(np.linalg.norm(b))))


@dataclass
class OptimalityCheck:
    consistency_ok: bool
    rho: Coefficient
    is_optimal: bool
    solution: object = None


def check_optimality(prob, decomp, tol=1e-6, cone_options=None):
    """Consistency, ``rho`` and the resulting optimality verdict.

    ``is_optimal`` is ``None`` when the cone solver did not certify its answer.
    """
    A, b = source_system(prob, decomp)
    ok = consistency(prob, decomp)
    if not ok:
        return OptimalityCheck(False, Coefficient(np.inf, INFEASIBLE, np.inf), False)
    sol = _cone(A, b, decomp.sub_groups, cone_options)
    rho = _from_solution(sol)
    if sol.status == INFEASIBLE:
        return OptimalityCheck(False, rho, False, sol)
    if sol.status != OPTIMAL:
        return OptimalityCheck(True, rho, None, sol)
    return OptimalityCheck(True, rho, bool(sol.value <= 1 + tol), sol)


def tau(prob, decomp):
    """``max_g |z_g|`` for the least-norm solution ``z`` of the source system."""
    A, b = source_system(prob, decomp)
    z = svd(A, prob.tol_rank).solve(b)
    n = decomp.sub_groups.norms(z)
    return float(n.max()) if n.size else 0.0


def restricted_injectivity(prob, decomp, tol=None):
    """``c1 = min |D_S^T w|`` over unit ``w`` in ``Ker Phi``; holds iff ``c1 > tol``."""
    if tol is None:
        tol = 1e-10 * max(1.0, prob.D_norm)
    K = prob.kernel
    if K.shape[1] == 0:
        return True, np.inf
    c1 = smallest_singular_value(prob.D_cols(decomp.S).T @ K)
    return bool(c1 > tol), c1


def strong_restricted_injectivity(prob, decomp, tol=None):
    """Injectivity of ``D_S^T`` on ``Ker Phi`` intersected with ``E``.

    Returns ``(holds, M)`` where the rows of ``M`` form an orthonormal basis
    of that intersection.
    """
    if tol is None:
        tol = 1e-10 * max(1.0, prob.D_norm)
    W = kernel_e_basis(prob, decomp)
    M = W.T
    if M.shape[0] == 0:
        return True, M
    gain = smallest_singular_value(prob.D_cols(decomp.S).T @ W)
    return bool(gain > tol), M


def gamma(prob, decomp, M):
    """Closed-form upper bound on :func:`zeta` (least-norm solution)."""
    if M.shape[0] == 0:
        return 0.0
    A, b = strong_source_system(prob, decomp, M)
    z = svd(A, prob.tol_rank).solve(b)
    n = decomp.sub_groups.norms(z)
    return float(n.max()) if n.size else 0.0


def zeta(prob, decomp, M, cone_options=None):
    """The strong source coefficient; 0 when ``M`` has no rows."""
    if M.shape[0] == 0:
        return Coefficient(0.0)
    A, b = strong_source_system(prob, decomp, M)
    return _from_solution(_cone(A, b, decomp.sub_groups, cone_options))


def ic(prob, decomp, cone_options=None):
    """Identifiability criterion; an upper bound on ``rho`` under restricted injectivity.

    With ``U`` an orthonormal basis of ``Ker D_S^T`` and ``Phi_U = Phi U`` of
    full column rank, the residual ``r = (Phi^T (Phi_U^+)^T U^T - I) D_T e``
    lies in ``Im D_S``; the criterion is the least ``max_g |w_g + u|`` over
    ``u`` in ``Ker D_S`` where ``D_S w = r``.
    """
    DS = prob.D_cols(decomp.S)
    U = svd(DS.T, prob.tol_rank).kernel
    phiU = prob.phi @ U
    dec = svd(phiU, prob.tol_rank)
    if dec.rank < U.shape[1]:
        return Coefficient(np.nan, NOT_COMPUTABLE, np.nan)
    dte = prob.D_cols(decomp.T) @ decomp.e_T
    r = prob.phi.T @ (dec.pinv.T @ (U.T @ dte)) - dte
    if DS.shape[1] == 0:
        return Coefficient(0.0)
    w = svd(DS, prob.tol_rank).solve(r)
    return _from_solution(_cone(DS, DS @ w, decomp.sub_groups, cone_options))


def sharpness_constant(rho, c1):
    """``max(0, 1 - rho) * c1`` (``inf`` when ``Phi`` is injective and ``rho < 1``)."""
    slack = max(0.0, 1.0 - float(rho))
    if slack == 0.0:
        return 0.0
    return slack * c1


def lipschitz_constant(prob):
    """``sqrt(q) |D|``, a Lipschitz constant of ``J``."""
    return float(np.sqrt(prob.groups.q) * prob.D_norm)


# strong-minimum constant -----------------------------------------------------


@dataclass
class KappaEstimate:
    value: float
    lower_bound: float
    samples: int


def critical_cone(prob, decomp, v_S, tol=1e-6):
    """Generators of the directions where the first-order growth of ``J`` vanishes.

    With ``v`` a dual certificate (``e`` on the active groups, ``v_S`` on the
    inactive ones), a kernel direction ``w`` has zero derivative iff every
    inactive block of ``D^T w`` is a non-negative multiple of ``v_g`` when
    ``|v_g| = 1`` and vanishes otherwise.  Returns an orthonormal basis ``W``
    of the linear hull of this cone and the matrix ``Lam`` such that the cone
    is ``{W h : Lam h >= 0}``.
    """
    K = prob.kernel
    if K.shape[1] == 0:
        return np.zeros((prob.n, 0)), np.zeros((0, 0))
    vn = decomp.sub_groups.norms(v_S)
    Dt_K = prob.Dt(K)
    rows, lam_rows = [], []
    for k, g in enumerate(decomp.inactive):
        c = prob.groups.coords([g])
        sub = decomp.sub_groups.coords([k])
        block = Dt_K[c]
        if abs(vn[k] - 1.0) <= tol:
            vh = v_S[sub] / vn[k]
            rows.append(block - np.outer(vh, vh @ block))
            lam_rows.append(vh @ block)
        else:
            rows.append(block)
    C = np.vstack(rows) if rows else np.zeros((0, K.shape[1]))
    B = svd(C, prob.tol_rank).kernel
    W = K @ B
    Lam = np.array([lr @ B for lr in lam_rows]).reshape(len(lam_rows), B.shape[1])
    return W, Lam


def curvature_form(prob, decomp, W):
    """Matrix ``H`` with ``second_subderivative(W h) = h^T H h`` on the critical cone."""
    DtW = prob.Dt(W)
    H = np.zeros((W.shape[1], W.shape[1]))
    for g in decomp.active:
        c = prob.groups.coords([g])
        ug = decomp.u0[c]
        nu = decomp.block_norms[g]
        B = DtW[c]
        P = np.eye(len(c)) - np.outer(ug, ug) / nu**2
        H += B.T @ P @ B / nu
    return H


def sample_critical_directions(prob, decomp, v_S, count, rng, tol=1e-6):
    """Random unit directions of the critical cone (see :func:`critical_cone`)."""
    W, Lam = critical_cone(prob, decomp, v_S, tol)
    if W.shape[1] == 0:
        return np.zeros((0, prob.n))
    if Lam.shape[0] == 0:
        h = rng.standard_normal((count, W.shape[1]))
    else:
        dec = svd(Lam, prob.tol_rank)
        free = dec.kernel
        out = []
        for _ in range(50 * count):
            lam = np.abs(rng.standard_normal(Lam.shape[0]))
            h = dec.solve(lam) + free @ rng.standard_normal(free.shape[1])
            if np.all(Lam @ h >= -1e-12 * np.linalg.norm(h)):
                out.append(h)
                if len(out) == count:
                    break
        h = np.array(out).reshape(len(out), W.shape[1])
    w = h @ W.T
    norms = np.linalg.norm(w, axis=1)
    keep = norms > 0
    return w[keep] / norms[keep, None]


def strong_minimum_constant(prob, decomp, v_S, samples=1000, seed=0, tol=1e-6):
    """Sampled estimate of ``min second_subderivative(w)`` over unit critical ``w``.

    The lower bound is the least eigenvalue of the curvature form on the linear
    hull of the critical cone; it is exact when the cone is a subspace.
    """
    W, _ = critical_cone(prob, decomp, v_S, tol)
    if W.shape[1] == 0:
        return KappaEstimate(np.inf, np.inf, 0)
    H = curvature_form(prob, decomp, W)
    lower = float(np.linalg.eigvalsh(H)[0])
    rng = np.random.default_rng(seed)
    ws = sample_critical_directions(prob, decomp, v_S, samples, rng, tol)
    vals = [second_subderivative(prob, decomp, w, tol=1e-7) for w in ws]
    vals = [v for v in vals if np.isfinite(v)]
    value = min(vals) if vals else lower
    return KappaEstimate(float(value), max(lower, 0.0), len(vals))


# falsification ---------------------------------------------------------------


def descent_witness(prob, decomp, solution=None, drop=1e-9):
    """A feasible ``x`` with ``J(x) < J(x0) - drop`` when ``x0`` is not optimal.

    The direction comes from the cone solver: either a Farkas vector of the
    inconsistent source system or the dual certificate of ``rho > 1``.  Returns
    ``None`` if no such point is found by the backtracking search.
    """
    A, b = source_system(prob, decomp)
    N = prob.kernel.T
    if solution is None:
        solution = solve_minmax_group_norm(ConeProgram(A, b, decomp.sub_groups))
    if solution.status == INFEASIBLE:
        u = solution.farkas
    elif solution.dual is not None:
        u = svd(A.T, prob.tol_rank).solve(solution.dual)
    else:
        return None
    j0 = prob.J(prob.x0)
    for direction in (N.T @ u, -(N.T @ u)):
        if np.linalg.norm(direction) == 0:
            continue
        if directional_derivative(prob, decomp, direction) >= 0:
            continue
        t = 1.0
        for _ in range(80):
            x = prob.x0 + t * direction
            if prob.J(x) < j0 - drop:
                return x
            t *= 0.5
    return None


# the decision procedure --------------------------------------------------------


def _certificate_vector(prob, decomp, z_S):
    v = np.zeros(prob.p)
    v[decomp.T] = decomp.e_T
    v[decomp.S] = z_S
    return v


def classify(prob, thresholds=None, decomp=None, full=False, cone_options=None,
             kappa_samples=1000, seed=0):
    """Run the certificate pipeline and return a :class:`CertificateReport`.

    Cheap closed-form tests come first: ``tau`` below its threshold with
    restricted injectivity settles sharpness without a cone program.  Values
    are compared against thresholds together with their certified gap, and an
    interval that straddles a threshold yields ``borderline``.  With
    ``full=True`` every certificate is computed regardless of the early exits.
    """
    th = thresholds or Thresholds()
    dm = decomp or model_decomposition(prob)
    rep = CertificateReport(
        verdict=BORDERLINE, thresholds=th, consistency_ok=consistency(prob, dm),
        tau=_not_computed(), rho=_not_computed(), gamma=_not_computed(),
        zeta=_not_computed(), ic=_not_computed(),
        lipschitz_L=lipschitz_constant(prob), phi_pinv_norm=prob.phi_pinv_norm,
    )
    rep.ri_holds, rep.c1 = restricted_injectivity(prob, dm)
    A, b = source_system(prob, dm)
    decided = False

    if not rep.consistency_ok:
        rep.verdict, rep.decided_by = NOT_A_SOLUTION, "consistency"
        rep.witness = descent_witness(prob, dm, solve_minmax_group_norm(ConeProgram(A, b, dm.sub_groups)))
        decided = True
        if not full:
            return _finish(rep, prob, dm, full)

    z_tau = svd(A, prob.tol_rank).solve(b)
    tn = dm.sub_groups.norms(z_tau)
    rep.tau = Coefficient(float(tn.max()) if tn.size else 0.0)
    if not decided and rep.ri_holds and rep.tau.value < th.tau:
        rep.verdict, rep.decided_by = SHARP, "tau"
        rep.certificate = _certificate_vector(prob, dm, z_tau)
        decided = True
        if not full:
            return _finish(rep, prob, dm, full)

    sol = None
    if rep.consistency_ok:
        sol = _cone(A, b, dm.sub_groups, cone_options)
        rep.rho = _from_solution(sol)
        if sol.status == OPTIMAL:
            rep.certificate = _certificate_vector(prob, dm, sol.z)
    if not decided:
        if not rep.rho.ok:
            rep.verdict, rep.decided_by = BORDERLINE, "rho-solver"
            rep.notes.append(f"rho solver status {rep.rho.status}")
            decided = True
        else:
            lo, hi = rep.rho.value - rep.rho.gap, rep.rho.value
            if lo >= th.rho_hi:
                rep.verdict, rep.decided_by = NOT_A_SOLUTION, "rho"
                rep.witness = descent_witness(prob, dm, sol)
                decided = True
            elif hi >= th.rho_hi:
                rep.verdict, rep.decided_by = BORDERLINE, "rho-gap"
                decided = True
            elif rep.ri_holds and hi < th.rho_lo:
                rep.verdict, rep.decided_by = SHARP, "rho"
                decided = True
            elif rep.ri_holds and lo < th.rho_lo:
                rep.verdict, rep.decided_by = BORDERLINE, "rho-gap"
                decided = True
    if decided and not full:
        return _finish(rep, prob, dm, full)

    rep.sri_holds, M = strong_restricted_injectivity(prob, dm)
    rep.gamma = Coefficient(gamma(prob, dm, M))
    need_zeta = full or M.shape[0] == 0 or not (rep.sri_holds and rep.gamma.value < th.gamma)
    if need_zeta:
        rep.zeta = zeta(prob, dm, M, cone_options)
    if not decided:
        if not rep.sri_holds:
            rep.verdict, rep.decided_by = NONUNIQUE, "sri"
        elif rep.gamma.value < th.gamma:
            rep.verdict, rep.decided_by = STRONG, "gamma"
        elif not rep.zeta.ok:
            rep.verdict, rep.decided_by = BORDERLINE, "zeta-solver"
            rep.notes.append(f"zeta solver status {rep.zeta.status}")
        elif rep.zeta.value < th.zeta:
            rep.verdict, rep.decided_by = STRONG, "zeta"
        elif rep.zeta.value - rep.zeta.gap < th.zeta:
            rep.verdict, rep.decided_by = BORDERLINE, "zeta-gap"
        else:
            rep.verdict, rep.decided_by = BORDERLINE, "zeta"
            rep.notes.append("zeta above its threshold: no rule applies")
    return _finish(rep, prob, dm, full, cone_options, kappa_samples, seed)


def _finish(rep, prob, dm, full, cone_options=None, kappa_samples=1000, seed=0):
    rho = rep.rho.value if rep.rho.ok else (rep.tau.value if rep.verdict == SHARP else np.nan)
    if rep.ri_holds and np.isfinite(rho):
        rep.sharpness_constant_c = sharpness_constant(rho, rep.c1)
    else:
        rep.sharpness_constant_c = 0.0
    if full:
        if rep.sri_holds is None:
            rep.sri_holds, M = strong_restricted_injectivity(prob, dm)
            rep.gamma = Coefficient(gamma(prob, dm, M))
            rep.zeta = zeta(prob, dm, M, cone_options)
        rep.ic = ic(prob, dm, cone_options)
    if rep.verdict == STRONG and rep.certificate is not None and kappa_samples:
        kap = strong_minimum_constant(prob, dm, rep.certificate[dm.S], kappa_samples, seed)
        rep.kappa, rep.kappa_lower_bound, rep.kappa_samples = kap.value, kap.lower_bound, kap.samples
    return rep


# recovery bounds -------------------------------------------------------------


@dataclass
class RecoveryBounds:
    sharp_constrained: float = np.nan
    sharp_lagrangian: float = np.nan
    strong_constrained: float = np.nan
    strong_lagrangian: float = np.nan
    status: dict = field(default_factory=dict)


def recovery_bounds(report, prob, delta, mu_ratio=1.0, kappa=None):
    """Error bounds for the constrained and Lagrangian problems at noise level
    ``delta`` and ``mu = mu_ratio * delta``.

    The sharp bounds are linear in ``delta``, the strong ones grow like
    ``sqrt(delta)``.  The sharp bounds use the sharpness constant ``c`` of the report, the strong
    ones the constant ``kappa`` (default: the report's sampled estimate).
    """
    if delta <= 0 or mu_ratio <= 0:
        raise ValueError("delta and mu_ratio must be positive")
    L = report.lipschitz_L if report.lipschitz_L is not None else lipschitz_constant(prob)
    pn = report.phi_pinv_norm if report.phi_pinv_norm is not None else prob.phi_pinv_norm
    out = RecoveryBounds()
    c = report.sharpness_constant_c or 0.0
    if c > 0 and np.isinf(c):
        # injective Phi: the c -> inf limits
        out.sharp_constrained = 2 * pn * delta
        cbest = (1 / mu_ratio + L * pn) / pn
        out.sharp_lagrangian = (mu_ratio / (2 * cbest)) * (1 / mu_ratio + (cbest + L) * pn) ** 2 * delta
        out.status["sharp_constrained"] = out.status["sharp_lagrangian"] = "injective-limit"
    elif c > 0:
        out.sharp_constrained = 2 * (L + c) * pn * delta / c
        out.sharp_lagrangian = (mu_ratio / (2 * c)) * (1 / mu_ratio + (c + L) * pn) ** 2 * delta
        out.status["sharp_constrained"] = out.status["sharp_lagrangian"] = "ok"
    else:
        out.status["sharp_constrained"] = out.status["sharp_lagrangian"] = NOT_APPLICABLE
    kappa = report.kappa if kappa is None else kappa
    if kappa is None or not kappa > 0 or np.isinf(kappa):
        out.status["strong_constrained"] = out.status["strong_lagrangian"] = NOT_APPLICABLE
        return out
    out.strong_constrained = 2 * np.sqrt(L * pn * delta / kappa + pn**2 * delta**2)
    out.status["strong_constrained"] = "ok"
    den = 1 - mu_ratio * kappa * pn**2 * delta
    if den > 0:
        out.strong_lagrangian = np.sqrt(mu_ratio / (den * kappa)) * (1 / mu_ratio + L * pn) * np.sqrt(delta)
        out.status["strong_lagrangian"] = "ok"
    else:
        out.status["strong_lagrangian"] = NOT_APPLICABLE
    return out
