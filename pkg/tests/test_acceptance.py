"""End-to-end acceptance checks.

Each test records PASS/FAIL lines through the ``criterion`` fixture; the
terminal summary prints one line per criterion.  Tolerances are the stated
ones and are not relaxed when a check fails.
"""

import time

import numpy as np
import pytest

from cone_cases import GRID_PROGRAMS, WORKED, grid_value, program
from instances import certified_instance, domain_directions
from sharpcert.certificates import SHARP, STRONG, Thresholds, check_optimality, classify
from sharpcert.cone import OPTIMAL, solve_minmax_group_norm
from sharpcert.groups import (
    GroupStructure,
    block_soft_threshold,
    model_decomposition,
    nuclear_norm_2x2,
    second_subderivative,
    subgradient_residual,
)
from sharpcert.pipeline import optimality_flag, run_pipeline
from sharpcert.problem_io import EnsembleSpec, emit_report, generate_instance, load_problem
from sharpcert.recovery import noise_rng, rate_experiment, solve_lagrangian, sphere_noise

DESK = dict(m=60, n=400, q=20, G=20, k=3)
SEEDS = (1, 2, 3, 4, 5)
TRIALS = 100


@pytest.fixture(scope="module")
def desk_runs():
    """The desk-scale pipeline for every seed, with the wall time of each run."""
    runs = {}
    for seed in SEEDS:
        start = time.perf_counter()
        res = run_pipeline(EnsembleSpec(**DESK, seed=seed), TRIALS)
        runs[seed] = (res, time.perf_counter() - start)
    return runs


@pytest.mark.acceptance("AC1")
def test_ac1_strong_toy_end_to_end(fixtures_dir, criterion):
    start = time.perf_counter()
    rep = classify(load_problem(fixtures_dir / "strong_toy.json"), Thresholds.exact(), full=True)
    elapsed = time.perf_counter() - start
    ok = (rep.verdict == STRONG and abs(rep.rho.value - 1) <= 1e-6 and abs(rep.tau.value - 1) <= 1e-6
          and abs(rep.zeta.value) <= 1e-9 and rep.ri_holds and abs(rep.c1 - 0.577350) <= 1e-6
          and elapsed < 1.0)
    detail = (f"verdict={rep.verdict} rho={rep.rho.value:.9f} tau={rep.tau.value:.9f} "
              f"zeta={rep.zeta.value:.1e} ri={rep.ri_holds} c1={rep.c1:.9f} time={elapsed:.3f}s")
    assert criterion(ok, detail)


@pytest.mark.acceptance("AC2")
def test_ac2_sharp_toy(fixtures_dir, criterion):
    prob = load_problem(fixtures_dir / "sharp_toy.json")
    rep = classify(prob, Thresholds.exact(), full=True)
    rng = np.random.default_rng(2)
    K = prob.kernel
    J0 = prob.J(prob.x0)
    ratios = []
    for _ in range(1000):
        h = K @ rng.standard_normal(K.shape[1]) * 10.0 ** rng.uniform(-6, 2)
        ratios.append((prob.J(prob.x0 + h) - J0) / np.linalg.norm(h))
    growth = min(ratios)
    c = rep.sharpness_constant_c
    ok = (rep.verdict == SHARP and abs(rep.rho.value) <= 1e-9 and abs(c - 1) <= 1e-9
          and growth >= 1 - 1e-6)
    assert criterion(ok, f"verdict={rep.verdict} rho={rep.rho.value:.1e} c={c:.12f} "
                         f"min growth={growth:.12f}")


@pytest.mark.slow
@pytest.mark.acceptance("AC3")
def test_ac3_ordering_desk_scale(desk_runs, criterion):
    optimal = []
    for seed, (res, _) in desk_runs.items():
        for t, rep in enumerate(res.reports):
            if optimality_flag(rep) == "true":
                optimal.append(generate_instance(EnsembleSpec(**DESK, seed=seed), t))
    violations = 0
    for prob in optimal:
        rep = classify(prob, full=True)
        rho, tau, zeta = rep.rho.value, rep.tau.value, rep.zeta.value
        violations += not (zeta <= rho + 1e-6 and rho <= tau + 1e-6 and rho <= 1 + 1e-6)
    total = TRIALS * len(SEEDS)
    ok = len(optimal) >= 50 and violations == 0
    assert criterion(ok, f"desk scale: {len(optimal)}/{total} generated instances optimal "
                         f"(need >= 50), {violations} ordering violations")


@pytest.mark.slow
@pytest.mark.acceptance("AC3")
def test_ac3_ordering_l1(criterion):
    res = run_pipeline(EnsembleSpec(60, 400, 400, 1, 3, seed=1), 50, full=True)
    reps = [r for r in res.reports if optimality_flag(r) == "true"]
    bad = 0
    for r in reps:
        rho, tau, zeta = r.rho.value, r.tau.value, r.zeta.value
        ok = abs(zeta - rho) <= 1e-6 and rho <= tau + 1e-6 and rho <= 1 + 1e-6
        if r.ri_holds:
            ok = ok and rho <= r.ic.value + 1e-6
        bad += not ok
    ri = sum(bool(r.ri_holds) for r in reps)
    ok = len(reps) >= 50 and bad == 0
    assert criterion(ok, f"l1 (G=1): {len(reps)}/50 optimal, {ri} with RI, {bad} violations "
                         "of zeta = rho, rho <= tau, rho <= 1, rho <= IC")


@pytest.mark.acceptance("AC4")
def test_ac4_cone_oracles(criterion):
    worst_grid = 0.0
    for A, b, groups in GRID_PROGRAMS:
        b = np.asarray(b, dtype=float)
        sol = solve_minmax_group_norm(program(A, b, groups))
        brute = grid_value(A, b, groups)
        worst_grid = max(worst_grid, abs(sol.value - brute))
    worst_exact = 0.0
    statuses = set()
    for A, b, groups, value, _ in WORKED:
        sol = solve_minmax_group_norm(program(A, b, groups))
        statuses.add(sol.status)
        worst_exact = max(worst_exact, abs(sol.value - value))
    ok = worst_grid <= 2e-3 and worst_exact <= 1e-8 and statuses == {OPTIMAL}
    assert criterion(ok, f"grid deviation {worst_grid:.2e} (<= 2e-3), "
                         f"worked-example deviation {worst_exact:.2e} (<= 1e-8)")


@pytest.mark.acceptance("AC5")
def test_ac5_second_subderivative(criterion):
    rng = np.random.default_rng(5)
    shapes = [(6, 5, 4, 2), (8, 6, 3, 3), (10, 8, 4, 3)]
    t = 1e-4
    worst, checked, optimal = 0.0, 0, 0
    for i in range(20):
        prob, _ = certified_instance(rng, *shapes[i % len(shapes)])
        dm = model_decomposition(prob)
        optimal += check_optimality(prob, dm).is_optimal
        J0 = prob.J(prob.x0)
        for w in domain_directions(prob, rng, 10):
            d2 = second_subderivative(prob, dm, w)
            fd = 2 * (prob.J(prob.x0 + t * w) - J0) / t**2
            worst = max(worst, abs(d2 - fd) / max(d2, 1e-8))
            checked += 1
    ok = optimal == 20 and checked == 200 and worst <= 1e-3
    assert criterion(ok, f"{optimal}/20 instances optimal, {checked} directions, "
                         f"worst relative deviation {worst:.2e} (<= 1e-3)")


@pytest.mark.acceptance("AC6")
def test_ac6_prox_inclusion(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        sizes = rng.integers(1, 5, size=rng.integers(1, 8))
        offsets = np.concatenate(([0], np.cumsum(sizes)))
        gs = GroupStructure(int(offsets[-1]), [list(range(offsets[i], offsets[i + 1]))
                                               for i in range(sizes.size)])
        u = rng.standard_normal(gs.p) * 10.0 ** rng.uniform(-3, 3)
        lam = 10.0 ** rng.uniform(-3, 1) * np.linalg.norm(u) / np.sqrt(gs.q)
        z = block_soft_threshold(u, lam, gs)
        worst = max(worst, subgradient_residual(z, (u - z) / lam, gs))
    assert criterion(worst <= 1e-10, f"prox inclusion residual {worst:.2e} (<= 1e-10) on 1000 inputs")


@pytest.mark.acceptance("AC6")
def test_ac6_lagrangian_desk(criterion):
    spec = EnsembleSpec(40, 120, 30, 4, 3, seed=6)
    worst_res, worst_time, statuses = 0.0, 0.0, set()
    for t in range(5):
        prob = generate_instance(spec, t)
        delta = 0.05
        y = prob.y0 + sphere_noise(noise_rng(6, t, 0), prob.m, delta)
        start = time.perf_counter()
        run = solve_lagrangian(prob, y, delta)
        worst_time = max(worst_time, time.perf_counter() - start)
        worst_res = max(worst_res, run.kkt_residual)
        statuses.add(run.status)
    ok = worst_res <= 1e-8 and worst_time < 10 and statuses == {"optimal"}
    assert criterion(ok, f"desk Lagrangian: residual {worst_res:.2e} (<= 1e-8), "
                         f"slowest {worst_time:.2f}s (< 10s)")


@pytest.mark.acceptance("AC7")
def test_ac7_rates(fixtures_dir, criterion):
    deltas = [1e-1, 1e-2, 1e-3, 1e-4]
    start = time.perf_counter()
    toy = rate_experiment(load_problem(fixtures_dir / "sharp_toy.json"), deltas, 1.0, 5, seed=0)
    strong_toy = rate_experiment(load_problem(fixtures_dir / "strong_toy.json"), deltas, 1.0, 5, seed=0)
    elapsed = time.perf_counter() - start

    def within(fit):
        return sum(1 for r in fit.rows if not r["error"] <= r["bound"])

    toy_slopes = [toy.slopes[m] for m in ("lagrangian", "constrained")]
    ex_slopes = [strong_toy.slopes[m] for m in ("lagrangian", "constrained")]
    ok = (toy.verdict == SHARP and strong_toy.verdict == STRONG
          and within(toy) == 0 and within(strong_toy) == 0 and toy.failures == strong_toy.failures == 0
          and all(0.85 <= s <= 1.15 for s in toy_slopes) and all(s >= 0.45 for s in ex_slopes)
          and elapsed < 120)
    assert criterion(ok, f"toy slopes {toy_slopes[0]:.3f}/{toy_slopes[1]:.3f} in [0.85, 1.15], "
                         f"strong toy slopes {ex_slopes[0]:.3f}/{ex_slopes[1]:.3f} >= 0.45, "
                         f"bound violations {within(toy)}+{within(strong_toy)}, time {elapsed:.1f}s")


@pytest.mark.acceptance("AC8")
def test_ac8_nuclear_norm(criterion):
    rng = np.random.default_rng(8)
    worst = max(abs(nuclear_norm_2x2(x) - np.linalg.svd(x, compute_uv=False).sum())
                for x in rng.standard_normal((1000, 2, 2)) * 10.0 ** rng.uniform(-2, 2, (1000, 1, 1)))
    eps = 0.1

    # diagonal measurements, Y = (2, 1), Xbar = diag(1, 0)
    def theta(x):
        return 0.5 * np.sum((np.array([2.0, 1.0]) - np.diag(x)) ** 2) + nuclear_norm_2x2(x)

    x_bar = np.diag([1.0, 0.0])
    x_eps = np.array([[1 + eps**2, eps], [eps, eps**2]])
    lasso_gap = abs(theta(x_eps) - theta(x_bar) - eps**4)

    # constraint X11 + X22 = 1, X12 - X21 + X22 = 0
    y_eps = np.array([[1 - eps**1.5, eps - eps**1.5], [eps, eps**1.5]])
    feasible = np.allclose([y_eps[0, 0] + y_eps[1, 1], y_eps[0, 1] - y_eps[1, 0] + y_eps[1, 1]],
                           [1.0, 0.0], atol=1e-15)
    bp_gap = abs(nuclear_norm_2x2(y_eps) - 1 - (np.sqrt(1 + eps**3) - 1))
    ok = worst <= 1e-10 and lasso_gap <= 1e-9 and bp_gap <= 1e-9 and feasible
    assert criterion(ok, f"closed form vs SVD {worst:.1e}, regularized example {lasso_gap:.1e}, "
                         f"constrained example {bp_gap:.1e}")


@pytest.mark.slow
@pytest.mark.acceptance("AC9")
def test_ac9_scale_and_determinism(desk_runs, tmp_path, criterion):
    res, elapsed = desk_runs[1]
    again = run_pipeline(EnsembleSpec(**DESK, seed=1), TRIALS)
    files = []
    for name, r in (("a", res), ("b", again)):
        emit_report((r.header, r.rows), "csv", tmp_path / f"{name}.rows.csv")
        emit_report(r.tally, "csv", tmp_path / f"{name}.tally.csv")
        files.append(((tmp_path / f"{name}.rows.csv").read_bytes(),
                      (tmp_path / f"{name}.tally.csv").read_bytes()))
    same = files[0] == files[1]
    ok = elapsed < 300 and same and len(res.rows) == TRIALS
    assert criterion(ok, f"{TRIALS} desk trials in {elapsed:.1f}s (< 300s), identical CSV bytes: {same}")


@pytest.mark.slow
@pytest.mark.acceptance("AC9")
def test_ac9_desk_verdict_mix(desk_runs, criterion):
    optimal = failures = 0
    seen = set()
    tallies = []
    for seed, (res, _) in desk_runs.items():
        optimal += sum(optimality_flag(r) == "true" for r in res.reports)
        failures += res.solver_failures
        seen.update(res.tally)
        tallies.append(f"seed {seed}: " + ", ".join(f"{k}={v}" for k, v in res.tally.items()))
    total = TRIALS * len(SEEDS)
    ok = optimal == total and failures == 0 and {SHARP, STRONG} <= seen
    assert criterion(ok, f"{optimal}/{total} trials optimal, {failures} solver failures, "
                         f"classes seen {sorted(seen)} ({'; '.join(tallies)})")
