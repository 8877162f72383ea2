import numpy as np
import pytest

from instances import gaussian_problem
from sharpcert.certificates import SHARP, Thresholds, classify
from sharpcert.groups import GroupStructure, Problem, block_soft_threshold
from sharpcert.recovery import (
    OPTIMAL,
    lagrangian_residual,
    noise_rng,
    rate_experiment,
    solve_constrained,
    solve_lagrangian,
    sphere_noise,
    worker_count,
)


@pytest.fixture
def prox_problem():
    return Problem(np.eye(2), GroupStructure(2, [[0, 1]]), [3.0, 4.0])


def objective(prob, x, y, mu):
    return 0.5 * np.sum((prob.phi @ x - y) ** 2) + mu * prob.J(x)


class TestLagrangian:
    def test_prox_example(self, prox_problem):
        run = solve_lagrangian(prox_problem, np.array([3.0, 4.0]), 2.5)
        assert run.status == OPTIMAL
        assert run.x == pytest.approx([1.5, 2.0], abs=1e-10)

    @pytest.mark.parametrize("mu", [5.0, 7.5, 100.0])
    def test_annihilation(self, prox_problem, mu):
        assert not solve_lagrangian(prox_problem, np.array([3.0, 4.0]), mu).x.any()

    def test_rejects_non_positive_mu(self, prox_problem):
        with pytest.raises(ValueError):
            solve_lagrangian(prox_problem, np.array([3.0, 4.0]), 0.0)

    def test_vanishing_mu_recovers_unique_solution(self, sharp_toy):
        errors = [solve_lagrangian(sharp_toy, sharp_toy.y0, mu).error for mu in (1e-2, 1e-4, 1e-6)]
        assert errors[-1] <= 1e-5
        assert errors == sorted(errors, reverse=True)

    @pytest.mark.parametrize("seed", range(5))
    def test_trace_and_certificate(self, seed):
        rng = np.random.default_rng(seed)
        prob = gaussian_problem(rng, 40, 30, 4, 3)
        y = prob.y0 + sphere_noise(rng, prob.m, 0.1)
        mu = 0.1
        run = solve_lagrangian(prob, y, mu, tol=1e-9)
        assert run.status == OPTIMAL
        trace = np.array(run.objective)
        assert np.all(np.diff(trace) <= 1e-12 * max(1.0, trace[0]))
        assert objective(prob, run.x, y, mu) <= objective(prob, prob.x0, y, mu) + 1e-12
        assert lagrangian_residual(prob, run.x, y, mu) <= 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_fixed_point_of_prox_gradient(self, seed):
        # x = prox_{mu/L}(x - Phi^T (Phi x - y) / L) holds exactly at a minimizer
        rng = np.random.default_rng(seed)
        prob = gaussian_problem(rng, 15, 10, 3, 2)
        y = prob.y0 + sphere_noise(rng, prob.m, 0.3)
        mu = 0.2
        x = solve_lagrangian(prob, y, mu).x
        L = np.linalg.norm(prob.phi, 2) ** 2
        step = x - prob.phi.T @ (prob.phi @ x - y) / L
        assert np.allclose(block_soft_threshold(step, mu / L, prob.groups), x, atol=1e-9)

    @pytest.mark.parametrize("seed", range(4))
    def test_general_analysis_operator(self, seed):
        cp = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(seed)
        n, p = 6, 8
        D = rng.standard_normal((n, p))
        gs = GroupStructure.contiguous(p, 2)
        prob = Problem(rng.standard_normal((5, n)), gs, rng.standard_normal(n), D=D)
        y = prob.y0 + 0.1 * rng.standard_normal(5)
        mu = 0.3
        run = solve_lagrangian(prob, y, mu, tol=1e-8, max_iter=200000)
        assert run.status == OPTIMAL
        x = cp.Variable(n)
        u = D.T @ x
        reg = sum(cp.norm(u[g[0]:g[-1] + 1]) for g in gs.groups)
        ref = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(prob.phi @ x - y) + mu * reg)).solve()
        assert objective(prob, run.x, y, mu) == pytest.approx(ref, rel=1e-6, abs=1e-8)


class TestConstrained:
    def test_origin_feasible(self, prox_problem):
        run = solve_constrained(prox_problem, np.array([3.0, 4.0]), 5.0)
        assert not run.x.any() and run.status == OPTIMAL

    def test_shrink_to_boundary(self, prox_problem):
        run = solve_constrained(prox_problem, np.array([3.0, 4.0]), 2.5)
        assert run.status == OPTIMAL
        assert run.x == pytest.approx([1.5, 2.0], abs=1e-6)

    def test_noiseless(self, strong_toy):
        run = solve_constrained(strong_toy, strong_toy.y0, 0.0)
        assert run.status == OPTIMAL
        assert np.linalg.norm(strong_toy.phi @ run.x - strong_toy.y0) <= 1e-9
        assert run.error <= 1e-9

    def test_negative_delta(self, prox_problem):
        with pytest.raises(ValueError):
            solve_constrained(prox_problem, np.zeros(2), -1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_boundary_match_and_optimality(self, seed):
        rng = np.random.default_rng(seed)
        prob = gaussian_problem(rng, 12, 8, 3, 2)
        delta = 0.2
        y = prob.y0 + sphere_noise(rng, prob.m, delta)
        run = solve_constrained(prob, y, delta)
        assert run.status == OPTIMAL
        assert abs(run.residual_norm - delta) <= 1e-6 * delta
        # random feasible competitors never beat the solution
        for _ in range(100):
            z = run.x + rng.standard_normal(prob.n) * rng.uniform(1e-3, 1)
            if np.linalg.norm(prob.phi @ z - y) <= delta:
                assert prob.J(run.x) <= prob.J(z) + 1e-9
        # the solution of the matching Lagrangian problem is the same point
        lag = solve_lagrangian(prob, y, run.mu)
        assert np.linalg.norm(lag.x - run.x) <= 1e-6


class TestNoise:
    def test_sphere(self):
        w = sphere_noise(noise_rng(1, 2, 3), 7, 0.25)
        assert np.linalg.norm(w) == pytest.approx(0.25, rel=1e-14)

    def test_streams(self):
        a = sphere_noise(noise_rng(1, 0, 0), 5, 1.0)
        assert np.array_equal(a, sphere_noise(noise_rng(1, 0, 0), 5, 1.0))
        assert not np.array_equal(a, sphere_noise(noise_rng(1, 0, 1), 5, 1.0))

    def test_worker_count(self, monkeypatch):
        monkeypatch.setenv("SHARPCERT_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.delenv("SHARPCERT_THREADS")
        assert worker_count() >= 1


class TestRates:
    def test_sharp_toy(self, sharp_toy):
        fit = rate_experiment(sharp_toy, [0.0, 1e-4, 1e-1, 1e-2, 1e-3], draws=5, seed=2)
        assert fit.verdict == SHARP and fit.failures == 0
        assert list(fit.deltas) == [1e-1, 1e-2, 1e-3, 1e-4, 0.0]
        zero = [r for r in fit.rows if r["delta"] == 0]
        assert zero and all(r["error"] <= 1e-9 for r in zero)
        for r in fit.rows:
            if r["delta"] > 0:
                assert r["error"] <= r["bound"]
        for mode in ("lagrangian", "constrained"):
            assert 0.85 <= fit.slopes[mode] <= 1.15
            med = fit.medians[mode][:4]
            assert np.all(med[1:] <= 1.1 * med[:-1])

    def test_deterministic(self, strong_toy):
        rep = classify(strong_toy, Thresholds.exact())
        a = rate_experiment(strong_toy, [1e-2, 1e-3], draws=2, seed=9, report=rep)
        b = rate_experiment(strong_toy, [1e-3, 1e-2], draws=2, seed=9, report=rep, threads=2)
        assert [r["error"] for r in a.rows] == [r["error"] for r in b.rows]

    def test_rejects_negative_noise(self, strong_toy):
        with pytest.raises(ValueError):
            rate_experiment(strong_toy, [-1.0])
