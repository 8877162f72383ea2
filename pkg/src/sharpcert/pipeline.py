"""Classify a batch of random instances and tally the verdicts."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .certificates import BORDERLINE, NOT_A_SOLUTION, Thresholds, classify
from .problem_io import generate_instance
from .recovery import worker_count

ROW_COLUMNS = ("trial", "verdict", "decided_by", "optimal", "tau", "rho", "gamma", "zeta",
               "ri", "sri")


@dataclass
class PipelineResult:
    header: tuple
    rows: list
    tally: dict
    reports: list

    @property
    def solver_failures(self):
        return sum(1 for r in self.reports if r.verdict == BORDERLINE and r.decided_by.endswith("-solver"))

    @property
    def not_optimal(self):
        return self.tally.get(NOT_A_SOLUTION, 0)


def optimality_flag(rep, tol=1e-4):
    """``true`` when ``x0`` is certified optimal, ``false`` when refuted, else ``undetermined``."""
    if not rep.consistency_ok:
        return "false"
    if rep.rho.ok:
        return "true" if rep.rho.value <= 1 + tol else "false"
    if rep.tau.ok and rep.tau.value <= 1 + tol:
        return "true"
    return "undetermined"


def _value(coef):
    return coef.value if coef is not None else np.nan


def run_pipeline(spec, trials, thresholds=None, full=False, threads=None, timings=False,
                 kappa_samples=0):
    """Generate ``trials`` instances from ``spec``, classify each, tally verdicts.

    Rows come back in trial order whatever the worker count, so the output is
    deterministic given ``(spec, trials, thresholds)``.  Wall-clock timings
    are only included on request because they would break that determinism.
    """
    if trials < 0:
        raise ValueError("trials must be non-negative")
    th = thresholds or Thresholds()

    def one(t):
        start = time.perf_counter()
        rep = classify(generate_instance(spec, t), th, full=full, kappa_samples=kappa_samples)
        return rep, time.perf_counter() - start

    workers = threads or worker_count()
    if workers > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(trials)))
    else:
        results = [one(t) for t in range(trials)]

    header = ROW_COLUMNS + (("seconds",) if timings else ())
    rows, tally = [], {}
    for t, (rep, secs) in enumerate(results):
        row = [t, rep.verdict, rep.decided_by, optimality_flag(rep), _value(rep.tau),
               _value(rep.rho), _value(rep.gamma), _value(rep.zeta), rep.ri_holds, rep.sri_holds]
        if timings:
            row.append(secs)
        rows.append(row)
        tally[rep.verdict] = tally.get(rep.verdict, 0) + 1
    return PipelineResult(header, rows, tally, [r for r, _ in results])
