"""Command-line interface: ``sharpcert certify|classify|recover|rates|pipeline``."""

import argparse
import sys

import numpy as np

from .certificates import BORDERLINE, NOT_A_SOLUTION, Thresholds, classify
from .linalg import InvalidInputError
from .pipeline import run_pipeline
from .problem_io import EnsembleSpec, emit_report, fmt, load_problem, render, tally_rows
from .recovery import (
    OPTIMAL,
    noise_rng,
    rate_experiment,
    solve_constrained,
    solve_lagrangian,
    sphere_noise,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_FALSIFIED = 4


def _thresholds(args):
    if getattr(args, "exact", False):
        return Thresholds.exact()
    if getattr(args, "thresholds", None):
        try:
            return Thresholds.parse(args.thresholds)
        except ValueError as exc:
            raise InvalidInputError(str(exc)) from None
    return Thresholds()


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InvalidInputError(f"cannot parse number list {text!r}") from None


def _add_thresholds(p):
    group = p.add_mutually_exclusive_group()
    group.add_argument("--exact", action="store_true",
                       help="thresholds 1 +/- 1e-6 instead of the 0.99/0.95/1.05 defaults")
    group.add_argument("--thresholds", metavar="SPEC",
                       help="overrides such as tau=0.99,rho_lo=0.95,rho_hi=1.05,gamma=0.99,zeta=0.95")


def cmd_certify(args, verdict_only=False):
    prob = load_problem(args.problem)
    rep = classify(prob, _thresholds(args), full=args.full, kappa_samples=args.kappa_samples,
                   seed=args.seed)
    if args.out:
        emit_report(rep, "json", args.out)
    if verdict_only:
        print(rep.verdict)
    else:
        sys.stdout.write(render(rep, "json"))
    if rep.verdict == NOT_A_SOLUTION:
        return EXIT_FALSIFIED
    if rep.verdict == BORDERLINE and rep.decided_by.endswith("-solver"):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_recover(args):
    prob = load_problem(args.problem)
    if args.delta < 0:
        raise InvalidInputError("--delta must be non-negative")
    y = prob.y0 + sphere_noise(noise_rng(args.seed, 0, 0), prob.m, args.delta)
    if args.mode == "lagrangian":
        if args.delta == 0:
            raise InvalidInputError("the Lagrangian mode needs --delta > 0")
        run = solve_lagrangian(prob, y, args.mu_ratio * args.delta, tol=args.tol)
    else:
        run = solve_constrained(prob, y, args.delta, tol=args.tol)
    header = ("mode", "delta", "mu", "error", "residual_norm", "iterations", "kkt_residual",
              "status")
    row = (run.mode, args.delta, run.mu, run.error, run.residual_norm, run.iterations,
           run.kkt_residual, run.status)
    text = render((header, [row]), "csv")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK if run.status == OPTIMAL else EXIT_SOLVER


def cmd_rates(args):
    prob = load_problem(args.problem)
    fit = rate_experiment(prob, _floats(args.deltas), args.mu_ratio, args.draws, args.seed,
                          tol=args.tol)
    emit_report(fit, "csv", args.out)
    for mode in ("lagrangian", "constrained"):
        print(f"{mode}: slope {fmt(fit.slopes[mode])}")
    print(f"verdict: {fit.verdict}; failed solves: {fit.failures}")
    return EXIT_OK if fit.failures == 0 else EXIT_SOLVER


def cmd_pipeline(args):
    spec = EnsembleSpec(args.m, args.n, args.groups, args.group_size, args.active, args.seed)
    res = run_pipeline(spec, args.trials, _thresholds(args), full=args.full,
                       threads=args.threads, timings=args.timings)
    emit_report(res.tally, "csv", args.out)
    if args.rows:
        emit_report((res.header, res.rows), "csv", args.rows)
    for verdict, count in tally_rows(res.tally):
        print(f"{verdict}: {count}")
    if res.not_optimal:
        return EXIT_FALSIFIED
    if res.solver_failures:
        return EXIT_SOLVER
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sharpcert",
        description="Certify sharp and strong minima of group-sparse recovery problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("certify", "compute the certificates and print the JSON report"),
                            ("classify", "like certify, but print only the verdict")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("problem", help="problem JSON file")
        _add_thresholds(p)
        p.add_argument("--out", help="write the JSON report here")
        p.add_argument("--full", action="store_true", help="compute every certificate")
        p.add_argument("--kappa-samples", type=int, default=1000)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("recover", help="solve one noisy recovery problem")
    p.add_argument("problem")
    p.add_argument("--mode", choices=("lagrangian", "constrained"), required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--mu-ratio", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out")

    p = sub.add_parser("rates", help="error-versus-noise experiment")
    p.add_argument("problem")
    p.add_argument("--deltas", default="1e-1,1e-2,1e-3,1e-4")
    p.add_argument("--mu-ratio", type=float, default=1.0)
    p.add_argument("--draws", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pipeline", help="classify random Gaussian instances")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--groups", type=int, required=True, help="number of groups q")
    p.add_argument("--group-size", type=int, required=True)
    p.add_argument("--active", type=int, required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    _add_thresholds(p)
    p.add_argument("--full", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--timings", action="store_true",
                   help="add a seconds column to the rows (output no longer byte-stable)")
    p.add_argument("--rows", help="write per-trial rows here")
    p.add_argument("--out", required=True, help="verdict tally CSV")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "certify": cmd_certify,
        "classify": lambda a: cmd_certify(a, verdict_only=True),
        "recover": cmd_recover,
        "rates": cmd_rates,
        "pipeline": cmd_pipeline,
    }
    try:
        return handlers[args.command](args)
    except InvalidInputError as exc:
        print(f"sharpcert: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except np.linalg.LinAlgError as exc:
        print(f"sharpcert: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
