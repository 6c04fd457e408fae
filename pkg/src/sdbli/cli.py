"""Command line entry point: ``sdbli generate|solve|mc|check``.

Exit codes: 0 success, 1 invariant failure, 2 config error, 3 missing input,
4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .diagnostics import (
    ReplicationError,
    check_monotonicity,
    check_summability,
    monte_carlo,
    noise_sweep,
)
from .experiment import MissingData, build_experiment, generate, read_data, sweep_problem_builder, write_data
from .solver import SolverFailure, run_sdbli, validate_trace, write_trace
from .system import ConfigurationError

log = logging.getLogger("sdbli")

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_MISSING, EXIT_SOLVER = 0, 1, 2, 3, 4


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        xc = ExperimentConfig()
    else:
        xc = ExperimentConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        xc.solver.seed = args.seed
    if getattr(args, "c_lambda", None) is not None:
        xc.solver.c_lambda = args.c_lambda
        xc.validate()
    return xc


def _out_dir(args, xc: ExperimentConfig) -> Path:
    d = Path(args.out) if args.out else Path(xc.output.directory)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _data_dir(args, xc: ExperimentConfig) -> Path:
    return Path(args.data) if args.data else Path(xc.output.directory)


def cmd_generate(args) -> int:
    xc = _load_config(args)
    out = _out_dir(args, xc)
    files = write_data(generate(xc), xc, out)
    for f in files:
        print(f)
    return EXIT_OK


def cmd_solve(args) -> int:
    xc = _load_config(args)
    data = read_data(_data_dir(args, xc))
    exp = build_experiment(xc, data, start_at_truth=args.start_at_truth)
    if not exp.report.passes:
        log.warning("configuration fails the admissibility check (slack %.3g / %.3g)",
                    exp.report.slack_noisy, exp.report.slack_exact)
    trace = run_sdbli(exp.u0, exp.problem, exp.solver, exp.consts)
    trace.meta["trace_violations"] = validate_trace(trace, exp.solver)
    out = _out_dir(args, xc)
    paths = write_trace(trace, out / f"{xc.output.prefix}_trace", exp.solver, exp.consts, exp.report)
    print(f"stop_reason={trace.stop_reason} k_stop={trace.k_stop} final_err={trace.final_err}")
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_mc(args) -> int:
    xc = _load_config(args)
    data = read_data(_data_dir(args, xc))
    exp = build_experiment(xc, data, start_at_truth=args.start_at_truth)
    out = _out_dir(args, xc)
    prefix = out / xc.output.prefix
    s = monte_carlo(exp.u0, exp.problem, exp.solver, xc.diagnostics.R,
                    record_full_residual_every=xc.diagnostics.record_period, consts=exp.consts)
    Path(f"{prefix}_mc.csv").write_text(s.to_csv())
    mono = check_monotonicity(s, xc.diagnostics.slack)
    summ = check_summability(s, exp.report.C_tilde_F, exp.initial_sq_dist)
    reports = {
        "summary": s.metadata(),
        "admissibility": exp.report.to_dict(),
        "constants": exp.consts.__dict__,
        "monotonicity": mono.to_dict(),
        "summability": summ.to_dict(),
    }
    if xc.noise.sweep:
        table = noise_sweep(exp.u0, sweep_problem_builder(exp, xc), exp.solver, xc.noise.sweep,
                            xc.diagnostics.R, consts=exp.consts)
        Path(f"{prefix}_sweep.csv").write_text(table.to_csv())
        reports["sweep"] = {"ok": table.ok, "violations": list(table.violations)}
    Path(f"{prefix}_mc.json").write_text(json.dumps(reports, indent=2, sort_keys=True))
    print(json.dumps({"monotonicity_ok": mono.ok, "summability_ok": summ.ok,
                      "violations": len(s.trace_violations)}))
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    if args.config is not None:
        _load_config(args)  # validates; the suites build their own instances
    report = run_checks(seed=args.seed or 0, break_adjoint=args.break_adjoint)
    for name, r in report["suites"].items():
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {name} max_error={r['max_error']:.3e} tol={r['tolerance']:.0e}", file=sys.stderr)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "check_report.json").write_text(text)
    return EXIT_OK if report["passed"] else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdbli", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("generate", cmd_generate), ("solve", cmd_solve), ("mc", cmd_mc), ("check", cmd_check)):
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="experiment JSON")
        p.add_argument("--data", help="directory written by 'generate'")
        p.add_argument("--out", help="output directory")
        p.add_argument("--start-at-truth", action="store_true", help="use u0 = u_true")
        p.add_argument("--seed", type=int, help="override the solver seed")
        p.add_argument("--c-lambda", type=float, dest="c_lambda", help="override c_lambda")
        if name == "check":
            p.add_argument("--break-adjoint", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingData as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except SolverFailure as exc:
        print(f"solver failure at iteration {exc.k}: {exc.cause}", file=sys.stderr)
        return EXIT_SOLVER
    except ReplicationError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
