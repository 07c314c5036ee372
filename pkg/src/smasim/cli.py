"""Command-line front end: run scenarios, audit traces, probe the oracle.

Exit codes follow the usual triage: 0 means every requested check passed,
1 means the tool ran but a certificate, validation or threshold failed,
2 means the invocation itself was unusable (bad arguments, missing file,
a config too broken to start a run).
"""

import argparse
import math
import sys

from .config import ScenarioConfig
from .errors import ConfigError, SmasimError, TraceError
from .evolution import run_evolution
from .oracle import (ExampleFamily, integrability_report,
                     operator_convergence_study, oracle_identity_checks)
from .trace import (certify_records, certify_trace, write_state_snapshots,
                    write_summary_csv, write_trace)

OK, CHECK_FAILED, USAGE = 0, 1, 2


def _fail(message):
    print(message, file=sys.stderr)


def _step_line(rec):
    bracket = "  --  "
    if rec.two_sided is not None:
        bracket = "ok" if (rec.two_sided.lower_ok and
                           rec.two_sided.upper_ok) else "FAIL"
        bracket = f"[{bracket}]"
    margin = ("" if math.isnan(rec.stability_margin)
              else f" margin {rec.stability_margin:+.2e}")
    return (f"step {rec.index:3d}  t {rec.time:7.4f}  "
            f"E {rec.energy.total:+.6f}  D {rec.dissipation_cumulative:.3e}  "
            f"|g| {rec.gradient_norm:.2e}  it {rec.iterations:5d}  "
            f"det>= {rec.min_det:.3f}{margin}  {bracket}")


def _cmd_run(args):
    try:
        cfg = ScenarioConfig.load(args.config)
    except ConfigError as exc:
        _fail(str(exc))
        return USAGE
    if not args.quiet:
        print("\n".join(cfg.summary_lines()))
    try:
        trace = run_evolution(cfg.to_scenario())
    except SmasimError as exc:
        _fail(f"run failed: {exc}")
        return CHECK_FAILED
    if not args.quiet:
        for rec in trace.records:
            print(_step_line(rec))
    if args.trace:
        write_trace(trace, args.trace, config=cfg)
        print(f"trace written to {args.trace}")
    if args.csv:
        write_summary_csv(trace.records, args.csv)
        print(f"summary written to {args.csv}")
    if args.snapshots:
        written = write_state_snapshots(trace, cfg.build_grid(),
                                        args.snapshots,
                                        args.snapshot_stride)
        print(f"{len(written)} field snapshots written to {args.snapshots}")
    report = certify_records(trace.records)
    print("\n".join(report.lines()))
    return OK if report.ok else CHECK_FAILED


def _cmd_certify(args):
    try:
        tf, report = certify_trace(args.trace)
    except TraceError as exc:
        _fail(f"trace rejected: {exc}")
        return CHECK_FAILED
    label = tf.label or "(unlabeled)"
    print(f"trace {label}: {len(tf.records)} records, "
          f"horizon {tf.header['horizon']:g}")
    if args.csv:
        write_summary_csv(tf.records, args.csv)
        print(f"summary written to {args.csv}")
    print("\n".join(report.lines()))
    return OK if report.ok else CHECK_FAILED


def _cmd_validate(args):
    try:
        cfg = ScenarioConfig.load(args.config)
    except ConfigError as exc:
        _fail(str(exc))
        return CHECK_FAILED
    print("configuration valid")
    print("\n".join(cfg.summary_lines()))
    return OK


def _cmd_oracle(args):
    ok = True
    shapes = tuple((n, n, n) for n in args.grids)
    study = operator_convergence_study(
        ExampleFamily(epsilon=args.study_epsilon), shapes=shapes)
    print("\n".join(study.lines()))
    ok &= study.passes

    checks = oracle_identity_checks(ExampleFamily(epsilon=args.study_epsilon),
                                    n_points=args.identity_points)
    print(f"closed-form identities at {args.identity_points} random points: "
          f"cofactor {checks['cofactor_vs_kernel']:.2e}, "
          f"det of cofactor {checks['det_of_cof']:.2e} "
          f"[{'ok' if checks['passes'] else 'FAIL'}]")
    ok &= checks["passes"]

    for eps in args.epsilon:
        report = integrability_report(ExampleFamily(epsilon=eps))
        print("\n".join(report.lines()))
        ok &= report.consistent
    print("oracle verdict:", "pass" if ok else "FAIL")
    return OK if ok else CHECK_FAILED


def _grid_list(text):
    try:
        values = [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}") from None
    if len(values) < 2:
        raise argparse.ArgumentTypeError("need at least two grid sizes")
    return values


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="smasim",
        description="quasistatic multi-well simulations with certificates")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file and certify it")
    p.add_argument("config", help="scenario YAML file")
    p.add_argument("--trace", help="write the full JSONL trace here")
    p.add_argument("--csv", help="write a per-step summary CSV here")
    p.add_argument("--snapshots", help="directory for field dumps")
    p.add_argument("--snapshot-stride", type=int, default=1,
                   help="dump fields every this many steps (default 1)")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-step progress lines")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("certify",
                       help="re-check every certificate stored in a trace")
    p.add_argument("trace", help="JSONL trace file")
    p.add_argument("--csv", help="also export the per-step summary CSV")
    p.set_defaults(handler=_cmd_certify)

    p = sub.add_parser("validate-config",
                       help="validate a scenario file without running it")
    p.add_argument("config", help="scenario YAML file")
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser("oracle",
                       help="closed-form operator and integrability checks")
    p.add_argument("--epsilon", type=float, action="append",
                   help="integrability probe exponent (repeatable; "
                        "default 0.1 0.3 0.5 0.7)")
    p.add_argument("--study-epsilon", type=float, default=0.3,
                   help="family member for the convergence study")
    p.add_argument("--grids", type=_grid_list, default=[8, 16, 32],
                   help="comma-separated grid sizes (default 8,16,32)")
    p.add_argument("--identity-points", type=int, default=100_000,
                   help="random points for the identity checks")
    p.set_defaults(handler=_cmd_oracle)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if getattr(args, "epsilon", None) is None and args.command == "oracle":
        args.epsilon = [0.1, 0.3, 0.5, 0.7]
    try:
        return args.handler(args)
    except FileNotFoundError as exc:
        _fail(f"cannot read {exc.filename}: file not found")
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
