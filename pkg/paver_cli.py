#!/usr/bin/env python3
"""
Command-line interface for paver.

Subcommands: check, lts, minimize, prob, protocol, simulate.
Exit codes: 0 property holds, 1 property fails, 2 usage or parse error,
3 resource or analysis error. Results go to stdout, diagnostics to stderr.
"""
import argparse
import logging
import sys
from contextlib import contextmanager
from decimal import Decimal, localcontext
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from config_local import config
from equivalence import (
    EVENTUAL, MODES, ROUND, ProbQuery, ScriptedPolicy, UniformPolicy, check_equivalence, minimize, schedule,
    success_probability,
)
from paver_errors import AnalysisError, ParseError, PaverError, ResourceError, SpecificationError
from process_term import ImperfectionMap, ProcessSpec, imperfect_transform_spec
from protocols import build_abp, build_ucp, make_params
from semantics import PTS, expand
from simulate import run as simulate_run
from spec_parser import declared_params, format_spec, parse_pattern, parse_probability, parse_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILS = 1
EXIT_USAGE = 2
EXIT_ANALYSIS = 3


class UsageError(PaverError):
    """Bad command-line input."""


def setup_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else getattr(logging, str(config.get("logging.level", "WARNING")).upper(),
                                                  logging.WARNING)
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    log_file = config.get("logging.file")
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=level, format=config.get("logging.format"), handlers=handlers, force=True)


def format_decimal(value: Fraction, digits: Optional[int] = None) -> str:
    """Decimal rendering with `digits` significant digits, always showing a fractional part."""
    digits = digits or int(config.get("output.decimal_digits", 12))
    with localcontext() as ctx:
        ctx.prec = digits
        number = Decimal(value.numerator) / Decimal(value.denominator)
    text = format(number.normalize(), "f")
    return text if "." in text else f"{text}.0"


def format_result(value: Fraction) -> str:
    return f"{value} ({format_decimal(value)})"


def _assignments(items: Optional[Sequence[str]], what: str) -> Dict[str, Fraction]:
    values: Dict[str, Fraction] = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"{what} expects NAME=VALUE, got {item!r}")
        name, raw = item.split("=", 1)
        values[name.strip()] = parse_probability(raw)
    return values


@contextmanager
def _located(path: str):
    """Print parse diagnostics prefixed with the file they belong to."""
    try:
        yield
    except ParseError as e:
        for diagnostic in e.diagnostics:
            print(f"{path}:{diagnostic}", file=sys.stderr)
        raise


def load_specs(paths: Sequence[str], args) -> List[ProcessSpec]:
    """
    Parse the given files, applying --pi to every file that declares the name
    and --imperfect to every process body.
    """
    overrides = _assignments(args.pi, "--pi")
    texts = []
    for path in paths:
        try:
            texts.append(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise UsageError(f"cannot read {path}: {e.strerror}") from None
    declared = []
    for path, text in zip(paths, texts):
        with _located(path):
            declared.append(set(declared_params(text)))
    unknown = set(overrides) - {"all"} - set().union(*declared)
    if unknown:
        raise UsageError(f"unknown parameter(s) {', '.join(sorted(unknown))}")

    specs = []
    for path, text, names in zip(paths, texts, declared):
        mine = {k: v for k, v in overrides.items() if k in names or (k == "all" and names)}
        with _located(path):
            spec = parse_spec(text, mine)
        if args.imperfect:
            imperfections = {
                parse_pattern(name, spec.constants()): prob
                for name, prob in _assignments(args.imperfect, "--imperfect").items()
            }
            spec = imperfect_transform_spec(spec, ImperfectionMap(imperfections))
        specs.append(spec)
    return specs


def _expand(spec: ProcessSpec, args) -> PTS:
    return expand(spec, args.limit)


def _write(text: str, path: Optional[str]):
    if path:
        Path(path).write_text(text, encoding="utf-8")
        logger.info(f"Wrote {path}")
    else:
        sys.stdout.write(text)


def _success_patterns(labels: Sequence[str], spec: ProcessSpec):
    return frozenset(parse_pattern(label, spec.constants()) for label in labels)


def cmd_check(args) -> int:
    left_spec, right_spec = load_specs([args.left, args.right], args)
    left, right = _expand(left_spec, args), _expand(right_spec, args)
    result = check_equivalence(left, right, args.mode)
    print(f"{'EQUIVALENT' if result.equivalent else 'NOT EQUIVALENT'} ({result.mode})")
    print(f"states: {result.left_states} + {result.right_states}")
    print(f"blocks: {result.witness.count}")
    if result.mode != "strong":
        print(f"divergence: {'yes' if result.divergent else 'no'}")
    if not result.equivalent and result.reason:
        print(f"distinguished by: {result.reason}")
    return EXIT_OK if result.equivalent else EXIT_FAILS


def cmd_lts(args) -> int:
    (spec,) = load_specs([args.spec], args)
    pts = _expand(spec, args)
    _write(pts.to_dot() if args.out == "dot" else pts.to_text(), args.output)
    return EXIT_OK


def cmd_minimize(args) -> int:
    (spec,) = load_specs([args.spec], args)
    pts = minimize(_expand(spec, args), args.mode)
    _write(pts.to_text(), args.output)
    return EXIT_OK


def cmd_prob(args) -> int:
    (spec,) = load_specs([args.spec], args)
    pts = _expand(spec, args)
    if args.schedule == "uniform":
        pts = schedule(pts, UniformPolicy())
    query = ProbQuery(_success_patterns(args.success, spec), args.horizon)
    print(format_result(success_probability(pts, query)))
    return EXIT_OK


def cmd_protocol(args) -> int:
    overrides = _assignments(args.pi, "--pi")
    params = make_params(args.name, overrides, args.delta_size)
    spec = build_ucp(params) if args.name == "ucp" else build_abp(params)
    _write(format_spec(spec), args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    (spec,) = load_specs([args.spec], args)
    pts = _expand(spec, args)
    if args.schedule == "scripted":
        try:
            choices = [int(c) for c in (args.script or "").split(",") if c.strip()]
        except ValueError:
            raise UsageError(f"--script expects comma-separated option indices, got {args.script!r}") from None
        policy = ScriptedPolicy(choices)
    else:
        policy = UniformPolicy()
    runs = args.runs if args.runs is not None else int(config.get("simulation.runs", 100000))
    step_cap = args.step_cap if args.step_cap is not None else int(config.get("simulation.step_cap", 1000))
    seed = args.seed if args.seed is not None else int(config.get("simulation.seed", 0))
    stats = simulate_run(pts, policy, _success_patterns(args.success, spec), runs, step_cap, seed, args.trace_csv)
    print(f"runs: {stats.runs}")
    print(f"successes: {stats.successes}")
    print(f"deadlocks: {stats.deadlocks}")
    print(f"terminated: {stats.terminations}")
    print(f"capped: {stats.capped}")
    print(f"estimate: {format_result(stats.estimate)}")
    print(f"stderr: {stats.stderr:.6g}")
    print(f"mean visible steps: {format_result(stats.mean_visible_steps)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--pi", action="append", metavar="NAME=P",
                        help="Override a declared probability parameter ('all' sets every one)")
    common.add_argument("--limit", type=int, default=None,
                        help="State budget for expansion (default from config)")
    common.add_argument("--imperfect", action="append", metavar="ACTION=P",
                        help="Make matching actions fail with probability 1-P")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr")

    parser = argparse.ArgumentParser(prog="paver", description="Verifier for probabilistic process specifications")
    sub = parser.add_subparsers(dest="command", required=True)
    default_mode = config.get("equivalence.default_mode", "rooted-branching")

    check = sub.add_parser("check", parents=[common], help="Compare two specifications")
    check.add_argument("left", help="First .paver file")
    check.add_argument("right", help="Second .paver file")
    check.add_argument("--mode", choices=MODES, default=default_mode, help="Equivalence to decide")
    check.set_defaults(handler=cmd_check)

    lts = sub.add_parser("lts", parents=[common], help="Expand a specification into its transition system")
    lts.add_argument("spec", help=".paver file")
    lts.add_argument("--out", choices=["pts", "dot"], default="pts", help="Output format")
    lts.add_argument("-o", "--output", help="Write to this file instead of stdout")
    lts.set_defaults(handler=cmd_lts)

    mini = sub.add_parser("minimize", parents=[common], help="Quotient by a bisimulation, emitted as .pts")
    mini.add_argument("spec", help=".paver file")
    mini.add_argument("--mode", choices=MODES, default="strong", help="Equivalence to quotient by")
    mini.add_argument("-o", "--output", help="Write to this file instead of stdout")
    mini.set_defaults(handler=cmd_minimize)

    prob = sub.add_parser("prob", parents=[common], help="Exact probability of a success action")
    prob.add_argument("spec", help=".paver file")
    prob.add_argument("--success", nargs="+", required=True, metavar="LABEL", help="Success action patterns")
    prob.add_argument("--horizon", choices=[ROUND, EVENTUAL], default=ROUND,
                      help="round: stop on returning to the start state")
    prob.add_argument("--schedule", choices=["uniform", "none"], default="none",
                      help="Resolve nondeterministic choices uniformly first")
    prob.set_defaults(handler=cmd_prob)

    protocol = sub.add_parser("protocol", help="Generate a case-study specification")
    protocol.add_argument("name", choices=["ucp", "abp"])
    protocol.add_argument("--pi", action="append", metavar="NAME=P", help="Success probability override")
    protocol.add_argument("--delta-size", type=int, default=1, help="Number of data values")
    protocol.add_argument("-o", "--out", dest="output", help="Write to this file instead of stdout")
    protocol.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr")
    protocol.set_defaults(handler=cmd_protocol)

    simulate = sub.add_parser("simulate", parents=[common], help="Monte-Carlo estimate of a success action")
    simulate.add_argument("spec", help=".paver file")
    simulate.add_argument("--success", nargs="+", required=True, metavar="LABEL", help="Success action patterns")
    simulate.add_argument("--runs", type=int, default=None)
    simulate.add_argument("--seed", type=int, default=None)
    simulate.add_argument("--step-cap", type=int, default=None)
    simulate.add_argument("--trace-csv", default=None, help="Write one row per run to this CSV file")
    simulate.add_argument("--schedule", choices=["uniform", "scripted"], default="uniform")
    simulate.add_argument("--script", default=None, help="Comma-separated option indices for --schedule scripted")
    simulate.set_defaults(handler=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point with argument parsing."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    setup_logging(args.verbose)
    try:
        return args.handler(args)
    except ParseError as e:
        logger.debug(f"Parse failed with {len(e.diagnostics)} diagnostics")
        return EXIT_USAGE
    except (UsageError, SpecificationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ResourceError, AnalysisError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ANALYSIS
    except PaverError as e:
        logger.error(f"Internal error: {e}")
        return EXIT_ANALYSIS
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_FAILS


if __name__ == "__main__":
    sys.exit(main())
