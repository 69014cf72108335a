"""Command-line entry point.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
Results go to standard output; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .baseline_fw import FwConfig, WeightRule, run_fw
from .descent import BarycenterProblem, DescentConfig, default_step_size, functional_gradient, ksbd, run_sd
from .errors import NumericalError, ValidationError
from .experiments import ExperimentSpec, run_experiment, write_run
from .measures import (
    Box,
    CostKind,
    GroundCost,
    median_heuristic_bandwidth,
    new_discrete_measure,
    read_measure_csv,
)
from .sinkhorn import SinkhornConfig, divergence_terms

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("sinkhorn_descent")


def _g(x: float) -> str:
    return f"{x:.12g}"


def _load_init(spec: str, sources, seed: int):
    """``uniform:N`` samples the padded bounding box of the sources; anything else is a CSV path."""
    if spec.startswith("uniform:"):
        try:
            n = int(spec.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"--init: bad particle count in {spec!r}") from None
        if n < 1:
            raise ValidationError("--init: particle count must be >= 1")
        box = Box.around(sources)
        return new_discrete_measure(box.sample_uniform(n, seed)), box
    initial = read_measure_csv(spec)
    return initial, Box.around(list(sources) + [initial])


def _default_bandwidth(measure, seed=0) -> float:
    # one atom: k(x, x) = 1 for every bandwidth, so any value gives the same result
    if measure.n == 1:
        return 1.0
    bw = median_heuristic_bandwidth(measure, seed)
    if not bw > 0:
        raise ValidationError("median-heuristic bandwidth is 0 (coincident atoms); pass --bandwidth")
    log.info("median-heuristic bandwidth %.6g", bw)
    return bw


def _problem(args):
    sources = [read_measure_csv(p) for p in args.sources]
    initial, box = _load_init(args.init, sources, args.seed)
    if any(s.dim != initial.dim for s in sources):
        raise ValidationError("initial measure and sources differ in dimension")
    bandwidth = args.bandwidth if args.bandwidth is not None else _default_bandwidth(initial, args.seed)
    return BarycenterProblem.build(sources, args.gamma, bandwidth, box=box), initial


def _sinkhorn_cfg(args) -> SinkhornConfig:
    return SinkhornConfig(gamma=args.gamma, tolerance=args.tol)


def _spec_record(args) -> dict:
    skip = {"func", "verbose"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def cmd_barycenter(args) -> int:
    problem, initial = _problem(args)
    eta = args.eta if args.eta is not None else default_step_size(problem)
    cfg = DescentConfig(
        step_size=eta,
        max_steps=args.steps,
        ksbd_stop=args.ksbd_stop,
        backtracking=not args.no_backtrack,
        sinkhorn=_sinkhorn_cfg(args),
        seed=args.seed,
        minibatch=args.minibatch,
        workers=args.threads,
    )
    try:
        final, trace = run_sd(initial, problem, cfg)
    except NumericalError as exc:
        if getattr(exc, "trace", None) is not None and len(exc.trace):
            write_run(args.out, exc.measure, exc.trace, _spec_record(args), problem, {"error": str(exc)})
        raise
    write_run(args.out, final, trace, _spec_record(args), problem, {"bandwidth": problem.kernel.bandwidth,
                                                                     "step_size": eta})
    last = trace.records[-1]
    print(f"objective={_g(last.objective)}")
    print(f"ksbd={_g(last.ksbd)}")
    return EXIT_OK


def cmd_divergence(args) -> int:
    a, b = read_measure_csv(args.a), read_measure_csv(args.b)
    if a.dim != b.dim:
        raise ValidationError(f"--a has dimension {a.dim}, --b has {b.dim}")
    cost = GroundCost.for_box(Box.around([a, b]), CostKind(args.cost))
    ab, aa, bb = divergence_terms(a, b, cost, _sinkhorn_cfg(args))
    print(f"S_gamma={_g(ab - 0.5 * aa - 0.5 * bb)}")
    if args.raw:
        print(f"OT_ab={_g(ab)}")
        print(f"OT_aa={_g(aa)}")
        print(f"OT_bb={_g(bb)}")
    return EXIT_OK


def cmd_ksbd(args) -> int:
    measure = read_measure_csv(args.measure)
    sources = [read_measure_csv(p) for p in args.sources]
    if any(s.dim != measure.dim for s in sources):
        raise ValidationError("measure and sources differ in dimension")
    bandwidth = args.bandwidth if args.bandwidth is not None else _default_bandwidth(measure)
    problem = BarycenterProblem.build(sources, args.gamma, bandwidth, box=Box.around(list(sources) + [measure]))
    direction = functional_gradient(measure, problem, _sinkhorn_cfg(args))
    print(f"ksbd={_g(ksbd(measure, direction, problem.kernel))}")
    print(f"objective={_g(direction.objective)}")
    return EXIT_OK


def cmd_fw(args) -> int:
    problem, initial = _problem(args)
    cfg = FwConfig(grid_resolution=args.grid, steps=args.steps, weight_rule=args.weight_rule,
                   sinkhorn=_sinkhorn_cfg(args))
    final, trace = run_fw(initial, problem, cfg)
    write_run(args.out, final, trace, _spec_record(args), problem)
    print(f"objective={_g(trace.records[-1].objective)}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    if args.threads != 1:
        spec = replace(spec, descent=replace(spec.descent, workers=args.threads))
    out = Path(args.out) if args.out is not None else spec.output_dir
    problem, final, trace = run_experiment(spec, args.method)
    write_run(out, final, trace, spec, problem, {"method": args.method, "bandwidth": problem.kernel.bandwidth})
    print(f"objective={_g(trace.records[-1].objective)}")
    print(f"out={out}")
    return EXIT_OK


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive (got {text})")
        return v

    return parse


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0 (got {text})")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sinkhorn-descent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="log progress to standard error")
    common.add_argument("--threads", type=_positive(int), default=1, help="worker cap for per-source solves")
    common.add_argument("--tol", type=_positive(float), default=1e-9, help="Sinkhorn stopping tolerance")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_gamma(p):
        p.add_argument("--gamma", type=_positive(float), required=True, help="entropic regularization")

    def with_problem(p):
        with_gamma(p)
        p.add_argument("--sources", nargs="+", required=True, metavar="CSV")
        p.add_argument("--init", required=True, metavar="CSV|uniform:N")
        p.add_argument("--steps", type=_nonneg_int, default=100)
        p.add_argument("--out", required=True, type=Path, help="run directory")
        p.add_argument("--bandwidth", type=_positive(float), help="RBF bandwidth (default: median heuristic)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("barycenter", parents=[common], help="run Sinkhorn Descent")
    with_problem(p)
    p.add_argument("--eta", type=float, help="step size (default: the guaranteed-descent bound)")
    p.add_argument("--no-backtrack", action="store_true")
    p.add_argument("--ksbd-stop", type=float, default=0.0)
    p.add_argument("--minibatch", type=_positive(int))
    p.set_defaults(func=cmd_barycenter)

    p = sub.add_parser("divergence", parents=[common], help="Sinkhorn divergence between two measures")
    with_gamma(p)
    p.add_argument("--a", required=True, metavar="CSV")
    p.add_argument("--b", required=True, metavar="CSV")
    p.add_argument("--cost", choices=[k.value for k in CostKind], default=CostKind.SQUARED_EUCLIDEAN_HALF.value)
    p.add_argument("--raw", action="store_true", help="also print the three OT terms")
    p.set_defaults(func=cmd_divergence)

    p = sub.add_parser("ksbd", parents=[common], help="KSBD of a measure against sources")
    with_gamma(p)
    p.add_argument("--measure", required=True, metavar="CSV")
    p.add_argument("--sources", nargs="+", required=True, metavar="CSV")
    p.add_argument("--bandwidth", type=_positive(float))
    p.set_defaults(func=cmd_ksbd)

    p = sub.add_parser("fw", parents=[common], help="run the Frank-Wolfe grid baseline")
    with_problem(p)
    p.add_argument("--grid", type=int, default=64, help="grid points per axis")
    p.add_argument("--weight-rule", choices=[r.value for r in WeightRule], default=WeightRule.TWO_OVER_T_PLUS_TWO.value)
    p.set_defaults(func=cmd_fw)

    p = sub.add_parser("experiment", parents=[common], help="run an experiment from a JSON spec")
    p.add_argument("--spec", required=True, type=Path)
    p.add_argument("--method", choices=["sd", "fw"], default="sd")
    p.add_argument("--out", type=Path, help="run directory (default: output_dir from the experiment file)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
