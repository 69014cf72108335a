"""Shared plumbing for the experiment scripts."""

import argparse
import logging
from pathlib import Path

from sinkhorn_descent.experiments import ExperimentSpec, run_experiment, write_run

SPECS = Path(__file__).resolve().parent / "specs"


def parse_args(default_spec: str, description: str):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--spec", type=Path, default=SPECS / default_spec)
    p.add_argument("--out", type=Path, help="run directory (default: output_dir from the experiment file)")
    p.add_argument("--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args


def run(spec: ExperimentSpec, method: str, out: Path):
    problem, final, trace = run_experiment(spec, method)
    write_run(out, final, trace, spec, problem, {"method": method, "bandwidth": problem.kernel.bandwidth})
    return problem, final, trace


def report(trace, label=""):
    for r in trace.records:
        ksbd = "" if r.ksbd != r.ksbd else f"  ksbd {r.ksbd:.3e}"
        print(f"{label}step {r.step:4d}  objective {r.objective:.8f}{ksbd}")
