"""Barycenter of random concentric ellipses with Sinkhorn Descent."""

from _common import parse_args, report, run

from sinkhorn_descent.experiments import ExperimentSpec

if __name__ == "__main__":
    args = parse_args("ellipses.json", __doc__)
    spec = ExperimentSpec.load(args.spec)
    out = args.out or spec.output_dir
    _, _, trace = run(spec, "sd", out)
    report(trace)
    print(f"final/initial objective: {trace.objectives[-1] / trace.objectives[0]:.4f}")
    print(f"wrote {out}")
