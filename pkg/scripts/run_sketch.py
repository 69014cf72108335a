"""Distribution sketching: approximate one image measure with a fixed particle budget."""

from _common import parse_args, report, run

from sinkhorn_descent.experiments import ExperimentSpec

if __name__ == "__main__":
    args = parse_args("sketch.json", __doc__)
    spec = ExperimentSpec.load(args.spec)
    out = args.out or spec.output_dir
    _, _, trace = run(spec, "sd", out)
    report(trace)
    print(f"wrote {out}")
