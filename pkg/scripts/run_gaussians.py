"""Barycenter of isotropic Gaussians with means on a sphere (desk scale: d = 10)."""

import numpy as np
from _common import parse_args, report, run

from sinkhorn_descent.experiments import ExperimentSpec

if __name__ == "__main__":
    args = parse_args("gaussians.json", __doc__)
    spec = ExperimentSpec.load(args.spec)
    out = args.out or spec.output_dir
    problem, final, trace = run(spec, "sd", out)
    report(trace)
    centroid = np.mean([s.mean() for s in problem.sources], axis=0)
    err = np.linalg.norm(final.mean() - centroid) / spec.parameters.get("stddev", 1.0)
    print(f"particle mean to source-mean centroid: {err:.4f} stddev")
    print(f"wrote {out}")
