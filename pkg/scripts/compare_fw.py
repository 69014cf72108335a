"""Sinkhorn Descent against the Frank-Wolfe grid baseline on the same problem."""

from _common import parse_args, run

from sinkhorn_descent.experiments import ExperimentSpec

if __name__ == "__main__":
    args = parse_args("ellipses.json", __doc__)
    spec = ExperimentSpec.load(args.spec)
    out = args.out or spec.output_dir
    _, sd_final, sd = run(spec, "sd", out / "sd")
    _, fw_final, fw = run(spec, "fw", out / "fw")
    print("method  atoms  steps  final objective  wall s")
    for name, final, tr in (("SD", sd_final, sd), ("FW", fw_final, fw)):
        print(f"{name:6s}  {final.n:5d}  {len(tr) - 1:5d}  {tr.objectives[-1]:15.8f}  {sum(r.wall_ms for r in tr.records) / 1e3:6.1f}")
    verdict = "SD <= FW" if sd.objectives[-1] <= fw.objectives[-1] else "FW < SD"
    print(verdict)
    print(f"wrote {out / 'sd'} and {out / 'fw'}")
