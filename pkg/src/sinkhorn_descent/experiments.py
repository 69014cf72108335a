"""Experiment setups (ellipses, sketching, Gaussians, custom CSV) and run output."""

from __future__ import annotations

import enum
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baseline_fw import FwConfig, run_fw
from .descent import BarycenterProblem, DescentConfig, DescentTrace, run_sd
from .errors import ValidationError
from .measures import (
    Box,
    DiscreteMeasure,
    generate_ellipse,
    generate_gaussian,
    load_grayscale_png,
    measure_from_image,
    measure_to_csv,
    median_heuristic_bandwidth,
    new_discrete_measure,
    read_measure_csv,
)
from .sinkhorn import SinkhornConfig


class ExperimentName(enum.Enum):
    ELLIPSES = "ellipses"
    SKETCH = "sketch"
    GAUSSIANS = "gaussians"
    CUSTOM = "custom"


_REQUIRED = {
    ExperimentName.ELLIPSES: ("gamma", "n_sources", "points_per_source", "particles"),
    ExperimentName.SKETCH: ("gamma", "image", "particles"),
    ExperimentName.GAUSSIANS: ("gamma", "n_sources", "dim", "samples", "particles"),
    ExperimentName.CUSTOM: ("gamma", "sources", "initial"),
}


@dataclass(frozen=True)
class ExperimentSpec:
    name: ExperimentName
    parameters: dict
    descent: DescentConfig = field(default_factory=DescentConfig)
    output_dir: Path = Path("runs")
    fw: FwConfig = field(default_factory=FwConfig)

    def __post_init__(self):
        if isinstance(self.name, str):
            try:
                object.__setattr__(self, "name", ExperimentName(self.name.lower()))
            except ValueError:
                raise ValidationError(f"unknown experiment name {self.name!r}") from None
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        missing = [k for k in _REQUIRED[self.name] if k not in self.parameters]
        if missing:
            raise ValidationError(f"{self.name.value} experiment is missing parameter(s): {', '.join(missing)}")

    @property
    def seed(self) -> int:
        return int(self.parameters.get("seed", 0))

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentSpec":
        """Parse a spec; input file paths resolve against ``base_dir``, the output directory does not."""
        d = dict(d)
        params = dict(d.get("parameters", {}))
        if base_dir is not None:
            for key in ("image", "initial"):
                if isinstance(params.get(key), str) and not params[key].startswith("uniform:"):
                    params[key] = str(base_dir / params[key])
            if "sources" in params:
                params["sources"] = [str(base_dir / s) for s in params["sources"]]
        desc = dict(d.get("descent", {}))
        sk = desc.pop("sinkhorn", None)
        gamma = params.get("gamma")
        sinkhorn = None
        if sk is not None and gamma is not None:
            sinkhorn = SinkhornConfig(gamma=float(gamma), **sk)
        try:
            descent = DescentConfig(sinkhorn=sinkhorn, **desc)
            fw_d = dict(d.get("fw", {}))
            fw_d.pop("sinkhorn", None)
            fw = FwConfig(sinkhorn=sinkhorn, **fw_d)
        except TypeError as exc:
            raise ValidationError(f"bad experiment config: {exc}") from None
        return cls(d.get("name", ""), params, descent, Path(d.get("output_dir", "runs")), fw)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"experiment spec not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict:
        def desc_dict(cfg):
            out = asdict(cfg)
            if cfg.sinkhorn is not None:
                out["sinkhorn"] = {k: v for k, v in asdict(cfg.sinkhorn).items() if k != "gamma"}
            return out

        fw = desc_dict(self.fw)
        fw["weight_rule"] = self.fw.weight_rule.value
        return {
            "name": self.name.value,
            "parameters": self.parameters,
            "descent": desc_dict(self.descent),
            "fw": fw,
            "output_dir": str(self.output_dir),
        }


def _sub_seed(seed, *tags) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def _param(p, key, kind=float, default=None):
    if key not in p or p[key] is None:
        if default is None:
            raise ValidationError(f"missing parameter {key!r}")
        return default
    try:
        return kind(p[key])
    except (TypeError, ValueError):
        raise ValidationError(f"parameter {key!r} has invalid value {p[key]!r}") from None


def simplex_means(n: int, dim: int, radius: float, seed: int) -> np.ndarray:
    """``n`` points on a sphere of ``radius`` whose centroid is exactly the origin.

    Uses a randomly rotated regular simplex when ``n - 1 <= dim``.  Otherwise
    random directions are recentred, so the centroid stays exact and the norms
    equal ``radius`` only on average.
    """
    rng = np.random.default_rng(seed)
    if n == 1:
        return np.zeros((1, dim))
    if n - 1 <= dim:
        verts = np.eye(n) - 1.0 / n  # regular simplex in the hyperplane sum = 0
        verts /= np.linalg.norm(verts, axis=1, keepdims=True)
        basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        # orthonormal basis of the sum-zero hyperplane in R^n, mapped into R^dim
        hyper, _ = np.linalg.qr(np.eye(n)[:, :-1] - 1.0 / n)
        coords = verts @ hyper  # (n, n-1)
        pts = coords @ basis[:, : n - 1].T
    else:
        pts = rng.standard_normal((n, dim))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        pts -= pts.mean(axis=0)
        return pts * (radius / np.linalg.norm(pts, axis=1).mean())
    pts *= radius / np.linalg.norm(pts, axis=1, keepdims=True)
    return pts


def _uniform_initial(box, n, seed):
    return new_discrete_measure(box.sample_uniform(n, _sub_seed(seed, 999)))


def build_experiment(spec: ExperimentSpec):
    """Sources, kernel and domain for an experiment; returns ``(problem, initial)``."""
    p = spec.parameters
    seed = spec.seed
    gamma = _param(p, "gamma")
    if not gamma > 0:
        raise ValidationError("parameter 'gamma' must be positive")

    if spec.name is ExperimentName.ELLIPSES:
        n = _param(p, "n_sources", int)
        m = _param(p, "points_per_source", int)
        jitter = _param(p, "jitter", float, 0.0)
        half = _param(p, "box_halfwidth", float, 1.5)
        sources = [generate_ellipse(_sub_seed(seed, k), m, jitter) for k in range(n)]
        box = Box.cube(-half, half, 2)
        sources = [s.moved_to(box.clamp(s.points)) for s in sources]
        initial = _uniform_initial(box, _param(p, "particles", int), seed)

    elif spec.name is ExperimentName.SKETCH:
        path = Path(p["image"])
        if not path.exists():
            raise FileNotFoundError(f"sketch image not found: {path}")
        pixels = load_grayscale_png(path)
        if _param(p, "invert", bool, False):
            pixels = 1.0 - pixels
        sources = [measure_from_image(pixels, _param(p, "threshold", float, 0.05))]
        box = Box.cube(0.0, 1.0, 2)
        initial = _uniform_initial(box, _param(p, "particles", int), seed)

    elif spec.name is ExperimentName.GAUSSIANS:
        n = _param(p, "n_sources", int)
        dim = _param(p, "dim", int)
        samples = _param(p, "samples", int)
        std = _param(p, "stddev", float, 1.0)
        spread = _param(p, "spread", float, 4.0 * std)
        means = simplex_means(n, dim, spread, _sub_seed(seed, 555))
        sources = [generate_gaussian(_sub_seed(seed, k), samples, means[k], std) for k in range(n)]
        half = _param(p, "init_halfwidth", float, spread)
        init_box = Box.cube(-half, half, dim)
        initial = _uniform_initial(init_box, _param(p, "particles", int), seed)
        box = Box.around(sources + [initial])

    else:
        sources = [read_measure_csv(s) for s in p["sources"]]
        init = p["initial"]
        if isinstance(init, str) and init.startswith("uniform:"):
            box = Box.around(sources)
            initial = _uniform_initial(box, int(init.split(":", 1)[1]), seed)
        else:
            initial = read_measure_csv(init)
            box = Box.around(sources + [initial])

    if any(s.dim != initial.dim for s in sources):
        raise ValidationError("sources and initial measure differ in dimension")
    bw = p.get("bandwidth")
    bandwidth = float(bw) if bw is not None else median_heuristic_bandwidth(initial, seed)
    problem = BarycenterProblem.build(sources, gamma, bandwidth, box=box)
    return problem, initial


def run_experiment(spec: ExperimentSpec, method: str = "sd"):
    """Build and run; returns ``(problem, final_measure, trace)``."""
    problem, initial = build_experiment(spec)
    if method == "sd":
        final, trace = run_sd(initial, problem, spec.descent)
    elif method == "fw":
        final, trace = run_fw(initial, problem, spec.fw)
    else:
        raise ValidationError(f"unknown method {method!r} (expected 'sd' or 'fw')")
    return problem, final, trace


# --------------------------------------------------------------------------
# output


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


SVG_SIZE = 800


def scatter_svg(final: DiscreteMeasure, sources, box: Box) -> str:
    """SVG 1.1 scatter: sources in gray, particles in color, one circle per atom."""
    lo, hi = box.lower, box.upper
    scale = (SVG_SIZE - 1) / (hi - lo)

    def xy(p):
        return (p[0] - lo[0]) * scale[0], (hi[1] - p[1]) * scale[1]

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect x="0" y="0" width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white" stroke="black"/>',
    ]
    for layer, (measures, color, base) in enumerate(((sources, "#999999", 1.5), ([final], "#d62728", 4.0))):
        out.append(f'<g class="{"sources" if layer == 0 else "particles"}" fill="{color}">')
        for m in measures:
            ref = 1.0 / m.n
            for p, w in zip(m.points, m.weights):
                x, y = xy(p)
                out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{base * w / ref:.3f}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_run(output_dir, final: DiscreteMeasure, trace: DescentTrace, spec: ExperimentSpec | dict,
              problem: BarycenterProblem | None = None, extra: dict | None = None) -> Path:
    """Write particles.csv, trace.csv, run.json and (for d = 2) scatter.svg."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "particles.csv", measure_to_csv(final))
    _atomic_write(out / "trace.csv", trace.to_csv())
    last = trace.records[-1] if trace.records else None
    info = {
        "spec": spec.to_dict() if isinstance(spec, ExperimentSpec) else spec,
        "version": __version__,
        "final_objective": last.objective if last else None,
        "final_ksbd": last.ksbd if last and math.isfinite(last.ksbd) else None,
        "steps_completed": last.step if last else 0,
        "wall_ms": float(sum(r.wall_ms for r in trace.records)),
    }
    if extra:
        info.update(extra)
    if final.dim == 2:
        box = problem.box if problem is not None else Box.around([final])
        sources = problem.sources if problem is not None else ()
        _atomic_write(out / "scatter.svg", scatter_svg(final, sources, box))
    else:
        info["note"] = f"scatter.svg skipped: plots are only drawn for d = 2 (d = {final.dim})"
    _atomic_write(out / "run.json", json.dumps(info, indent=2, default=str) + "\n")
    return out
