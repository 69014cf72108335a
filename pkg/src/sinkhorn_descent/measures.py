"""Discrete measures, ground costs, kernels and synthetic data.

Everything here is an immutable value: arrays are copied on construction and
flagged read-only.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AllBelowThreshold,
    EmptySupport,
    NegativeWeight,
    NonFinite,
    SingleAtom,
    ValidationError,
    ZeroMass,
)

_MASS_ATOL = 1e-12
_BANDWIDTH_SUBSAMPLE = 2000


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud: ``points`` is (N, d), ``weights`` is (N,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        w = _frozen(self.weights)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise EmptySupport(f"need an (N, d) point array with N >= 1, got shape {pts.shape}")
        if pts.shape[1] < 1:
            raise ValidationError("dimension d must be >= 1")
        if w.shape != (pts.shape[0],):
            raise ValidationError(f"weights shape {w.shape} does not match {pts.shape[0]} points")
        if not np.all(np.isfinite(pts)):
            raise NonFinite("point coordinates contain NaN or Inf")
        if not np.all(np.isfinite(w)):
            raise NonFinite("weights contain NaN or Inf")
        if np.any(w < 0):
            raise NegativeWeight("weights must be nonnegative")
        if abs(w.sum() - 1.0) > _MASS_ATOL:
            raise ValidationError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def moved_to(self, points) -> "DiscreteMeasure":
        """Same weights on new atom positions (a push-forward)."""
        return DiscreteMeasure(points, self.weights)

    def same_as(self, other: "DiscreteMeasure") -> bool:
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )


def new_discrete_measure(points, weights=None) -> DiscreteMeasure:
    """Validated constructor; weights default to uniform and are renormalized."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise EmptySupport("a measure needs at least one support point")
    if not np.all(np.isfinite(pts)):
        raise NonFinite("point coordinates contain NaN or Inf")
    n = pts.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise ValidationError(f"{w.shape[0]} weights for {n} points")
        if not np.all(np.isfinite(w)):
            raise NonFinite("weights contain NaN or Inf")
        if np.any(w < 0):
            raise NegativeWeight("weights must be nonnegative")
        total = w.sum()
        if total == 0:
            raise ZeroMass("all weights are zero")
        # already-normalized weights are kept bit-exact (CSV round trips)
        if abs(total - 1.0) > 1e-14:
            w = w / total
    return DiscreteMeasure(pts, w)


# --------------------------------------------------------------------------
# domain and ground cost


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned compact domain. Its bounding-ball radius is the half diagonal."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lower))
        hi = _frozen(np.atleast_1d(self.upper))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValidationError("box bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise NonFinite("box bounds must be finite")
        if np.any(hi <= lo):
            raise ValidationError("box upper bounds must exceed lower bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, low: float, high: float, dim: int) -> "Box":
        return cls(np.full(dim, float(low)), np.full(dim, float(high)))

    @classmethod
    def around(cls, measures, margin: float = 0.1) -> "Box":
        """Bounding box of all atoms, padded by ``margin`` times its extent on each side."""
        pts = np.vstack([m.points for m in measures])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        extent = float(np.max(hi - lo))
        pad = margin * (extent if extent > 0 else 1.0)
        return cls(lo - pad, hi + pad)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def radius(self) -> float:
        return 0.5 * float(np.linalg.norm(self.upper - self.lower))

    def contains(self, points, atol: float = 0.0) -> bool:
        pts = np.asarray(points)
        return bool(np.all(pts >= self.lower - atol) and np.all(pts <= self.upper + atol))

    def clamp(self, points) -> np.ndarray:
        return np.clip(points, self.lower, self.upper)

    def grid(self, resolution: int) -> np.ndarray:
        """Uniform lattice with ``resolution`` nodes per axis, first axis slowest."""
        axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def sample_uniform(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return self.lower + (self.upper - self.lower) * rng.random((n, self.dim))


class CostKind(enum.Enum):
    SQUARED_EUCLIDEAN_HALF = "sqeuclidean"
    EUCLIDEAN = "euclidean"


def _sq_dists(x, y):
    # per-coordinate differences: no cancellation for nearby points, O(NM) memory
    out = np.zeros((x.shape[0], y.shape[0]))
    for k in range(x.shape[1]):
        diff = x[:, k, None] - y[None, :, k]
        out += diff * diff
    return out


@dataclass(frozen=True)
class GroundCost:
    kind: CostKind = CostKind.SQUARED_EUCLIDEAN_HALF
    domain_radius: float = 1.0

    def __post_init__(self):
        if not (self.domain_radius > 0 and math.isfinite(self.domain_radius)):
            raise ValidationError("domain_radius must be positive and finite")
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", CostKind(self.kind))

    @classmethod
    def for_box(cls, box: Box, kind=CostKind.SQUARED_EUCLIDEAN_HALF) -> "GroundCost":
        return cls(CostKind(kind), box.radius)

    # constants of the boundedness / Lipschitz / smoothness assumptions
    @property
    def M_c(self) -> float:
        r = self.domain_radius
        return 2 * r * r if self.kind is CostKind.SQUARED_EUCLIDEAN_HALF else 2 * r

    @property
    def G_c(self) -> float:
        return 2 * self.domain_radius if self.kind is CostKind.SQUARED_EUCLIDEAN_HALF else 1.0

    @property
    def L_c(self) -> float:
        return 1.0 if self.kind is CostKind.SQUARED_EUCLIDEAN_HALF else math.inf

    @property
    def smooth(self) -> bool:
        return self.kind is CostKind.SQUARED_EUCLIDEAN_HALF

    def matrix(self, x, y) -> np.ndarray:
        """Pairwise cost matrix between rows of ``x`` (N, d) and ``y`` (M, d)."""
        sq = _sq_dists(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        if self.kind is CostKind.SQUARED_EUCLIDEAN_HALF:
            return 0.5 * sq
        return np.sqrt(sq)

    def __call__(self, x, y) -> float:
        return float(self.matrix(np.atleast_2d(x), np.atleast_2d(y))[0, 0])

    def grad_x(self, x, y) -> np.ndarray:
        """Gradient of c(x, y) in its first argument for single points."""
        diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        if self.kind is CostKind.SQUARED_EUCLIDEAN_HALF:
            return diff
        nrm = np.linalg.norm(diff)
        return diff / nrm if nrm > 0 else np.zeros_like(diff)

    def averaged_grad_x(self, x, y, plan) -> np.ndarray:
        """Row-wise ``sum_j plan[i, j] * grad_x c(x_i, y_j)``, shape (N, d)."""
        if self.kind is CostKind.SQUARED_EUCLIDEAN_HALF:
            return x * plan.sum(axis=1, keepdims=True) - plan @ y
        diff = x[:, None, :] - y[None, :, :]
        nrm = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        scale = np.divide(plan, nrm, out=np.zeros_like(plan), where=nrm > 0)
        return np.einsum("ij,ijk->ik", scale, diff)


# --------------------------------------------------------------------------
# kernel


@dataclass(frozen=True)
class RbfKernel:
    """Gaussian kernel ``exp(-|x - y|^2 / (2 bandwidth^2))``."""

    bandwidth: float

    def __post_init__(self):
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValidationError("kernel bandwidth must be positive and finite")

    D_k = 1.0

    @property
    def G_k(self) -> float:
        return math.exp(-0.5) / self.bandwidth

    def gram(self, x, y=None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = x if y is None else np.asarray(y, dtype=np.float64)
        return np.exp(-_sq_dists(x, y) / (2.0 * self.bandwidth**2))

    def __call__(self, x, y) -> float:
        return float(self.gram(np.atleast_2d(x), np.atleast_2d(y))[0, 0])


def median_heuristic_bandwidth(measure: DiscreteMeasure, seed: int = 0) -> float:
    """Median pairwise distance between support points.

    Exact up to 2000 atoms; above that a seeded subsample of 2000 atoms is used.
    """
    if measure.n < 2:
        raise SingleAtom("median heuristic needs at least two atoms")
    pts = measure.points
    if measure.n > _BANDWIDTH_SUBSAMPLE:
        rng = np.random.default_rng(seed)
        pts = pts[rng.choice(measure.n, _BANDWIDTH_SUBSAMPLE, replace=False)]
    iu = np.triu_indices(pts.shape[0], k=1)
    d = np.sqrt(_sq_dists(pts, pts)[iu])
    return float(np.median(d))


# --------------------------------------------------------------------------
# generators


def ellipse_parameters(seed: int):
    """Semi-axes ``(a, b)`` and rotation angle drawn by ``generate_ellipse(seed, ...)``."""
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.3, 1.0, size=2)
    theta = rng.uniform(0.0, np.pi)
    return float(a), float(b), float(theta), rng


def generate_ellipse(seed: int, n_points: int, jitter: float = 0.0) -> DiscreteMeasure:
    """Uniform-weight samples on a random origin-centred ellipse."""
    if n_points < 3:
        raise ValidationError("n_points must be >= 3")
    if not jitter >= 0:
        raise ValidationError("jitter must be nonnegative")
    a, b, theta, rng = ellipse_parameters(seed)
    t = rng.uniform(0.0, 2 * np.pi, size=n_points)
    local = np.stack([a * np.cos(t), b * np.sin(t)], axis=1)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    pts = local @ rot.T
    if jitter > 0:
        pts = pts + jitter * rng.standard_normal(pts.shape)
    return new_discrete_measure(pts)


def generate_gaussian(seed: int, n_points: int, mean, stddev: float) -> DiscreteMeasure:
    if n_points < 1:
        raise ValidationError("n_points must be >= 1")
    if not stddev > 0:
        raise ValidationError("stddev must be positive")
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    rng = np.random.default_rng(seed)
    pts = mean + stddev * rng.standard_normal((n_points, mean.shape[0]))
    return new_discrete_measure(pts)


def measure_from_image(pixels, threshold: float = 0.05) -> DiscreteMeasure:
    """Pixels above ``threshold`` become atoms weighted by intensity.

    Pixel centres map to the unit square with row 0 at the top (y = 1 side)
    and column 0 on the left.
    """
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 1:
        raise ValidationError(f"expected an H x W intensity grid, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise NonFinite("image contains NaN or Inf")
    if img.min() < 0 or img.max() > 1:
        raise ValidationError("intensities must lie in [0, 1]")
    h, w = img.shape
    rows, cols = np.nonzero(img > threshold)
    if rows.size == 0:
        raise AllBelowThreshold(f"no pixel exceeds threshold {threshold}")
    pts = np.stack([(cols + 0.5) / w, 1.0 - (rows + 0.5) / h], axis=1)
    return new_discrete_measure(pts, img[rows, cols])


def load_grayscale_png(path) -> np.ndarray:
    """8-bit grayscale or RGB(A) PNG as a float grid in [0, 1]; RGB uses Rec. 601 luminance."""
    from PIL import Image

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "F"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        else:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
            arr = rgb @ np.array([0.299, 0.587, 0.114])
    return arr / 255.0


# --------------------------------------------------------------------------
# CSV point clouds


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def measure_to_csv(measure: DiscreteMeasure) -> str:
    buf = io.StringIO()
    header = [f"x{k}" for k in range(measure.dim)] + ["w"]
    buf.write(",".join(header) + "\n")
    for p, w in zip(measure.points, measure.weights):
        buf.write(",".join(format_float(v) for v in p) + "," + format_float(w) + "\n")
    return buf.getvalue()


def write_measure_csv(path, measure: DiscreteMeasure) -> None:
    Path(path).write_text(measure_to_csv(measure), encoding="utf-8", newline="\n")


def read_measure_csv(path) -> DiscreteMeasure:
    """Load ``x0,...,x{d-1}[,w]``; missing weight column means uniform weights."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"measure file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptySupport(f"{path}: empty file") from None
        has_w = bool(header) and header[-1] == "w"
        coords = header[:-1] if has_w else header
        if not coords or coords != [f"x{k}" for k in range(len(coords))]:
            raise ValidationError(f"{path}: header must be x0,...,x{{d-1}}[,w], got {header}")
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptySupport(f"{path}: no data rows")
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValidationError(f"{path}: ragged rows")
    if has_w:
        return new_discrete_measure(data[:, :-1], data[:, -1])
    return new_discrete_measure(data)
