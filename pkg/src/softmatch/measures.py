"""Empirical measures on R^d and the two primitive measure maps.

A point cloud X = (x_1, ..., x_N) turns into the uniform empirical measure
m(X) placing mass 1/N on every point; attention transports such measures.
The barycenter of a weighted measure and the projection of a measure onto
the Dirac at its barycenter are the value-averaging half of attention.

Weighted sums are evaluated in a canonical order (points sorted
lexicographically, weight as final tiebreak) so that jointly permuting
(support, weights) changes nothing, bit for bit.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptySupport, InvalidInput

WEIGHT_SUM_TOL = 1e-12


def _as_points_array(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2:
        raise InvalidInput(f"points must be a 2-d array, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class PointCloud:
    """An ordered list of N >= 1 points in R^d.

    Raw representation of queries, keys, values, and particle states.
    Immutable; the underlying array is copied on construction and marked
    read-only.
    """

    points: np.ndarray

    def __init__(self, points):
        pts = _as_points_array(points).copy()
        if pts.shape[0] == 0:
            raise EmptySupport("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("point coordinates must be finite (no NaN/Inf)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n

    def point(self, i: int) -> np.ndarray:
        return self.points[i]

    def permuted(self, order) -> "PointCloud":
        return PointCloud(self.points[np.asarray(order, dtype=int)])

    def translated(self, c) -> "PointCloud":
        c = np.asarray(c, dtype=np.float64)
        if c.shape != (self.dim,):
            raise DimMismatch(f"translation has shape {c.shape}, dim is {self.dim}")
        return PointCloud(self.points + c)


def canonical_order(points: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Index order sorting rows lexicographically, weights as a final tiebreak.

    Jointly permuted (points, weights) pairs map to the same ordered
    sequence, which makes canonically ordered reductions exactly
    permutation invariant.
    """
    keys = [points[:, j] for j in range(points.shape[1] - 1, -1, -1)]
    if weights is not None:
        keys.insert(0, weights)
    return np.lexsort(keys)


def _ordered_sum(rows: np.ndarray) -> np.ndarray:
    # strict left-to-right accumulation; rows are already canonically ordered
    acc = rows[0].copy()
    for i in range(1, rows.shape[0]):
        acc += rows[i]
    return acc


@dataclass(frozen=True)
class EmpiricalMeasure:
    """A finitely supported probability measure sum_i w_i * delta_{x_i}.

    Weights are nonnegative and must sum to 1 within 1e-12; benign float
    drift inside that tolerance is renormalized away on construction,
    anything larger is an error. Support points may repeat and are never
    merged, so m(X) with duplicated tokens round-trips.
    """

    support: PointCloud
    weights: np.ndarray

    def __init__(self, support: PointCloud, weights):
        if not isinstance(support, PointCloud):
            support = PointCloud(support)
        w = np.asarray(weights, dtype=np.float64).copy()
        if w.shape != (support.n,):
            raise InvalidInput(
                f"weights shape {w.shape} does not match support size {support.n}"
            )
        if not np.all(np.isfinite(w)):
            raise InvalidInput("weights must be finite")
        if np.any(w < 0):
            raise InvalidInput("weights must be nonnegative")
        # the normalizer is summed in canonical order so that jointly
        # permuted constructions renormalize to bitwise identical weights
        order = canonical_order(support.points, w)
        total = 0.0
        for i in order:
            total += w[i]
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidInput(f"weights sum to {total!r}, expected 1 within 1e-12")
        if total != 1.0:
            w /= total
        w.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", w)

    @classmethod
    def _trusted(cls, support: PointCloud, weights: np.ndarray) -> "EmpiricalMeasure":
        """Internal: adopt weights verbatim (already validated elsewhere)."""
        obj = object.__new__(cls)
        w = np.asarray(weights, dtype=np.float64).copy()
        w.setflags(write=False)
        object.__setattr__(obj, "support", support)
        object.__setattr__(obj, "weights", w)
        return obj

    @property
    def n(self) -> int:
        return self.support.n

    @property
    def dim(self) -> int:
        return self.support.dim

    def permuted(self, order) -> "EmpiricalMeasure":
        order = np.asarray(order, dtype=int)
        # weights stay bitwise identical: no renormalization pass
        return EmpiricalMeasure._trusted(
            self.support.permuted(order), self.weights[order]
        )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "points": self.support.points.tolist(),
            "weights": self.weights.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "EmpiricalMeasure":
        cloud = PointCloud(d["points"])
        weights = d.get("weights")
        if weights is None:
            return empirical(cloud)
        return EmpiricalMeasure(cloud, weights)


def empirical(points: PointCloud | np.ndarray) -> EmpiricalMeasure:
    """The empirical-measure map: uniform weights 1/N on the given support.

    Order is preserved and multiplicity kept.
    """
    if not isinstance(points, PointCloud):
        points = PointCloud(points)
    n = points.n
    return EmpiricalMeasure(points, np.full(n, 1.0 / n))


def barycenter(mu: EmpiricalMeasure) -> np.ndarray:
    """sum_i w_i x_i, accumulated in canonical order (exactly permutation
    invariant for jointly permuted inputs)."""
    order = canonical_order(mu.support.points, mu.weights)
    rows = mu.weights[order, None] * mu.support.points[order]
    return _ordered_sum(rows)


def project_dirac(mu: EmpiricalMeasure) -> EmpiricalMeasure:
    """Project a measure onto the Dirac at its barycenter. Idempotent."""
    b = barycenter(mu)
    return EmpiricalMeasure(PointCloud(b.reshape(1, -1)), np.array([1.0]))


@dataclass(frozen=True)
class DomainBox:
    """An axis-aligned box [lower, upper] in R^d, or the unbounded domain.

    A bounded box is compact and convex, which is all the bounded-domain
    contraction estimates need from the representation space.
    """

    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    dim_hint: int | None = field(default=None, compare=False)

    def __init__(self, lower=None, upper=None, dim_hint=None):
        if (lower is None) != (upper is None):
            raise InvalidInput("provide both bounds or neither")
        if lower is not None:
            lo = np.asarray(lower, dtype=np.float64).reshape(-1).copy()
            hi = np.asarray(upper, dtype=np.float64).reshape(-1).copy()
            if lo.shape != hi.shape:
                raise DimMismatch("lower and upper must have the same dimension")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise InvalidInput("box bounds must be finite")
            if np.any(lo > hi):
                raise InvalidInput("lower must be <= upper coordinate-wise")
            lo.setflags(write=False)
            hi.setflags(write=False)
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
            object.__setattr__(self, "dim_hint", lo.shape[0])
        else:
            object.__setattr__(self, "lower", None)
            object.__setattr__(self, "upper", None)
            object.__setattr__(self, "dim_hint", dim_hint)

    @staticmethod
    def unbounded(dim: int | None = None) -> "DomainBox":
        return DomainBox(dim_hint=dim)

    @staticmethod
    def cube(radius: float, dim: int) -> "DomainBox":
        r = float(radius)
        return DomainBox(np.full(dim, -r), np.full(dim, r))

    @staticmethod
    def bounding(points: np.ndarray, pad: float = 0.0) -> "DomainBox":
        """The l-infinity bounding box of the data, optionally padded."""
        pts = _as_points_array(points)
        return DomainBox(pts.min(axis=0) - pad, pts.max(axis=0) + pad)

    @property
    def is_bounded(self) -> bool:
        return self.lower is not None

    @property
    def dim(self) -> int | None:
        return self.lower.shape[0] if self.is_bounded else self.dim_hint

    def diameter_l1(self) -> float:
        if not self.is_bounded:
            return float("inf")
        return float(np.sum(self.upper - self.lower))

    def diameter_l2(self) -> float:
        if not self.is_bounded:
            return float("inf")
        return float(np.linalg.norm(self.upper - self.lower, 2))

    def diameter_linf(self) -> float:
        if not self.is_bounded:
            return float("inf")
        return float(np.max(self.upper - self.lower))

    def contains(self, points, atol: float = 0.0) -> bool:
        if not self.is_bounded:
            return True
        pts = _as_points_array(points)
        return bool(
            np.all(pts >= self.lower - atol) and np.all(pts <= self.upper + atol)
        )

    def clip(self, points: np.ndarray) -> np.ndarray:
        if not self.is_bounded:
            return np.asarray(points, dtype=np.float64)
        return np.clip(points, self.lower, self.upper)

    def corners(self) -> np.ndarray:
        """All 2^d corners, rows of a (2^d, d) array."""
        if not self.is_bounded:
            raise InvalidInput("unbounded box has no corners")
        d = self.dim
        idx = np.indices((2,) * d).reshape(d, -1).T
        return np.where(idx == 0, self.lower, self.upper).astype(np.float64)

    def to_dict(self) -> dict:
        if not self.is_bounded:
            return {"unbounded": True, "dim": self.dim_hint}
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


# ---------------------------------------------------------------------------
# File I/O: CSV (one point per row) and JSON {"dim", "points", "weights"?}
# ---------------------------------------------------------------------------

def save_point_cloud_csv(path, cloud: PointCloud) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in cloud.points:
            writer.writerow([repr(float(v)) for v in row])


def load_point_cloud_csv(path) -> PointCloud:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            rows.append([float(v) for v in row])
    if not rows:
        raise EmptySupport(f"no points in {path}")
    return PointCloud(rows)


def save_measure_json(path, mu: EmpiricalMeasure) -> None:
    Path(path).write_text(json.dumps(mu.to_dict()))


def load_measure_json(path) -> EmpiricalMeasure:
    d = json.loads(Path(path).read_text())
    pts = _as_points_array(d["points"])
    if "dim" in d and int(d["dim"]) != pts.shape[1]:
        raise DimMismatch(
            f"declared dim {d['dim']} does not match points of dim {pts.shape[1]}"
        )
    return EmpiricalMeasure.from_dict(d)


def load_cloud_any(path) -> PointCloud:
    """Load a point cloud from .csv or .json by extension."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        return load_measure_json(p).support
    return load_point_cloud_csv(p)


def load_measure_any(path) -> EmpiricalMeasure:
    """Load a measure; CSV input gets uniform weights."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        return load_measure_json(p)
    return empirical(load_point_cloud_csv(p))
