"""Data measures: weighted Dirac sums and the benchmark datasets."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Finite weighted sum of Dirac masses in R^d.

    ``points`` has shape (N, d) and ``weights`` shape (N,). Both arrays are
    read-only; build instances through :func:`make_empirical`.
    """

    points: np.ndarray
    weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(N={self.size}, dim={self.dim})"


def make_empirical(points, weights=None) -> EmpiricalMeasure:
    """Build a normalized, deduplicated empirical measure.

    A 1-D sequence of scalars is read as N points in R^1. Identical points
    are merged (their weights summed) keeping first-occurrence order, and the
    weights are renormalized to sum to one.
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("empirical measure needs at least one point")
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError(f"points must be a list of vectors, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    n = pts.shape[0]

    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != n:
            raise ValueError(f"got {w.shape[0]} weights for {n} points")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite and strictly positive")

    _, first, inverse = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    merged = np.zeros(order.size)
    np.add.at(merged, rank[inverse], w)
    pts = pts[np.sort(first)]
    merged = merged / merged.sum()

    pts = np.ascontiguousarray(pts)
    pts.setflags(write=False)
    merged.setflags(write=False)
    return EmpiricalMeasure(points=pts, weights=merged)


def fig1_measure() -> EmpiricalMeasure:
    """Three atoms at -5, 0, 5 with weights 0.7, 0.3, 0.1 (renormalized)."""
    return make_empirical([-5.0, 0.0, 5.0], [0.7, 0.3, 0.1])


def two_dirac_measure() -> EmpiricalMeasure:
    """Equal masses at (-1, 0) and (1, 0)."""
    return make_empirical([[-1.0, 0.0], [1.0, 0.0]], [0.5, 0.5])


def lemniscate_point(theta, half_width: float) -> np.ndarray:
    """Point(s) on the lemniscate of Bernoulli for curve parameter ``theta``."""
    theta = np.asarray(theta, dtype=float)
    den = 1.0 + np.sin(theta) ** 2
    x = half_width * np.cos(theta) / den
    y = half_width * np.sin(theta) * np.cos(theta) / den
    return np.stack([x, y], axis=-1)


def lemniscate_residual(points, half_width: float) -> np.ndarray:
    """|(x^2+y^2)^2 - a^2 (x^2-y^2)| for each point."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = p[:, 0], p[:, 1]
    return np.abs((x * x + y * y) ** 2 - half_width**2 * (x * x - y * y))


def lemniscate_dataset(n: int, half_width: float = 1.0, seed=0) -> EmpiricalMeasure:
    """Equal-weight sample of ``n`` points uniform in arc length on the lemniscate.

    The curve is parametrized as x = a cos(th)/(1+sin^2 th),
    y = a sin(th) cos(th)/(1+sin^2 th); its speed is a/sqrt(1+sin^2 th),
    so drawing th uniformly and accepting with probability
    1/sqrt(1+sin^2 th) yields arc-length-uniform points.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    rng = np.random.default_rng(seed)
    accepted: list[np.ndarray] = []
    count = 0
    while count < n:
        th = rng.uniform(0.0, 2.0 * np.pi, size=2 * n)
        keep = rng.uniform(size=2 * n) < 1.0 / np.sqrt(1.0 + np.sin(th) ** 2)
        accepted.append(th[keep])
        count += int(keep.sum())
    theta = np.concatenate(accepted)[:n]
    return make_empirical(lemniscate_point(theta, half_width))


def load_measure(path) -> EmpiricalMeasure:
    """Read a measure file ``{"dim": d, "points": [[...]], "weights": [...]}``."""
    data = json.loads(Path(path).read_text())
    return measure_from_dict(data)


def measure_from_dict(data: dict) -> EmpiricalMeasure:
    if "points" not in data:
        raise ValueError("measure needs a 'points' entry")
    pts = np.asarray(data["points"], dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    dim = data.get("dim")
    if dim is not None and pts.ndim == 2 and pts.shape[1] != int(dim):
        raise ValueError(f"declared dim {dim} but points have dimension {pts.shape[1]}")
    return make_empirical(pts, data.get("weights"))


def save_measure(mu: EmpiricalMeasure, path) -> None:
    Path(path).write_text(json.dumps(mu.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Support geometry


@dataclass(frozen=True, eq=False)
class SupportGeometry:
    """Radius of the smallest origin-centred ball holding the support, plus
    the extreme points of its convex hull (counter-clockwise for d = 2)."""

    radius: float
    hull_vertices: np.ndarray

    @property
    def dim(self) -> int:
        return self.hull_vertices.shape[1]


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def monotone_chain(points: np.ndarray) -> np.ndarray:
    """Indices of the 2-D convex hull vertices, counter-clockwise.

    Points must be distinct. Collinear boundary points are dropped, so a
    set lying on one segment returns its two endpoints.
    """
    pts = np.asarray(points, dtype=float)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    if order.size <= 2:
        return order

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and _cross(pts[lower[-2]], pts[lower[-1]], pts[i]) <= 0:
            lower.pop()
        lower.append(int(i))
    upper: list[int] = []
    for i in order[::-1]:
        while len(upper) >= 2 and _cross(pts[upper[-2]], pts[upper[-1]], pts[i]) <= 0:
            upper.pop()
        upper.append(int(i))
    hull = lower[:-1] + upper[:-1]
    return np.array(hull, dtype=int)


def support_geometry(mu: EmpiricalMeasure, tol: float = 1e-8) -> SupportGeometry:
    """Support radius and convex-hull vertices of ``mu``.

    Exact monotone chain for d <= 2; in higher dimension a point is kept
    when its distance to the hull of the remaining points exceeds ``tol``.
    """
    pts = mu.points
    radius = float(np.max(np.linalg.norm(pts, axis=1)))
    d = mu.dim
    if d == 1:
        lo, hi = int(np.argmin(pts[:, 0])), int(np.argmax(pts[:, 0]))
        idx = np.array([lo] if lo == hi else [lo, hi])
    elif d == 2:
        idx = monotone_chain(pts)
    else:
        from .diagnostics import hull_distance_points

        keep = []
        for i in range(mu.size):
            others = np.delete(pts, i, axis=0)
            if others.shape[0] == 0 or hull_distance_points(others, pts[i], tol=0.1 * tol) > tol:
                keep.append(i)
        idx = np.array(keep, dtype=int)
    verts = np.ascontiguousarray(pts[idx])
    verts.setflags(write=False)
    return SupportGeometry(radius=radius, hull_vertices=verts)
