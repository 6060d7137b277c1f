"""Post-processing checks on trajectories and ensembles.

Distances to the support and to its convex hull, rate fitting for
||X_t - y_i|| ~ C t^alpha, gamma-Voronoi cores, neighborhood mass of a sample
cloud, and the Ornstein-Uhlenbeck <-> heat coordinate change.
"""

from __future__ import annotations

import csv
import math
import weakref
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad
from scipy.spatial import cKDTree

from .heatflow import as_batch, posterior
from .measures import EmpiricalMeasure, SupportGeometry
from .reverse import Ensemble, Trajectory

HULL_TOL = 1e-8
FIT_FLOOR = 1e-14

_trees: "weakref.WeakKeyDictionary[EmpiricalMeasure, cKDTree]" = weakref.WeakKeyDictionary()


def _tree(mu: EmpiricalMeasure) -> cKDTree:
    tree = _trees.get(mu)
    if tree is None:
        tree = _trees[mu] = cKDTree(mu.points)
    return tree


def dist_to_support(mu: EmpiricalMeasure, x):
    """Distance min_k ||x - y_k|| for a point or an (n, d) batch."""
    xb, single = as_batch(x, mu.dim)
    dist, _ = _tree(mu).query(xb, k=1)
    dist = np.asarray(dist, dtype=float)
    return float(dist[0]) if single else dist


def nearest_atom(mu: EmpiricalMeasure, x):
    xb, single = as_batch(x, mu.dim)
    _, idx = _tree(mu).query(xb, k=1)
    idx = np.asarray(idx)
    return int(idx[0]) if single else idx


# ---------------------------------------------------------------------------
# convex hull distance


def _segment_dist(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    s = np.clip(((x - a) @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros(x.shape[0])
    return np.linalg.norm(x - (a + s[:, None] * ab), axis=1)


def _polygon_dist(x: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Distance from each row of x to a counter-clockwise convex polygon."""
    m = verts.shape[0]
    if m == 1:
        return np.linalg.norm(x - verts[0], axis=1)
    if m == 2:
        return _segment_dist(x, verts[0], verts[1])
    best = np.full(x.shape[0], np.inf)
    inside = np.ones(x.shape[0], dtype=bool)
    for k in range(m):
        a, b = verts[k], verts[(k + 1) % m]
        cross = (b[0] - a[0]) * (x[:, 1] - a[1]) - (b[1] - a[1]) * (x[:, 0] - a[0])
        inside &= cross >= 0
        best = np.minimum(best, _segment_dist(x, a, b))
    best[inside] = 0.0
    return best


def hull_distance_points(vertices, x, tol: float = HULL_TOL, max_iter: int = 100_000) -> float:
    """Distance from ``x`` to the convex hull of ``vertices`` in any dimension.

    Frank-Wolfe with away steps on the simplex of vertex weights, stopped by
    Gilbert's criterion: the gap between ||p|| and the separating-hyperplane
    lower bound min_v <v - x, p>/||p|| is at most ``tol`` (or ||p|| <= tol).
    """
    w = np.asarray(vertices, dtype=float) - np.asarray(x, dtype=float)
    m = w.shape[0]
    if m == 1:
        return float(np.linalg.norm(w[0]))
    lam = np.zeros(m)
    start = int(np.argmin(np.einsum("ij,ij->i", w, w)))
    lam[start] = 1.0
    p = w[start].copy()
    for _ in range(max_iter):
        norm_p = float(np.linalg.norm(p))
        if norm_p <= tol:
            return norm_p
        proj = w @ p
        s = int(np.argmin(proj))
        lower = proj[s] / norm_p
        if norm_p - lower <= tol:
            return norm_p
        active = np.flatnonzero(lam > 0)
        a = int(active[np.argmax(proj[active])])
        fw_gap = norm_p**2 - proj[s]
        away_gap = proj[a] - norm_p**2
        if fw_gap >= away_gap:
            direction = w[s] - p
            step_max = 1.0
        else:
            direction = p - w[a]
            step_max = lam[a] / (1.0 - lam[a]) if lam[a] < 1.0 else np.inf
        dd = float(direction @ direction)
        if dd == 0.0:
            return norm_p
        step = min(step_max, max(0.0, -float(p @ direction) / dd))
        if fw_gap >= away_gap:
            lam *= 1.0 - step
            lam[s] += step
        else:
            lam *= 1.0 + step
            lam[a] -= step
            if step == step_max:
                lam[a] = 0.0
        lam[lam < 0] = 0.0
        p = lam @ w
    return float(np.linalg.norm(p))


def dist_to_hull(geom: SupportGeometry, x):
    """Euclidean distance to conv(supp): exact for d <= 2, iterative above."""
    verts = geom.hull_vertices
    xb, single = as_batch(x, geom.dim)
    if geom.dim == 1:
        lo, hi = verts[:, 0].min(), verts[:, 0].max()
        out = np.maximum(np.maximum(lo - xb[:, 0], xb[:, 0] - hi), 0.0)
    elif geom.dim == 2:
        out = _polygon_dist(xb, verts)
    else:
        out = np.array([hull_distance_points(verts, row) for row in xb])
    return float(out[0]) if single else out


@dataclass(frozen=True)
class HullRateReport:
    distances: np.ndarray
    bounds: np.ndarray
    slack: float
    worst_violation: float
    passed: bool


def hull_rate_check(traj: Trajectory, geom: SupportGeometry) -> HullRateReport:
    """Check d(X_t, K) <= d(x_T, K) sqrt(t/T) at every node with slack.

    The slack is 1e-4 + 1e-3 d(x_T, K); ``worst_violation`` is the largest
    d(X_t, K) - bound, before slack.
    """
    dist = np.asarray(dist_to_hull(geom, traj.states)).reshape(-1)
    T = traj.times[0]
    bounds = dist[0] * np.sqrt(traj.times / T)
    slack = 1e-4 + 1e-3 * dist[0]
    excess = dist - bounds
    worst = float(excess.max())
    return HullRateReport(dist, bounds, slack, worst, worst <= slack)


# ---------------------------------------------------------------------------
# rates


class RateFit(NamedTuple):
    alpha: float
    C: float


class ExactHit(ValueError):
    """All recorded distances to the target are below the fitting floor."""


def fit_rate(traj: Trajectory, target, floor: float = FIT_FLOOR, min_nodes: int = 10) -> RateFit:
    """Fit ||X_t - target|| = C t^alpha on the last decade of nodes.

    Uses least squares on (log t, log distance) for nodes with
    t <= 10 t_min and distance above ``floor``.
    """
    target = np.asarray(target, dtype=float).reshape(-1)
    dist = np.linalg.norm(traj.states - target, axis=1)
    t_min = traj.times.min()
    window = traj.times <= 10.0 * t_min * (1 + 1e-12)
    usable = window & (dist > floor)
    if not np.any(dist[window] > floor):
        raise ExactHit("trajectory reaches the target to within the fitting floor")
    if usable.sum() < min_nodes:
        raise ValueError(f"need {min_nodes} nodes in the last decade, have {int(usable.sum())}")
    slope, intercept = np.polyfit(np.log(traj.times[usable]), np.log(dist[usable]), 1)
    return RateFit(float(slope), float(np.exp(intercept)))


# ---------------------------------------------------------------------------
# gamma-Voronoi cores


@dataclass(frozen=True)
class VoronoiCore:
    """Core V_i(gamma) = {x : ||x-y_j||^2 - ||x-y_i||^2 >= gamma for all j != i}."""

    index: int
    gamma: float
    C_i: float


def voronoi_core(mu: EmpiricalMeasure, i: int, gamma: float | None = None) -> VoronoiCore:
    """Core of atom ``i``; ``gamma`` defaults to half the squared gap to the nearest atom."""
    if not 0 <= i < mu.size:
        raise IndexError(f"atom index {i} out of range for {mu.size} atoms")
    y = mu.points
    others = np.delete(np.arange(mu.size), i)
    if others.size == 0:
        return VoronoiCore(i, math.inf if gamma is None else float(gamma), 0.0)
    gaps = np.linalg.norm(y[others] - y[i], axis=1)
    if gamma is None:
        gamma = 0.5 * float(np.min(gaps)) ** 2
    c = float(np.sum(mu.weights[others] / mu.weights[i] * gaps))
    return VoronoiCore(i, float(gamma), c)


def psi(mu: EmpiricalMeasure, i: int, x) -> np.ndarray:
    """psi_j(x) = ||x - y_j||^2 - ||x - y_i||^2 for j != i; shape (n, N-1)."""
    xb, _ = as_batch(x, mu.dim)
    y = mu.points
    # expanded form is exact enough and keeps the bisector symmetric
    diff = 2.0 * xb @ (y[i] - np.delete(y, i, axis=0)).T
    sq = (np.delete(y, i, axis=0) ** 2).sum(1) - float(y[i] @ y[i])
    return diff + sq


def membership(vc: VoronoiCore, mu: EmpiricalMeasure, x):
    """True where x lies in V_i(gamma); always true for a single atom."""
    xb, single = as_batch(x, mu.dim)
    if mu.size == 1:
        out = np.ones(xb.shape[0], dtype=bool)
    else:
        out = np.all(psi(mu, vc.index, xb) >= vc.gamma, axis=1)
    return bool(out[0]) if single else out


def claim1_bound(vc: VoronoiCore, t) -> np.ndarray:
    return vc.C_i * np.exp(-vc.gamma / (4.0 * np.asarray(t, dtype=float)))


def mean_shift_gap(mu: EmpiricalMeasure, vc: VoronoiCore, x, t):
    """||m(x, t) - y_i|| alongside the bound C_i exp(-gamma/(4t))."""
    xb, single = as_batch(x, mu.dim)
    m = posterior(mu, xb, t, trace=False).mean
    gap = np.linalg.norm(m - mu.points[vc.index], axis=1)
    bound = np.broadcast_to(claim1_bound(vc, t), gap.shape)
    if single:
        return float(gap[0]), float(bound[0])
    return gap, np.array(bound)


def on_bisector(mu: EmpiricalMeasure, x, tol: float = 1e-9):
    """True where the two nearest atoms are equidistant (within ``tol``)."""
    xb, single = as_batch(x, mu.dim)
    if mu.size < 2:
        out = np.zeros(xb.shape[0], dtype=bool)
    else:
        sq = np.sort(((xb[:, None, :] - mu.points[None]) ** 2).sum(-1), axis=1)
        out = sq[:, 1] - sq[:, 0] <= tol * np.maximum(1.0, sq[:, 1])
    return bool(out[0]) if single else out


@dataclass(frozen=True)
class Claim2Report:
    index: int
    member: np.ndarray
    threshold_ok: np.ndarray
    entry_time: float | None
    first_entry_time: float | None
    exits_after_entry: list = field(default_factory=list)

    @property
    def entered(self) -> bool:
        return self.entry_time is not None

    @property
    def holds(self) -> bool:
        """No recorded exit after the certified entry (vacuous if never entered)."""
        return not self.exits_after_entry


def claim2_invariance_check(traj: Trajectory, mu: EmpiricalMeasure, i: int | None = None) -> Claim2Report:
    """Check that a trajectory stays in V_i(gamma) once it has entered late enough.

    The certified entry t* is the first node (going backward) where x is in
    the core and C_i exp(-gamma/(4t)) <= min_j ||y_i - y_j|| / 8; membership
    is then required at every later node. ``i`` defaults to the atom nearest
    the terminal state.
    """
    if i is None:
        i = nearest_atom(mu, traj.states[-1])
    vc = voronoi_core(mu, i)
    member = np.asarray(membership(vc, mu, traj.states)).reshape(-1)
    if mu.size == 1:
        ok = np.ones(traj.times.size, dtype=bool)
    else:
        gap = np.min(np.linalg.norm(np.delete(mu.points, i, axis=0) - mu.points[i], axis=1))
        ok = claim1_bound(vc, traj.times) <= gap / 8.0
    cert = np.flatnonzero(member & ok)
    ever = np.flatnonzero(member)
    first = float(traj.times[ever[0]]) if ever.size else None
    if cert.size == 0:
        return Claim2Report(i, member, ok, None, first, [])
    k0 = int(cert[0])
    exits = [int(k) for k in range(k0, traj.times.size) if not member[k]]
    return Claim2Report(i, member, ok, float(traj.times[k0]), first, exits)


# ---------------------------------------------------------------------------
# ensembles


def neighborhood_mass(ens: Ensemble, mu: EmpiricalMeasure, delta: float, t: float | None = None) -> float:
    """Fraction of states within ``delta`` of supp(mu), at t_min or at node ``t``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    states = ens.terminal_states if t is None else ens.states_at(t)
    if math.isinf(delta):
        return 1.0
    return float(np.mean(dist_to_support(mu, states) <= delta))


# ---------------------------------------------------------------------------
# OU <-> heat


def ou_to_heat(x_ou, tau):
    """Map OU state at time tau to heat coordinates: t = (e^{2 tau} - 1)/2, x sqrt(2t+1)."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be nonnegative")
    t = 0.5 * np.expm1(2.0 * tau)
    x = np.asarray(x_ou, dtype=float) * np.exp(tau)
    return x, (float(t) if t.ndim == 0 else t)


def heat_to_ou(x_heat, t):
    """Inverse of :func:`ou_to_heat`: tau = log(2t+1)/2, x / sqrt(2t+1)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    tau = 0.5 * np.log1p(2.0 * t)
    x = np.asarray(x_heat, dtype=float) * np.exp(-tau)
    return x, (float(tau) if tau.ndim == 0 else tau)


def gamma_integral(gamma: float) -> tuple[float, float]:
    """Quadrature of int exp(s/2 - (gamma/4) e^s) ds with its closed form 2 sqrt(pi/gamma)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    # the integrand peaks at s = log(2/gamma); split there
    peak = math.log(2.0 / gamma)

    def f(s):
        if s > 700.0:
            return 0.0
        return math.exp(0.5 * s - 0.25 * gamma * math.exp(s))

    left, _ = quad(f, -np.inf, peak, epsabs=0.0, epsrel=1e-13, limit=200)
    right, _ = quad(f, peak, np.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    return left + right, 2.0 * math.sqrt(math.pi / gamma)


# ---------------------------------------------------------------------------
# per-trajectory records


@dataclass(frozen=True)
class DiagnosticsRecord:
    x_T: np.ndarray
    limit_index: int
    alpha: float
    C: float
    worst_hull_violation: float
    core_entry_time: float | None
    support_distance: np.ndarray
    hull_distance: np.ndarray

    def row(self) -> dict:
        out = {f"xT{a + 1}": float(v) for a, v in enumerate(self.x_T)}
        out.update(limit_index=self.limit_index, alpha=self.alpha, C=self.C,
                   worst_hull_violation=self.worst_hull_violation,
                   core_entry_time=self.core_entry_time)
        return out


def trajectory_diagnostics(traj: Trajectory, mu: EmpiricalMeasure, geom: SupportGeometry) -> DiagnosticsRecord:
    """Distances, fitted rate, hull-bound violation and core entry of one path."""
    i = nearest_atom(mu, traj.states[-1])
    try:
        alpha, c = fit_rate(traj, mu.points[i])
    except ValueError:
        alpha, c = math.nan, math.nan
    hull = hull_rate_check(traj, geom)
    claim = claim2_invariance_check(traj, mu, i)
    return DiagnosticsRecord(
        x_T=traj.states[0].copy(), limit_index=i, alpha=alpha, C=c,
        worst_hull_violation=hull.worst_violation, core_entry_time=claim.entry_time,
        support_distance=np.asarray(dist_to_support(mu, traj.states)).reshape(-1),
        hull_distance=hull.distances)


def write_diagnostics_csv(records, path) -> None:
    rows = [r.row() for r in records]
    if not rows:
        raise ValueError("no diagnostics records to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                        for k, v in row.items()})
