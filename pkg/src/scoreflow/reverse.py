"""Reverse-time generation: probability-flow ODE and the generation SDE.

Time runs backward from T to an early-stopping time t_min > 0. The ODE
dX/dt = -s(X, t) is integrated with classical RK4 in tau = log t, where the
right-hand side -t s(X, t) stays bounded as t -> 0. The SDE
dX = -(1 + eps) s dt + sqrt(2 eps) dW is stepped with Euler-Maruyama:

    X_{t - dt} = X_t + (1 + eps) s(X_t, t) dt + sqrt(2 eps dt) xi.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .heatflow import as_batch
from .score import ScoreField

SPACINGS = ("geometric", "log-uniform", "uniform")


class IntegrationError(RuntimeError):
    """A trajectory left the finite floats."""

    def __init__(self, message: str, node: int, trajectory: int | None = None):
        super().__init__(message)
        self.node = node
        self.trajectory = trajectory


@dataclass(frozen=True, eq=False)
class TimeSchedule:
    T: float
    t_min: float
    nodes: np.ndarray
    spacing: str

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    def index_of(self, t: float, rtol: float = 1e-9) -> int:
        """Index of the node equal to ``t`` (relative tolerance ``rtol``)."""
        hits = np.flatnonzero(np.abs(self.nodes - t) <= rtol * abs(t))
        if hits.size == 0:
            raise KeyError(f"t = {t!r} is not a schedule node")
        return int(hits[0])


def make_schedule(T: float, t_min: float, n_steps: int, spacing: str = "geometric") -> TimeSchedule:
    """Strictly decreasing nodes from ``T`` to ``t_min``.

    Geometric nodes are t_k = T (t_min/T)^(k/n); "log-uniform" is the same
    set built from evenly spaced logarithms.
    """
    if not t_min > 0:
        raise ValueError("t_min must be positive: integration cannot reach t = 0")
    if not t_min < T:
        raise ValueError("t_min must be smaller than T")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    k = np.arange(n_steps + 1)
    if spacing == "geometric":
        nodes = T * (t_min / T) ** (k / n_steps)
    elif spacing == "log-uniform":
        nodes = np.exp(np.linspace(np.log(T), np.log(t_min), n_steps + 1))
    elif spacing == "uniform":
        nodes = np.linspace(T, t_min, n_steps + 1)
    else:
        raise ValueError(f"unknown spacing {spacing!r}; expected one of {SPACINGS}")
    nodes[0], nodes[-1] = T, t_min
    nodes.setflags(write=False)
    return TimeSchedule(float(T), float(t_min), nodes, spacing)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    epsilon: float
    seed: object = None

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Trajectories sharing a schedule; ``paths`` has shape (n, nodes, d)."""

    times: np.ndarray
    paths: np.ndarray
    epsilon: float
    seeds: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.paths.shape[0]

    @property
    def terminal_states(self) -> np.ndarray:
        return self.paths[:, -1, :]

    def states_at(self, t: float, rtol: float = 1e-9) -> np.ndarray:
        hits = np.flatnonzero(np.abs(self.times - t) <= rtol * abs(t))
        if hits.size == 0:
            raise KeyError(f"t = {t!r} is not a recorded node")
        return self.paths[:, hits[0], :]

    @property
    def trajectories(self) -> list[Trajectory]:
        return list(self)

    def __iter__(self) -> Iterator[Trajectory]:
        for i in range(len(self)):
            seed = self.seeds[i] if i < len(self.seeds) else None
            yield Trajectory(self.times, self.paths[i], self.epsilon, seed)


def _check_finite(x: np.ndarray, node: int, offset: int = 0) -> None:
    bad = ~np.all(np.isfinite(x), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise IntegrationError(
            f"non-finite state at node {node} (trajectory {offset + i})", node, offset + i)


def ode_paths(sf: ScoreField, x0: np.ndarray, nodes: np.ndarray, offset: int = 0) -> np.ndarray:
    """RK4 in log-time for a batch of initial states; returns (n, nodes, d)."""
    n, d = x0.shape
    paths = np.empty((n, nodes.size, d))
    x = x0.astype(float, copy=True)
    paths[:, 0] = x

    def rhs(z, t):
        return -t * sf.field(z, t)

    for k in range(nodes.size - 1):
        t0, t1 = nodes[k], nodes[k + 1]
        tm = np.sqrt(t0 * t1)
        h = np.log(t1 / t0)
        k1 = rhs(x, t0)
        k2 = rhs(x + 0.5 * h * k1, tm)
        k3 = rhs(x + 0.5 * h * k2, tm)
        k4 = rhs(x + h * k3, t1)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_finite(x, k + 1, offset)
        paths[:, k + 1] = x
    return paths


def sde_paths(sf: ScoreField, x0: np.ndarray, nodes: np.ndarray, epsilon: float,
              noise: np.ndarray | None, offset: int = 0) -> np.ndarray:
    """Euler-Maruyama backward in t; ``noise`` has shape (n, steps, d)."""
    n, d = x0.shape
    paths = np.empty((n, nodes.size, d))
    x = x0.astype(float, copy=True)
    paths[:, 0] = x
    drift_scale = 1.0 + epsilon
    for k in range(nodes.size - 1):
        t0 = nodes[k]
        dt = t0 - nodes[k + 1]
        x = x + drift_scale * dt * sf.field(x, t0)
        if epsilon > 0:
            x += np.sqrt(2.0 * epsilon * dt) * noise[:, k, :]
        _check_finite(x, k + 1, offset)
        paths[:, k + 1] = x
    return paths


def integrate_ode(sf: ScoreField, x_T, sched: TimeSchedule) -> Trajectory:
    """Deterministic reverse flow dX/dt = -s(X, t) from T down to t_min."""
    xb, _ = as_batch(x_T, sf.dim)
    if xb.shape[0] != 1:
        raise ValueError("integrate_ode takes a single initial point; see run_ensemble")
    paths = ode_paths(sf, xb, sched.nodes)
    return Trajectory(sched.nodes, paths[0], 0.0, None)


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def integrate_sde(sf: ScoreField, x_T, sched: TimeSchedule, epsilon: float, seed=None) -> Trajectory:
    """One Euler-Maruyama path of the generation SDE.

    The noise for all steps is drawn up front as a (steps, d) block from
    ``default_rng(seed)``; ``epsilon = 0`` gives explicit Euler on the ODE.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    xb, _ = as_batch(x_T, sf.dim)
    if xb.shape[0] != 1:
        raise ValueError("integrate_sde takes a single initial point; see run_ensemble")
    noise = None
    if epsilon > 0:
        noise = _generator(seed).standard_normal((sched.n_steps, sf.dim))[None]
    paths = sde_paths(sf, xb, sched.nodes, float(epsilon), noise)
    return Trajectory(sched.nodes, paths[0], float(epsilon), seed)


def derive_seed(master: int, index: int) -> np.random.SeedSequence:
    """Seed of trajectory ``index``; independent of batch layout."""
    return np.random.SeedSequence(master, spawn_key=(1, index))


def init_seed(master: int) -> np.random.SeedSequence:
    """Seed of the stream that draws Gaussian initial states."""
    return np.random.SeedSequence(master, spawn_key=(0,))


def initial_states(init, n: int, dim: int, seed: int) -> np.ndarray:
    """Resolve an init spec into an (n, dim) array.

    ``init`` is either explicit points (array-like, or ``{"points": ...}``;
    a single point is repeated, otherwise exactly ``n`` are needed) or
    ``{"gaussian": {"mean": ..., "sigma": ...}}`` for N(mean, sigma^2 I), or
    ``{"uniform": {"low": ..., "high": ...}}`` for a box.
    """
    if isinstance(init, Mapping) and "gaussian" in init:
        spec = init["gaussian"]
        mean = np.broadcast_to(np.asarray(spec.get("mean", 0.0), dtype=float), (dim,))
        sigma = float(spec.get("sigma", 1.0))
        if sigma <= 0:
            raise ValueError("gaussian init needs sigma > 0")
        rng = np.random.default_rng(init_seed(seed))
        return mean + sigma * rng.standard_normal((n, dim))
    if isinstance(init, Mapping) and "uniform" in init:
        spec = init["uniform"]
        low = np.broadcast_to(np.asarray(spec["low"], dtype=float), (dim,))
        high = np.broadcast_to(np.asarray(spec["high"], dtype=float), (dim,))
        if np.any(high <= low):
            raise ValueError("uniform init needs low < high on every axis")
        rng = np.random.default_rng(init_seed(seed))
        return rng.uniform(low, high, size=(n, dim))
    pts =init["points"] if isinstance(init, Mapping) else init
    xb, _ = as_batch(pts, dim)
    if xb.shape[0] == 1:
        return np.repeat(xb, n, axis=0)
    if xb.shape[0] != n:
        raise ValueError(f"init lists {xb.shape[0]} points for {n} trajectories")
    return xb.copy()


def run_ensemble(sf: ScoreField, init, sched: TimeSchedule, epsilon: float, n: int,
                 seed: int = 0, method: str = "sde", batch_size: int = 2048) -> Ensemble:
    """Run ``n`` independent trajectories, vectorized in batches.

    Trajectory ``i`` draws its noise from ``derive_seed(seed, i)`` exactly as
    :func:`integrate_sde` would, so results do not depend on batching.
    ``method="ode"`` uses the RK4 flow instead (``epsilon`` must be 0).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if method not in ("sde", "ode"):
        raise ValueError(f"unknown method {method!r}")
    if method == "ode" and epsilon != 0:
        raise ValueError("the ODE flow has epsilon = 0")
    x0 = initial_states(init, n, sf.dim, seed)
    seeds = [derive_seed(seed, i) for i in range(n)]
    paths = np.empty((n, sched.nodes.size, sf.dim))
    for start in range(0, n, batch_size):
        stop = min(n, start + batch_size)
        if method == "ode":
            paths[start:stop] = ode_paths(sf, x0[start:stop], sched.nodes, start)
            continue
        noise = None
        if epsilon > 0:
            noise = np.stack([
                np.random.default_rng(seeds[i]).standard_normal((sched.n_steps, sf.dim))
                for i in range(start, stop)
            ])
        paths[start:stop] = sde_paths(sf, x0[start:stop], sched.nodes, float(epsilon), noise, start)
    return Ensemble(sched.nodes, paths, float(epsilon), seeds)


# ---------------------------------------------------------------------------
# writers


def _seed_repr(seed):
    if seed is None or isinstance(seed, (int, np.integer)):
        return None if seed is None else int(seed)
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
    return repr(seed)


def _as_trajectories(trajs) -> list[Trajectory]:
    if isinstance(trajs, Trajectory):
        return [trajs]
    return list(trajs)


def write_trajectories_csv(trajs, path) -> None:
    """One row per node per trajectory: traj_id, t, x1..xd."""
    trajs = _as_trajectories(trajs)
    d = trajs[0].states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj_id", "t"] + [f"x{a + 1}" for a in range(d)])
        for i, tr in enumerate(trajs):
            for t, x in zip(tr.times, tr.states):
                w.writerow([i, repr(float(t))] + [repr(float(v)) for v in x])


def write_trajectories_jsonl(trajs, path) -> None:
    """One JSON object per node per trajectory."""
    trajs = _as_trajectories(trajs)
    with open(path, "w") as fh:
        for i, tr in enumerate(trajs):
            seed = _seed_repr(tr.seed)
            for t, x in zip(tr.times, tr.states):
                rec = {"traj_id": i, "t": float(t), "x": [float(v) for v in x],
                       "epsilon": tr.epsilon, "seed": seed}
                fh.write(json.dumps(rec) + "\n")


def read_trajectories_csv(path) -> list[Trajectory]:
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            rows.setdefault(int(row[0]), []).append([float(v) for v in row[1:]])
    out = []
    for i in sorted(rows):
        arr = np.array(rows[i])
        out.append(Trajectory(arr[:, 0], arr[:, 1:], float("nan")))
    return out
