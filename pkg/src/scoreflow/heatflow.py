"""Exact heat flow u = G_t * u0 of an empirical measure.

Everything is evaluated through the Gaussian posterior over atoms,

    r_k(x, t) ∝ w_k exp(-|x - y_k|^2 / (4t)),

computed in log space with the largest exponent factored out, so the
functions stay finite for t down to ~1e-12 at any distance from the data.
Inputs ``x`` may be a single point (shape (d,), or a scalar when d = 1) or a
batch of shape (n, d); ``t`` is a positive scalar or an array of shape (n,).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .measures import EmpiricalMeasure

# rows * atoms per chunk; bounds the (n, N) temporaries to ~32 MB
_CHUNK_ELEMS = 65_536


def as_batch(x, dim: int) -> tuple[np.ndarray, bool]:
    """Return ``x`` as an (n, dim) array and whether it was a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise ValueError(f"scalar point given for dimension {dim}")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if arr.shape[0] == dim:
            return arr.reshape(1, dim), True
        if dim == 1:
            return arr.reshape(-1, 1), False
        raise ValueError(f"point of length {arr.shape[0]} in dimension {dim}")
    if arr.ndim == 2 and arr.shape[1] == dim:
        return arr, False
    raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")


def check_time(t, n: int) -> np.ndarray:
    """Validate positive times; returns an array broadcastable to (n,)."""
    tt = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(tt)) or np.any(tt <= 0):
        raise ValueError("time must be strictly positive (the score is undefined at t = 0)")
    if tt.ndim == 0:
        return tt
    tt = tt.reshape(-1)
    if tt.shape[0] not in (1, n):
        raise ValueError(f"got {tt.shape[0]} times for {n} points")
    return tt if tt.shape[0] == n else tt[0]


def sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared distances, (n, d) x (N, d) -> (n, N).

    Low dimensions use per-axis differences (no cancellation); higher ones
    fall back to the Gram expansion.
    """
    d = x.shape[1]
    if d <= 8:
        out = np.subtract.outer(x[:, 0], y[:, 0])
        out *= out
        for a in range(1, d):
            diff = np.subtract.outer(x[:, a], y[:, a])
            diff *= diff
            out += diff
        return out
    out = (x * x).sum(1)[:, None] - 2.0 * (x @ y.T) + (y * y).sum(1)[None, :]
    return np.maximum(out, 0.0)


def _row_chunks(n: int, atoms: int):
    step = max(1, _CHUNK_ELEMS // max(atoms, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _chunk_time(tt: np.ndarray, sl: slice) -> np.ndarray:
    return tt if tt.ndim == 0 else tt[sl][:, None]


@dataclass(frozen=True)
class Posterior:
    """Gaussian posterior over atoms at a batch of points.

    ``log_norm`` is log sum_k w_k exp(-|x-y_k|^2/(4t)) (without the kernel
    prefactor); ``mean`` is the mean shift m(x, t); ``trace_cov`` the trace
    of the posterior covariance; ``cov`` is filled only on request.
    """

    log_norm: np.ndarray
    mean: np.ndarray
    trace_cov: np.ndarray
    cov: np.ndarray | None = None
    responsibilities: np.ndarray | None = None


def posterior(mu: EmpiricalMeasure, x: np.ndarray, t, *, cov: bool = False,
              responsibilities: bool = False, trace: bool = True) -> Posterior:
    """Posterior moments for an (n, d) batch ``x``; ``trace=False`` skips trace_cov."""
    n, d = x.shape
    y = mu.points
    logw = mu.log_weights
    tt = check_time(t, n)
    log_norm = np.empty(n)
    mean = np.empty((n, d))
    tr = np.full(n, np.nan)
    covs = np.empty((n, d, d)) if cov else None
    resp = np.empty((n, mu.size)) if responsibilities else None
    for sl in _row_chunks(n, mu.size):
        e = sq_dists(x[sl], y)
        e /= -4.0 * _chunk_time(tt, sl)
        e += logw
        peak = e.max(axis=1, keepdims=True)
        e -= peak
        np.exp(e, out=e)
        total = e.sum(axis=1, keepdims=True)
        log_norm[sl] = peak[:, 0] + np.log(total[:, 0])
        e /= total
        m = e @ y
        mean[sl] = m
        # centred second moment; nonnegative by construction
        if trace:
            tr[sl] = np.einsum("nk,nk->n", e, sq_dists(m, y))
        if cov:
            centred = y[None, :, :] - m[:, None, :]
            covs[sl] = np.einsum("nk,nki,nkj->nij", e, centred, centred)
        if responsibilities:
            resp[sl] = e
    return Posterior(log_norm, mean, tr, covs, resp)


def log_density(mu: EmpiricalMeasure, x, t):
    """log u(x, t) for u = sum_k w_k (4 pi t)^(-d/2) exp(-|x-y_k|^2/(4t))."""
    xb, single = as_batch(x, mu.dim)
    tt = check_time(t, xb.shape[0])
    lse = np.empty(xb.shape[0])
    for sl in _row_chunks(xb.shape[0], mu.size):
        e = sq_dists(xb[sl], mu.points)
        e /= -4.0 * _chunk_time(tt, sl)
        e += mu.log_weights
        lse[sl] = logsumexp(e, axis=1)
    out = lse - 0.5 * mu.dim * np.log(4.0 * np.pi * tt)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class LogDensityJet:
    """Value, gradient (the score) and Hessian of log u at one point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def log_density_jet(mu: EmpiricalMeasure, x, t) -> LogDensityJet:
    """log u with its gradient (m - x)/(2t) and Hessian -I/(2t) + Cov/(4t^2)."""
    xb, single = as_batch(x, mu.dim)
    if not single:
        raise ValueError("log_density_jet takes a single point")
    t = float(check_time(t, 1))
    post = posterior(mu, xb, t, cov=True)
    d = mu.dim
    value = post.log_norm[0] - 0.5 * d * np.log(4.0 * np.pi * t)
    grad = (post.mean[0] - xb[0]) / (2.0 * t)
    hess = -np.eye(d) / (2.0 * t) + post.cov[0] / (4.0 * t * t)
    hess = 0.5 * (hess + hess.T)
    return LogDensityJet(float(value), grad, hess)


def gaussian_bounds(mu: EmpiricalMeasure, x, t, radius: float | None = None):
    """Lower and upper Gaussian envelopes of u(x, t) from the support radius.

    The upper envelope uses (|x| - R)_+, so inside the ball it is the kernel
    peak (4 pi t)^(-d/2).
    """
    xb, single = as_batch(x, mu.dim)
    tt = check_time(t, xb.shape[0])
    if radius is None:
        radius = float(np.max(np.linalg.norm(mu.points, axis=1)))
    r = np.linalg.norm(xb, axis=1)
    pref = (4.0 * np.pi * tt) ** (-0.5 * mu.dim)
    lower = pref * np.exp(-((r + radius) ** 2) / (4.0 * tt))
    upper = pref * np.exp(-(np.maximum(r - radius, 0.0) ** 2) / (4.0 * tt))
    if single:
        return float(lower[0]), float(upper[0])
    return lower, upper


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    std_error: float
    bound: float


def gaussian_abs_exp_moment(variance: float) -> float:
    """E exp(|Z|) for Z ~ N(0, variance): 2 exp(variance/2) Phi(sqrt(variance))."""
    sigma = np.sqrt(variance)
    return float(2.0 * np.exp(0.5 * variance + log_ndtr(sigma)))


def exp_moment_estimate(mu: EmpiricalMeasure, t: float, n_samples: int, seed=0) -> MomentEstimate:
    """Monte-Carlo estimate of the integral of exp(|x|) u(x, t).

    The reported bound is exp(R) * (E exp(|Z|))^d with Z ~ N(0, 2t), which
    dominates the true moment since |z| <= sum_i |z_i|.
    """
    t = float(check_time(t, 1))
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    k = rng.choice(mu.size, size=n_samples, p=mu.weights)
    x = mu.points[k] + np.sqrt(2.0 * t) * rng.standard_normal((n_samples, mu.dim))
    vals = np.exp(np.linalg.norm(x, axis=1))
    se = float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("inf")
    radius = float(np.max(np.linalg.norm(mu.points, axis=1)))
    bound = np.exp(radius) * gaussian_abs_exp_moment(2.0 * t) ** mu.dim
    return MomentEstimate(float(vals.mean()), se, float(bound))
