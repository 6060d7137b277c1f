"""Score fields s(x, t), mean shift and the Li-Yau margin."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .heatflow import as_batch, check_time, log_density, posterior
from .measures import EmpiricalMeasure

FD_STEP = 1e-5

KINDS = ("empirical-exact", "scaled", "biased", "custom")


def _per_row(t, n: int):
    tt = check_time(t, n)
    return tt if tt.ndim == 0 else tt[:, None]


@dataclass(frozen=True, eq=False)
class ScoreField:
    """A vector field s(x, t) with its divergence.

    ``field`` and ``div`` act on batches: (n, d) points and times given as a
    scalar or an (n,) array. Use :meth:`eval` and :meth:`divergence` for
    single points or batches alike.
    """

    field: Callable[[np.ndarray, object], np.ndarray]
    div: Callable[[np.ndarray, object], np.ndarray]
    dim: int
    kind: str = "custom"
    measure: EmpiricalMeasure | None = None

    def eval(self, x, t):
        xb, single = as_batch(x, self.dim)
        check_time(t, xb.shape[0])
        out = self.field(xb, t)
        return out[0] if single else out

    __call__ = eval

    def divergence(self, x, t):
        xb, single = as_batch(x, self.dim)
        check_time(t, xb.shape[0])
        out = self.div(xb, t)
        return float(out[0]) if single else out

    def log_density(self, x, t):
        if self.kind != "empirical-exact":
            raise AttributeError(f"{self.kind} score field carries no log-density")
        return log_density(self.measure, x, t)


def empirical_score(mu: EmpiricalMeasure, x, t):
    """Exact score (m(x, t) - x) / (2t) of the heat flow of ``mu``."""
    xb, single = as_batch(x, mu.dim)
    post = posterior(mu, xb, t, trace=False)
    out = (post.mean - xb) / (2.0 * _per_row(t, xb.shape[0]))
    return out[0] if single else out


def empirical_divergence(mu: EmpiricalMeasure, x, t):
    """div s = -d/(2t) + trace Cov(Y_x) / (4 t^2)."""
    xb, single = as_batch(x, mu.dim)
    post = posterior(mu, xb, t)
    tt = np.asarray(check_time(t, xb.shape[0]))
    out = -mu.dim / (2.0 * tt) + post.trace_cov / (4.0 * tt * tt)
    out = np.broadcast_to(out, (xb.shape[0],))
    return float(out[0]) if single else np.array(out)


@dataclass(frozen=True)
class MeanShift:
    mean: np.ndarray
    responsibilities: np.ndarray


def mean_shift(mu: EmpiricalMeasure, x, t) -> MeanShift:
    """Posterior mean m(x, t) = sum_k r_k y_k and the responsibilities r_k."""
    xb, single = as_batch(x, mu.dim)
    post = posterior(mu, xb, t, responsibilities=True)
    if single:
        return MeanShift(post.mean[0], post.responsibilities[0])
    return MeanShift(post.mean, post.responsibilities)


def empirical_field(mu: EmpiricalMeasure) -> ScoreField:
    """Closed-form score field of the heat flow started from ``mu``."""
    def field(x, t):
        post = posterior(mu, x, t, trace=False)
        return (post.mean - x) / (2.0 * _per_row(t, x.shape[0]))

    def div(x, t):
        return np.asarray(empirical_divergence(mu, x, t)).reshape(-1)

    return ScoreField(field, div, mu.dim, "empirical-exact", mu)


def fd_divergence(field: Callable, x: np.ndarray, t, step: float = FD_STEP) -> np.ndarray:
    """Central-difference trace of the Jacobian of a batched field."""
    n, d = x.shape
    total = np.zeros(n)
    for a in range(d):
        shift = np.zeros(d)
        shift[a] = step
        total += (field(x + shift, t)[:, a] - field(x - shift, t)[:, a]) / (2.0 * step)
    return total


def custom_field(fn: Callable, dim: int, divergence: Callable | None = None,
                 fd_step: float = FD_STEP) -> ScoreField:
    """Wrap a batched callable ``fn(x, t)`` as a score field.

    Without an analytic ``divergence`` the field's divergence falls back to
    central differences with step ``fd_step``.
    """
    if divergence is None:
        def divergence(x, t):
            return fd_divergence(fn, x, t, fd_step)
    return ScoreField(fn, divergence, dim, "custom")


def make_candidate(base: ScoreField, transform: Mapping | None = None, *,
                   scale: float | None = None, bias=None) -> ScoreField:
    """Scaled (``scale * s``) or shifted (``s + bias``) copy of ``base``.

    Scaling multiplies both the field and its divergence; a constant bias
    leaves the divergence unchanged.
    """
    if transform is not None:
        scale = transform.get("scale", scale)
        bias = transform.get("bias", bias)
    if (scale is None) == (bias is None):
        raise ValueError("give exactly one of scale or bias")
    if scale is not None:
        c = float(scale)
        return ScoreField(lambda x, t: c * base.field(x, t),
                          lambda x, t: c * base.div(x, t),
                          base.dim, "scaled", base.measure)
    b = np.asarray(bias, dtype=float).reshape(-1)
    if b.shape[0] != base.dim:
        raise ValueError(f"bias of length {b.shape[0]} for dimension {base.dim}")
    return ScoreField(lambda x, t: base.field(x, t) + b, base.div,
                      base.dim, "biased", base.measure)


def li_yau_margin(sf: ScoreField, x, t, d: int | None = None):
    """Signed margin div s + d/(2t); nonnegative for exact heat-flow scores."""
    d = sf.dim if d is None else d
    xb, single = as_batch(x, sf.dim)
    tt = check_time(t, xb.shape[0])
    out = sf.div(xb, t) + d / (2.0 * tt)
    return float(out[0]) if single else out
