"""Monte-Carlo estimates of the score-matching training objectives.

All objectives integrate over t in (t_floor, T) and atoms y_k ~ weights,
with the noisy point x = y_k + sqrt(2t) xi ~ G_t(. - y_k). The shared draws
(:class:`Pairs`) make the objectives comparable sample by sample.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .measures import EmpiricalMeasure
from .score import ScoreField

T_FLOOR = 1e-3
OBJECTIVES = ("score-matching", "ddpm", "hyvarinen", "penalized")


@dataclass(frozen=True, eq=False)
class Pairs:
    """Common random draws: atom index k, time t, noise z and noisy point x.

    ``x`` is materialized once and ``z = (x - y_k)/(2t)`` is derived from it,
    so z ~ N(0, I/(2t)) and every objective sees the same points.
    """

    k: np.ndarray
    t: np.ndarray
    z: np.ndarray
    x: np.ndarray
    T: float
    t_floor: float
    seed: object

    def __len__(self) -> int:
        return self.k.shape[0]


def sample_pairs(mu: EmpiricalMeasure, T: float, n: int, seed=0, t_floor: float = T_FLOOR) -> Pairs:
    """Draw k ~ weights, t ~ U(t_floor, T) and x = y_k + sqrt(2t) xi."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 < t_floor < T:
        raise ValueError("need 0 < t_floor < T")
    rng = np.random.default_rng(seed)
    k = rng.choice(mu.size, size=n, p=mu.weights)
    t = rng.uniform(t_floor, T, size=n)
    xi = rng.standard_normal((n, mu.dim))
    y = mu.points[k]
    x = y + np.sqrt(2.0 * t)[:, None] * xi
    z = (x - y) / (2.0 * t)[:, None]
    for a in (k, t, z, x):
        a.setflags(write=False)
    return Pairs(k, t, z, x, float(T), float(t_floor), seed)


@dataclass(frozen=True)
class LossEstimate:
    value: float
    std_error: float
    n_samples: int
    objective: str
    lam: float | None = None
    t_floor: float = T_FLOOR
    seed: object = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        out["n"] = out.pop("n_samples")
        if not isinstance(self.seed, (int, type(None))):
            out["seed"] = repr(self.seed)
        return out


def _sq(a: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, a)


def integrand(objective: str, sf: ScoreField, mu: EmpiricalMeasure, pairs: Pairs,
              lam: float = 0.0) -> np.ndarray:
    """Per-pair integrand of an objective, before the (T - t_floor) factor."""
    s = sf.field(pairs.x, pairs.t)
    if objective == "score-matching":
        target = (mu.points[pairs.k] - pairs.x) / (2.0 * pairs.t)[:, None]
        return _sq(s - target)
    if objective == "ddpm":
        return _sq(s + pairs.z)
    if objective == "hyvarinen":
        return _sq(s) + 2.0 * sf.div(pairs.x, pairs.t)
    if objective == "penalized":
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        sm = integrand("score-matching", sf, mu, pairs)
        div = sf.div(pairs.x, pairs.t)
        return sm + lam * (div * div)
    raise ValueError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")


def estimate(values: np.ndarray, pairs: Pairs, objective: str, lam: float | None = None) -> LossEstimate:
    """Scale a per-pair sample by (T - t_floor) and attach its standard error."""
    scale = pairs.T - pairs.t_floor
    n = values.shape[0]
    se = float(scale * values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    value = float(scale * values.mean())
    if not np.isfinite(value):
        raise FloatingPointError(f"{objective} estimate is not finite")
    return LossEstimate(value, se, n, objective, lam, pairs.t_floor, pairs.seed)


def score_matching_loss(sf: ScoreField, mu: EmpiricalMeasure, T: float, pairs: Pairs) -> LossEstimate:
    """Mean of |s(x, t) - (y_k - x)/(2t)|^2, times (T - t_floor)."""
    _check_horizon(T, pairs)
    return estimate(integrand("score-matching", sf, mu, pairs), pairs, "score-matching")


def ddpm_loss(sf: ScoreField, mu: EmpiricalMeasure, T: float, pairs: Pairs) -> LossEstimate:
    """Mean of |s(2tz + y_k, t) + z|^2, times (T - t_floor)."""
    _check_horizon(T, pairs)
    return estimate(integrand("ddpm", sf, mu, pairs), pairs, "ddpm")


def hyvarinen_loss(sf: ScoreField, mu: EmpiricalMeasure, T: float, pairs: Pairs) -> LossEstimate:
    """Mean of |s|^2 + 2 div s at the noisy points, times (T - t_floor)."""
    _check_horizon(T, pairs)
    return estimate(integrand("hyvarinen", sf, mu, pairs), pairs, "hyvarinen")


def penalized_loss(sf: ScoreField, mu: EmpiricalMeasure, T: float, lam: float, pairs: Pairs) -> LossEstimate:
    """Score matching plus lam * (div s)^2, combined per pair."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    _check_horizon(T, pairs)
    return estimate(integrand("penalized", sf, mu, pairs, lam), pairs, "penalized", float(lam))


def difference_estimate(a: np.ndarray, b: np.ndarray, pairs: Pairs) -> tuple[float, float]:
    """Mean and standard error of (a - b) per pair, scaled like a loss."""
    est = estimate(a - b, pairs, "difference")
    return est.value, est.std_error


def _check_horizon(T: float, pairs: Pairs) -> None:
    if T != pairs.T:
        raise ValueError(f"pairs were drawn for T = {pairs.T}, not {T}")
