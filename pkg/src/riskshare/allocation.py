"""The five parametrized capital-allocation families.

Top-down: optimization with squared or absolute penalties (aggregate capital
supplied externally) and the Euler principle driven by a distortion family.
Bottom-up: weighted risk allocation (size-biased, Esscher or tabulated
weights) and the holistic principle, whose aggregate capitals emerge from the
allocations themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .distortion import DistortionFamily, distortion_risk_measure
from .empirical import (
    BinnedConditionalMean,
    EmpiricalDistribution,
    alpha_mixed_inverse_root,
)
from .scenario import ScenarioSet

__all__ = [
    "Physical",
    "TailIndicator",
    "WeightFunction",
    "PreferenceSpec",
    "OptSquared",
    "OptAbsolute",
    "EulerDistortion",
    "WeightedRisk",
    "Holistic",
    "AllocationFamily",
    "WeightTable",
    "preference_mean",
    "tail_preference_mean",
    "tail_means_at",
    "opt_squared_allocate",
    "opt_absolute_allocate",
    "euler_distortion_allocate",
    "weighted_allocate",
    "holistic_allocate",
    "weighted_mlr_check",
    "MlrReport",
    "holistic_betas",
]

_BETA_SUM_TOL = 1e-12
_WEIGHT_MEAN_TOL = 1e-10


# ---------------------------------------------------------------------------
# preference measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Physical:
    """Real-world measure: plain empirical expectations."""

    kind: str = "physical"


@dataclass(frozen=True)
class TailIndicator:
    """Tail preference above the unit's own quantile.

    ``level`` is a fixed probability, or None to use the running parameter
    theta ("use theta"), making the preference mean the unit's TVaR at theta.
    """

    level: float | None = None
    kind: str = "tail_indicator"

    def __post_init__(self) -> None:
        if self.level is not None and not 0.0 <= self.level < 1.0:
            raise ValueError("tail level must be in [0, 1)")


@dataclass(frozen=True)
class WeightFunction:
    """Non-negative weight on the unit's own loss, mean-normalized."""

    fn: Callable[[np.ndarray], np.ndarray]
    kind: str = "weight_function"

    def weights(self, x: np.ndarray) -> np.ndarray:
        w = np.asarray(self.fn(x), dtype=float)
        if np.any(w < 0):
            raise ValueError("preference weights must be non-negative")
        mean = w.mean()
        if not np.isfinite(mean) or mean <= 0:
            raise ValueError("preference weights have zero or non-finite mass")
        w = w / mean
        if abs(w.mean() - 1.0) > _WEIGHT_MEAN_TOL:
            raise ValueError("weight normalization failed")
        return w


PreferenceSpec = Physical | TailIndicator | WeightFunction


def tail_means_at(x: np.ndarray, levels) -> np.ndarray:
    """Empirical TVaR of a sample at one or many levels (exact order-statistic
    average with a fractional boundary atom); level 1 returns the maximum."""
    lv = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any(lv < 0.0) or np.any(lv > 1.0):
        raise ValueError("tail level must be in [0, 1]")
    desc = np.sort(np.asarray(x, dtype=float))[::-1]
    n = desc.size
    csum = np.concatenate([[0.0], np.cumsum(desc)])
    c = (1.0 - lv) * n
    k = np.clip(np.floor(c).astype(int), 0, n)
    frac = c - k
    total = csum[k] + np.where(k < n, frac * desc[np.minimum(k, n - 1)], 0.0)
    out = np.where(c > 0, total / np.maximum(c, 1e-300), desc[0])
    return out if np.ndim(levels) else float(out[0])


def tail_preference_mean(scen: ScenarioSet, unit: int, level: float) -> float:
    """Tail mean of unit i above its level-quantile (empirical TVaR)."""
    return float(tail_means_at(scen.unit(unit), level))


def preference_mean(pref: PreferenceSpec, x: np.ndarray, theta: float | None = None) -> float:
    """Expectation of the unit's loss under its preference measure."""
    if isinstance(pref, Physical):
        return float(np.mean(x))
    if isinstance(pref, TailIndicator):
        level = pref.level
        if level is None:
            if theta is None:
                raise ValueError("theta-linked tail preference needs the running theta")
            level = float(np.clip(theta, 0.0, 1.0))
        return float(tail_means_at(x, level))
    w = pref.weights(np.asarray(x, dtype=float))
    return float(np.mean(x * w))


def _preference_distribution(pref: PreferenceSpec, x: np.ndarray) -> EmpiricalDistribution:
    """Distribution of a unit's loss under its preference measure."""
    x = np.asarray(x, dtype=float)
    if isinstance(pref, Physical):
        return EmpiricalDistribution.from_sample(x)
    if isinstance(pref, TailIndicator):
        if pref.level is None:
            raise ValueError("absolute-penalty allocation requires theta-free preferences")
        if pref.level <= 0.0:
            return EmpiricalDistribution.from_sample(x)
        q = np.quantile(x, pref.level, method="inverted_cdf")
        tail = x[x > q]
        if tail.size == 0:
            tail = np.array([x.max()])
        return EmpiricalDistribution.from_sample(tail)
    w = pref.weights(x)
    keep = w > 0
    return EmpiricalDistribution.from_sample(x[keep], weights=w[keep])


# ---------------------------------------------------------------------------
# family definitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptSquared:
    """Squared-penalty optimization family (top-down).

    ``betas`` are relative exposures: a tuple of constants summing to one, or
    a callable theta -> array for parameter-linked exposures.
    """

    betas: tuple[float, ...] | Callable[[float], np.ndarray]
    preferences: tuple[PreferenceSpec, ...]
    kind: str = "opt_squared"

    def __post_init__(self) -> None:
        if isinstance(self.betas, tuple):
            b = np.asarray(self.betas, dtype=float)
            if np.any(b < 0) or abs(b.sum() - 1.0) > _BETA_SUM_TOL:
                raise ValueError("constant betas must be non-negative and sum to 1")
            if b.size != len(self.preferences):
                raise ValueError("betas and preferences must have matching length")

    def betas_at(self, theta: float) -> np.ndarray:
        if isinstance(self.betas, tuple):
            return np.asarray(self.betas, dtype=float)
        b = np.asarray(self.betas(theta), dtype=float)
        if np.any(b < 0) or abs(b.sum() - 1.0) > 1e-9:
            raise ValueError(f"betas at theta={theta} must be non-negative and sum to 1")
        return b

    @property
    def theta_free(self) -> bool:
        return isinstance(self.betas, tuple) and all(
            isinstance(p, Physical) or (isinstance(p, TailIndicator) and p.level is not None)
            or isinstance(p, WeightFunction) for p in self.preferences)


@dataclass(frozen=True)
class OptAbsolute:
    """Absolute-penalty optimization family (theta-free preferences only)."""

    preferences: tuple[PreferenceSpec, ...]
    kind: str = "opt_absolute"

    def __post_init__(self) -> None:
        for p in self.preferences:
            if isinstance(p, TailIndicator) and p.level is None:
                raise ValueError("absolute-penalty preferences must not depend on theta")


@dataclass(frozen=True)
class EulerDistortion:
    """Euler principle with a distortion risk-measure aggregate (top-down)."""

    distortion: DistortionFamily
    kind: str = "euler_distortion"


@dataclass(frozen=True)
class WeightTable:
    """Tabulated weight function w_theta(s) on a (theta, s) grid."""

    theta_grid: tuple[float, ...]
    s_grid: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]

    def log_weights(self, theta: float, s: np.ndarray) -> np.ndarray:
        th = np.asarray(self.theta_grid)
        sg = np.asarray(self.s_grid)
        tb = np.asarray(self.values, dtype=float)
        if np.any(tb <= 0):
            raise ValueError("tabulated weights must be positive")
        j = int(np.clip(np.searchsorted(th, theta, side="right") - 1, 0, th.size - 2))
        w = 0.0 if th[j + 1] == th[j] else (theta - th[j]) / (th[j + 1] - th[j])
        row = (1.0 - w) * np.log(tb[j]) + w * np.log(tb[j + 1])
        return np.interp(s, sg, row)


@dataclass(frozen=True)
class WeightedRisk:
    """Weighted risk allocation (bottom-up): size-biased s^theta, Esscher
    e^{theta s}, or a custom tabulated weight family."""

    weight: str | WeightTable = "size_biased"
    kind: str = "weighted_risk"

    def __post_init__(self) -> None:
        if isinstance(self.weight, str) and self.weight not in ("size_biased", "esscher"):
            raise ValueError("weight must be 'size_biased', 'esscher' or a WeightTable")

    def log_weights(self, theta: float, s: np.ndarray) -> np.ndarray:
        if isinstance(self.weight, WeightTable):
            return self.weight.log_weights(theta, s)
        if self.weight == "size_biased":
            if np.any(s <= 0.0):
                raise ValueError("size-biased weights require strictly positive aggregates")
            return theta * np.log(s)
        return theta * s

    def prepare_log_weights(self, s: np.ndarray) -> Callable[[float], np.ndarray]:
        """theta -> log w_theta(s) with the s-dependent transform cached."""
        if isinstance(self.weight, WeightTable):
            table = self.weight
            return lambda theta: table.log_weights(theta, s)
        if self.weight == "size_biased":
            if np.any(s <= 0.0):
                raise ValueError("size-biased weights require strictly positive aggregates")
            ls = np.log(s)
            return lambda theta: theta * ls
        return lambda theta: theta * s


@dataclass(frozen=True)
class Holistic:
    """Holistic principle: joint quadratic penalties on units and aggregate,
    with distortion-weighted means as the parametrized risk functionals."""

    gamma: float
    gammas: tuple[float, ...]
    aggregate_distortion: DistortionFamily
    unit_distortions: tuple[DistortionFamily, ...]
    kind: str = "holistic"

    def __post_init__(self) -> None:
        if self.gamma <= 0 or any(g <= 0 for g in self.gammas):
            raise ValueError("holistic weights must be strictly positive")
        if len(self.unit_distortions) != len(self.gammas):
            raise ValueError("one distortion family per unit required")


AllocationFamily = OptSquared | OptAbsolute | EulerDistortion | WeightedRisk | Holistic


def holistic_betas(gamma: float, gammas: Sequence[float]) -> tuple[np.ndarray, float]:
    """Mixing weights (beta_i, beta): inverse penalties normalized so that
    beta + sum(beta_i) = 1."""
    inv = np.asarray([1.0 / g for g in gammas], dtype=float)
    denom = 1.0 / gamma + inv.sum()
    return inv / denom, (1.0 / gamma) / denom


# ---------------------------------------------------------------------------
# allocation operations
# ---------------------------------------------------------------------------

def opt_squared_allocate(family: OptSquared, theta: float, scen: ScenarioSet,
                         k_agg: float) -> tuple[np.ndarray, float]:
    """Squared-penalty allocation at theta for an exogenous aggregate capital:
    K_i = E^{Q_i}[X_i] + beta_i * (K - sum_j E^{Q_j}[X_j])."""
    betas = family.betas_at(theta)
    means = np.array([preference_mean(p, scen.unit(i), theta)
                      for i, p in enumerate(family.preferences)])
    if not np.all(np.isfinite(means)):
        raise ValueError("preference expectations must be finite")
    k_vec = means + betas * (k_agg - means.sum())
    return k_vec, float(k_agg)


def opt_absolute_allocate(family: OptAbsolute, s: float,
                          scen: ScenarioSet) -> np.ndarray:
    """Absolute-penalty allocation: per-unit alpha-mixed quantiles of the
    comonotonic sum evaluated at F(s), which sum exactly to s."""
    margins = [_preference_distribution(p, scen.unit(i))
               for i, p in enumerate(family.preferences)]

    def comono(u: float) -> float:
        return float(sum(m.quantile(u, "left") for m in margins))

    root = alpha_mixed_inverse_root(comono, s)
    lo = np.array([m.quantile(root.u_lo, "left") for m in margins])
    hi = np.array([m.quantile(root.u_hi, "left") for m in margins])
    return root.alpha * lo + (1.0 - root.alpha) * hi


def euler_distortion_allocate(family: EulerDistortion, theta: float, scen: ScenarioSet,
                              cond: BinnedConditionalMean) -> np.ndarray:
    """Euler allocation under a distortion aggregate: Stieltjes sum of the
    estimated conditional means over the sorted aggregate atoms."""
    dist = EmpiricalDistribution.from_sample(scen.aggregate)
    fam = family.distortion
    if theta < fam.lower or theta > fam.upper:
        raise ValueError("theta outside the distortion parameter interval")
    if fam.endpoint_limits and theta in (fam.lower, fam.upper):
        edge = dist.min if theta == fam.lower else dist.max
        return cond.evaluate(edge, mode="linear")
    vals, surv_before, surv_after = _sorted_survivals(dist)
    dmass = fam.eval(theta, surv_before) - fam.eval(theta, surv_after)
    m = cond.evaluate(vals, mode="linear")
    return m.T @ dmass


def _sorted_survivals(dist: EmpiricalDistribution):
    vals, start = np.unique(dist.values, return_index=True)
    cum = dist.cumw[np.concatenate([start[1:] - 1, [dist.size - 1]])]
    surv_after = 1.0 - cum
    surv_before = np.concatenate([[1.0], surv_after[:-1]])
    return vals, surv_before, surv_after


def weighted_allocate(family: WeightedRisk, theta: float,
                      scen: ScenarioSet) -> tuple[np.ndarray, float]:
    """Weighted risk allocation K_i = E[X_i w(S)] / E[w(S)] and its endogenous
    aggregate; weights are computed in log space with a max shift."""
    s = scen.aggregate
    logw = family.log_weights(theta, s)
    w = np.exp(logw - logw.max())
    denom = w.mean()
    if not np.isfinite(denom) or denom <= 0:
        raise ValueError(f"weight mass vanished or overflowed at theta={theta}")
    k_vec = (scen.losses * w[:, None]).mean(axis=0) / denom
    k_agg = float((s * w).mean() / denom)
    return k_vec, k_agg


def holistic_allocate(family: Holistic, theta: float,
                      scen: ScenarioSet) -> tuple[np.ndarray, float]:
    """Holistic allocation: distortion-weighted unit and aggregate means mixed
    through the inverse penalty weights; beta + sum(beta_i) = 1 exactly."""
    dist_s = EmpiricalDistribution.from_sample(scen.aggregate)
    rho_s = distortion_risk_measure(family.aggregate_distortion, theta, dist_s)
    rho_units = np.array([
        distortion_risk_measure(fam_i, theta, EmpiricalDistribution.from_sample(scen.unit(i)))
        for i, fam_i in enumerate(family.unit_distortions)])
    betas, beta = holistic_betas(family.gamma, family.gammas)
    gap = rho_units.sum() - rho_s
    k_vec = rho_units - betas * gap
    k_agg = float(rho_s + beta * gap)
    return k_vec, k_agg


@dataclass(frozen=True)
class MlrReport:
    passed: bool
    n_checked: int
    n_violations: int
    worst_violation: float
    note: str = ""


def weighted_mlr_check(weight, theta_grid, s_grid, tol: float = 1e-9) -> MlrReport:
    """Grid check of the monotone likelihood ratio property of a weight family:
    log w must be supermodular in (theta, s), checked on adjacent grid cells
    (which telescopes to arbitrary pairs)."""
    family = weight if isinstance(weight, WeightedRisk) else WeightedRisk(weight=weight)
    th = np.asarray(theta_grid, dtype=float)
    sg = np.asarray(s_grid, dtype=float)
    note = ""
    if isinstance(family.weight, str) and family.weight == "size_biased":
        keep = sg > 0
        if not keep.all():
            note = "nonpositive s dropped (log-ratio comparison)"
            sg = sg[keep]
    logw = np.array([family.log_weights(t, sg) for t in th])
    d2 = np.diff(np.diff(logw, axis=0), axis=1)
    violations = d2 < -tol
    worst = float(-d2.min()) if d2.size else 0.0
    return MlrReport(passed=bool(not violations.any()), n_checked=int(d2.size),
                     n_violations=int(violations.sum()),
                     worst_violation=max(worst, 0.0), note=note)
