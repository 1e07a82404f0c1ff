"""Empirical distribution machinery: left/right quantiles, binned conditional
means given the aggregate, comonotonic-sum quantiles and the alpha-mixed
inverse used to hit an exact target on flat or jumping quantile segments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .scenario import MarginalSpec, ScenarioSet, marginal_quantile

__all__ = [
    "EmpiricalDistribution",
    "empirical_quantile",
    "BinnedConditionalMean",
    "conditional_mean_given_sum",
    "comonotonic_sum_quantile",
    "AlphaMixRoot",
    "alpha_mixed_inverse_root",
]

_P_SNAP = 1e-12
_BISECT_UTOL = 1e-10
_BISECT_MAX_ITER = 60
_ALPHA_EQ_TOL = 1e-9


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Sorted sample values with (optionally non-uniform) probability weights."""

    values: np.ndarray
    weights: np.ndarray
    cumw: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.values, self.weights, self.cumw):
            arr.setflags(write=False)

    @classmethod
    def from_sample(cls, values, weights=None) -> "EmpiricalDistribution":
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("empirical distribution requires at least one value")
        order = np.argsort(v, kind="stable")
        v = np.ascontiguousarray(v[order])
        if weights is None:
            m = v.size
            w = np.full(m, 1.0 / m)
            cum = np.arange(1, m + 1, dtype=float) / m
        else:
            w = np.asarray(weights, dtype=float).ravel()[order]
            if np.any(w <= 0):
                raise ValueError("weights must be positive")
            w = w / w.sum()
            cum = np.cumsum(w)
            cum[-1] = 1.0
        return cls(values=v, weights=w, cumw=cum)

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def min(self) -> float:
        return float(self.values[0])

    @property
    def max(self) -> float:
        return float(self.values[-1])

    def mean(self) -> float:
        return float(self.values @ self.weights)

    def quantile(self, p, side: str = "left"):
        """Left inverse inf{x : F(x) >= p} or right inverse sup{x : F(x) <= p}."""
        p_arr = np.asarray(p, dtype=float)
        if np.any(p_arr < 0.0) or np.any(p_arr > 1.0):
            raise ValueError("quantile level must be in [0, 1]")
        if side == "left":
            idx = np.searchsorted(self.cumw, p_arr - _P_SNAP, side="left")
        elif side == "right":
            idx = np.searchsorted(self.cumw, p_arr + _P_SNAP, side="right")
        else:
            raise ValueError("side must be 'left' or 'right'")
        out = self.values[np.clip(idx, 0, self.size - 1)]
        return out if np.ndim(p) else float(out)

    def cdf(self, x):
        """P(X <= x), vectorized."""
        x_arr = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.values, x_arr, side="right")
        cum = np.concatenate([[0.0], self.cumw])
        out = cum[idx]
        return out if np.ndim(x) else float(out)


def empirical_quantile(dist: EmpiricalDistribution, p, side: str = "left"):
    """Functional form of :meth:`EmpiricalDistribution.quantile`."""
    return dist.quantile(p, side=side)


@dataclass(frozen=True)
class BinnedConditionalMean:
    """Equal-count-binned estimate of the per-unit means given the aggregate.

    ``evaluate`` supports two modes: ``constant`` returns the per-bin means,
    ``linear`` adds the within-bin least-squares slope so that the per-unit
    values sum exactly to the query point (the slopes sum to one per bin).
    """

    bin_lo: np.ndarray
    bin_hi: np.ndarray
    s_mean: np.ndarray
    x_means: np.ndarray
    slopes: np.ndarray
    counts: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.s_mean.size

    @property
    def n_units(self) -> int:
        return self.x_means.shape[1]

    def _locate(self, s: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.bin_lo, s, side="right") - 1, 0, self.n_bins - 1)

    def evaluate(self, s, mode: str = "constant") -> np.ndarray:
        """Per-unit conditional means at aggregate level(s) s, shape (..., n)."""
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        k = self._locate(s_arr)
        out = self.x_means[k].copy()
        if mode == "linear":
            # constant extrapolation outside the observed aggregate range
            inside = (s_arr >= self.bin_lo[0]) & (s_arr <= self.bin_hi[-1])
            delta = np.where(inside, s_arr - self.s_mean[k], 0.0)
            out += self.slopes[k] * delta[:, None]
        elif mode != "constant":
            raise ValueError("mode must be 'constant' or 'linear'")
        return out if np.ndim(s) else out[0]

    def to_rows(self) -> np.ndarray:
        """Rows (bin_lo, bin_hi, s_mean, x1_mean..xn_mean, count) for CSV export."""
        return np.column_stack([self.bin_lo, self.bin_hi, self.s_mean,
                                self.x_means, self.counts.astype(float)])


def _tie_aware_boundaries(s_sorted: np.ndarray, bins: int) -> np.ndarray:
    n = s_sorted.size
    targets = np.round(np.linspace(0, n, bins + 1)).astype(int)
    bounds = [0]
    for t in targets[1:-1]:
        b = int(t)
        if 0 < b < n and s_sorted[b] == s_sorted[b - 1]:
            # never split a run of tied aggregates: snap to its nearer edge
            lo = b
            while lo > 0 and s_sorted[lo] == s_sorted[lo - 1]:
                lo -= 1
            hi = b
            while hi < n and s_sorted[hi] == s_sorted[hi - 1]:
                hi += 1
            b = lo if (b - lo) <= (hi - b) else hi
        if bounds[-1] < b < n:
            bounds.append(b)
    bounds.append(n)
    return np.asarray(bounds, dtype=int)


def conditional_mean_given_sum(scen: ScenarioSet, bins: int) -> BinnedConditionalMean:
    """Estimate E[X_i | S = s] by equal-count binning on the sorted aggregate."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    n = scen.n_scenarios
    if n < 10 * bins:
        raise ValueError(f"need at least {10 * bins} scenarios for {bins} bins")
    order = np.argsort(scen.aggregate, kind="stable")
    s_sorted = scen.aggregate[order]
    x_sorted = scen.losses[order]
    bounds = _tie_aware_boundaries(s_sorted, bins)
    starts = bounds[:-1]
    counts = np.diff(bounds)

    s_sum = np.add.reduceat(s_sorted, starts)
    x_sum = np.add.reduceat(x_sorted, starts, axis=0)
    s_mean = s_sum / counts
    x_means = x_sum / counts[:, None]

    # per-bin least-squares slopes of X_i on S; they sum to 1 across units
    bin_of_row = np.repeat(np.arange(counts.size), counts)
    s_centered = s_sorted - s_mean[bin_of_row]
    var_s = np.add.reduceat(s_centered * s_centered, starts)
    cov_sx = np.add.reduceat(x_sorted * s_centered[:, None], starts, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = 1e-24 * (1.0 + s_mean ** 2) * counts
        slopes = np.where(var_s[:, None] > scale[:, None],
                          cov_sx / var_s[:, None], 0.0)

    bin_lo = s_sorted[starts]
    bin_hi = np.concatenate([bin_lo[1:], [s_sorted[-1]]])
    return BinnedConditionalMean(bin_lo=bin_lo, bin_hi=bin_hi, s_mean=s_mean,
                                 x_means=x_means, slopes=slopes,
                                 counts=counts)


def _component_quantile(component, u, side: str = "left"):
    if isinstance(component, MarginalSpec):
        if side == "right" and component.kind == "discrete":
            atoms = np.asarray(component.atoms, dtype=float)
            cum = np.cumsum(np.asarray(component.probs, dtype=float))
            idx = np.searchsorted(cum, np.asarray(u, dtype=float) + _P_SNAP, side="right")
            out = atoms[np.clip(idx, 0, atoms.size - 1)]
            return out if np.ndim(u) else float(out)
        return marginal_quantile(component, u)
    return component.quantile(u, side=side)


def comonotonic_sum_quantile(marginals: Sequence, u):
    """Quantile of the comonotonic sum: sum of component left quantiles."""
    u_arr = np.asarray(u, dtype=float)
    total = np.zeros_like(u_arr, dtype=float)
    for comp in marginals:
        total = total + np.asarray(_component_quantile(comp, u_arr), dtype=float)
    return total if np.ndim(u) else float(total)


@dataclass(frozen=True)
class AlphaMixRoot:
    """Solution of the alpha-mixed inverse equation at a target sum value."""

    u: float
    alpha: float
    u_lo: float
    u_hi: float
    x_lo: float
    x_hi: float

    def mixed_value(self) -> float:
        return self.alpha * self.x_lo + (1.0 - self.alpha) * self.x_hi


def alpha_mixed_inverse_root(comono_quantile: Callable[[float], float], s: float,
                             u_tol: float = _BISECT_UTOL,
                             max_iter: int = _BISECT_MAX_ITER) -> AlphaMixRoot:
    """Find u* = F(s) of the comonotonic sum and the mixing weight alpha.

    ``comono_quantile`` is the (left-inverse) quantile of the comonotonic sum.
    Returns alpha such that alpha*F^{-1}(u*) + (1-alpha)*F^{-1+}(u*) = s; on
    continuity points alpha is 1 by convention.
    """
    s = float(s)
    q0 = float(comono_quantile(0.0))
    q1 = float(comono_quantile(1.0))
    tol = _ALPHA_EQ_TOL * (1.0 + abs(s))
    if s < q0 - tol or s > q1 + tol:
        raise ValueError(f"target {s} outside comonotonic-sum range [{q0}, {q1}]")
    if s >= q1:
        return AlphaMixRoot(u=1.0, alpha=1.0, u_lo=1.0, u_hi=1.0, x_lo=q1, x_hi=q1)
    # F(s) may still be positive at the bottom when the lowest atom has mass
    s = max(s, q0)
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        if hi - lo <= u_tol:
            break
        mid = 0.5 * (lo + hi)
        if float(comono_quantile(mid)) <= s:
            lo = mid
        else:
            hi = mid
    x_lo = float(comono_quantile(lo))
    x_hi = float(comono_quantile(hi))
    if x_hi - x_lo <= tol:
        return AlphaMixRoot(u=lo, alpha=1.0, u_lo=lo, u_hi=hi, x_lo=x_lo, x_hi=x_hi)
    alpha = float(np.clip((x_hi - s) / (x_hi - x_lo), 0.0, 1.0))
    return AlphaMixRoot(u=lo, alpha=alpha, u_lo=lo, u_hi=hi, x_lo=x_lo, x_hi=x_hi)
