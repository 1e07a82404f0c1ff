"""Aggregate-capital curves, right-inverse policies and parameter sampling.

A capital curve tabulates a monotone map theta -> K(theta) on an adaptively
refined grid (cells are split until their K-increment is resolved), keeps the
underlying evaluator for local root-finding, and supports three measurable
right-inverse selections: infimum preimage, supremum preimage, and the
CDF-matched inverse specific to the quantile family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .empirical import EmpiricalDistribution
from .scenario import ScenarioSet

__all__ = [
    "CapitalCurve",
    "InversePolicy",
    "SurjectivityError",
    "build_capital_curve",
    "right_inverse",
    "sample_parameter",
    "check_surjectivity",
    "SurjectivityReport",
]

_MIN_GRID = 200
_CLAMP_REL = 1e-6
_RESID_REL = 1e-9
_MONO_TOL = 1e-12


class SurjectivityError(ValueError):
    """Raised when a target value has no parameter preimage on the curve."""


@dataclass
class CapitalCurve:
    """Sampled monotone-checked map theta -> K(theta) plus its evaluator."""

    thetas: np.ndarray
    values: np.ndarray
    monotone: bool
    continuous: bool
    k_eval: Callable[[float], float] | None = None
    label: str = ""

    def __post_init__(self) -> None:
        if self.thetas.size != self.values.size or self.thetas.size < 2:
            raise ValueError("curve needs matching theta and value grids")
        if np.any(np.diff(self.thetas) <= 0):
            raise ValueError("theta grid must be strictly increasing")

    @property
    def k_min(self) -> float:
        return float(self.values[0]) if self.monotone else float(self.values.min())

    @property
    def k_max(self) -> float:
        return float(self.values[-1]) if self.monotone else float(self.values.max())

    @property
    def interval(self) -> tuple[float, float]:
        return (float(self.thetas[0]), float(self.thetas[-1]))

    def to_rows(self) -> np.ndarray:
        return np.column_stack([self.thetas, self.values])


def build_capital_curve(k_eval: Callable[[float], float], interval: tuple[float, float],
                        grid_size: int = 2048, label: str = "",
                        jump_tol: float | None = None) -> CapitalCurve:
    """Tabulate K on [a, b], refining cells until K-increments are resolved.

    Starts from a uniform grid and bisects any cell whose K-increment exceeds
    the per-cell budget (range / grid_size), until the budget is met, the cell
    width hits the resolution floor (a genuine jump), or a total-size cap.
    """
    a, b = float(interval[0]), float(interval[1])
    if not a < b:
        raise ValueError("interval must satisfy a < b")
    if grid_size < _MIN_GRID:
        raise ValueError(f"grid_size must be >= {_MIN_GRID}")
    thetas = np.linspace(a, b, min(grid_size, 257))
    values = np.array([float(k_eval(t)) for t in thetas])
    if not np.all(np.isfinite(values)):
        raise ValueError("capital evaluator returned a non-finite value")

    width_floor = (b - a) * 1e-11
    max_points = 2 * grid_size + 64
    k_range = float(values.max() - values.min())
    target = k_range / grid_size if k_range > 0 else np.inf
    while thetas.size < max_points and np.isfinite(target):
        widths = np.diff(thetas)
        increments = np.abs(np.diff(values))
        hot = np.nonzero((increments > target) & (widths > width_floor))[0]
        if hot.size == 0:
            break
        hot = hot[: max_points - thetas.size]
        mids = 0.5 * (thetas[hot] + thetas[hot + 1])
        mid_vals = np.array([float(k_eval(t)) for t in mids])
        if not np.all(np.isfinite(mid_vals)):
            raise ValueError("capital evaluator returned a non-finite value")
        thetas = np.insert(thetas, hot + 1, mids)
        values = np.insert(values, hot + 1, mid_vals)

    scale = 1.0 + float(np.abs(values).max())
    monotone = bool(np.all(np.diff(values) >= -_MONO_TOL * scale))
    if jump_tol is None:
        jump_tol = max(1e-9 * max(k_range, 1.0), 1e-12)
    jumps = (np.diff(thetas) <= width_floor) & (np.abs(np.diff(values)) > jump_tol)
    return CapitalCurve(thetas=thetas, values=values, monotone=monotone,
                        continuous=not bool(np.any(jumps)), k_eval=k_eval, label=label)


@dataclass(frozen=True)
class InversePolicy:
    """Selection rule among the preimages of a target capital value."""

    kind: str
    cdf: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def infimum(cls) -> "InversePolicy":
        return cls(kind="inf")

    @classmethod
    def supremum(cls) -> "InversePolicy":
        return cls(kind="sup")

    @classmethod
    def cdf_matched(cls, dist: EmpiricalDistribution) -> "InversePolicy":
        # valid only for quantile-family curves, where K^{-1+}(s) = F_S(s)
        return cls(kind="cdf", cdf=dist.cdf)


def _clamp_tol(x: float) -> float:
    return _CLAMP_REL * (1.0 + abs(x))


def _locate_cells(curve: CapitalCurve, s: np.ndarray, side: str) -> np.ndarray:
    """Bracketing cell index i such that the preimage lies in [theta_i, theta_{i+1}]."""
    if side == "inf":
        hi = np.searchsorted(curve.values, s, side="left")
        return np.clip(hi - 1, 0, curve.values.size - 2)
    lo = np.searchsorted(curve.values, s, side="right") - 1
    return np.clip(lo, 0, curve.values.size - 2)


def _refine_cell(k_eval, th_lo, th_hi, k_lo, k_hi, s, side: str,
                 res_tol: float, max_iter: int = 80):
    """Bisect inside one grid cell keeping the policy-appropriate bracket."""
    for _ in range(max_iter):
        if k_hi - k_lo <= res_tol or th_hi - th_lo <= abs(th_hi) * 1e-15 + 1e-300:
            break
        mid = 0.5 * (th_lo + th_hi)
        k_mid = float(k_eval(mid))
        take_hi = k_mid >= s if side == "inf" else k_mid > s
        if take_hi:
            th_hi, k_hi = mid, k_mid
        else:
            th_lo, k_lo = mid, k_mid
    return th_lo, th_hi, k_lo, k_hi


def _interp_theta(th_lo, th_hi, k_lo, k_hi, s):
    if k_hi <= k_lo:
        return th_lo
    frac = np.clip((s - k_lo) / (k_hi - k_lo), 0.0, 1.0)
    return th_lo + frac * (th_hi - th_lo)


def right_inverse(curve: CapitalCurve, s: float, policy: InversePolicy | None = None,
                  abs_tol: float | None = None, rel_tol: float = _RESID_REL) -> float:
    """Parameter theta with K(theta) = s within tolerance.

    On plateaus the infimum policy returns the smallest bracketed theta and the
    supremum policy the largest; the CDF-matched policy returns F_S(s).
    Values within the clamp tolerance outside the range map to the endpoints;
    anything farther signals a surjectivity failure.
    """
    if policy is None:
        policy = InversePolicy.infimum()
    if policy.kind == "cdf":
        if policy.cdf is None:
            raise ValueError("cdf-matched policy requires a reference distribution")
        theta = float(policy.cdf(s))
        _probe_cdf_policy(curve, np.asarray([s], dtype=float), np.asarray([theta]))
        return theta
    if not curve.monotone:
        raise ValueError("right inverse requires a monotone capital curve")
    s = float(s)
    k_min, k_max = curve.k_min, curve.k_max
    if s < k_min:
        if s < k_min - _clamp_tol(k_min):
            raise SurjectivityError(f"target {s} below curve range [{k_min}, {k_max}]")
        return float(curve.thetas[0])
    if s > k_max:
        if s > k_max + _clamp_tol(k_max):
            raise SurjectivityError(f"target {s} above curve range [{k_min}, {k_max}]")
        return float(curve.thetas[-1])

    cell = int(_locate_cells(curve, np.asarray([s]), policy.kind)[0])
    th_lo, th_hi = float(curve.thetas[cell]), float(curve.thetas[cell + 1])
    k_lo, k_hi = float(curve.values[cell]), float(curve.values[cell + 1])
    res_tol = (abs_tol if abs_tol is not None else 0.0) + rel_tol * (1.0 + abs(s))
    if curve.k_eval is not None and k_hi - k_lo > res_tol:
        th_lo, th_hi, k_lo, k_hi = _refine_cell(curve.k_eval, th_lo, th_hi,
                                                k_lo, k_hi, s, policy.kind, res_tol)
    if k_hi - k_lo <= res_tol:
        return th_hi if policy.kind == "inf" and k_lo < s else th_lo
    return float(_interp_theta(th_lo, th_hi, k_lo, k_hi, s))


def sample_parameter(curve: CapitalCurve, scen: ScenarioSet,
                     policy: InversePolicy | None = None, refine: bool = True,
                     rel_tol: float = _RESID_REL) -> np.ndarray:
    """Per-scenario parameter Theta = K^{-1+}(S), vectorized over the set.

    With ``refine`` the bracketing cells are subdivided with the curve's
    evaluator until each sub-cell's K-increment meets the residual tolerance,
    guaranteeing |K(Theta_k) - S_k| <= tol; without it, Theta interpolates on
    the tabulated grid (the grid resolution bounds the residual instead).
    """
    if policy is None:
        policy = InversePolicy.infimum()
    s = scen.aggregate
    if policy.kind == "cdf":
        if policy.cdf is None:
            raise ValueError("cdf-matched policy requires a reference distribution")
        theta = np.asarray(policy.cdf(s), dtype=float)
        probe = np.linspace(0, s.size - 1, min(s.size, 64)).astype(int)
        _probe_cdf_policy(curve, s[probe], theta[probe])
        return theta
    if not curve.monotone:
        raise ValueError("parameter sampling requires a monotone capital curve")

    k_min, k_max = curve.k_min, curve.k_max
    bad_low = s < k_min - _clamp_tol(k_min)
    bad_high = s > k_max + _clamp_tol(k_max)
    if np.any(bad_low) or np.any(bad_high):
        idx = int(np.argmax(bad_low | bad_high))
        raise SurjectivityError(
            f"scenario {idx} aggregate {s[idx]} outside curve range [{k_min}, {k_max}]")
    s_clamped = np.clip(s, k_min, k_max)

    cells = _locate_cells(curve, s_clamped, policy.kind)
    if not refine or curve.k_eval is None:
        return _interp_theta_cells(curve, s_clamped, cells)

    theta = np.empty_like(s_clamped)
    res_tols = rel_tol * (1.0 + np.abs(s_clamped))
    order = np.argsort(cells, kind="stable")
    sorted_cells = cells[order]
    starts = np.searchsorted(sorted_cells, np.unique(sorted_cells), side="left")
    stops = np.append(starts[1:], sorted_cells.size)
    width_floor = float(curve.thetas[-1] - curve.thetas[0]) * 1.05e-11
    for a_idx, b_idx in zip(starts, stops):
        idx = order[a_idx:b_idx]
        cell = int(sorted_cells[a_idx])
        sub = idx[np.argsort(s_clamped[idx], kind="stable")]
        _refine_assign(curve.k_eval, theta,
                       float(curve.thetas[cell]), float(curve.thetas[cell + 1]),
                       float(curve.values[cell]), float(curve.values[cell + 1]),
                       s_clamped, res_tols, sub, policy.kind, width_floor)
    # verify against the evaluator; polish any straggler with the scalar
    # bracketed bisection (micro-kinks can fool the chord heuristic)
    for k in range(s_clamped.size):
        if abs(float(curve.k_eval(theta[k])) - s_clamped[k]) > res_tols[k]:
            theta[k] = right_inverse(curve, float(s_clamped[k]), policy,
                                     rel_tol=rel_tol)
    return theta


def _refine_assign(k_eval, theta_out: np.ndarray, th_lo: float, th_hi: float,
                   k_lo: float, k_hi: float, s: np.ndarray, tols: np.ndarray,
                   subset: np.ndarray, side: str, width_floor: float) -> None:
    """Assign parameters for the scenarios bracketed by one cell, splitting the
    bracket only where it still holds scenarios and linear interpolation of
    the inverse does not yet meet the residual tolerance.

    The midpoint's deviation from the linear chord controls the interpolation
    residual; it shrinks geometrically on smooth curves, so only genuine jumps
    recurse to the width floor.
    """
    root_width = th_hi - th_lo
    stack = [(th_lo, th_hi, k_lo, k_hi, subset)]
    while stack:
        a, b, ka, kb, sub = stack.pop()
        if sub.size == 0:
            continue
        # exact bracket-edge hits (step curves evaluate onto the atoms)
        if side == "inf" and s[sub[-1]] == kb:
            first = np.searchsorted(s[sub], kb, side="left")
            theta_out[sub[first:]] = b
            sub = sub[:first]
        elif side == "sup" and s[sub[0]] == ka:
            last = np.searchsorted(s[sub], ka, side="right")
            theta_out[sub[:last]] = a
            sub = sub[last:]
        if sub.size == 0:
            continue
        tol = float(tols[sub].min())
        narrow = b - a <= max(width_floor, abs(b) * 1e-14 + 1e-300)
        if kb - ka <= tol or narrow or k_eval is None:
            _assign_linear(theta_out, a, b, ka, kb, s, sub)
            continue
        m = 0.5 * (a + b)
        km = float(k_eval(m))
        chord_dev = abs(km - 0.5 * (ka + kb))
        if side == "inf":
            cut = np.searchsorted(s[sub], km, side="right")
        else:
            cut = np.searchsorted(s[sub], km, side="left")
        left, right = sub[:cut], sub[cut:]
        if chord_dev <= 0.25 * tol and (b - a) < root_width:
            _assign_linear(theta_out, a, m, ka, km, s, left)
            _assign_linear(theta_out, m, b, km, kb, s, right)
            continue
        stack.append((a, m, ka, km, left))
        stack.append((m, b, km, kb, right))


def _assign_linear(theta_out, a, b, ka, kb, s, subset) -> None:
    if subset.size == 0:
        return
    if kb > ka:
        frac = np.clip((s[subset] - ka) / (kb - ka), 0.0, 1.0)
    else:
        frac = 0.0
    theta_out[subset] = a + frac * (b - a)


def _interp_theta_cells(curve: CapitalCurve, s: np.ndarray, cells: np.ndarray) -> np.ndarray:
    k_lo = curve.values[cells]
    k_hi = curve.values[cells + 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(k_hi > k_lo, (s - k_lo) / (k_hi - k_lo), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    return curve.thetas[cells] + frac * (curve.thetas[cells + 1] - curve.thetas[cells])


def _locate_local(sub_k: np.ndarray, s: np.ndarray, side: str) -> np.ndarray:
    if side == "inf":
        idx = np.searchsorted(sub_k, s, side="left") - 1
    else:
        idx = np.searchsorted(sub_k, s, side="right") - 1
    return np.clip(idx, 0, sub_k.size - 2)


@dataclass(frozen=True)
class SurjectivityReport:
    covers_support: bool
    monotone_or_continuous: bool
    curve_range: tuple[float, float]
    sample_range: tuple[float, float]

    @property
    def passed(self) -> bool:
        return self.covers_support and self.monotone_or_continuous


def check_surjectivity(curve: CapitalCurve, dist: EmpiricalDistribution) -> SurjectivityReport:
    """Whether the sample support sits inside the curve range (with tolerance)."""
    covers = (dist.min >= curve.k_min - _clamp_tol(curve.k_min)
              and dist.max <= curve.k_max + _clamp_tol(curve.k_max))
    return SurjectivityReport(covers_support=bool(covers),
                              monotone_or_continuous=bool(curve.monotone or curve.continuous),
                              curve_range=(curve.k_min, curve.k_max),
                              sample_range=(dist.min, dist.max))
