"""Parametrized distortion-function families and their risk measures.

A family maps an interval of parameter values to distortion functions
D_theta on [0, 1]; the induced risk measure of an empirical distribution is
evaluated exactly as a Stieltjes sum over the sorted atoms. ``validate_family``
checks on a grid the structural conditions (monotonicity in p and theta,
continuity in theta, endpoint limits) that make the capital curve built from
the family invertible across the whole sample range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .empirical import EmpiricalDistribution

__all__ = [
    "DistortionFamily",
    "distortion_eval",
    "distortion_risk_measure",
    "DistortionValidation",
    "validate_family",
    "load_user_table",
]

_JUMP_TOL = 0.02
_LIMIT_TOL = 0.02


@dataclass(frozen=True)
class DistortionFamily:
    """A parametrized family of distortion functions on a parameter interval.

    ``closed`` marks families (the VaR indicator) whose endpoints belong to
    the interval itself; elsewhere the endpoints are limit values only.
    """

    kind: str
    lower: float = 0.0
    upper: float = 1.0
    closed: bool = False
    theta_grid: tuple[float, ...] | None = None
    p_grid: tuple[float, ...] | None = None
    table: tuple[tuple[float, ...], ...] | None = None

    @classmethod
    def wang(cls) -> "DistortionFamily":
        return cls(kind="wang")

    @classmethod
    def power(cls) -> "DistortionFamily":
        return cls(kind="power")

    @classmethod
    def tvar_dual(cls) -> "DistortionFamily":
        return cls(kind="tvar_dual")

    @classmethod
    def var_indicator(cls) -> "DistortionFamily":
        return cls(kind="var_indicator", closed=True)

    @classmethod
    def user_table(cls, theta_grid, p_grid, table) -> "DistortionFamily":
        th = np.asarray(theta_grid, dtype=float)
        pg = np.asarray(p_grid, dtype=float)
        tb = np.asarray(table, dtype=float)
        if tb.shape != (th.size, pg.size):
            raise ValueError("table shape must be (len(theta_grid), len(p_grid))")
        if np.any(np.diff(th) <= 0) or np.any(np.diff(pg) < 0):
            raise ValueError("grids must be increasing")
        if pg[0] != 0.0 or pg[-1] != 1.0:
            raise ValueError("p grid must span [0, 1]")
        if np.any(np.diff(tb, axis=1) < -1e-12):
            raise ValueError("table rows must be non-decreasing in p")
        if np.any(np.diff(tb, axis=0) < -1e-12):
            raise ValueError("table columns must be non-decreasing in theta")
        if np.any(np.abs(tb[:, 0]) > 1e-12) or np.any(np.abs(tb[:, -1] - 1.0) > 1e-12):
            raise ValueError("table must satisfy D(0) = 0 and D(1) = 1")
        return cls(kind="user_table", lower=float(th[0]), upper=float(th[-1]),
                   closed=True, theta_grid=tuple(th), p_grid=tuple(pg),
                   table=tuple(tuple(r) for r in tb))

    @property
    def interval(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    @property
    def endpoint_limits(self) -> bool:
        """Whether the interval endpoints stand for limit values (the sample
        extremes) rather than ordinary family members. Tabulated families
        evaluate through the table everywhere."""
        return self.kind != "user_table"

    def _check_theta(self, theta: float) -> None:
        lo, hi = self.lower, self.upper
        ok = lo <= theta <= hi if self.closed else lo < theta < hi
        if not ok:
            raise ValueError(f"theta={theta} outside the parameter interval of {self.kind}")

    def eval(self, theta: float, p) -> np.ndarray:
        """Distortion value D_theta(p), vectorized over p in [0, 1]."""
        self._check_theta(theta)
        p_arr = np.asarray(p, dtype=float)
        if self.kind == "wang":
            shift = special.ndtri(1.0 - theta)
            with np.errstate(divide="ignore"):
                out = special.ndtr(special.ndtri(p_arr) - shift)
            out = np.where(p_arr <= 0.0, 0.0, np.where(p_arr >= 1.0, 1.0, out))
        elif self.kind == "power":
            out = p_arr ** ((1.0 - theta) / theta)
        elif self.kind == "tvar_dual":
            if theta <= 0.5:
                # (p - (1 - 2 theta))_+ / (2 theta), written so D(1) = 1 exactly
                out = np.clip((p_arr - 1.0) / (2.0 * theta) + 1.0, 0.0, 1.0)
            else:
                out = np.minimum(p_arr / (2.0 * (1.0 - theta)), 1.0)
        elif self.kind == "var_indicator":
            out = (p_arr > 1.0 - theta).astype(float)
        else:
            out = self._eval_table(theta, p_arr)
        return out if np.ndim(p) else float(out)

    def prepare(self, p) -> "Callable[[float], np.ndarray]":
        """Return theta -> D_theta(p) with the p-dependent transforms cached;
        equal to ``eval`` but avoids recomputing them per theta."""
        p_arr = np.asarray(p, dtype=float)
        if self.kind == "wang":
            with np.errstate(divide="ignore"):
                z = special.ndtri(p_arr)

            def f_wang(theta: float) -> np.ndarray:
                self._check_theta(theta)
                return special.ndtr(z - special.ndtri(1.0 - theta))

            return f_wang
        if self.kind == "power":
            with np.errstate(divide="ignore"):
                lp = np.log(p_arr)

            def f_power(theta: float) -> np.ndarray:
                self._check_theta(theta)
                with np.errstate(under="ignore"):
                    return np.exp(((1.0 - theta) / theta) * lp)

            return f_power
        return lambda theta: np.asarray(self.eval(theta, p_arr), dtype=float)

    def _eval_table(self, theta: float, p_arr: np.ndarray) -> np.ndarray:
        th = np.asarray(self.theta_grid)
        tb = np.asarray(self.table)
        pg = np.asarray(self.p_grid)
        j = np.clip(np.searchsorted(th, theta, side="right") - 1, 0, th.size - 2)
        w = 0.0 if th[j + 1] == th[j] else (theta - th[j]) / (th[j + 1] - th[j])
        row = (1.0 - w) * tb[j] + w * tb[j + 1]
        return np.interp(p_arr, pg, row)

    def to_doc(self) -> dict:
        doc = {"kind": self.kind}
        if self.kind == "user_table":
            doc.update(theta_grid=list(self.theta_grid), p_grid=list(self.p_grid),
                       table=[list(r) for r in self.table])
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "DistortionFamily":
        kind = doc.get("kind")
        if kind == "user_table":
            return cls.user_table(doc["theta_grid"], doc["p_grid"], doc["table"])
        factory = {"wang": cls.wang, "power": cls.power, "tvar_dual": cls.tvar_dual,
                   "var_indicator": cls.var_indicator, "var": cls.var_indicator}.get(kind)
        if factory is None:
            raise ValueError(f"unknown distortion kind: {kind!r}")
        return factory()


def distortion_eval(family: DistortionFamily, theta: float, p):
    """Functional form of :meth:`DistortionFamily.eval`."""
    return family.eval(theta, p)


def _grouped_atoms(dist: EmpiricalDistribution):
    vals, start = np.unique(dist.values, return_index=True)
    cum = dist.cumw[np.concatenate([start[1:] - 1, [dist.size - 1]])]
    surv_after = 1.0 - cum
    surv_before = np.concatenate([[1.0], surv_after[:-1]])
    return vals, surv_before, surv_after


def distortion_risk_measure(family: DistortionFamily, theta: float,
                            dist: EmpiricalDistribution) -> float:
    """Distorted expectation of an empirical distribution (exact Stieltjes sum).

    At the interval endpoints the measure equals its limit values: the sample
    minimum at the lower end, the sample maximum at the upper end.
    """
    if theta < family.lower or theta > family.upper:
        raise ValueError("theta outside the parameter interval")
    if family.endpoint_limits:
        if theta == family.lower:
            return dist.min
        if theta == family.upper:
            return dist.max
    vals, surv_before, surv_after = _grouped_atoms(dist)
    dmass = family.eval(theta, surv_before) - family.eval(theta, surv_after)
    return float(vals @ dmass)


@dataclass(frozen=True)
class DistortionValidation:
    """Grid validation of a family against the invertibility conditions."""

    p_monotone: bool
    theta_monotone: bool
    theta_continuous: bool
    limit_at_lower: bool
    limit_at_upper: bool
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (self.p_monotone and self.theta_monotone and self.theta_continuous
                and self.limit_at_lower and self.limit_at_upper)

    @property
    def failures(self) -> list[str]:
        names = ("p_monotone", "theta_monotone", "theta_continuous",
                 "limit_at_lower", "limit_at_upper")
        return [n for n in names if not getattr(self, n)]


def _continuity_scan(family: DistortionFamily, thetas: np.ndarray,
                     p_grid: np.ndarray, span: float) -> tuple[bool, float]:
    """Adaptive check that theta -> D_theta(p) has no genuine jump.

    A jump that persists as the bracketing interval shrinks to a width of
    1e-9 of the parameter span is a discontinuity; smooth families see their
    adjacent differences vanish under bisection even where the theta
    derivative is unbounded near the endpoints.
    """
    width_floor = 1e-9 * span
    evals = {th: family.eval(th, p_grid) for th in thetas}
    intervals = list(zip(thetas[:-1], thetas[1:]))
    worst_jump = 0.0
    for _ in range(200):
        offenders = []
        for a, b in intervals:
            jump = float(np.max(np.abs(evals[b] - evals[a])))
            if jump > _JUMP_TOL:
                if b - a <= width_floor:
                    return False, jump
                offenders.append((a, b))
            worst_jump = max(worst_jump, jump if b - a <= width_floor else 0.0)
        if not offenders:
            return True, worst_jump
        intervals = []
        for a, b in offenders:
            m = 0.5 * (a + b)
            if m not in evals:
                evals[m] = family.eval(m, p_grid)
            intervals.extend([(a, m), (m, b)])
    return False, worst_jump


def validate_family(family: DistortionFamily, theta_grid=None, p_grid=None) -> DistortionValidation:
    """Check the family on grids; failures are report entries, not exceptions."""
    lo, hi = family.lower, family.upper
    span = hi - lo
    if theta_grid is None:
        theta_grid = lo + span * np.linspace(1e-4, 1.0 - 1e-4, 101)
    thetas = np.asarray(theta_grid, dtype=float)
    if p_grid is None:
        p_grid = np.linspace(0.0, 1.0, 101)
    ps = np.asarray(p_grid, dtype=float)
    if thetas.size < 50 or ps.size < 50:
        raise ValueError("validation grids need at least 50 points each")

    surface = np.array([family.eval(th, ps) for th in thetas])
    p_monotone = bool(np.all(np.diff(surface, axis=1) >= -1e-12))
    theta_monotone = bool(np.all(np.diff(surface, axis=0) >= -1e-12))
    theta_continuous, worst_jump = _continuity_scan(family, thetas, ps, span)

    eps_seq = [1e-4 * span, 1e-6 * span, 1e-8 * span]
    interior = ps[(ps > 0.0) & (ps < 1.0)]
    low_vals = [np.max(family.eval(lo + e, interior[interior < 1.0])) for e in eps_seq]
    limit_at_lower = (low_vals[-1] <= _LIMIT_TOL
                      and all(a >= b - 1e-12 for a, b in zip(low_vals, low_vals[1:]))
                      and abs(family.eval(lo + eps_seq[-1], 1.0) - 1.0) <= 1e-9)
    high_vals = [np.min(family.eval(hi - e, interior)) for e in eps_seq]
    limit_at_upper = (high_vals[-1] >= 1.0 - _LIMIT_TOL
                      and all(a <= b + 1e-12 for a, b in zip(high_vals, high_vals[1:]))
                      and abs(family.eval(hi - eps_seq[-1], 0.0)) <= 1e-9)

    details = {"worst_persistent_jump": worst_jump,
               "lower_limit_values": [float(v) for v in low_vals],
               "upper_limit_values": [float(v) for v in high_vals]}
    return DistortionValidation(p_monotone=p_monotone, theta_monotone=theta_monotone,
                                theta_continuous=theta_continuous,
                                limit_at_lower=bool(limit_at_lower),
                                limit_at_upper=bool(limit_at_upper),
                                details=details)


def load_user_table(path) -> DistortionFamily:
    """Load a tabulated family from CSV: first row the p grid, first column
    the theta grid, body the distortion values."""
    raw = np.loadtxt(path, delimiter=",", dtype=float)
    if raw.ndim != 2 or raw.shape[0] < 2 or raw.shape[1] < 2:
        raise ValueError("user table CSV must have at least 2 rows and 2 columns")
    return DistortionFamily.user_table(theta_grid=raw[1:, 0], p_grid=raw[0, 1:],
                                       table=raw[1:, 1:])
