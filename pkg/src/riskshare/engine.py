"""Assembles induced risk-sharing rules H(X) = K(Theta) from an allocation
family, a capital curve and a scenario set, and runs the diagnostics
(sum preservation, comonotonicity, scenario-wise optimality).

Per-unit allocations are evaluated along the curve's refined theta grid and
interpolated at the matched capital level; because the per-unit grid rows sum
to the aggregate grid exactly, the interpolated shares sum to the realized
aggregate to float precision. On small scenario sets the allocations are
instead evaluated exactly at each sampled parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import (
    AllocationFamily,
    EulerDistortion,
    Holistic,
    OptAbsolute,
    OptSquared,
    TailIndicator,
    WeightedRisk,
    holistic_betas,
    opt_absolute_allocate,
    opt_squared_allocate,
    euler_distortion_allocate,
    holistic_allocate,
    weighted_allocate,
    preference_mean,
    tail_means_at,
    _preference_distribution,
)
from .capital import (
    CapitalCurve,
    InversePolicy,
    SurjectivityError,
    _locate_cells,
    build_capital_curve,
    check_surjectivity,
    sample_parameter,
)
from .distortion import DistortionFamily, distortion_risk_measure
from .empirical import BinnedConditionalMean, EmpiricalDistribution, conditional_mean_given_sum
from .oracles import solve_constrained_quadratic
from .scenario import ScenarioSet

__all__ = [
    "SharingResult",
    "induce_sharing",
    "ComonotonicityReport",
    "comonotonicity_diagnostic",
    "ParetoReport",
    "scenario_pareto_check",
    "var_capital_curve",
    "distortion_capital_curve",
    "weighted_capital_curve",
    "holistic_capital_curve",
    "capital_curve_for",
    "binned_means",
]

_EXACT_SMALL_N = 1024
_AUTO_REFINE_N = 4096
_SUM_TOL_REL = 1e-6


# ---------------------------------------------------------------------------
# curve factories
# ---------------------------------------------------------------------------

def var_capital_curve(dist: EmpiricalDistribution, grid_size: int = 2048) -> CapitalCurve:
    """Quantile-family curve K(theta) = VaR_theta(S) on [0, 1]."""
    return build_capital_curve(lambda th: dist.quantile(th, "left"), (0.0, 1.0),
                               grid_size=grid_size, label="var")


def _grouped(dist: EmpiricalDistribution):
    vals, start = np.unique(dist.values, return_index=True)
    cum = dist.cumw[np.concatenate([start[1:] - 1, [dist.size - 1]])]
    surv_after = 1.0 - cum
    surv_before = np.concatenate([[1.0], surv_after[:-1]])
    return vals, surv_before, surv_after


def _distortion_k_eval(family: DistortionFamily, dist: EmpiricalDistribution):
    return _prepared_rho(family, dist)


def distortion_capital_curve(family: DistortionFamily, dist: EmpiricalDistribution,
                             grid_size: int = 2048) -> CapitalCurve:
    """Top-down curve from a family of distortion risk measures on the
    aggregate, with the endpoint limit values (sample min and max)."""
    return build_capital_curve(_distortion_k_eval(family, dist), family.interval,
                               grid_size=grid_size, label=f"distortion:{family.kind}")


def weighted_capital_curve(family: WeightedRisk, s_values: np.ndarray,
                           grid_size: int = 2048, edge_rel: float = 5e-10) -> CapitalCurve:
    """Endogenous weighted-risk curve on an adaptively expanded interval.

    The parameter range doubles outward until the curve reaches within
    ``edge_rel`` (relative) of the sample extremes, the finite-sample stand-in
    for the limits at the ends of the real line.
    """
    s = np.asarray(s_values, dtype=float)
    smin, smax = float(s.min()), float(s.max())
    log_w = family.prepare_log_weights(s)

    def k_eval(theta: float) -> float:
        logw = log_w(theta)
        w = np.exp(logw - logw.max())
        return float((s * w).sum() / w.sum())

    tol_hi = edge_rel * (1.0 + abs(smax))
    tol_lo = edge_rel * (1.0 + abs(smin))
    lo, hi = -1.0, 1.0
    for _ in range(200):
        if k_eval(hi) >= smax - tol_hi:
            break
        hi *= 2.0
    else:
        raise SurjectivityError("weighted curve cannot reach the sample maximum")
    for _ in range(200):
        if k_eval(lo) <= smin + tol_lo:
            break
        lo *= 2.0
    else:
        raise SurjectivityError("weighted curve cannot reach the sample minimum")
    label = family.weight if isinstance(family.weight, str) else "custom_weight"
    return build_capital_curve(k_eval, (lo, hi), grid_size=grid_size,
                               label=f"weighted:{label}")


def holistic_capital_curve(family: Holistic, scen: ScenarioSet,
                           grid_size: int = 2048) -> CapitalCurve:
    """Endogenous holistic curve K(theta) = (1-beta) rho_theta(S) +
    beta sum_j rho_{j,theta}(X_j) on the common distortion interval."""
    lo = max([family.aggregate_distortion.lower] + [f.lower for f in family.unit_distortions])
    hi = min([family.aggregate_distortion.upper] + [f.upper for f in family.unit_distortions])
    if not lo < hi:
        raise ValueError("holistic distortion intervals do not overlap")
    betas, beta = holistic_betas(family.gamma, family.gammas)
    rho_s = _prepared_rho(family.aggregate_distortion,
                          EmpiricalDistribution.from_sample(scen.aggregate))
    rho_units = [_prepared_rho(f, EmpiricalDistribution.from_sample(scen.unit(i)))
                 for i, f in enumerate(family.unit_distortions)]

    def k_eval(theta: float) -> float:
        return float((1.0 - beta) * rho_s(theta)
                     + beta * sum(r(theta) for r in rho_units))

    return build_capital_curve(k_eval, (lo, hi), grid_size=grid_size, label="holistic")


def _prepared_rho(fam: DistortionFamily, dist: EmpiricalDistribution):
    """Cached theta -> distortion risk measure of one empirical distribution.

    Uses the summed-by-parts form rho = v_0 + sum_k (v_k - v_{k-1}) D(sa_{k-1})
    of the Stieltjes sum, so each evaluation costs one distortion pass.
    """
    vals, _sb, sa = _grouped(dist)
    gaps = np.diff(vals)
    d_head = fam.prepare(sa[:-1])
    vmin, vmax = float(vals[0]), float(vals[-1])
    limits = fam.endpoint_limits

    def rho(theta: float) -> float:
        if limits:
            if theta <= fam.lower:
                return vmin
            if theta >= fam.upper:
                return vmax
        return vmin + float(gaps @ d_head(theta)) if gaps.size else vmin

    return rho


def capital_curve_for(family: AllocationFamily, scen: ScenarioSet,
                      curve_spec=None, grid_size: int = 2048) -> CapitalCurve:
    """Build the curve a family is inverted against: endogenous for bottom-up
    families, an exogenous risk-measure family for top-down ones."""
    if isinstance(family, WeightedRisk):
        return weighted_capital_curve(family, scen.aggregate, grid_size=grid_size)
    if isinstance(family, Holistic):
        return holistic_capital_curve(family, scen, grid_size=grid_size)
    dist = EmpiricalDistribution.from_sample(scen.aggregate)
    if isinstance(family, EulerDistortion) and curve_spec is None:
        return distortion_capital_curve(family.distortion, dist, grid_size=grid_size)
    if curve_spec is None or (isinstance(curve_spec, str) and curve_spec == "var"):
        return var_capital_curve(dist, grid_size=grid_size)
    if isinstance(curve_spec, DistortionFamily):
        if curve_spec.kind == "var_indicator":
            return var_capital_curve(dist, grid_size=grid_size)
        return distortion_capital_curve(curve_spec, dist, grid_size=grid_size)
    raise ValueError(f"cannot build a capital curve from {curve_spec!r}")


# ---------------------------------------------------------------------------
# allocation rows along the curve grid
# ---------------------------------------------------------------------------

def _allocation_rows(family: AllocationFamily, curve: CapitalCurve, scen: ScenarioSet,
                     cond: BinnedConditionalMean | None) -> np.ndarray:
    """Per-unit capitals K_i(theta) evaluated at every curve grid point,
    shape (grid, n); rows sum to the curve values for every family."""
    thetas = curve.thetas
    n = scen.n_units
    if isinstance(family, OptSquared):
        means = np.empty((thetas.size, n))
        for i, pref in enumerate(family.preferences):
            x = scen.unit(i)
            if isinstance(pref, TailIndicator) and pref.level is None:
                means[:, i] = tail_means_at(x, np.clip(thetas, 0.0, 1.0))
            else:
                means[:, i] = preference_mean(pref, x)
        betas = np.array([family.betas_at(t) for t in thetas]) \
            if not isinstance(family.betas, tuple) else np.broadcast_to(
                np.asarray(family.betas), (thetas.size, n))
        return means + betas * (curve.values - means.sum(axis=1))[:, None]
    if isinstance(family, EulerDistortion):
        dist = EmpiricalDistribution.from_sample(scen.aggregate)
        vals, _sb, sa = _grouped(dist)
        m = cond.evaluate(vals, mode="linear")
        # summed-by-parts: K_i = m_i(v_0) + sum_k (m_i(v_k) - m_i(v_{k-1})) D(sa_{k-1})
        m_gaps = np.ascontiguousarray(np.diff(m, axis=0).T)
        fam = family.distortion
        d_head = fam.prepare(sa[:-1])
        rows = np.empty((thetas.size, n))
        for g, th in enumerate(thetas):
            if fam.endpoint_limits and th <= fam.lower:
                rows[g] = m[0]
            elif fam.endpoint_limits and th >= fam.upper:
                rows[g] = m[-1]
            else:
                rows[g] = m[0] + (m_gaps @ d_head(th) if m_gaps.size else 0.0)
        return rows
    if isinstance(family, WeightedRisk):
        log_w = family.prepare_log_weights(scen.aggregate)
        losses_t = np.ascontiguousarray(scen.losses.T)
        rows = np.empty((thetas.size, n))
        for g, th in enumerate(thetas):
            logw = log_w(th)
            w = np.exp(logw - logw.max())
            rows[g] = (losses_t @ w) / w.sum()
        return rows
    if isinstance(family, Holistic):
        betas, _beta = holistic_betas(family.gamma, family.gammas)
        rho_s = _prepared_rho(family.aggregate_distortion,
                              EmpiricalDistribution.from_sample(scen.aggregate))
        rho_units = [_prepared_rho(f, EmpiricalDistribution.from_sample(scen.unit(i)))
                     for i, f in enumerate(family.unit_distortions)]
        rows = np.empty((thetas.size, n))
        for g, th in enumerate(thetas):
            rho_u = np.array([r(th) for r in rho_units])
            rows[g] = rho_u - betas * (rho_u.sum() - rho_s(th))
        return rows
    raise TypeError(f"no grid evaluation for family {type(family).__name__}")


def _exact_allocation(family: AllocationFamily, theta: float, scen: ScenarioSet,
                      cond: BinnedConditionalMean | None, k_agg: float) -> np.ndarray:
    if isinstance(family, OptSquared):
        return opt_squared_allocate(family, theta, scen, k_agg)[0]
    if isinstance(family, EulerDistortion):
        return euler_distortion_allocate(family, theta, scen, cond)
    if isinstance(family, WeightedRisk):
        return weighted_allocate(family, theta, scen)[0]
    if isinstance(family, Holistic):
        return holistic_allocate(family, theta, scen)[0]
    raise TypeError(f"no exact evaluation for family {type(family).__name__}")


def _opt_absolute_shares(family: OptAbsolute, scen: ScenarioSet) -> np.ndarray:
    """Vectorized alpha-mixed comonotonic shares for every scenario.

    Builds the comonotonic-sum atoms on the merged probability partition of
    the preference margins; equal to ``opt_absolute_allocate`` per scenario.
    """
    margins = [_preference_distribution(p, scen.unit(i))
               for i, p in enumerate(family.preferences)]
    levels = np.unique(np.concatenate([m.cumw for m in margins]))
    levels[-1] = 1.0
    v = np.column_stack([m.quantile(levels, "left") for m in margins])
    t = v.sum(axis=1)

    s = scen.aggregate
    tol = 1e-9 * (1.0 + np.abs(s))
    if np.any(s < t[0] - tol) or np.any(s > t[-1] + tol):
        idx = int(np.argmax((s < t[0] - tol) | (s > t[-1] + tol)))
        raise SurjectivityError(
            f"scenario {idx} aggregate {s[idx]} outside comonotonic-sum range")
    k = np.clip(np.searchsorted(t, s, side="right") - 1, 0, t.size - 2)
    t_lo, t_hi = t[k], t[k + 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.where(t_hi > t_lo, (t_hi - np.clip(s, t[0], t[-1])) / (t_hi - t_lo), 1.0)
    alpha = np.clip(alpha, 0.0, 1.0)
    return alpha[:, None] * v[k] + (1.0 - alpha)[:, None] * v[k + 1]


# ---------------------------------------------------------------------------
# induced sharing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SharingResult:
    """Per-scenario sampled parameter and shared losses with diagnostics."""

    theta: np.ndarray
    h: np.ndarray
    aggregate: np.ndarray
    sum_error_abs: float
    sum_error_rel: float
    descriptor: str

    @property
    def n_scenarios(self) -> int:
        return self.h.shape[0]

    @property
    def n_units(self) -> int:
        return self.h.shape[1]

    def to_rows(self) -> np.ndarray:
        """Rows (scenario, s, theta, h_1..h_n) for CSV export."""
        idx = np.arange(self.n_scenarios, dtype=float)
        return np.column_stack([idx, self.aggregate, self.theta, self.h])


def _sum_errors(h: np.ndarray, s: np.ndarray) -> tuple[float, float]:
    err = np.abs(h.sum(axis=1) - s)
    rel = err / (1.0 + np.abs(s))
    return float(err.max()), float(rel.max())


def induce_sharing(family: AllocationFamily, curve: CapitalCurve, scen: ScenarioSet,
                   policy: InversePolicy | None = None,
                   cond: BinnedConditionalMean | None = None,
                   bins: int = 200, refine: bool | str = "auto") -> SharingResult:
    """Induce the risk-sharing rule: Theta inverts the curve at each realized
    aggregate, H evaluates the family at Theta."""
    if policy is None:
        policy = InversePolicy.infimum()
    n = scen.n_scenarios
    if refine == "auto":
        refine = n <= _AUTO_REFINE_N

    report = check_surjectivity(curve, EmpiricalDistribution.from_sample(scen.aggregate))
    if not report.passed:
        raise SurjectivityError(
            f"curve range {report.curve_range} does not cover the sample range "
            f"{report.sample_range}")

    if isinstance(family, EulerDistortion) and cond is None:
        cond = conditional_mean_given_sum(scen, min(bins, max(2, n // 10)))

    theta = sample_parameter(curve, scen, policy, refine=bool(refine))
    theta = np.clip(theta, curve.thetas[0], curve.thetas[-1])
    s = scen.aggregate

    if isinstance(family, OptAbsolute):
        h = _opt_absolute_shares(family, scen)
    elif isinstance(family, EulerDistortion) and family.distortion.kind == "var_indicator":
        # K_i(theta) = m_i(VaR_theta(S)) depends on theta only through
        # K(theta) = S, so the rule is exactly the sum-consistent conditional
        # mean evaluated at the realized aggregate
        h = cond.evaluate(s, mode="linear")
    elif isinstance(family, OptSquared) and family.theta_free:
        means = np.array([preference_mean(p, scen.unit(i))
                          for i, p in enumerate(family.preferences)])
        betas = np.asarray(family.betas, dtype=float)
        h = means + betas * (s - means.sum())[:, None]
    elif n <= _EXACT_SMALL_N and refine:
        dist = EmpiricalDistribution.from_sample(s)
        h = np.empty((n, scen.n_units))
        for k in range(n):
            h[k] = _exact_allocation(family, float(theta[k]), scen, cond, float(s[k]))
    else:
        rows = _allocation_rows(family, curve, scen, cond)
        cells = _locate_cells(curve, np.clip(s, curve.k_min, curve.k_max), policy.kind)
        k_lo = curve.values[cells]
        k_hi = curve.values[cells + 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(k_hi > k_lo,
                            (np.clip(s, curve.k_min, curve.k_max) - k_lo) / (k_hi - k_lo), 0.0)
        frac = np.clip(frac, 0.0, 1.0)
        h = rows[cells] + frac[:, None] * (rows[cells + 1] - rows[cells])

    err_abs, err_rel = _sum_errors(h, s)
    if err_rel > _SUM_TOL_REL:
        raise ValueError(f"sum-preservation violated: max relative error {err_rel:.3e}")
    desc = (f"family={getattr(family, 'kind', type(family).__name__)} "
            f"curve={curve.label} policy={policy.kind} refine={bool(refine)}")
    return SharingResult(theta=theta, h=h, aggregate=s.copy(),
                         sum_error_abs=err_abs, sum_error_rel=err_rel, descriptor=desc)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def binned_means(s: np.ndarray, y: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-count bin means of y (columns) against s; returns (s_mean, y_mean)."""
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    y_sorted = np.atleast_2d(y.T).T[order]
    bounds = np.round(np.linspace(0, s.size, bins + 1)).astype(int)
    bounds = np.unique(bounds)
    starts = bounds[:-1]
    counts = np.diff(bounds)
    s_mean = np.add.reduceat(s_sorted, starts) / counts
    y_mean = np.add.reduceat(y_sorted, starts, axis=0) / counts[:, None]
    return s_mean, y_mean


@dataclass(frozen=True)
class ComonotonicityReport:
    """Fraction of adjacent decreases of each unit's binned share in s."""

    decrease_fractions: tuple[float, ...]
    comonotonic: bool
    n_bins: int


def comonotonicity_diagnostic(result: SharingResult, n_bins: int = 100,
                              threshold: float = 0.01) -> ComonotonicityReport:
    """Binned monotone-trend test: the rule is declared comonotonic when every
    unit's share of the binned curve decreases in at most 1% of adjacent bins."""
    if result.n_scenarios < 100:
        raise ValueError("comonotonicity diagnostic needs at least 100 scenarios")
    s_mean, h_mean = binned_means(result.aggregate, result.h, n_bins)
    scale = max(float(np.abs(h_mean).max()), 1e-12)
    diffs = np.diff(h_mean, axis=0)
    dec = (diffs < -1e-9 * scale).mean(axis=0)
    return ComonotonicityReport(decrease_fractions=tuple(float(d) for d in dec),
                                comonotonic=bool(np.all(dec <= threshold)),
                                n_bins=int(s_mean.size))


@dataclass(frozen=True)
class ParetoReport:
    passed: bool
    max_oracle_gap: float
    min_perturbation_margin: float
    n_atoms: int


def _quadratic_objective(family, theta: float, scen: ScenarioSet):
    """Hessian and linear term of the scenario cost sum (constants dropped)."""
    n = scen.n_units
    if isinstance(family, OptSquared):
        betas = family.betas_at(theta)
        if np.any(betas <= 0):
            raise ValueError("pareto check requires strictly positive betas")
        means = np.array([preference_mean(p, scen.unit(i), theta)
                          for i, p in enumerate(family.preferences)])
        g = np.diag(2.0 / betas)
        c = -2.0 * means / betas
        return g, c
    if isinstance(family, Holistic):
        gammas = np.asarray(family.gammas, dtype=float)
        rho_u = np.array([
            distortion_risk_measure(f, theta, EmpiricalDistribution.from_sample(scen.unit(i)))
            for i, f in enumerate(family.unit_distortions)])
        rho_s = distortion_risk_measure(family.aggregate_distortion, theta,
                                        EmpiricalDistribution.from_sample(scen.aggregate))
        g = 2.0 * (np.diag(gammas) + family.gamma * np.ones((n, n)))
        c = -2.0 * (gammas * rho_u + family.gamma * rho_s)
        return g, c
    raise TypeError("scenario-wise Pareto check supports OptSquared and Holistic")


def pareto_atom_check(family, theta: float, h_row: np.ndarray, s_value: float,
                      scen: ScenarioSet, n_perturbations: int = 200,
                      rng: np.random.Generator | None = None,
                      match_tol: float = 1e-7) -> tuple[bool, float, float]:
    """One atom's constrained-optimality check against the brute-force solver.

    Returns (ok, oracle gap, worst perturbation margin); the margin is the
    smallest objective increase over random sum-preserving perturbations.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    g, c = _quadratic_objective(family, theta, scen)
    sol = solve_constrained_quadratic(g, c, s_value)
    gap = float(np.max(np.abs(h_row - sol.x)))

    def obj(k):
        return 0.5 * k @ g @ k + c @ k

    base = obj(h_row)
    margin = np.inf
    for _ in range(n_perturbations):
        delta = rng.standard_normal(h_row.size)
        delta -= delta.mean()
        delta *= (0.1 + rng.random()) * (1.0 + abs(s_value)) * 0.5
        margin = min(margin, float(obj(h_row + delta) - base))
    tol = match_tol * (1.0 + abs(s_value))
    return gap <= tol and margin >= -1e-10, gap, margin


def scenario_pareto_check(family, result: SharingResult, scen: ScenarioSet,
                          n_perturbations: int = 200, seed: int = 0,
                          match_tol: float = 1e-7) -> ParetoReport:
    """Scenario-wise Pareto optimality on a small discrete scenario set."""
    if scen.n_scenarios > 256:
        raise ValueError("pareto check is meant for small discrete scenario sets")
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    worst_margin = np.inf
    ok_all = True
    for k in range(scen.n_scenarios):
        ok, gap, margin = pareto_atom_check(family, float(result.theta[k]), result.h[k],
                                            float(result.aggregate[k]), scen,
                                            n_perturbations=n_perturbations, rng=rng,
                                            match_tol=match_tol)
        ok_all = ok_all and ok
        worst_gap = max(worst_gap, gap)
        worst_margin = min(worst_margin, margin)
    return ParetoReport(passed=ok_all, max_oracle_gap=worst_gap,
                        min_perturbation_margin=float(worst_margin),
                        n_atoms=scen.n_scenarios)
