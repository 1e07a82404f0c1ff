"""Acceptance suite: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines alongside the pytest verdicts.
"""

import time

import numpy as np
import pytest

from riskshare.allocation import (
    EulerDistortion,
    Holistic,
    OptAbsolute,
    OptSquared,
    Physical,
    TailIndicator,
    WeightTable,
    WeightedRisk,
    holistic_allocate,
    holistic_betas,
    opt_absolute_allocate,
    weighted_mlr_check,
)
from riskshare.capital import InversePolicy, right_inverse, sample_parameter
from riskshare.distortion import DistortionFamily, validate_family
from riskshare.empirical import EmpiricalDistribution, conditional_mean_given_sum
from riskshare.engine import (
    binned_means,
    capital_curve_for,
    comonotonicity_diagnostic,
    induce_sharing,
    pareto_atom_check,
    scenario_pareto_check,
    var_capital_curve,
    weighted_capital_curve,
    holistic_capital_curve,
    distortion_capital_curve,
)
from riskshare.oracles import (
    EllipticalParams,
    holistic_elliptical_quota,
    lambert_w0,
    normal_cmrs,
    normal_exponential_capital,
    normal_exponential_theta,
    solve_constrained_quadratic,
)
from riskshare.scenario import CopulaSpec, JointModel, MarginalSpec, ScenarioSet, sample_joint
from riskshare.study import run_benchmark_study

MVN3_MU = (1.0, 2.0, 0.5)
MVN3_SIGMA = ((2.0, 0.5, 0.3), (0.5, 1.5, 0.2), (0.3, 0.2, 1.0))


def _report(num: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, detail


def _physical(n):
    return tuple(Physical() for _ in range(n))


def _gamma_clayton(n, seed):
    model = JointModel.from_marginals(
        [MarginalSpec.gamma(5.0, 1.0), MarginalSpec.gamma(0.3, 8.0)],
        CopulaSpec.clayton(2.0))
    return sample_joint(model, n, seed)


def test_criterion_1_figure_reproduction(tmp_path):
    """Gamma/Clayton and counter-monotonic benchmark at N = 200,000."""
    t0 = time.time()
    summary = run_benchmark_study(str(tmp_path), n_scenarios=200_000, seed=42)
    elapsed = time.time() - t0

    ok = elapsed <= 120.0
    details = [f"runtime {elapsed:.0f}s"]
    for rule in ("euler", "weighted"):
        clayton = summary[(rule, "clayton")]
        ok &= all(f <= 0.01 for f in clayton["decrease_fractions"])
        details.append(f"{rule}/clayton decreases {clayton['decrease_fractions']}")
        counter = summary[(rule, "counter")]
        top = counter["h_mean"][90:, 0]
        diffs = np.diff(top)
        net_down = top[-1] < top[0]
        mostly_down = (diffs < 0).mean() >= 0.7
        ok &= net_down and mostly_down
        details.append(f"{rule}/counter top-decile net {top[-1] - top[0]:.2f}")
    _report(1, ok, "; ".join(details))


def test_criterion_2_sum_preservation():
    """Max relative row-sum error <= 1e-6 for every rule; <= 1e-12 closed form."""
    scen = _gamma_clayton(20_000, 7)
    wang = DistortionFamily.wang()
    rules = {
        "quota (closed form)": (OptSquared(betas=(0.3, 0.7), preferences=_physical(2)),
                                "var", 1e-12),
        "opt squared tail-linked": (OptSquared(betas=(0.5, 0.5),
                                               preferences=(TailIndicator(), TailIndicator())),
                                    wang, 1e-6),
        "opt absolute": (OptAbsolute(preferences=_physical(2)), "var", 1e-6),
        "euler wang": (EulerDistortion(distortion=wang), None, 1e-6),
        "euler var-indicator": (EulerDistortion(distortion=DistortionFamily.var_indicator()),
                                "var", 1e-6),
        "weighted size-biased": (WeightedRisk(weight="size_biased"), None, 1e-6),
        "weighted esscher": (WeightedRisk(weight="esscher"), None, 1e-6),
        "holistic": (Holistic(gamma=1.0, gammas=(1.0, 1.0), aggregate_distortion=wang,
                              unit_distortions=(wang, wang)), None, 1e-6),
    }
    details = []
    ok = True
    for name, (family, curve_spec, tol) in rules.items():
        curve = capital_curve_for(family, scen, curve_spec)
        result = induce_sharing(family, curve, scen, refine=False)
        ok &= result.sum_error_rel <= tol
        details.append(f"{name}: {result.sum_error_rel:.1e}")
    _report(2, ok, "; ".join(details))


def test_criterion_3_elliptical_quota_oracle():
    """Euler-Wang and Euler-Power on trivariate normals match the quota rule
    mu_i + (sigma_iS / sigma_S^2)(s - mu_S) within 3 MC standard errors."""
    params = EllipticalParams(mu=MVN3_MU, sigma=MVN3_SIGMA)
    scen = sample_joint(JointModel.mvn(MVN3_MU, MVN3_SIGMA), 100_000, 77)
    resid_sd = np.sqrt(np.diag(np.asarray(MVN3_SIGMA))
                       - params.sigma_is ** 2 / params.sigma_s2)
    binned = {}
    ok = True
    details = []
    for kind in ("wang", "power"):
        family = EulerDistortion(distortion=getattr(DistortionFamily, kind)())
        result = induce_sharing(family, capital_curve_for(family, scen), scen,
                                refine=False)
        s_mean, h_mean = binned_means(result.aggregate, result.h, 100)
        counts = np.diff(np.round(np.linspace(0, scen.n_scenarios, 101)))
        se = resid_sd / np.sqrt(counts)[:, None]
        closed = normal_cmrs(params, s_mean)
        worst = float(np.max(np.abs(h_mean - closed) / se))
        ok &= np.all(np.abs(h_mean - closed) <= 3.0 * se + 2e-3)
        binned[kind] = (h_mean, se)
        details.append(f"{kind} worst |err|/SE {worst:.2f}")
    mutual = np.abs(binned["wang"][0] - binned["power"][0])
    ok &= np.all(mutual <= 3.0 * binned["wang"][1] + 2e-3)
    details.append(f"wang-power max diff {float(mutual.max()):.2e}")
    _report(3, ok, "; ".join(details))


def test_criterion_4_cmrs_recovery():
    """Euler with the VaR-indicator family equals the binned conditional mean;
    RMSE against the exact normal conditional mean halves from 1e4 to 1e5."""
    params = EllipticalParams(mu=MVN3_MU, sigma=MVN3_SIGMA)
    model = JointModel.mvn(MVN3_MU, MVN3_SIGMA)
    family = EulerDistortion(distortion=DistortionFamily.var_indicator())
    rmse = {}
    exact_match = True
    for n in (10_000, 100_000):
        scen = sample_joint(model, n, 99)
        cond = conditional_mean_given_sum(scen, 200)
        result = induce_sharing(family, capital_curve_for(family, scen, "var"), scen,
                                cond=cond, refine=False)
        expected = cond.evaluate(scen.aggregate, mode="linear")
        exact_match &= bool(np.max(np.abs(result.h - expected)) <= 1e-9)
        closed = normal_cmrs(params, scen.aggregate)
        rmse[n] = float(np.sqrt(np.mean((result.h - closed) ** 2)))
    ratio = rmse[10_000] / rmse[100_000]
    ok = exact_match and rmse[100_000] <= 0.5 * rmse[10_000]
    _report(4, ok, f"rule equals binned estimator: {exact_match}; "
                   f"RMSE 1e4={rmse[10_000]:.4f} 1e5={rmse[100_000]:.4f} ratio {ratio:.2f}")


def test_criterion_5_quantile_rule_exactness():
    """Absolute-penalty rule equals the enumerated comonotonic conditional
    means on discrete instances with at most 10 atoms, to 1e-9."""
    rng = np.random.default_rng(17)
    worst = 0.0
    for trial in range(20):
        m = int(rng.integers(3, 11))
        n_units = int(rng.integers(2, 4))
        # continuous-margin analogue: distinct atoms drawn from gammas
        margins = np.sort(rng.gamma(2.0, 2.0, size=(m, n_units)), axis=0)
        comono_atoms = margins  # comonotonic coupling pairs sorted atoms
        scen = ScenarioSet.from_losses(comono_atoms)
        family = OptAbsolute(preferences=_physical(n_units))
        t = comono_atoms.sum(axis=1)
        for j in range(m):
            k_vec = opt_absolute_allocate(family, float(t[j]), scen)
            worst = max(worst, float(np.max(np.abs(k_vec - comono_atoms[j]))))
        result = induce_sharing(family,
                                var_capital_curve(EmpiricalDistribution.from_sample(t), 256),
                                scen)
        worst = max(worst, float(np.max(np.abs(result.h - comono_atoms))))
    _report(5, worst <= 1e-9, f"20 instances, worst deviation {worst:.2e}")


def test_criterion_6_holistic_correctness():
    """Brute-force match at 1e-10 on 3-atom joints, exact weight identity, and
    the elliptical quota formula within 3 MC standard errors."""
    rng = np.random.default_rng(23)
    wang = DistortionFamily.wang()
    worst_qp = 0.0
    worst_beta = 0.0
    for _ in range(20):
        atoms = rng.gamma(2.0, 1.0, size=(3, 2)) + 0.05
        scen = ScenarioSet.from_losses(atoms)
        gamma = float(rng.uniform(0.5, 2.5))
        gammas = tuple(rng.uniform(0.5, 2.5, 2))
        family = Holistic(gamma=gamma, gammas=gammas, aggregate_distortion=wang,
                          unit_distortions=(wang, wang))
        betas, beta = holistic_betas(gamma, gammas)
        worst_beta = max(worst_beta, abs(beta + betas.sum() - 1.0))
        theta = float(rng.uniform(0.1, 0.9))
        k_vec, k_agg = holistic_allocate(family, theta, scen)
        from riskshare.distortion import distortion_risk_measure
        rho_u = np.array([distortion_risk_measure(wang, theta,
                                                  EmpiricalDistribution.from_sample(scen.unit(i)))
                          for i in range(2)])
        rho_s = distortion_risk_measure(wang, theta,
                                        EmpiricalDistribution.from_sample(scen.aggregate))
        g_arr = np.asarray(gammas)
        g = 2.0 * (np.diag(g_arr) + gamma * np.ones((2, 2)))
        c = -2.0 * (g_arr * rho_u + gamma * rho_s)
        sol = solve_constrained_quadratic(g, c)
        worst_qp = max(worst_qp, float(np.max(np.abs(k_vec - sol.x))))

    # elliptical randomized holistic vs the closed quota formula
    params = EllipticalParams(mu=MVN3_MU, sigma=MVN3_SIGMA)
    scen_n = sample_joint(JointModel.mvn(MVN3_MU, MVN3_SIGMA), 50_000, 55)
    family = Holistic(gamma=1.5, gammas=(1.0, 0.8, 2.0), aggregate_distortion=wang,
                      unit_distortions=(wang, wang, wang))
    result = induce_sharing(family, capital_curve_for(family, scen_n), scen_n,
                            refine=False)
    betas, beta = holistic_betas(family.gamma, family.gammas)
    s_mean, h_mean = binned_means(result.aggregate, result.h, 100)
    closed = holistic_elliptical_quota(params, betas, beta, s_mean)
    counts = np.diff(np.round(np.linspace(0, scen_n.n_scenarios, 101)))
    resid_sd = np.sqrt(np.diag(np.asarray(MVN3_SIGMA))
                       - params.sigma_is ** 2 / params.sigma_s2)
    se = resid_sd / np.sqrt(counts)[:, None]
    quota_ok = bool(np.all(np.abs(h_mean - closed) <= 3.0 * se + 2e-3))
    ok = worst_qp <= 1e-10 and worst_beta <= 1e-14 and quota_ok
    _report(6, ok, f"brute-force gap {worst_qp:.1e}; beta identity {worst_beta:.1e}; "
                   f"elliptical quota within 3 SE: {quota_ok}")


def test_criterion_7_proposition_validators():
    """Distortion families pass/fail the structural grid conditions exactly as
    established, and weight families pass the likelihood-ratio check with
    monotone aggregates converging to the sample extremes."""
    details = []
    ok = True
    for kind in ("wang", "power"):
        report = validate_family(getattr(DistortionFamily, kind)())
        ok &= report.passed
        details.append(f"{kind}: {'all pass' if report.passed else report.failures}")
    var_report = validate_family(DistortionFamily.var_indicator())
    ok &= var_report.failures == ["theta_continuous"]
    details.append(f"var-indicator failures: {var_report.failures}")

    scen = _gamma_clayton(20_000, 13)
    s_grid = np.linspace(float(scen.aggregate.min()), float(scen.aggregate.max()), 80)
    for kind in ("size_biased", "esscher"):
        mlr = weighted_mlr_check(kind, np.linspace(-3.0, 5.0, 60), s_grid)
        ok &= mlr.passed
        family = WeightedRisk(weight=kind)
        curve = weighted_capital_curve(family, scen.aggregate, 512)
        monotone = bool(np.all(np.diff(curve.values) >= -1e-9))
        tol = 1e-6 * (1.0 + np.abs(scen.aggregate).max())
        hits_min = curve.k_min <= scen.aggregate.min() + tol
        hits_max = curve.k_max >= scen.aggregate.max() - tol
        ok &= monotone and hits_min and hits_max
        details.append(f"{kind}: mlr={mlr.passed} monotone={monotone} "
                       f"endpoints=({hits_min},{hits_max})")
    _report(7, ok, "; ".join(details))


def test_criterion_8_inversion_contract():
    """K(right_inverse(s)) = s to 1e-8 relative on 1e4 values per curve across
    the seven curve families (vectorized sampling plus scalar spot checks)."""
    scen = _gamma_clayton(4000, 41)
    dist = EmpiricalDistribution.from_sample(scen.aggregate)
    wang = DistortionFamily.wang()
    curves = {
        "var": var_capital_curve(dist, 1024),
        "wang": distortion_capital_curve(wang, dist, 1024),
        "power": distortion_capital_curve(DistortionFamily.power(), dist, 1024),
        "tvar_dual": distortion_capital_curve(DistortionFamily.tvar_dual(), dist, 1024),
        "size_biased": weighted_capital_curve(WeightedRisk(weight="size_biased"),
                                              scen.aggregate, 1024),
        "esscher": weighted_capital_curve(WeightedRisk(weight="esscher"),
                                          scen.aggregate, 1024),
        "holistic": holistic_capital_curve(
            Holistic(gamma=1.0, gammas=(1.0, 1.0), aggregate_distortion=wang,
                     unit_distortions=(wang, wang)), scen, 1024),
    }
    rng = np.random.default_rng(3)
    ok = True
    details = []
    for name, curve in curves.items():
        s_draw = rng.choice(scen.aggregate, size=10_000, replace=True)
        boot = ScenarioSet.from_losses(s_draw[:, None])
        theta = sample_parameter(curve, boot, refine=True)
        resid = np.abs(np.array([curve.k_eval(t) for t in theta[:2000]])
                       - s_draw[:2000])
        worst = float(np.max(resid / (1.0 + np.abs(s_draw[:2000]))))
        ok &= worst <= 1e-8
        for s in s_draw[:200]:
            t = right_inverse(curve, float(s))
            r = abs(curve.k_eval(t) - s) / (1.0 + abs(s))
            worst = max(worst, r)
        ok &= worst <= 1e-8
        details.append(f"{name} {worst:.1e}")
    _report(8, ok, "max relative residuals: " + "; ".join(details))


def test_criterion_9_lambert_and_exponential_round_trip():
    """W0 residuals at 1e-12 on the log grid; theta -> K -> theta at 1e-8."""
    xs = np.concatenate([[-1 / np.e + 1e-6, -0.3, -0.1], np.logspace(-8, 6, 200)])
    w = lambert_w0(xs)
    resid = np.abs(w * np.exp(w) - xs)
    lambert_ok = bool(np.all(resid <= 1e-12 * (1.0 + np.abs(xs))))

    worst = 0.0
    for mu_s, sig_s in ((1.0, 1.0), (2.5, 0.7), (0.8, 1.6), (-1.2, 0.9)):
        for theta0 in np.linspace(-1.5, 2.5, 41):
            s = normal_exponential_capital(mu_s, sig_s, theta0)
            if s == 0.0 or np.sign(s) != np.sign(mu_s):
                continue
            theta = normal_exponential_theta(mu_s, sig_s, s)
            worst = max(worst, abs(theta - theta0) / (1.0 + abs(theta0)))
    ok = lambert_ok and worst <= 1e-8
    _report(9, ok, f"lambert grid ok: {lambert_ok}; round-trip worst {worst:.1e}")


def test_criterion_10_scenario_pareto():
    """Per-atom constrained optimality on 20 random 3-atom instances for both
    quadratic families; a shifted allocation is detected."""
    rng = np.random.default_rng(29)
    wang = DistortionFamily.wang()
    ok = True
    for trial in range(20):
        atoms = rng.gamma(2.0, 1.0, size=(3, 2)) + 0.1
        scen = ScenarioSet.from_losses(atoms)
        fam_sq = OptSquared(betas=(0.4, 0.6), preferences=_physical(2))
        curve = var_capital_curve(EmpiricalDistribution.from_sample(scen.aggregate), 256)
        res_sq = induce_sharing(fam_sq, curve, scen)
        ok &= scenario_pareto_check(fam_sq, res_sq, scen, n_perturbations=100,
                                    seed=trial).passed
        fam_h = Holistic(gamma=float(rng.uniform(0.5, 2.0)),
                         gammas=tuple(rng.uniform(0.5, 2.0, 2)),
                         aggregate_distortion=wang, unit_distortions=(wang, wang))
        res_h = induce_sharing(fam_h, capital_curve_for(fam_h, scen), scen)
        ok &= scenario_pareto_check(fam_h, res_h, scen, n_perturbations=100,
                                    seed=trial).passed
    shifted_ok, gap, _ = pareto_atom_check(fam_sq, float(res_sq.theta[0]),
                                           res_sq.h[0] + np.array([0.3, -0.3]),
                                           float(res_sq.aggregate[0]), scen)
    ok &= not shifted_ok
    _report(10, ok, f"20 instances passed both families; shifted detected "
                    f"(gap {gap:.2f})")
