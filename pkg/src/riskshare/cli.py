"""Command-line front end: config-driven simulation and sharing runs,
family validation reports, and the built-in benchmark figure data.

Exit codes: 0 success, 2 config error, 3 mathematical precondition failure
(surjectivity or domain), 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .allocation import (
    AllocationFamily,
    EulerDistortion,
    Holistic,
    OptAbsolute,
    OptSquared,
    Physical,
    TailIndicator,
    WeightTable,
    WeightedRisk,
    weighted_mlr_check,
)
from .capital import InversePolicy, SurjectivityError
from .distortion import DistortionFamily, validate_family
from .empirical import EmpiricalDistribution
from .engine import capital_curve_for, comonotonicity_diagnostic, induce_sharing
from .plots import render_lines
from .engine import binned_means
from .scenario import JointModel, sample_joint
from .study import run_benchmark_study, write_csv

__all__ = ["main", "RunConfig", "ConfigError"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _parse_preferences(docs, n: int):
    if docs is None:
        return tuple(Physical() for _ in range(n))
    prefs = []
    for d in docs:
        kind = d.get("kind", "physical")
        if kind == "physical":
            prefs.append(Physical())
        elif kind == "tail_indicator":
            level = d.get("level")
            prefs.append(TailIndicator(level=None if level in (None, "theta") else float(level)))
        else:
            raise ConfigError(f"unknown preference kind {kind!r}")
    if len(prefs) != n:
        raise ConfigError("one preference per unit required")
    return tuple(prefs)


def parse_rule(doc: dict, n_units: int) -> AllocationFamily:
    kind = doc.get("kind")
    if kind == "opt_squared":
        betas = doc.get("betas")
        betas = tuple(float(b) for b in betas) if betas is not None \
            else tuple(1.0 / n_units for _ in range(n_units))
        return OptSquared(betas=betas,
                          preferences=_parse_preferences(doc.get("preferences"), n_units))
    if kind == "opt_absolute":
        return OptAbsolute(preferences=_parse_preferences(doc.get("preferences"), n_units))
    if kind == "euler_distortion":
        return EulerDistortion(distortion=DistortionFamily.from_doc(doc.get("distortion", {"kind": "wang"})))
    if kind == "weighted_risk":
        weight_doc = doc.get("weight", "size_biased")
        if isinstance(weight_doc, dict):
            if weight_doc.get("kind") == "custom":
                weight = WeightTable(theta_grid=tuple(weight_doc["theta_grid"]),
                                     s_grid=tuple(weight_doc["s_grid"]),
                                     values=tuple(tuple(r) for r in weight_doc["table"]))
            else:
                weight = weight_doc.get("kind", "size_biased")
        else:
            weight = weight_doc
        return WeightedRisk(weight=weight)
    if kind == "holistic":
        gammas = tuple(float(g) for g in doc.get("gammas", [1.0] * n_units))
        unit_docs = doc.get("unit_distortions")
        agg = DistortionFamily.from_doc(doc.get("aggregate_distortion", {"kind": "wang"}))
        units = tuple(DistortionFamily.from_doc(d) for d in unit_docs) if unit_docs \
            else tuple(agg for _ in range(n_units))
        return Holistic(gamma=float(doc.get("gamma", 1.0)), gammas=gammas,
                        aggregate_distortion=agg, unit_distortions=units)
    raise ConfigError(f"unknown rule kind {kind!r}")


@dataclass
class RunConfig:
    model: JointModel
    n_scenarios: int
    seed: int
    rule_doc: dict | None
    curve_doc: object
    inverse_policy: str
    bins: int
    outputs: str

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError:
            raise
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        try:
            model = JointModel.from_doc(doc["model"])
            n_scen = int(doc.get("n_scenarios", 10000))
            if n_scen < 1:
                raise ConfigError("n_scenarios must be >= 1")
            return cls(model=model, n_scenarios=n_scen,
                       seed=int(doc.get("seed", 0)),
                       rule_doc=doc.get("rule"),
                       curve_doc=doc.get("curve", "endogenous"),
                       inverse_policy=doc.get("inverse_policy", "inf"),
                       bins=int(doc.get("bins", 200)),
                       outputs=doc.get("outputs", "."))
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def rule(self) -> AllocationFamily:
        if self.rule_doc is None:
            raise ConfigError("config has no 'rule' entry")
        try:
            return parse_rule(self.rule_doc, self.model.n_units)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid rule: {exc}") from exc

    def curve_spec(self):
        doc = self.curve_doc
        if doc in (None, "endogenous"):
            return None
        if isinstance(doc, str):
            if doc == "var":
                return "var"
            raise ConfigError(f"unknown curve reference {doc!r}")
        try:
            return DistortionFamily.from_doc(doc)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid curve family: {exc}") from exc

    def policy(self, scen) -> InversePolicy:
        name = self.inverse_policy
        if name in ("inf", "infimum"):
            return InversePolicy.infimum()
        if name in ("sup", "supremum"):
            return InversePolicy.supremum()
        if name in ("cdf", "cdf_matched"):
            return InversePolicy.cdf_matched(EmpiricalDistribution.from_sample(scen.aggregate))
        raise ConfigError(f"unknown inverse policy {name!r}")


def cmd_simulate(args) -> int:
    config = RunConfig.load(args.config)
    seed = args.seed if args.seed is not None else config.seed
    out_dir = args.out or config.outputs
    os.makedirs(out_dir, exist_ok=True)
    scen = sample_joint(config.model, config.n_scenarios, seed)
    n = scen.n_units
    header = "scenario," + ",".join(f"x_{i + 1}" for i in range(n)) + ",s"
    rows = np.column_stack([np.arange(scen.n_scenarios, dtype=float),
                            scen.losses, scen.aggregate])
    write_csv(os.path.join(out_dir, "scenarios.csv"), header, rows,
              scen.model_fingerprint, seed)
    print(f"wrote {scen.n_scenarios} scenarios to {out_dir}/scenarios.csv")
    return 0


def cmd_share(args) -> int:
    config = RunConfig.load(args.config)
    seed = args.seed if args.seed is not None else config.seed
    bins = args.bins if args.bins is not None else config.bins
    if args.policy is not None:
        config.inverse_policy = args.policy
    out_dir = args.out or config.outputs
    os.makedirs(out_dir, exist_ok=True)

    scen = sample_joint(config.model, config.n_scenarios, seed)
    family = config.rule()
    curve = capital_curve_for(family, scen, config.curve_spec())
    policy = config.policy(scen)
    result = induce_sharing(family, curve, scen, policy, bins=bins)
    diag = comonotonicity_diagnostic(result) if result.n_scenarios >= 100 else None

    header = "scenario,s,theta," + ",".join(f"h_{i + 1}" for i in range(result.n_units))
    write_csv(os.path.join(out_dir, "sharing.csv"), header, result.to_rows(),
              scen.model_fingerprint, seed)
    diagnostics = {
        "sum_error_abs": result.sum_error_abs,
        "sum_error_rel": result.sum_error_rel,
        "curve_range": [curve.k_min, curve.k_max],
        "curve_label": curve.label,
        "policy": policy.kind,
        "descriptor": result.descriptor,
        "seed": seed,
        "fingerprint": scen.model_fingerprint,
    }
    if diag is not None:
        diagnostics["comonotonic"] = diag.comonotonic
        diagnostics["decrease_fractions"] = list(diag.decrease_fractions)
    with open(os.path.join(out_dir, "diagnostics.json"), "w", encoding="utf-8") as fh:
        json.dump(diagnostics, fh, indent=2)
    if result.n_scenarios >= 100:
        plot_bins = min(100, max(2, result.n_scenarios // 10))
        s_mean, h_mean = binned_means(result.aggregate, result.h, plot_bins)
        render_lines(os.path.join(out_dir, "sharing_binned.png"), s_mean,
                     {f"unit {i + 1}": h_mean[:, i] for i in range(result.n_units)},
                     xlabel="s", ylabel="shared loss", title=result.descriptor)
    print(f"wrote sharing.csv and diagnostics.json to {out_dir}")
    return 0


def cmd_validate(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    fam_doc = doc.get("family")
    if fam_doc is None:
        raise ConfigError("validate config needs a 'family' entry")
    lines = []
    report: dict = {}
    ftype = fam_doc.get("type", "distortion")
    if ftype == "distortion":
        family = DistortionFamily.from_doc(fam_doc)
        validation = validate_family(family)
        for name in ("p_monotone", "theta_monotone", "theta_continuous",
                     "limit_at_lower", "limit_at_upper"):
            ok = getattr(validation, name)
            lines.append(f"{family.kind} {name}: {'pass' if ok else 'FAIL'}")
        report = {"kind": family.kind, "passed": validation.passed,
                  "failures": validation.failures}
    elif ftype == "weight":
        kind = fam_doc.get("kind", "size_biased")
        if kind == "custom":
            weight = WeightTable(theta_grid=tuple(fam_doc["theta_grid"]),
                                 s_grid=tuple(fam_doc["s_grid"]),
                                 values=tuple(tuple(r) for r in fam_doc["table"]))
            theta_grid = np.asarray(fam_doc["theta_grid"], dtype=float)
            s_grid = np.asarray(fam_doc["s_grid"], dtype=float)
        else:
            weight = kind
            theta_grid = np.linspace(-3.0, 3.0, 61)
            s_grid = np.linspace(0.05, 20.0, 80)
        mlr = weighted_mlr_check(weight, theta_grid, s_grid)
        lines.append(f"{kind} monotone_likelihood_ratio: {'pass' if mlr.passed else 'FAIL'}"
                     + (f" ({mlr.n_violations} violations)" if not mlr.passed else ""))
        report = {"kind": kind, "passed": mlr.passed,
                  "n_violations": mlr.n_violations,
                  "worst_violation": mlr.worst_violation}
    else:
        raise ConfigError(f"unknown family type {ftype!r}")
    for line in lines:
        print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "validation.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    return 0


def cmd_figures(args) -> int:
    out_dir = args.out or "figures"
    summary = run_benchmark_study(out_dir, n_scenarios=args.scenarios, seed=args.seed or 42)
    for (rule, cop) in ((r, c) for r in ("euler", "weighted") for c in ("clayton", "counter")):
        entry = summary[(rule, cop)]
        print(f"{rule}/{cop}: comonotonic={entry['comonotonic']} "
              f"sum_error_rel={entry['sum_error_rel']:.2e}")
    print(f"wrote figure data and renders to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskshare",
                                     description="risk sharing induced from "
                                                 "randomized capital allocation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="sample scenarios to CSV")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_share = sub.add_parser("share", help="induce a sharing rule, emit CSV + diagnostics")
    p_share.add_argument("--config", required=True)
    p_share.add_argument("--out", default=None)
    p_share.add_argument("--seed", type=int, default=None)
    p_share.add_argument("--bins", type=int, default=None)
    p_share.add_argument("--policy", choices=["inf", "sup", "cdf"], default=None)
    p_share.set_defaults(func=cmd_share)

    p_val = sub.add_parser("validate", help="validate a distortion or weight family")
    p_val.add_argument("--config", required=True)
    p_val.add_argument("--out", default=None)
    p_val.set_defaults(func=cmd_validate)

    p_fig = sub.add_parser("figures", help="emit the built-in benchmark figure data")
    p_fig.add_argument("--out", default=None)
    p_fig.add_argument("--seed", type=int, default=None)
    p_fig.add_argument("--scenarios", type=int, default=200_000)
    p_fig.set_defaults(func=cmd_figures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SurjectivityError,) as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
