"""Joint risk models and reproducible Monte Carlo scenario generation.

A joint model is either a list of marginal laws coupled by a copula, or a
multivariate normal. Sampling uses counter-based Philox streams keyed by
(seed, column) so each column's driver is independent of generation order
and the whole scenario set is bit-reproducible from (model, seed).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

__all__ = [
    "MarginalSpec",
    "CopulaSpec",
    "JointModel",
    "ScenarioSet",
    "sample_joint",
    "marginal_quantile",
    "marginal_cdf",
]

_PROB_SUM_TOL = 1e-12
_ROWSUM_TOL = 1e-12


@dataclass(frozen=True)
class MarginalSpec:
    """One marginal loss law: gamma, normal, uniform or a finite atom list."""

    kind: str
    shape: float | None = None
    scale: float | None = None
    mean: float | None = None
    sd: float | None = None
    lo: float | None = None
    hi: float | None = None
    atoms: tuple[float, ...] | None = None
    probs: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind == "gamma":
            if self.shape is None or self.scale is None or self.shape <= 0 or self.scale <= 0:
                raise ValueError("gamma marginal requires shape > 0 and scale > 0")
        elif self.kind == "normal":
            if self.mean is None or self.sd is None or self.sd <= 0:
                raise ValueError("normal marginal requires finite mean and sd > 0")
        elif self.kind == "uniform":
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise ValueError("uniform marginal requires lo < hi")
        elif self.kind == "discrete":
            if not self.atoms or not self.probs or len(self.atoms) != len(self.probs):
                raise ValueError("discrete marginal requires matching atoms and probs")
            a = np.asarray(self.atoms, dtype=float)
            p = np.asarray(self.probs, dtype=float)
            if np.any(np.diff(a) <= 0):
                raise ValueError("discrete atoms must be strictly increasing")
            if np.any(p <= 0) or abs(p.sum() - 1.0) > _PROB_SUM_TOL:
                raise ValueError("discrete probs must be positive and sum to 1")
        else:
            raise ValueError(f"unknown marginal kind: {self.kind!r}")

    @classmethod
    def gamma(cls, shape: float, scale: float) -> "MarginalSpec":
        return cls(kind="gamma", shape=float(shape), scale=float(scale))

    @classmethod
    def normal(cls, mean: float, sd: float) -> "MarginalSpec":
        return cls(kind="normal", mean=float(mean), sd=float(sd))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "MarginalSpec":
        return cls(kind="uniform", lo=float(lo), hi=float(hi))

    @classmethod
    def discrete(cls, atoms: Sequence[float], probs: Sequence[float]) -> "MarginalSpec":
        return cls(kind="discrete", atoms=tuple(float(a) for a in atoms),
                   probs=tuple(float(p) for p in probs))

    def to_doc(self) -> dict:
        doc = {"kind": self.kind}
        for name in ("shape", "scale", "mean", "sd", "lo", "hi"):
            v = getattr(self, name)
            if v is not None:
                doc[name] = v
        if self.atoms is not None:
            doc["atoms"] = list(self.atoms)
            doc["probs"] = list(self.probs)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "MarginalSpec":
        kind = doc.get("kind")
        if kind == "discrete":
            return cls.discrete(doc["atoms"], doc["probs"])
        fields = {k: doc[k] for k in ("shape", "scale", "mean", "sd", "lo", "hi") if k in doc}
        return cls(kind=kind, **fields)


def marginal_quantile(spec: MarginalSpec, p):
    """Left-continuous quantile of a marginal, vectorized over p in [0, 1]."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr < 0.0) or np.any(p_arr > 1.0):
        raise ValueError("quantile level must be in [0, 1]")
    if spec.kind == "gamma":
        out = spec.scale * special.gammaincinv(spec.shape, p_arr)
    elif spec.kind == "normal":
        out = spec.mean + spec.sd * special.ndtri(p_arr)
    elif spec.kind == "uniform":
        out = spec.lo + p_arr * (spec.hi - spec.lo)
    else:
        atoms = np.asarray(spec.atoms, dtype=float)
        cum = np.cumsum(np.asarray(spec.probs, dtype=float))
        idx = np.searchsorted(cum, p_arr - 1e-12, side="left")
        out = atoms[np.clip(idx, 0, len(atoms) - 1)]
    return out if np.ndim(p) else float(out)


def marginal_cdf(spec: MarginalSpec, x):
    """Distribution function of a marginal, vectorized over x."""
    x_arr = np.asarray(x, dtype=float)
    if spec.kind == "gamma":
        out = special.gammainc(spec.shape, np.maximum(x_arr, 0.0) / spec.scale)
    elif spec.kind == "normal":
        out = special.ndtr((x_arr - spec.mean) / spec.sd)
    elif spec.kind == "uniform":
        out = np.clip((x_arr - spec.lo) / (spec.hi - spec.lo), 0.0, 1.0)
    else:
        atoms = np.asarray(spec.atoms, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(np.asarray(spec.probs, dtype=float))])
        out = cum[np.searchsorted(atoms, x_arr, side="right")]
    return out if np.ndim(x) else float(out)


@dataclass(frozen=True)
class CopulaSpec:
    """Dependence structure coupling the marginals."""

    kind: str
    theta: float | None = None
    corr: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.kind == "clayton":
            if self.theta is None or self.theta <= 0:
                raise ValueError("clayton copula requires theta > 0")
        elif self.kind == "gaussian":
            if self.corr is None:
                raise ValueError("gaussian copula requires a correlation matrix")
            c = np.asarray(self.corr, dtype=float)
            if c.ndim != 2 or c.shape[0] != c.shape[1]:
                raise ValueError("correlation matrix must be square")
            if not np.allclose(c, c.T, atol=1e-12) or not np.allclose(np.diag(c), 1.0, atol=1e-12):
                raise ValueError("correlation matrix must be symmetric with unit diagonal")
            if np.linalg.eigvalsh(c).min() < -1e-10:
                raise ValueError("correlation matrix must be positive semidefinite")
        elif self.kind not in ("counter_monotonic", "comonotonic", "independent"):
            raise ValueError(f"unknown copula kind: {self.kind!r}")

    @classmethod
    def clayton(cls, theta: float) -> "CopulaSpec":
        return cls(kind="clayton", theta=float(theta))

    @classmethod
    def counter_monotonic(cls) -> "CopulaSpec":
        return cls(kind="counter_monotonic")

    @classmethod
    def comonotonic(cls) -> "CopulaSpec":
        return cls(kind="comonotonic")

    @classmethod
    def independent(cls) -> "CopulaSpec":
        return cls(kind="independent")

    @classmethod
    def gaussian(cls, corr) -> "CopulaSpec":
        c = np.asarray(corr, dtype=float)
        return cls(kind="gaussian", corr=tuple(tuple(row) for row in c))

    def to_doc(self) -> dict:
        doc = {"kind": self.kind}
        if self.theta is not None:
            doc["theta"] = self.theta
        if self.corr is not None:
            doc["corr"] = [list(row) for row in self.corr]
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "CopulaSpec":
        kind = doc.get("kind")
        if kind == "clayton":
            return cls.clayton(doc["theta"])
        if kind == "gaussian":
            return cls.gaussian(doc["corr"])
        return cls(kind=kind)


@dataclass(frozen=True)
class JointModel:
    """Either (marginals, copula) or a multivariate normal (mu, sigma)."""

    marginals: tuple[MarginalSpec, ...] | None = None
    copula: CopulaSpec | None = None
    mu: tuple[float, ...] | None = None
    sigma: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.mu is not None:
            if self.marginals is not None:
                raise ValueError("model is either copula-based or multivariate normal, not both")
            s = np.asarray(self.sigma, dtype=float)
            if s.shape != (len(self.mu), len(self.mu)):
                raise ValueError("sigma shape must match mu length")
            if not np.allclose(s, s.T, atol=1e-12):
                raise ValueError("sigma must be symmetric")
            try:
                np.linalg.cholesky(s)
            except np.linalg.LinAlgError as exc:
                raise ValueError("sigma must be positive definite") from exc
            return
        if not self.marginals or self.copula is None:
            raise ValueError("copula-based model requires marginals and a copula")
        n = len(self.marginals)
        if self.copula.kind == "counter_monotonic" and n != 2:
            raise ValueError("counter-monotonic copula is defined only for n = 2")
        if self.copula.kind == "gaussian" and len(self.copula.corr) != n:
            raise ValueError("gaussian copula dimension must match number of marginals")

    @classmethod
    def from_marginals(cls, marginals: Sequence[MarginalSpec], copula: CopulaSpec) -> "JointModel":
        return cls(marginals=tuple(marginals), copula=copula)

    @classmethod
    def mvn(cls, mu, sigma) -> "JointModel":
        m = np.asarray(mu, dtype=float)
        s = np.asarray(sigma, dtype=float)
        return cls(mu=tuple(m), sigma=tuple(tuple(row) for row in s))

    @property
    def n_units(self) -> int:
        return len(self.mu) if self.mu is not None else len(self.marginals)

    def to_doc(self) -> dict:
        if self.mu is not None:
            return {"mvn": {"mu": list(self.mu), "sigma": [list(r) for r in self.sigma]}}
        return {"marginals": [m.to_doc() for m in self.marginals],
                "copula": self.copula.to_doc()}

    @classmethod
    def from_doc(cls, doc: dict) -> "JointModel":
        if "mvn" in doc:
            return cls.mvn(doc["mvn"]["mu"], doc["mvn"]["sigma"])
        marginals = [MarginalSpec.from_doc(d) for d in doc["marginals"]]
        return cls.from_marginals(marginals, CopulaSpec.from_doc(doc["copula"]))

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_doc(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ScenarioSet:
    """Immutable N x n matrix of simulated losses plus the aggregate column."""

    losses: np.ndarray
    aggregate: np.ndarray
    seed: int
    model_fingerprint: str

    def __post_init__(self) -> None:
        losses = np.ascontiguousarray(self.losses, dtype=float)
        aggregate = np.ascontiguousarray(self.aggregate, dtype=float)
        if losses.ndim != 2 or aggregate.shape != (losses.shape[0],):
            raise ValueError("losses must be N x n with a length-N aggregate")
        err = np.abs(aggregate - losses.sum(axis=1))
        if np.any(err > _ROWSUM_TOL * (1.0 + np.abs(aggregate))):
            raise ValueError("aggregate column inconsistent with row sums")
        losses.setflags(write=False)
        aggregate.setflags(write=False)
        object.__setattr__(self, "losses", losses)
        object.__setattr__(self, "aggregate", aggregate)

    @property
    def n_scenarios(self) -> int:
        return self.losses.shape[0]

    @property
    def n_units(self) -> int:
        return self.losses.shape[1]

    def unit(self, i: int) -> np.ndarray:
        return self.losses[:, i]

    @classmethod
    def from_losses(cls, losses, seed: int = 0, model_fingerprint: str = "") -> "ScenarioSet":
        losses = np.asarray(losses, dtype=float)
        return cls(losses=losses, aggregate=losses.sum(axis=1),
                   seed=seed, model_fingerprint=model_fingerprint)


def _stream(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def _uniforms(seed: int, index: int, n: int) -> np.ndarray:
    u = _stream(seed, index).random(n)
    # random() can in principle return exactly 0, which maps to -inf quantiles
    u[u == 0.0] = 2.0 ** -53
    return u


def _copula_uniforms(copula: CopulaSpec, n_units: int, n: int, seed: int) -> np.ndarray:
    if copula.kind == "independent":
        return np.column_stack([_uniforms(seed, j, n) for j in range(n_units)])
    if copula.kind == "comonotonic":
        u = _uniforms(seed, 0, n)
        return np.tile(u[:, None], (1, n_units))
    if copula.kind == "counter_monotonic":
        u = _uniforms(seed, 0, n)
        return np.column_stack([u, 1.0 - u])
    if copula.kind == "clayton":
        theta = copula.theta
        if n_units == 2:
            # conditional inversion: exact for the bivariate case
            u1 = _uniforms(seed, 0, n)
            p = _uniforms(seed, 1, n)
            u2 = (u1 ** -theta * (p ** (-theta / (1.0 + theta)) - 1.0) + 1.0) ** (-1.0 / theta)
            return np.column_stack([u1, u2])
        # gamma-frailty construction for higher dimensions
        w = _stream(seed, n_units).gamma(1.0 / theta, 1.0, size=n)
        cols = []
        for j in range(n_units):
            v = _uniforms(seed, j, n)
            cols.append((1.0 - np.log(v) / w) ** (-1.0 / theta))
        return np.column_stack(cols)
    # gaussian
    corr = np.asarray(copula.corr, dtype=float)
    vals, vecs = np.linalg.eigh(corr)
    factor = vecs * np.sqrt(np.maximum(vals, 0.0))
    z = np.column_stack([_stream(seed, j).standard_normal(n) for j in range(n_units)])
    return special.ndtr(z @ factor.T)


def sample_joint(model: JointModel, n_scenarios: int, seed: int) -> ScenarioSet:
    """Draw a reproducible scenario set from the joint model.

    Deterministic given (model, n_scenarios, seed): each column's driver
    comes from its own Philox stream keyed by (seed, column).
    """
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    n = int(n_scenarios)
    if model.mu is not None:
        sigma = np.asarray(model.sigma, dtype=float)
        chol = np.linalg.cholesky(sigma)
        z = np.column_stack([_stream(seed, j).standard_normal(n)
                             for j in range(model.n_units)])
        losses = np.asarray(model.mu, dtype=float) + z @ chol.T
    else:
        u = _copula_uniforms(model.copula, model.n_units, n, seed)
        losses = np.column_stack([marginal_quantile(m, u[:, j])
                                  for j, m in enumerate(model.marginals)])
    return ScenarioSet(losses=losses, aggregate=losses.sum(axis=1),
                       seed=int(seed), model_fingerprint=model.fingerprint())
