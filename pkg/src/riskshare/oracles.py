"""Closed-form references and brute-force solvers used as independent ground
truth: multivariate-normal conditional means and quota rules, Gaussian TVaR,
the Lambert W function, the exponential-tilt capital inverse, constrained
quadratic minimization, and a survival-integral evaluation of distortion
risk measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .distortion import DistortionFamily
from .empirical import EmpiricalDistribution

__all__ = [
    "EllipticalParams",
    "normal_cmrs",
    "quota_euler_closed_form",
    "holistic_elliptical_quota",
    "gaussian_tvar",
    "lambert_w0",
    "normal_exponential_capital",
    "normal_exponential_theta",
    "solve_constrained_quadratic",
    "QuadraticSolution",
    "distortion_survival_integral",
]

_BRANCH_POINT = -np.exp(-1.0)


@dataclass(frozen=True)
class EllipticalParams:
    """Mean vector and covariance of a multivariate normal risk vector."""

    mu: tuple[float, ...]
    sigma: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        s = np.asarray(self.sigma, dtype=float)
        if s.shape != (len(self.mu), len(self.mu)) or not np.allclose(s, s.T, atol=1e-12):
            raise ValueError("sigma must be a symmetric matrix matching mu")
        try:
            np.linalg.cholesky(s)
        except np.linalg.LinAlgError as exc:
            raise ValueError("sigma must be positive definite") from exc

    @property
    def mu_vec(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=float)

    @property
    def sigma_mat(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)

    @property
    def mu_s(self) -> float:
        return float(self.mu_vec.sum())

    @property
    def sigma_s2(self) -> float:
        return float(self.sigma_mat.sum())

    @property
    def sigma_is(self) -> np.ndarray:
        return self.sigma_mat.sum(axis=1)

    @property
    def unit_sds(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma_mat))


def normal_cmrs(params: EllipticalParams, s, unit: int | None = None):
    """Conditional means mu_i + (sigma_iS / sigma_S^2)(s - mu_S); the
    components sum to s because the covariances with S sum to sigma_S^2."""
    s_arr = np.asarray(s, dtype=float)
    coeff = params.sigma_is / params.sigma_s2
    out = params.mu_vec + np.multiply.outer(s_arr - params.mu_s, coeff)
    if unit is not None:
        out = out[..., unit]
    return out if np.ndim(s) else (out if unit is None else float(out))


def quota_euler_closed_form(params: EllipticalParams, s) -> np.ndarray:
    """Quota rule produced by any distortion-Euler sharing on normal risks;
    identical to the conditional mean, named for the independence check."""
    return normal_cmrs(params, s)


def holistic_elliptical_quota(params: EllipticalParams, betas, beta: float, s):
    """Holistic quota rule on normal risks with identical unit distortions:
    H_i = mu_i + (sigma_i - beta_i (sum_j sigma_j - sigma_S)) /
    ((1 - beta) sigma_S + beta sum_j sigma_j) * (s - mu_S)."""
    s_arr = np.asarray(s, dtype=float)
    sds = params.unit_sds
    sigma_s = float(np.sqrt(params.sigma_s2))
    betas = np.asarray(betas, dtype=float)
    frac = (sds - betas * (sds.sum() - sigma_s)) / ((1.0 - beta) * sigma_s + beta * sds.sum())
    out = params.mu_vec + np.multiply.outer(s_arr - params.mu_s, frac)
    return out


def gaussian_tvar(mu: float, sigma: float, level: float) -> float:
    """Normal tail expectation mu + sigma * phi(Phi^{-1}(level)) / (1 - level)."""
    if not 0.0 <= level < 1.0:
        raise ValueError("level must be in [0, 1)")
    if level == 0.0:
        return float(mu)
    z = special.ndtri(level)
    pdf = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    return float(mu + sigma * pdf / (1.0 - level))


def lambert_w0(x):
    """Principal branch of the Lambert W function via Halley iteration,
    residual |w e^w - x| <= 1e-12 (1 + |x|) for x >= -1/e."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < _BRANCH_POINT - 1e-12):
        raise ValueError("lambert_w0 requires x >= -1/e")
    x_arr = np.maximum(x_arr, _BRANCH_POINT)

    # series init near the branch point, log-based elsewhere
    p = np.sqrt(np.maximum(2.0 * (np.e * x_arr + 1.0), 0.0))
    w_branch = -1.0 + p - p * p / 3.0 + 11.0 * p ** 3 / 72.0
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log(np.maximum(x_arr, 1e-300))
        w_log = lx - np.log(np.maximum(lx, 1e-300))
    w = np.where(x_arr < 0.25, w_branch, np.where(x_arr < np.e, np.log1p(x_arr) * 0.7, w_log))

    for _ in range(12):
        ew = np.exp(w)
        f = w * ew - x_arr
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * np.maximum(wp1, 1e-300))
        step = f / denom
        w = w - step
        if np.all(np.abs(f) <= 1e-13 * (1.0 + np.abs(x_arr))):
            break
    return w if np.ndim(x) else float(w)


def normal_exponential_capital(mu_s: float, sigma_s: float, theta: float) -> float:
    """Exponentially tilted aggregate capital of a normal sum:
    K(theta) = m exp((m^2 - mu_S^2) / (2 sigma_S^2)) with m = mu_S + theta sigma_S^2 / mu_S."""
    if mu_s == 0.0:
        raise ValueError("mu_s must be nonzero")
    m = mu_s + theta * sigma_s ** 2 / mu_s
    return float(m * np.exp((m * m - mu_s * mu_s) / (2.0 * sigma_s ** 2)))


def normal_exponential_theta(mu_s: float, sigma_s: float, s: float) -> float:
    """Inverse of the tilted capital through the Lambert W function:
    theta = (|mu_S| / sigma_S) sqrt(W0(s^2 / sigma_S^2 e^{mu_S^2/sigma_S^2})) - mu_S^2 / sigma_S^2."""
    if mu_s == 0.0:
        raise ValueError("mu_s must be nonzero")
    if s == 0.0 or np.sign(s) != np.sign(mu_s):
        raise ValueError("s must be nonzero with the sign of mu_s on the invertible branch")
    arg = (s * s / sigma_s ** 2) * np.exp(mu_s ** 2 / sigma_s ** 2)
    w = lambert_w0(arg)
    return float((abs(mu_s) / sigma_s) * np.sqrt(w) - mu_s ** 2 / sigma_s ** 2)


@dataclass(frozen=True)
class QuadraticSolution:
    x: np.ndarray
    multiplier: float
    kkt_residual: float


def solve_constrained_quadratic(hessian, linear, constraint_value: float | None = None) -> QuadraticSolution:
    """Minimize 0.5 x^T G x + c^T x, optionally subject to sum(x) = K, by a
    direct KKT factorization; reports the stationarity/feasibility residual."""
    g = np.asarray(hessian, dtype=float)
    c = np.asarray(linear, dtype=float)
    n = c.size
    if constraint_value is None:
        x = np.linalg.solve(g, -c)
        lam = 0.0
    else:
        kkt = np.zeros((n + 1, n + 1))
        kkt[:n, :n] = g
        kkt[:n, n] = 1.0
        kkt[n, :n] = 1.0
        rhs = np.concatenate([-c, [constraint_value]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError as exc:
            raise ValueError("singular KKT system (degenerate weights)") from exc
        x, lam = sol[:n], float(sol[n])
    grad = g @ x + c + lam
    resid = float(np.max(np.abs(grad)))
    if constraint_value is not None:
        resid = max(resid, abs(float(x.sum()) - constraint_value))
    return QuadraticSolution(x=x, multiplier=lam, kkt_residual=resid)


def distortion_survival_integral(family: DistortionFamily, theta: float,
                                 dist: EmpiricalDistribution) -> float:
    """Distortion risk measure via the survival-function integral
    -int_{-inf}^0 (1 - D(F̄(s))) ds + int_0^inf D(F̄(s)) ds, evaluated
    piecewise-exactly on the empirical step survival function. Independent
    of the Stieltjes-sum implementation."""
    if theta <= family.lower:
        return dist.min
    if theta >= family.upper:
        return dist.max
    vals, start = np.unique(dist.values, return_index=True)
    cum = dist.cumw[np.concatenate([start[1:] - 1, [dist.size - 1]])]
    surv_after = 1.0 - cum

    # below the smallest atom the survival is 1: D(1) = 1 contributes the
    # [0, x_min] stretch on the positive axis and nothing on the negative one
    total = max(float(vals[0]), 0.0)
    d_vals = np.asarray(family.eval(theta, surv_after[:-1]), dtype=float)
    a, b = vals[:-1], vals[1:]
    pos = np.maximum(b, 0.0) - np.maximum(a, 0.0)
    neg = np.minimum(b, 0.0) - np.minimum(a, 0.0)
    total += float(d_vals @ pos - (1.0 - d_vals) @ neg)
    return float(total)
