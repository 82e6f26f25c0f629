"""Scalar state evolution and single-time observable predictions.

    tau_t^2   = E[g_t(sigma_t Z, W)^2]
    sigma_t^2 = E[f_t(tau_{t-1} Z, X0)^2] / rho,   t >= 1

``sigma_0^2`` is an input. Within a sweep, ``sigma_t`` is computed from
``tau_{t-1}`` first and ``tau_t`` from ``sigma_t`` second.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from . import rng
from .amp import CSV_SCHEMA_LINE
from .denoisers import KAPPA_DEFAULT, Denoiser, Schedule, cs_soft_threshold_f, residual
from .distributions import (
    DEFAULT_MC_BUDGET,
    DEFAULT_ORDER,
    Kinks,
    QuadratureRule,
    ScalarDistribution,
    expect_gauss_aux,
    gauss_hermite,
    sample,
)
from .errors import InvalidInput, NumericalFailure


@dataclass(frozen=True)
class SeParams:
    rho: float
    dist_x0: ScalarDistribution
    dist_w: ScalarDistribution
    f: Denoiser
    g: Denoiser
    sigma0_sq: float
    rule: QuadratureRule = field(default_factory=lambda: gauss_hermite(DEFAULT_ORDER))
    mc_budget: int = DEFAULT_MC_BUDGET
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.rho and math.isfinite(self.rho)):
            raise InvalidInput(f"rho must be positive, got {self.rho}")
        if not (self.sigma0_sq >= 0 and math.isfinite(self.sigma0_sq)):
            raise InvalidInput(f"sigma0_sq must be finite and >= 0, got {self.sigma0_sq}")


@dataclass
class SeTrajectory:
    sigma_sq: List[float]
    tau_sq: List[float]

    @property
    def T(self) -> int:
        return len(self.sigma_sq) - 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_SCHEMA_LINE + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "sigma_sq", "tau_sq"])
        for t, (s, tau) in enumerate(zip(self.sigma_sq, self.tau_sq)):
            w.writerow([t, repr(float(s)), repr(float(tau))])
        return buf.getvalue()


def _squared(d: Denoiser, t: int) -> Callable:
    return lambda u, s: np.square(d.fn(t, u, s))


def _expect(params: SeParams, fn, scale, aux, kinks, what):
    val = expect_gauss_aux(fn, math.sqrt(scale), aux, params.rule, params.mc_budget, kinks, params.seed)
    if not (math.isfinite(val) and val >= -1e-15):
        raise NumericalFailure(f"{what} expectation is {val}")
    return max(val, 0.0)


def tau_from_sigma(params: SeParams, t: int, sigma_sq: float) -> float:
    return _expect(params, _squared(params.g, t), sigma_sq, params.dist_w, params.g.kinks(t), f"tau_{t}^2")


def sigma_from_tau(params: SeParams, t: int, tau_prev_sq: float) -> float:
    val = _expect(params, _squared(params.f, t), tau_prev_sq, params.dist_x0, params.f.kinks(t), f"sigma_{t}^2")
    return val / params.rho


def se_step(params: SeParams, t: int, tau_prev_sq: Optional[float] = None):
    """Return ``(sigma_t^2, tau_t^2)``; ``tau_prev_sq`` is required for ``t >= 1``."""
    if t == 0:
        sigma_sq = params.sigma0_sq
    else:
        if tau_prev_sq is None or tau_prev_sq < 0:
            raise InvalidInput("se_step at t >= 1 needs tau_{t-1}^2 >= 0")
        sigma_sq = sigma_from_tau(params, t, tau_prev_sq)
    return sigma_sq, tau_from_sigma(params, t, sigma_sq)


def se_run(params: SeParams, T: int) -> SeTrajectory:
    if int(T) != T or T < 0:
        raise InvalidInput(f"T must be a nonnegative integer, got {T}")
    s, tau = se_step(params, 0)
    sig, taus = [s], [tau]
    for t in range(1, int(T) + 1):
        s, tau = se_step(params, t, tau)
        sig.append(s)
        taus.append(tau)
    return SeTrajectory(sig, taus)


@dataclass
class FixedPointResult:
    sigma_sq: float
    tau_sq: float
    iterations: int
    converged: bool
    status: str


def se_fixed_point(params: SeParams, tol: float = 1e-12, max_iter: int = 1000,
                   blowup: float = 1e12) -> FixedPointResult:
    """Iterate time-homogeneous SE until ``|d sigma^2| + |d tau^2| < tol``.

    ``iterations`` is the first ``t`` whose state is already fixed, so a
    recursion that settles after one step reports 1.
    """
    if not tol > 0:
        raise InvalidInput("tol must be positive")
    s, tau = se_step(params, 0)
    for t in range(1, max_iter + 1):
        try:
            s_new, tau_new = se_step(params, t, tau)
        except NumericalFailure:
            return FixedPointResult(s, tau, t, False, "diverged")
        if abs(s_new - s) + abs(tau_new - tau) < tol:
            return FixedPointResult(s_new, tau_new, t - 1, True, "converged")
        s, tau = s_new, tau_new
        if s > blowup or tau > blowup:
            return FixedPointResult(s, tau, t, False, "diverged")
    return FixedPointResult(s, tau, max_iter, False, "max_iter")


def predict_observable_b(params: SeParams, se: SeTrajectory, t: int, phi: Callable,
                         kinks: Optional[Kinks] = None) -> float:
    """``E[phi(sigma_t Z, W)]``."""
    if not 0 <= t <= se.T:
        raise InvalidInput(f"t={t} outside the SE trajectory (T={se.T})")
    return expect_gauss_aux(phi, math.sqrt(se.sigma_sq[t]), params.dist_w, params.rule,
                            params.mc_budget, kinks, params.seed)


def predict_observable_h(params: SeParams, se: SeTrajectory, t: int, phi: Callable,
                         kinks: Optional[Kinks] = None) -> float:
    """``E[phi(tau_t Z, X0)]``."""
    if not 0 <= t <= se.T:
        raise InvalidInput(f"t={t} outside the SE trajectory (T={se.T})")
    return expect_gauss_aux(phi, math.sqrt(se.tau_sq[t]), params.dist_x0, params.rule,
                            params.mc_budget, kinks, params.seed)


def predict_observable_joint(cov: np.ndarray, aux: ScalarDistribution, phi: Callable,
                             samples: int = 200_000, seed: int = 0):
    """Monte Carlo ``E[phi(G_1, ..., G_k, X)]`` with ``G ~ N(0, cov)`` independent of ``X ~ aux``.

    ``phi`` receives an array of shape ``(samples, k)`` and an array of
    ``samples`` auxiliary draws. Returns ``(estimate, standard_error)``.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    gen = rng.generator(seed, rng.MONTE_CARLO, 1)
    G = gen.standard_normal((samples, cov.shape[0])) @ root.T
    X = sample(aux, samples, seed, rng.MONTE_CARLO)
    v = np.asarray(phi(G, X), dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(samples))


def cs_se_params(rho, dist_x0, dist_w, theta_schedule, sigma0_sq=None, theta_init=math.inf, **kw) -> SeParams:
    """SE parameters for the compressed-sensing adapter (``g = b - w``)."""
    if sigma0_sq is None:
        sigma0_sq = dist_x0.raw_moment(2) / rho if math.isinf(theta_init) else None
        if sigma0_sq is None:
            raise InvalidInput("sigma0_sq must be given when theta_init is finite")
    f = cs_soft_threshold_f(theta_schedule, theta_init)
    return SeParams(rho, dist_x0, dist_w, f, residual(), sigma0_sq, **kw)


def se_coupled_thresholds(rho, dist_x0, dist_w, T: int, kappa: float = KAPPA_DEFAULT,
                          sigma0_sq=None, **kw):
    """Resolve ``theta_t = kappa * tau_t`` jointly with the SE of the CS adapter.

    Returns ``(thetas, se, params)``: ``thetas[t]`` for ``t = 0..T``, the SE
    trajectory through ``T``, and SE parameters carrying the resolved ``f``. ``f_t`` uses ``thetas[t-1]``, which only
    depends on ``tau_{t-1}``, so the two sequences resolve in one sweep.
    """
    params = cs_se_params(rho, dist_x0, dist_w, Schedule([]), sigma0_sq, **kw)
    s, tau = se_step(params, 0)
    sig, taus, thetas = [s], [tau], [kappa * math.sqrt(tau)]
    for t in range(1, int(T) + 1):
        params = replace(params, f=cs_soft_threshold_f(Schedule(thetas)))
        s, tau = se_step(params, t, tau)
        sig.append(s)
        taus.append(tau)
        thetas.append(kappa * math.sqrt(tau))
    return thetas, SeTrajectory(sig, taus), replace(params, f=cs_soft_threshold_f(Schedule(thetas)))
