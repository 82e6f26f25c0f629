"""Replicated AMP experiments: problem instances, SE baselines and deviation statistics.

A :class:`Setup` fixes everything except the replication seed. The signal
and noise streams depend only on the replication seed, so runs with
different ensembles but the same seed share ``x0`` and ``w``.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Union

import numpy as np

from . import rng
from .amp import AmpProblem, AmpTrajectory, run
from .denoisers import KAPPA_DEFAULT, Denoiser, Schedule
from .distributions import (
    BernoulliGaussian,
    Gaussian,
    QuadratureRule,
    ScalarDistribution,
    gauss_hermite,
    sample,
)
from .ensembles import EnsembleSpec, generate, preset
from .errors import InvalidInput
from .state_evolution import SeParams, SeTrajectory, cs_se_params, se_coupled_thresholds, se_run

# the compressed-sensing benchmark used throughout the acceptance suite
BENCH_X0 = BernoulliGaussian(0.1, 1.0)
BENCH_W = Gaussian(0.0, 1e-4)
BENCH_RHO = 0.5
BENCH_N = 2000
BENCH_T = 10
DEVIATION_FLOOR = 1e-6

Q0Rule = Union[str, ScalarDistribution]
Q0_RULES = ("cs_cold", "signal", "zero")


def rows_for(rho: float, N: int) -> int:
    n = int(round(rho * N))
    if not 1 <= n <= N:
        raise InvalidInput(f"rho={rho} and N={N} give n={n}, outside [1, N]")
    return n


@dataclass
class Setup:
    ensemble: EnsembleSpec
    dist_x0: ScalarDistribution
    dist_w: ScalarDistribution
    N: int
    n: int
    T: int
    f: Denoiser
    g: Denoiser
    q0_rule: Q0Rule
    se_params: SeParams
    se: SeTrajectory
    thetas: Optional[List[float]] = None

    @property
    def rho(self) -> float:
        return self.n / self.N


def q0_second_moment(rule: Q0Rule, dist_x0: ScalarDistribution) -> float:
    if isinstance(rule, ScalarDistribution):
        return rule.raw_moment(2)
    if rule in ("cs_cold", "signal"):
        return dist_x0.raw_moment(2)
    if rule == "zero":
        return 0.0
    raise InvalidInput(f"unknown q0 rule {rule!r}; choose from {Q0_RULES} or a distribution")


def cs_setup(ensemble: EnsembleSpec, dist_x0: ScalarDistribution = BENCH_X0,
             dist_w: ScalarDistribution = BENCH_W, rho: float = BENCH_RHO, N: int = BENCH_N,
             T: int = BENCH_T, kappa: float = KAPPA_DEFAULT, thetas: Optional[Sequence[float]] = None,
             rule: Optional[QuadratureRule] = None) -> Setup:
    """Soft-thresholding CS setup from a cold start.

    Thresholds are ``kappa * tau_t`` resolved jointly with SE unless an
    explicit ``thetas`` schedule is given.
    """
    n = rows_for(rho, N)
    rho = n / N
    kw = {"rule": rule} if rule is not None else {}
    if thetas is None:
        thetas, se, params = se_coupled_thresholds(rho, dist_x0, dist_w, T, kappa, **kw)
    else:
        thetas = [float(x) for x in thetas]
        params = cs_se_params(rho, dist_x0, dist_w, Schedule(thetas), **kw)
        se = se_run(params, T)
    return Setup(ensemble, dist_x0, dist_w, N, n, T, params.f, params.g, "cs_cold", params, se, list(thetas))


def generic_setup(ensemble: EnsembleSpec, dist_x0: ScalarDistribution, dist_w: ScalarDistribution,
                  rho: float, N: int, T: int, f: Denoiser, g: Denoiser, q0_rule: Q0Rule = "signal",
                  rule: Optional[QuadratureRule] = None) -> Setup:
    n = rows_for(rho, N)
    rho = n / N
    params = SeParams(rho, dist_x0, dist_w, f, g, q0_second_moment(q0_rule, dist_x0) / rho,
                      rule=rule or gauss_hermite())
    return Setup(ensemble, dist_x0, dist_w, N, n, T, f, g, q0_rule, params, se_run(params, T))


def instance(setup: Setup, rep_seed: int, ensemble: Optional[EnsembleSpec] = None):
    """``(problem, q0)`` for one replication. ``ensemble`` overrides the setup's."""
    x0 = sample(setup.dist_x0, setup.N, rep_seed, rng.SIGNAL)
    w = sample(setup.dist_w, setup.n, rep_seed, rng.NOISE)
    A = generate(ensemble or setup.ensemble, setup.n, setup.N, rep_seed)
    problem = AmpProblem(A, x0, w)
    rule = setup.q0_rule
    if isinstance(rule, ScalarDistribution):
        q0 = sample(rule, setup.N, rep_seed, rng.INIT)
    elif rule == "cs_cold":
        q0 = -x0
    elif rule == "signal":
        q0 = x0.copy()
    elif rule == "zero":
        q0 = np.zeros(setup.N)
    else:
        raise InvalidInput(f"unknown q0 rule {rule!r}")
    return problem, q0


def run_replication(setup: Setup, rep_seed: int, onsager: bool = True, retain=None,
                    ensemble: Optional[EnsembleSpec] = None) -> AmpTrajectory:
    problem, q0 = instance(setup, rep_seed, ensemble)
    return run(problem, q0, setup.f, setup.g, setup.T, retain=retain, onsager=onsager)


def se_relative_deviation(traj: AmpTrajectory, se: SeTrajectory) -> np.ndarray:
    """``|<q^t, q^t>/rho - sigma_t^2| / max(sigma_t^2, 1e-6)`` for ``t = 0 .. T-1``."""
    if se.T + 1 < traj.T:
        raise InvalidInput(f"SE trajectory covers {se.T + 1} steps, run has {traj.T}")
    emp = traj.qq / traj.rho
    sig = np.asarray(se.sigma_sq[: traj.T], dtype=float)
    return np.abs(emp - sig) / np.maximum(sig, DEVIATION_FLOOR)


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("AMP_EVOLVE_JOBS", "1")))
    except ValueError:
        raise InvalidInput("AMP_EVOLVE_JOBS must be an integer") from None


def replicate(task: Callable, items: Iterable, jobs: int = 1) -> list:
    """Map ``task`` over ``items``, in order. ``jobs > 1`` uses worker processes,
    so ``task`` and the items must be picklable."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [task(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(task, items))


def benchmark_ensembles() -> dict:
    return {name: preset(name) for name in ("gaussian", "rademacher", "checkerboard", "position_hash")}
