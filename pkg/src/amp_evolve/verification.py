"""Finite-n checks of the AMP limit statements and the conditioning machinery.

Every check reduces a limit statement to a statistic and a threshold.
Thresholds are either fixed by the caller, derived from a Monte Carlo
standard error, or taken from a pilot run on the i.i.d. Gaussian ensemble
(where the statements are classical) and reused for other ensembles.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from . import rng
from .amp import AmpTrajectory
from .denoisers import ControlledBound
from .distributions import Kinks, ScalarDistribution, abs_moment
from .empirical import as_sample, emp_mean, emp_second_moment, ks_distance, power_mean
from .ensembles import EnsembleSpec, generate
from .errors import (
    BoundViolation,
    InconsistentConstraints,
    InvalidInput,
    RankDeficient,
    Unsupported,
)
from .state_evolution import (
    SeParams,
    SeTrajectory,
    predict_observable_b,
    predict_observable_h,
    predict_observable_joint,
)

COND_LIMIT = 1e10
INNER_C_DEFAULT = 8.0
KS_LEVEL = 0.01


# --------------------------------------------------------------------------
# reports


@dataclass
class Check:
    name: str
    statistic: float
    threshold: float
    passed: bool
    rule: str = ""
    n: Optional[int] = None
    N: Optional[int] = None
    reps: Optional[int] = None
    seed: Optional[int] = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


@dataclass
class VerificationReport:
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def pass_rate(self) -> float:
        return sum(c.passed for c in self.checks) / len(self.checks) if self.checks else 1.0

    def add(self, name: str, statistic: float, threshold: float, passed: Optional[bool] = None,
            **kw) -> Check:
        statistic, threshold = float(statistic), float(threshold)
        if passed is None:
            passed = bool(statistic <= threshold)
        c = Check(name, statistic, threshold, bool(passed), **kw)
        self.checks.append(c)
        return c

    def extend(self, other: "VerificationReport") -> "VerificationReport":
        self.checks.extend(other.checks)
        return self

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=_json_default)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x).__name__}")


# --------------------------------------------------------------------------
# projections


@dataclass
class ProjectionDecomposition:
    coefficients: np.ndarray
    parallel: np.ndarray
    perp: np.ndarray
    gram_condition: float
    perp_second_moment: float
    rank_deficient: bool = False


def _svd(B: np.ndarray):
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        cond = math.inf
    else:
        cond = (s[0] / s[-1]) ** 2 if s[-1] > 0 else math.inf
    return U, s, Vt, cond


def decompose(v, basis: Sequence, strict: bool = True, cond_limit: float = COND_LIMIT) -> ProjectionDecomposition:
    """Least-squares split ``v = parallel + perp`` against the span of ``basis``.

    ``gram_condition`` is the condition number of the basis Gram matrix.
    Above ``cond_limit`` a strict call raises :class:`RankDeficient`;
    otherwise a truncated pseudo-inverse is used and the result is
    flagged. ``perp_second_moment`` is ``<perp, perp>``.
    """
    v = as_sample(v)
    if len(basis) == 0:
        return ProjectionDecomposition(np.zeros(0), np.zeros_like(v), v.copy(), 1.0, emp_second_moment(v))
    B = np.column_stack([as_sample(b, "basis vector") for b in basis])
    if B.shape[0] != v.size:
        raise InvalidInput(f"basis vectors have length {B.shape[0]}, v has {v.size}")
    U, s, Vt, cond = _svd(B)
    deficient = not cond <= cond_limit
    if deficient and strict:
        raise RankDeficient(f"basis Gram condition number {cond:.3g} exceeds {cond_limit:.3g}")
    keep = s > s[0] / math.sqrt(cond_limit) if s[0] > 0 else np.zeros_like(s, dtype=bool)
    coef = Vt[keep].T @ ((U[:, keep].T @ v) / s[keep])
    parallel = B @ coef
    perp = v - parallel
    return ProjectionDecomposition(coef, parallel, perp, cond, emp_second_moment(perp), deficient)


# --------------------------------------------------------------------------
# checks on trajectories


def check_inner_identities(traj: AmpTrajectory, rho: Optional[float] = None,
                           C: float = INNER_C_DEFAULT) -> VerificationReport:
    """``<b^s, b^r>`` against ``<q^s, q^r>/rho`` and ``<h^{s+1}, h^{r+1}>`` against ``<m^s, m^r>``."""
    if any(g is None for g in (traj.gram_q, traj.gram_b, traj.gram_m, traj.gram_h)):
        raise InvalidInput("trajectory has no Gram tables")
    rho = traj.rho if rho is None else rho
    tol = C / math.sqrt(traj.n)
    report = VerificationReport()
    rule = f"C/sqrt(n), C={C:g}"
    for t1 in range(traj.T):
        for t2 in range(t1, traj.T):
            db = abs(traj.gram_b[t1, t2] - traj.gram_q[t1, t2] / rho)
            dh = abs(traj.gram_h[t1, t2] - traj.gram_m[t1, t2])
            report.add(f"b[{t1},{t2}]", db, tol, rule=rule, n=traj.n, N=traj.N)
            report.add(f"h[{t1 + 1},{t2 + 1}]", dh, tol, rule=rule, n=traj.n, N=traj.N)
    return report


@dataclass
class Observable:
    """``phi(u, s)`` on the ``b`` side (``s = w``) or ``h`` side (``s = x0``).

    With one time, ``u`` is a vector; with several, ``u`` has one column
    per time. On the ``h`` side, time ``t`` refers to ``h^{t+1}``, which
    state evolution pairs with ``tau_t``.
    """

    fn: Callable
    times: Tuple[int, ...]
    side: str = "b"
    bound: Optional[ControlledBound] = None
    kinks: Optional[Kinks] = None
    name: str = "phi"

    def __post_init__(self):
        self.times = tuple(int(t) for t in self.times)
        if not self.times:
            raise InvalidInput("an observable needs at least one time")
        if self.side not in ("b", "h"):
            raise InvalidInput(f"side must be 'b' or 'h', got {self.side!r}")


def _check_bound(obs: Observable, U: np.ndarray, s: np.ndarray, vals: np.ndarray) -> None:
    if obs.bound is None:
        return
    lam, c2 = obs.bound.lam, obs.bound.c2
    log_env = math.log(obs.bound.c1) + c2 * (np.sum(np.abs(U) ** lam, axis=1) + np.abs(s) ** lam)
    with np.errstate(divide="ignore"):
        excess = np.log(np.abs(vals)) - log_env
    worst = int(np.argmax(excess))
    if excess[worst] > 1e-9:
        raise BoundViolation(
            f"{obs.name} exceeds its controlled bound at entry {worst} (log margin {excess[worst]:.3g})"
        )


def observed_average(traj: AmpTrajectory, obs: Observable) -> Tuple[float, float, int]:
    """Empirical average of ``phi`` over the iterates, its standard error and the length."""
    kind, aux = ("b", traj.w) if obs.side == "b" else ("h", traj.x0)
    if aux is None:
        raise InvalidInput("trajectory does not carry x0/w")
    if not traj.has_vectors([kind], obs.times):
        raise InvalidInput(f"{kind} vectors for times {obs.times} were not retained")
    U = np.column_stack([traj.vector(kind, t) for t in obs.times])
    vals = np.asarray(obs.fn(U[:, 0] if U.shape[1] == 1 else U, aux), dtype=float)
    if vals.shape != (U.shape[0],) or not np.all(np.isfinite(vals)):
        raise InvalidInput(f"{obs.name} must return one finite value per entry")
    _check_bound(obs, U, aux, vals)
    return emp_mean(vals), float(np.std(vals, ddof=1) / math.sqrt(vals.size)), vals.size


def predicted_average(traj: AmpTrajectory, params: SeParams, se: Optional[SeTrajectory],
                      obs: Observable, covariance_source: str = "se",
                      mc_samples: int = 200_000, seed: int = 0) -> Tuple[float, float]:
    """Gaussian-limit prediction of ``phi`` and its Monte Carlo standard error.

    A single time with ``covariance_source="se"`` uses quadrature against
    the SE variance. Otherwise the joint law uses the empirical Gram
    matrix: ``<q^s, q^r>/rho`` on the ``b`` side, ``<m^s, m^r>`` on the
    ``h`` side.
    """
    if len(obs.times) == 1 and covariance_source == "se":
        if se is None:
            raise InvalidInput("covariance_source='se' needs an SE trajectory")
        predict = predict_observable_b if obs.side == "b" else predict_observable_h
        return float(predict(params, se, obs.times[0], obs.fn, obs.kinks)), 0.0
    if covariance_source not in ("se", "empirical"):
        raise Unsupported(f"unknown covariance source {covariance_source!r}")
    idx = np.array(obs.times)
    if obs.side == "b":
        cov, aux = traj.gram_q[np.ix_(idx, idx)] / traj.rho, params.dist_w
    else:
        cov, aux = traj.gram_m[np.ix_(idx, idx)], params.dist_x0
    single = len(obs.times) == 1
    phi = (lambda G, X: obs.fn(G[:, 0], X)) if single else obs.fn
    return predict_observable_joint(cov, aux, phi, mc_samples, seed)


def check_observable(traj: AmpTrajectory, params: SeParams, se: Optional[SeTrajectory],
                     obs: Observable, covariance_source: str = "se", k: float = 3.0,
                     standard_error: Optional[float] = None, mc_samples: int = 200_000,
                     seed: int = 0) -> VerificationReport:
    """Compare the empirical average of ``phi`` with its Gaussian-limit prediction.

    The threshold is ``k`` standard errors. By default the standard error
    combines the sample standard error of the average with the Monte
    Carlo error of the prediction; pass ``standard_error`` to use a
    pilot-calibrated value instead.
    """
    emp, se_emp, length = observed_average(traj, obs)
    pred, se_pred = predicted_average(traj, params, se, obs, covariance_source, mc_samples, seed)
    if standard_error is None:
        scale, rule = math.hypot(se_emp, se_pred), f"{k:g} x sample/MC standard error"
    else:
        scale, rule = float(standard_error), f"{k:g} x pilot standard error"
    report = VerificationReport()
    report.add(
        f"{obs.name}{obs.side}{list(obs.times)}",
        abs(emp - pred),
        k * scale,
        rule=rule,
        n=traj.n,
        N=traj.N,
        seed=seed,
        details={"empirical": emp, "predicted": pred, "sample_se": se_emp, "mc_se": se_pred, "length": length},
    )
    return report


def pilot_standard_error(deviations: Sequence[float]) -> float:
    """Root-mean-square of pilot deviations ``empirical - predicted``.

    This absorbs finite-n bias as well as sampling noise, which is the
    point: it measures how far a correct run lands from the limit.
    """
    d = np.asarray(deviations, dtype=float)
    if d.size < 2:
        raise InvalidInput("pilot calibration needs at least two runs")
    return float(math.sqrt(np.mean(d * d)))


def perp_moment_check(traj: AmpTrajectory, alpha: float, slack: float = 1e-9) -> VerificationReport:
    """Moments of ``q^t_perp`` and ``m^t_perp`` against those of ``q^t`` and ``m^t``.

    The perpendicular parts come from projecting onto all earlier iterates
    of the same kind. Near-collinear bases fall back to a truncated
    pseudo-inverse and are flagged in the details.
    """
    if not alpha > 1:
        raise InvalidInput(f"alpha must exceed 1, got {alpha}")
    if not traj.has_vectors(("q", "m")):
        raise InvalidInput("perp_moment_check needs every q^t and m^t retained")
    p = 2.0 + 2.0 * alpha
    report = VerificationReport()
    for kind in ("q", "m"):
        vecs = [traj.vector(kind, t) for t in range(traj.T)]
        for t, v in enumerate(vecs):
            dec = decompose(v, vecs[:t], strict=False)
            full, perp = power_mean(v, p), power_mean(dec.perp, p)
            report.add(
                f"{kind}_perp[{t}]",
                perp,
                full + slack,
                passed=bool(math.isfinite(perp) and perp <= full + slack),
                rule="full-vector moment + 1e-9",
                n=traj.n,
                N=traj.N,
                details={"order": p, "full": full, "gram_condition": dec.gram_condition,
                         "rank_deficient": dec.rank_deficient},
            )
    return report


# --------------------------------------------------------------------------
# Gaussianity


def ks_critical(n: int, level: float = KS_LEVEL) -> float:
    """Upper ``level`` quantile of the exact one-sample KS distribution."""
    return float(stats.kstwo.isf(level, int(n)))


def gaussianity_report(v, predicted_var: float, ks_threshold: Optional[float] = None,
                       name: str = "ks") -> VerificationReport:
    """KS distance of ``v / sqrt(predicted_var)`` from the standard normal.

    Skewness and excess-kurtosis z-scores are reported alongside. The
    default threshold is the exact 1% critical value for ``len(v)``.
    """
    v = as_sample(v)
    n = v.size
    thr = ks_critical(n) if ks_threshold is None else float(ks_threshold)
    rule = "KS 1% critical value" if ks_threshold is None else "fixed"
    report = VerificationReport()
    if predicted_var == 0:
        if np.any(v != 0):
            raise InvalidInput("predicted_var is 0 but v is not identically 0")
        report.add(name, 0.0, thr, rule=rule, n=n, details={"degenerate": True})
        return report
    if not predicted_var > 0:
        raise InvalidInput(f"predicted_var must be positive, got {predicted_var}")
    z = v / math.sqrt(predicted_var)
    ks = ks_distance(z, stats.norm.cdf)
    details = {"skew_z": math.nan, "kurtosis_z": math.nan}
    if n > 3 and np.ptp(z) > 0:
        details["skew_z"] = float(stats.skew(z) / math.sqrt(6.0 / n))
        details["kurtosis_z"] = float(stats.kurtosis(z) / math.sqrt(24.0 / n))
    details["variance_ratio"] = emp_second_moment(z)
    report.add(name, ks, thr, rule=rule, n=n, details=details)
    return report


def lindeberg_empirical(spec: EnsembleSpec, v, n: int, reps: int, seed: int,
                        ks_threshold: Optional[float] = None) -> VerificationReport:
    """Pool the entries of ``A v`` over ``reps`` fresh matrices and test for ``N(0, <v^2>/rho)``."""
    v = as_sample(v)
    N = v.size
    pooled = np.concatenate(
        [generate(spec, n, N, rng.replication_seed(seed, r)) @ v for r in range(int(reps))]
    )
    report = gaussianity_report(pooled, emp_second_moment(v) * N / n, ks_threshold, name="lindeberg_ks")
    for c in report.checks:
        c.n, c.N, c.reps, c.seed = n, N, int(reps), seed
    return report


def bilinear_gaussianity(spec: EnsembleSpec, u, v, reps: int, seed: int,
                         var_band: Tuple[float, float] = (0.9, 1.1),
                         ks_threshold: Optional[float] = None) -> VerificationReport:
    """``s_k = sqrt(n) v^T A_k u`` over fresh matrices, tested against ``N(0, 1)``."""
    u, v = as_sample(u, "u"), as_sample(v, "v")
    for name, x in (("u", u), ("v", v)):
        if abs(np.linalg.norm(x) - 1.0) > 1e-9:
            raise InvalidInput(f"{name} must have unit Euclidean norm, got {np.linalg.norm(x)}")
    N, n = u.size, v.size
    s = np.array(
        [math.sqrt(n) * float(v @ (generate(spec, n, N, rng.replication_seed(seed, r)) @ u))
         for r in range(int(reps))]
    )
    meta = dict(n=n, N=N, reps=int(reps), seed=seed)
    report = VerificationReport()
    mean = float(np.mean(s))
    report.add("bilinear_mean", abs(mean), 5.0 / math.sqrt(reps), rule="5 standard errors", **meta)
    var = float(np.var(s, ddof=1))
    lo, hi = var_band
    report.add("bilinear_variance", var, hi, passed=bool(lo <= var <= hi), rule=f"band [{lo}, {hi}]",
               details={"lower": lo}, **meta)
    ks = gaussianity_report(s, 1.0, ks_threshold, name="bilinear_ks")
    for c in ks.checks:
        c.n, c.N, c.reps, c.seed = n, N, int(reps), seed
    report.extend(ks)
    return report


def stein_identity_check(phi: Callable, dphi: Callable, cov: float, trials: int = 10**6,
                         seed: int = 0, k: float = 5.0) -> VerificationReport:
    """``E[Z1 phi(Z2)] = cov E[phi'(Z2)]`` for unit-variance jointly Gaussian ``(Z1, Z2)``."""
    if trials < 10**4:
        raise InvalidInput(f"stein_identity_check needs at least 1e4 trials, got {trials}")
    if not -1.0 <= cov <= 1.0:
        raise InvalidInput(f"covariance of unit-variance variables must lie in [-1, 1], got {cov}")
    gen = rng.generator(seed, rng.MONTE_CARLO, 2)
    z2 = gen.standard_normal(trials)
    z1 = cov * z2 + math.sqrt(1.0 - cov * cov) * gen.standard_normal(trials)
    d = z1 * np.asarray(phi(z2), dtype=float) - cov * np.asarray(dphi(z2), dtype=float)
    se = float(np.std(d, ddof=1) / math.sqrt(trials))
    report = VerificationReport()
    report.add("stein", abs(float(np.mean(d))), max(k * se, 1e-15), rule=f"{k:g} paired standard errors",
               reps=trials, seed=seed, details={"cov": cov, "standard_error": se})
    return report


# --------------------------------------------------------------------------
# projection and moment decay


def projection_decay(sigma_a: float, t: int, n_grid: Sequence[int], reps: int, seed: int,
                     factor: float = 2.0) -> VerificationReport:
    """Mean of ``||P_M a||^2 / n`` for a random ``t``-dimensional subspace ``M``.

    The exact expectation for an isotropic subspace is ``sigma_a^2 t / n``.
    Each ``n`` passes when the mean lies within ``factor`` of it, and the
    sequence must decrease along ``n_grid``.
    """
    if int(t) != t or t < 0:
        raise InvalidInput(f"t must be a nonnegative integer, got {t}")
    n_grid = [int(n) for n in n_grid]
    if t >= min(n_grid):
        raise InvalidInput("basis dimension must be below every n")
    report = VerificationReport()
    means = []
    for n in n_grid:
        gen = rng.generator(seed, rng.GENERIC, n)
        acc = 0.0
        for _ in range(int(reps)):
            a = sigma_a * gen.standard_normal(n)
            if t:
                basis, _ = np.linalg.qr(gen.standard_normal((n, t)))
                proj = basis.T @ a
                acc += float(proj @ proj) / n
        mean = acc / reps
        means.append(mean)
        expected = sigma_a**2 * t / n
        if t == 0:
            ok, ratio = mean == 0.0, 1.0
        else:
            ratio = mean / expected
            ok = 1.0 / factor <= ratio <= factor
        report.add(f"projection[n={n}]", mean, expected * factor, passed=ok, rule=f"within x{factor:g} of t/n",
                   n=n, reps=int(reps), seed=seed, details={"expected": expected, "ratio": ratio})
    if t:
        dec = all(b < a for a, b in zip(means, means[1:]))
        report.add("projection_decreasing", float(not dec), 0.0, passed=dec, rule="strict decrease along n_grid")
    return report


def moment_decay_values(dist: ScalarDistribution, alpha: float, n_grid: Sequence[int]) -> np.ndarray:
    """``n^2 E|A|^{2+2 alpha}`` for ``A = mu / sqrt(n)``, i.e. ``E|mu|^{2+2 alpha} n^{1-alpha}``."""
    if not alpha > 1:
        raise InvalidInput(f"alpha must exceed 1, got {alpha}")
    mom = abs_moment(dist, 2.0 + 2.0 * alpha)
    if not math.isfinite(mom):
        raise Unsupported(f"{dist.tag} has no finite moment of order {2 + 2 * alpha}")
    return np.array([n**2 * mom * float(n) ** (-(1.0 + alpha)) for n in n_grid])


def moment_decay_check(dist: ScalarDistribution, alpha: float, n_grid: Sequence[int]) -> VerificationReport:
    vals = moment_decay_values(dist, alpha, n_grid)
    ok = bool(np.all(vals > 0) and np.all(np.diff(vals) < 0))
    report = VerificationReport()
    report.add(f"moment_decay[{dist.tag}, alpha={alpha:g}]", float(vals[-1]), float(vals[0]), passed=ok,
               rule="strictly decreasing and positive", details={"values": vals.tolist(), "n_grid": list(n_grid)})
    return report


# --------------------------------------------------------------------------
# conditioning


@dataclass
class ConditioningConstraints:
    """Linear constraints ``A Q = Y`` and ``A^T M = X`` on an ``n x N`` matrix."""

    M: np.ndarray
    X: np.ndarray
    Q: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.M, self.X, self.Q, self.Y = (np.atleast_2d(np.asarray(a, dtype=float)) for a in
                                          (self.M, self.X, self.Q, self.Y))
        n, t = self.M.shape
        N, tq = self.Q.shape
        if self.X.shape != (N, t) or self.Y.shape != (n, tq):
            raise InvalidInput(
                f"constraint shapes disagree: M {self.M.shape}, X {self.X.shape}, Q {self.Q.shape}, Y {self.Y.shape}"
            )

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def N(self) -> int:
        return self.Q.shape[0]

    @classmethod
    def empty(cls, n: int, N: int) -> "ConditioningConstraints":
        return cls(np.zeros((n, 0)), np.zeros((N, 0)), np.zeros((N, 0)), np.zeros((n, 0)))


def harvest_constraints(traj: AmpTrajectory, t_q: int, t_m: Optional[int] = None) -> ConditioningConstraints:
    """Constraints met by the matrix behind a run.

    ``Q = [q^0 .. q^{t_q-1}]`` with ``Y`` columns ``b^s + lambda_s m^{s-1} = A q^s``,
    and ``M = [m^0 .. m^{t_m-1}]`` with ``X`` columns ``h^{s+1} + xi_s q^s = A^T m^s``.
    """
    t_m = t_q if t_m is None else t_m
    if max(t_q, t_m) > traj.T or min(t_q, t_m) < 0:
        raise InvalidInput(f"cannot harvest {t_q}/{t_m} constraints from a {traj.T}-step run")
    times = range(max(t_q, t_m))
    if not traj.has_vectors(("q", "b", "m", "h"), times):
        raise InvalidInput("harvest_constraints needs q, b, m, h retained")
    n, N = traj.n, traj.N
    Q = np.column_stack([traj.vector("q", s) for s in range(t_q)]) if t_q else np.zeros((N, 0))
    Y = (
        np.column_stack(
            [traj.vector("b", s) + (traj.lambdas[s] * traj.vector("m", s - 1) if s else 0.0) for s in range(t_q)]
        )
        if t_q
        else np.zeros((n, 0))
    )
    M = np.column_stack([traj.vector("m", s) for s in range(t_m)]) if t_m else np.zeros((n, 0))
    X = (
        np.column_stack([traj.vector("h", s) + traj.xis[s] * traj.vector("q", s) for s in range(t_m)])
        if t_m
        else np.zeros((N, 0))
    )
    return ConditioningConstraints(M, X, Q, Y)


def _pinv_full_rank(B: np.ndarray, cond_limit: float, what: str):
    """Orthonormal basis of ``range(B)`` and ``(B^T B)^{-1} B^T`` via SVD."""
    U, s, Vt, cond = _svd(B)
    if not cond <= cond_limit:
        raise RankDeficient(f"{what}^T {what} has condition number {cond:.3g} (limit {cond_limit:.3g})")
    return U, (Vt.T / s) @ U.T


def check_consistency(c: ConditioningConstraints, tol: float = 1e-8) -> float:
    """Relative mismatch of ``X^T Q`` and ``M^T Y`` (both equal ``M^T A Q``)."""
    if c.M.shape[1] == 0 or c.Q.shape[1] == 0:
        return 0.0
    lhs, rhs = c.X.T @ c.Q, c.M.T @ c.Y
    scale = max(np.linalg.norm(c.X) * np.linalg.norm(c.Q), np.linalg.norm(c.M) * np.linalg.norm(c.Y), 1e-300)
    err = float(np.linalg.norm(lhs - rhs) / scale)
    if err > tol:
        raise InconsistentConstraints(f"X^T Q and M^T Y differ by {err:.3g} (relative)")
    return err


def conditional_resample(c: ConditioningConstraints, spec: EnsembleSpec, seed: int,
                         cond_limit: float = COND_LIMIT) -> np.ndarray:
    """Draw ``P_M^perp A~ P_Q^perp + B`` with ``A~`` fresh from ``spec``.

    ``B = Y Q^+ + (M^+)^T X^T - (M^+)^T X^T Q Q^+`` where ``B^+`` denotes
    ``(B^T B)^{-1} B^T``. The result satisfies both constraint sets.
    """
    check_consistency(c)
    A = np.array(generate(spec, c.n, c.N, seed))
    has_m, has_q = c.M.shape[1] > 0, c.Q.shape[1] > 0
    B = np.zeros_like(A)
    if has_m:
        Um, Mp = _pinv_full_rank(c.M, cond_limit, "M")
        A -= Um @ (Um.T @ A)
        B += Mp.T @ c.X.T
    if has_q:
        Uq, Qp = _pinv_full_rank(c.Q, cond_limit, "Q")
        A -= (A @ Uq) @ Uq.T
        B += c.Y @ Qp
        if has_m:
            B -= Mp.T @ (c.X.T @ c.Q) @ Qp
    return A + B


def constraint_residuals(A: np.ndarray, c: ConditioningConstraints) -> Tuple[float, float]:
    """``||A Q - Y||_F / ||Y||_F`` and ``||A^T M - X||_F / ||X||_F`` (0 for empty sets)."""

    def rel(diff, ref):
        if diff.size == 0:
            return 0.0
        den = np.linalg.norm(ref)
        return float(np.linalg.norm(diff) / den) if den > 0 else float(np.linalg.norm(diff))

    return rel(A @ c.Q - c.Y, c.Y), rel(A.T @ c.M - c.X, c.X)
