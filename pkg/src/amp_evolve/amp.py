"""General AMP recursion with Onsager-corrected memory terms.

For ``t >= 0``::

    q^t     = f_t(h^t, x0)              (q^0 given)
    b^t     = A q^t - lambda_t m^{t-1}
    m^t     = g_t(b^t, w)
    h^{t+1} = A^T m^t - xi_t q^t

with ``h^0 = 0``, ``m^{-1} = 0``, ``lambda_t = <f_t'(h^t, x0)> / rho`` and
``xi_t = <g_t'(b^t, w)>``. ``lambda_0`` is fixed to 0 because it only
ever multiplies ``m^{-1} = 0``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from .denoisers import Denoiser, Schedule, as_schedule, cs_soft_threshold_f, deriv_vec, eval_vec, residual, soft
from .empirical import as_sample, emp_mean, inner
from .ensembles import matvec, matvec_t
from .errors import InvalidInput, NumericalFailure

DIVERGENCE_LIMIT = 1e12
CSV_SCHEMA_LINE = "# amp-evolve schema v1"


@dataclass
class AmpProblem:
    A: np.ndarray
    x0: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        if self.A.ndim != 2:
            raise InvalidInput("A must be a matrix")
        n, N = self.A.shape
        self.x0 = as_sample(self.x0, "x0")
        self.w = as_sample(self.w, "w")
        if self.x0.size != N or self.w.size != n:
            raise InvalidInput(f"A is {n}x{N} but len(x0)={self.x0.size}, len(w)={self.w.size}")
        if not 0 < n / N <= 1:
            raise InvalidInput(f"aspect ratio n/N = {n / N} outside (0, 1]")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]

    @property
    def rho(self) -> float:
        return self.n / self.N


@dataclass
class AmpState:
    t: int
    h: np.ndarray
    q: np.ndarray
    m_prev: np.ndarray
    b: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    lambda_t: float = 0.0
    xi_t: float = 0.0
    sigma0_sq: float = math.nan


def init(problem: AmpProblem, q0) -> AmpState:
    q0 = as_sample(q0, "q0")
    if q0.size != problem.N:
        raise InvalidInput(f"q0 has length {q0.size}, expected {problem.N}")
    return AmpState(
        t=0,
        h=np.zeros(problem.N),
        q=q0.copy(),
        m_prev=np.zeros(problem.n),
        sigma0_sq=inner(q0, q0) / problem.rho,
    )


def onsager_lambda(f: Denoiser, t: int, h, x0, rho: float) -> float:
    return emp_mean(deriv_vec(f, t, h, x0)) / rho


def onsager_xi(g: Denoiser, t: int, b, w) -> float:
    return emp_mean(deriv_vec(g, t, b, w))


def _guard(v: np.ndarray, name: str, t: int) -> np.ndarray:
    if not np.all(np.isfinite(v)) or np.max(np.abs(v), initial=0.0) > DIVERGENCE_LIMIT:
        raise NumericalFailure(f"{name} diverged at t={t}", iteration=t)
    return v


def step(state: AmpState, problem: AmpProblem, f: Denoiser, g: Denoiser, onsager: bool = True) -> AmpState:
    """Advance one iteration; the returned state holds ``q^t, b^t, m^t`` and ``h^{t+1}``."""
    t = state.t
    A, x0, w = problem.A, problem.x0, problem.w
    try:
        if t == 0:
            q = state.q
            lam = 0.0
        else:
            q = eval_vec(f, t, state.h, x0)
            lam = onsager_lambda(f, t, state.h, x0, problem.rho) if onsager else 0.0
        _guard(q, "q", t)
        b = _guard(matvec(A, q) - lam * state.m_prev, "b", t)
        xi = onsager_xi(g, t, b, w) if onsager else 0.0
        m = _guard(eval_vec(g, t, b, w), "m", t)
        h_next = _guard(matvec_t(A, m) - xi * q, "h", t)
    except NumericalFailure as exc:
        if exc.iteration is None:
            exc.iteration = t
        raise
    return AmpState(
        t=t + 1, h=h_next, q=q, m_prev=m, b=b, m=m, lambda_t=lam, xi_t=xi, sigma0_sq=state.sigma0_sq
    )


@dataclass
class AmpTrajectory:
    """Summaries of a run.

    Row ``t`` pairs ``q^t``, ``b^t``, ``m^t`` with ``h^{t+1}`` (the ``h``
    produced in the same step), so ``hh[t] = <h^{t+1}, h^{t+1}>``. Gram
    tables follow the same indexing: ``gram_h[t1, t2] = <h^{t1+1}, h^{t2+1}>``.
    """

    rho: float
    n: int
    N: int
    sigma0_sq: float
    lambdas: List[float] = field(default_factory=list)
    xis: List[float] = field(default_factory=list)
    gram_q: np.ndarray = None
    gram_b: np.ndarray = None
    gram_m: np.ndarray = None
    gram_h: np.ndarray = None
    vectors: Dict[str, Dict[int, np.ndarray]] = field(default_factory=dict)
    x0: Optional[np.ndarray] = field(default=None, repr=False)
    w: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def T(self) -> int:
        return len(self.lambdas)

    @property
    def qq(self):
        return np.diag(self.gram_q).copy()

    @property
    def bb(self):
        return np.diag(self.gram_b).copy()

    @property
    def mm(self):
        return np.diag(self.gram_m).copy()

    @property
    def hh(self):
        return np.diag(self.gram_h).copy()

    def vector(self, kind: str, t: int) -> np.ndarray:
        try:
            return self.vectors[kind][t]
        except KeyError:
            raise InvalidInput(f"{kind}^{t} was not retained") from None

    def has_vectors(self, kinds: Iterable[str] = ("q", "b", "m", "h"), times: Optional[Iterable[int]] = None) -> bool:
        times = range(self.T) if times is None else times
        return all(k in self.vectors and t in self.vectors[k] for k in kinds for t in times)

    def rows(self):
        for t in range(self.T):
            yield {
                "t": t,
                "qq": float(self.gram_q[t, t]),
                "bb": float(self.gram_b[t, t]),
                "hh": float(self.gram_h[t, t]),
                "mm": float(self.gram_m[t, t]),
                "lambda": self.lambdas[t],
                "xi": self.xis[t],
            }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_SCHEMA_LINE + "\n")
        writer = csv.DictWriter(buf, fieldnames=["t", "qq", "bb", "hh", "mm", "lambda", "xi"], lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def gram_json(self) -> str:
        return json.dumps(
            {
                "schema": "amp-evolve gram v1",
                "rho": self.rho,
                "n": self.n,
                "N": self.N,
                "h_index_offset": 1,
                "q": self.gram_q.tolist(),
                "b": self.gram_b.tolist(),
                "m": self.gram_m.tolist(),
                "h": self.gram_h.tolist(),
            },
            indent=1,
        )


def _gram(vs: List[np.ndarray]) -> np.ndarray:
    T = len(vs)
    G = np.empty((T, T))
    for i in range(T):
        for j in range(i, T):
            G[i, j] = G[j, i] = inner(vs[i], vs[j])
    return G


def run(
    problem: AmpProblem,
    q0,
    f: Denoiser,
    g: Denoiser,
    T: int,
    retain: Union[None, str, Iterable[int]] = None,
    onsager: bool = True,
) -> AmpTrajectory:
    """Run ``T`` iterations. ``retain`` is ``None``, ``"all"`` or a set of iterations whose vectors are kept."""
    if int(T) != T or T < 1:
        raise InvalidInput(f"T must be a positive integer, got {T}")
    keep = set(range(T)) if retain == "all" else set(retain or ())
    state = init(problem, q0)
    qs, bs, ms, hs = [], [], [], []
    lambdas, xis = [], []
    for _ in range(int(T)):
        state = step(state, problem, f, g, onsager=onsager)
        qs.append(state.q)
        bs.append(state.b)
        ms.append(state.m)
        hs.append(state.h)
        lambdas.append(float(state.lambda_t))
        xis.append(float(state.xi_t))
    traj = AmpTrajectory(
        rho=problem.rho,
        n=problem.n,
        N=problem.N,
        sigma0_sq=state.sigma0_sq,
        lambdas=lambdas,
        xis=xis,
        gram_q=_gram(qs),
        gram_b=_gram(bs),
        gram_m=_gram(ms),
        gram_h=_gram(hs),
        x0=problem.x0,
        w=problem.w,
    )
    if keep:
        traj.vectors = {
            k: {t: vs[t] for t in sorted(keep) if t < T} for k, vs in (("q", qs), ("b", bs), ("m", ms), ("h", hs))
        }
    return traj


@dataclass(frozen=True)
class CsAdapter:
    """Compressed-sensing instantiation: ``q^t = xhat^t - x0``, ``m^t = -(residual)``."""

    f: Denoiser
    g: Denoiser
    theta_init: float

    def q0(self, x0) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        return soft(x0, self.theta_init) - x0

    def estimate(self, q: np.ndarray, x0) -> np.ndarray:
        """``xhat^t = q^t + x0``."""
        return q + np.asarray(x0, dtype=float)


def cs_adapter(theta_schedule, theta_init: float = math.inf) -> CsAdapter:
    """``f_t(h, x0) = eta_{theta_{t-1}}(x0 - h) - x0``, ``g_t(b, w) = b - w``.

    With ``theta_init = inf`` the cold start is ``q^0 = -x0``. The
    reconstruction MSE at iteration ``t`` is ``<q^t, q^t>``.
    """
    sched: Schedule = as_schedule(theta_schedule)
    return CsAdapter(cs_soft_threshold_f(sched, theta_init), residual(), float(theta_init))
