"""Univariate laws for matrix entries, signal and noise.

Each law knows its raw moments in closed form (orders 0..8), its
absolute moments of real order, and how to turn uniforms into draws
through an inverse-CDF map. Draw ``j`` of a stream only consumes
uniforms ``j*k .. j*k+k-1``, so prefixes of a stream never depend on how
many values were requested.

``expect_gauss_aux`` evaluates ``E[f(sigma*Z, X)]`` with ``Z ~ N(0, 1)``
independent of ``X``; it is the integration engine behind state
evolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy import integrate, special

from . import rng
from .errors import DegenerateDistribution, InvalidInput, NumericalFailure, Unsupported

MAX_CLOSED_FORM_ORDER = 8
DEFAULT_ORDER = 64
DEFAULT_MC_BUDGET = 10**6
# integration range, in standard deviations, for piecewise rules
_Z_RANGE = 12.0
_MC_CHUNK = 4096


def _gauss_std_moment(k: int) -> float:
    """E[Z^k] for standard normal Z."""
    if k % 2:
        return 0.0
    return float(special.factorial2(k - 1, exact=True)) if k > 0 else 1.0


def _gauss_abs_moment(p: float) -> float:
    """E|Z|^p for standard normal Z."""
    return 2.0 ** (p / 2.0) * math.gamma((p + 1.0) / 2.0) / math.sqrt(math.pi)


def _open_uniform(u: np.ndarray) -> np.ndarray:
    # Generator.random is on [0, 1 - 2**-53]; shift to the open interval
    return u + 2.0**-54


class ScalarDistribution:
    """Base class. Subclasses are frozen dataclasses."""

    tag = ""
    uniforms_per_draw = 1

    def raw_moment(self, k: int) -> float:
        raise NotImplementedError

    def abs_moment(self, p: float) -> float:
        raise NotImplementedError

    def from_uniforms(self, u: np.ndarray) -> np.ndarray:
        """Map an array of shape ``(size, uniforms_per_draw)`` to draws."""
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return self.raw_moment(1)

    @property
    def variance(self) -> float:
        m = self.raw_moment(1)
        return self.raw_moment(2) - m * m

    def draw(self, gen: np.random.Generator, size: int) -> np.ndarray:
        u = _open_uniform(gen.random((size, self.uniforms_per_draw)))
        return self.from_uniforms(u)


@dataclass(frozen=True)
class Gaussian(ScalarDistribution):
    mean_: float = 0.0
    var: float = 1.0
    tag = "gaussian"

    def __post_init__(self):
        if not (self.var >= 0 and math.isfinite(self.var) and math.isfinite(self.mean_)):
            raise InvalidInput(f"bad Gaussian parameters ({self.mean_}, {self.var})")

    def raw_moment(self, k):
        sd = math.sqrt(self.var)
        return math.fsum(
            math.comb(k, j) * self.mean_ ** (k - j) * sd**j * _gauss_std_moment(j)
            for j in range(k + 1)
        )

    def abs_moment(self, p):
        sd = math.sqrt(self.var)
        if self.mean_ == 0.0:
            return sd**p * _gauss_abs_moment(p)
        if float(p).is_integer() and int(p) % 2 == 0:
            return self.raw_moment(int(p))
        if sd == 0.0:
            return abs(self.mean_) ** p
        dens = lambda x: abs(x) ** p * math.exp(-0.5 * ((x - self.mean_) / sd) ** 2)
        val, _ = integrate.quad(dens, -np.inf, np.inf, points=None, limit=200)
        return val / (sd * math.sqrt(2 * math.pi))

    def from_uniforms(self, u):
        return self.mean_ + math.sqrt(self.var) * special.ndtri(u[:, 0])

    def to_config(self):
        return {"type": self.tag, "mean": self.mean_, "var": self.var}


@dataclass(frozen=True)
class Rademacher(ScalarDistribution):
    tag = "rademacher"

    def raw_moment(self, k):
        return 1.0 if k % 2 == 0 else 0.0

    def abs_moment(self, p):
        return 1.0

    def from_uniforms(self, u):
        return np.where(u[:, 0] < 0.5, -1.0, 1.0)

    def draw(self, gen, size):
        # u < 1/2 exactly when the top bit of the raw word is clear
        bits = gen.bit_generator.random_raw(size) >> np.uint64(63)
        return bits.astype(float) * 2.0 - 1.0

    def to_config(self):
        return {"type": self.tag}


@dataclass(frozen=True)
class UniformSym(ScalarDistribution):
    """Uniform on ``[-halfwidth, halfwidth]``; variance ``halfwidth**2 / 3``."""

    halfwidth: float = math.sqrt(3.0)
    tag = "uniform_sym"

    def __post_init__(self):
        if not (self.halfwidth >= 0 and math.isfinite(self.halfwidth)):
            raise InvalidInput(f"bad halfwidth {self.halfwidth}")

    def raw_moment(self, k):
        return 0.0 if k % 2 else self.halfwidth**k / (k + 1)

    def abs_moment(self, p):
        return self.halfwidth**p / (p + 1.0)

    def from_uniforms(self, u):
        return self.halfwidth * (2.0 * u[:, 0] - 1.0)

    def to_config(self):
        return {"type": self.tag, "halfwidth": self.halfwidth}


@dataclass(frozen=True)
class LaplaceSym(ScalarDistribution):
    """Centered Laplace with scale ``b``; variance ``2 b**2``."""

    scale: float = 1.0 / math.sqrt(2.0)
    tag = "laplace_sym"

    def __post_init__(self):
        if not (self.scale >= 0 and math.isfinite(self.scale)):
            raise InvalidInput(f"bad scale {self.scale}")

    def raw_moment(self, k):
        return 0.0 if k % 2 else math.factorial(k) * self.scale**k

    def abs_moment(self, p):
        return math.gamma(p + 1.0) * self.scale**p

    def from_uniforms(self, u):
        c = u[:, 0] - 0.5
        return -self.scale * np.sign(c) * np.log1p(-2.0 * np.abs(c))

    def to_config(self):
        return {"type": self.tag, "scale": self.scale}


@dataclass(frozen=True)
class BernoulliGaussian(ScalarDistribution):
    """Mixture ``eps * N(0, var) + (1 - eps) * delta_0``."""

    eps: float = 0.1
    var: float = 1.0
    tag = "bernoulli_gaussian"
    uniforms_per_draw = 2

    def __post_init__(self):
        if not (0.0 < self.eps <= 1.0):
            raise InvalidInput(f"sparsity must be in (0, 1], got {self.eps}")
        if not (self.var >= 0 and math.isfinite(self.var)):
            raise InvalidInput(f"bad component variance {self.var}")

    def raw_moment(self, k):
        if k == 0:
            return 1.0
        return self.eps * self.var ** (k / 2.0) * _gauss_std_moment(k)

    def abs_moment(self, p):
        if p == 0:
            return 1.0
        return self.eps * self.var ** (p / 2.0) * _gauss_abs_moment(p)

    def from_uniforms(self, u):
        slab = math.sqrt(self.var) * special.ndtri(u[:, 1])
        return np.where(u[:, 0] < self.eps, slab, 0.0)

    def to_config(self):
        return {"type": self.tag, "eps": self.eps, "var": self.var}


@dataclass(frozen=True)
class PointMass(ScalarDistribution):
    value: float = 0.0
    tag = "point_mass"

    def raw_moment(self, k):
        return self.value**k if k else 1.0

    def abs_moment(self, p):
        return abs(self.value) ** p if p else 1.0

    def from_uniforms(self, u):
        return np.full(u.shape[0], float(self.value))

    def to_config(self):
        return {"type": self.tag, "value": self.value}


@dataclass(frozen=True)
class FiniteDiscrete(ScalarDistribution):
    atoms: tuple = (0.0,)
    probs: tuple = (1.0,)
    tag = "finite_discrete"

    def __post_init__(self):
        a = tuple(float(x) for x in self.atoms)
        p = tuple(float(x) for x in self.probs)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "probs", p)
        if len(a) == 0 or len(a) != len(p):
            raise InvalidInput("atoms and probs must be nonempty and of equal length")
        if min(p) < 0 or abs(math.fsum(p) - 1.0) > 1e-12:
            raise InvalidInput("probabilities must be nonnegative and sum to 1")

    @classmethod
    def empirical(cls, values) -> "FiniteDiscrete":
        """The empirical law of a vector, with repeated values merged."""
        vals, counts = np.unique(np.asarray(values, dtype=float), return_counts=True)
        probs = counts / counts.sum()
        probs[-1] = 1.0 - math.fsum(probs[:-1])
        return cls(tuple(vals), tuple(probs))

    def raw_moment(self, k):
        return math.fsum(p * a**k for a, p in zip(self.atoms, self.probs))

    def abs_moment(self, p):
        return math.fsum(q * abs(a) ** p for a, q in zip(self.atoms, self.probs))

    def from_uniforms(self, u):
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, u[:, 0], side="right")
        return np.asarray(self.atoms)[np.minimum(idx, len(self.atoms) - 1)]

    def to_config(self):
        return {"type": self.tag, "atoms": list(self.atoms), "probs": list(self.probs)}


def raw_moment(dist: ScalarDistribution, k: int) -> float:
    """Exact ``E[X^k]``, ``0 <= k <= 8``."""
    if int(k) != k or k < 0 or k > MAX_CLOSED_FORM_ORDER:
        raise Unsupported(f"raw moment order {k} outside 0..{MAX_CLOSED_FORM_ORDER}")
    return float(dist.raw_moment(int(k)))


def abs_moment(dist: ScalarDistribution, p: float) -> float:
    """Exact ``E|X|^p`` for real ``p >= 0``."""
    if p < 0:
        raise Unsupported(f"absolute moment order {p} < 0")
    return float(dist.abs_moment(p))


def sample(dist: ScalarDistribution, count: int, seed: int, stream: int = rng.GENERIC) -> np.ndarray:
    """``count`` seeded draws from ``dist``; deterministic in ``(dist, count, seed, stream)``."""
    if int(count) != count or count < 1:
        raise InvalidInput(f"count must be a positive integer, got {count}")
    return dist.draw(rng.generator(seed, stream), int(count))


def standardize(dist: ScalarDistribution) -> ScalarDistribution:
    """Affine image of ``dist`` with mean 0 and variance 1."""
    var = dist.variance
    if not var > 1e-300:
        raise DegenerateDistribution(f"{dist} has zero variance")
    sd = math.sqrt(var)
    if isinstance(dist, Gaussian):
        return Gaussian(0.0, 1.0)
    if isinstance(dist, Rademacher):
        return dist
    if isinstance(dist, UniformSym):
        return UniformSym(dist.halfwidth / sd)
    if isinstance(dist, LaplaceSym):
        return LaplaceSym(dist.scale / sd)
    if isinstance(dist, BernoulliGaussian):
        return BernoulliGaussian(dist.eps, dist.var / var)
    if isinstance(dist, FiniteDiscrete):
        m = dist.mean
        return FiniteDiscrete(tuple((a - m) / sd for a in dist.atoms), dist.probs)
    raise Unsupported(f"cannot standardize {type(dist).__name__}")


_REGISTRY = {
    "gaussian": lambda c: Gaussian(float(c.get("mean", 0.0)), float(c.get("var", 1.0))),
    "rademacher": lambda c: Rademacher(),
    "uniform_sym": lambda c: UniformSym(float(c.get("halfwidth", math.sqrt(3.0)))),
    "laplace_sym": lambda c: LaplaceSym(float(c.get("scale", 1.0 / math.sqrt(2.0)))),
    "bernoulli_gaussian": lambda c: BernoulliGaussian(float(c["eps"]), float(c.get("var", 1.0))),
    "point_mass": lambda c: PointMass(float(c.get("value", 0.0))),
    "finite_discrete": lambda c: FiniteDiscrete(tuple(c["atoms"]), tuple(c["probs"])),
}
_ALLOWED_KEYS = {
    "gaussian": {"mean", "var"},
    "rademacher": set(),
    "uniform_sym": {"halfwidth"},
    "laplace_sym": {"scale"},
    "bernoulli_gaussian": {"eps", "var"},
    "point_mass": {"value"},
    "finite_discrete": {"atoms", "probs"},
}


def from_config(cfg) -> ScalarDistribution:
    """Build a distribution from a tagged literal such as
    ``{"type": "bernoulli_gaussian", "eps": 0.1, "var": 1.0}``.

    The literal ``{"type": ..., "standardize": true}`` returns the
    standardized law.
    """
    if isinstance(cfg, ScalarDistribution):
        return cfg
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise InvalidInput(f"distribution literal needs a 'type': {cfg!r}")
    kind = cfg["type"]
    if kind not in _REGISTRY:
        raise Unsupported(f"unknown distribution type {kind!r}")
    extra = set(cfg) - {"type", "standardize"} - _ALLOWED_KEYS[kind]
    if extra:
        raise InvalidInput(f"unknown keys for {kind}: {sorted(extra)}")
    try:
        dist = _REGISTRY[kind](cfg)
    except KeyError as exc:
        raise InvalidInput(f"{kind} is missing parameter {exc}") from None
    if cfg.get("standardize"):
        dist = standardize(dist)
    return dist


# --------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and probability weights for expectations over ``Z ~ N(0, 1)``."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.sum(self.weights * f(self.nodes)))


@lru_cache(maxsize=32)
def gauss_hermite(K: int = DEFAULT_ORDER) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule with ``K`` nodes, exact to degree ``2K - 1``."""
    if int(K) != K or not 2 <= K <= 256:
        raise Unsupported(f"quadrature order must be in 2..256, got {K}")
    x, w = hermegauss(int(K))
    w = w / math.sqrt(2.0 * math.pi)
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(x, w, int(K))


@lru_cache(maxsize=32)
def _legendre(K: int):
    x, w = leggauss(K)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class Kinks:
    """Breakpoints of ``u -> f(u, s)`` at ``u = slope * s + c`` for each ``c`` in ``offsets``.

    These are kinks, or places where ``f`` turns too sharply for a global rule.
    """

    slope: float
    offsets: tuple

    def locations(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.slope * s[..., None] + np.asarray(self.offsets, dtype=float)

    def union(self, other: Optional["Kinks"]) -> "Kinks":
        if other is None:
            return self
        if other.slope != self.slope:
            # only one kink family is resolved exactly; keep the first
            return self
        return Kinks(self.slope, tuple(sorted(set(self.offsets) | set(other.offsets))))


def _check_finite(vals: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(vals)):
        raise NumericalFailure(f"non-finite integrand values in {what}")
    return vals


def _eval(f, u, x) -> np.ndarray:
    """``f(u, x)`` broadcast to the joint shape of its arguments and checked finite."""
    shape = np.broadcast_shapes(np.shape(u), np.shape(x))
    return _check_finite(np.broadcast_to(np.asarray(f(u, x), dtype=float), shape), "f")


def _piecewise_nodes(lo: np.ndarray, hi: np.ndarray, breaks: np.ndarray, K: int):
    """Gauss-Legendre nodes on ``[lo, hi]`` split at ``breaks``.

    ``lo``/``hi`` have shape ``(M,)``, ``breaks`` shape ``(M, k)``.
    Returns nodes and interval-length weights of shape ``(M, (k+1)*K)``.
    """
    x, w = _legendre(K)
    b = np.clip(breaks, lo[:, None], hi[:, None])
    edges = np.concatenate([lo[:, None], np.sort(b, axis=1), hi[:, None]], axis=1)
    a, c = edges[:, :-1], edges[:, 1:]
    half = 0.5 * (c - a)
    mid = 0.5 * (c + a)
    nodes = mid[:, :, None] + half[:, :, None] * x
    weights = half[:, :, None] * w
    M = lo.shape[0]
    return nodes.reshape(M, -1), weights.reshape(M, -1)


def _normal_pdf(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _expect_over_atoms(f, sigma, atoms, probs, rule, kinks, legendre_order=None) -> float:
    """``sum_k probs_k * E_Z[f(sigma Z, atoms_k)]``."""
    atoms = np.asarray(atoms, dtype=float)
    probs = np.asarray(probs, dtype=float)
    total = 0.0
    for start in range(0, atoms.size, _MC_CHUNK):
        x = atoms[start : start + _MC_CHUNK]
        p = probs[start : start + _MC_CHUNK]
        if sigma == 0.0:
            vals = _eval(f, np.zeros_like(x), x)
            total += float(np.sum(p * vals))
            continue
        if kinks is None:
            z = rule.nodes[None, :]
            vals = _eval(f, sigma * z, x[:, None])
            total += float(np.sum(p * (vals @ rule.weights)))
            continue
        K = legendre_order or rule.order
        breaks = kinks.locations(x) / sigma
        lo = np.full(x.size, -_Z_RANGE)
        hi = np.full(x.size, _Z_RANGE)
        z, w = _piecewise_nodes(lo, hi, breaks, K)
        vals = _eval(f, sigma * z, x[:, None])
        inner = np.sum(vals * w * _normal_pdf(z), axis=1)
        total += float(np.sum(p * inner))
    return total


def _expect_gaussian_aux(f, sigma, mean, var, rule, kinks) -> float:
    """``E[f(sigma Z, X)]`` with ``X ~ N(mean, var)``."""
    if var == 0.0:
        return _expect_over_atoms(f, sigma, [mean], [1.0], rule, kinks)
    sd = math.sqrt(var)
    if kinks is None:
        z = rule.nodes
        x = mean + sd * rule.nodes
        vals = _eval(f, sigma * z[:, None], x[None, :])
        return float(rule.weights @ vals @ rule.weights)
    # Rotate so the kinks lie along one coordinate: V = sigma Z - a X.
    a = kinks.slope
    var_v = sigma * sigma + a * a * var
    if var_v == 0.0:
        return _expect_gaussian_aux(f, sigma, mean, var, rule, None)
    mean_v = -a * mean
    sd_v = math.sqrt(var_v)
    gain = -a * var / var_v
    cond_sd = math.sqrt(max(var - a * a * var * var / var_v, 0.0))
    lo = np.array([mean_v - _Z_RANGE * sd_v])
    hi = np.array([mean_v + _Z_RANGE * sd_v])
    breaks = np.asarray(kinks.offsets, dtype=float)[None, :]
    v, wv = _piecewise_nodes(lo, hi, breaks, rule.order)
    v, wv = v[0], wv[0]
    dens_v = _normal_pdf((v - mean_v) / sd_v) / sd_v
    x = mean + gain * (v[:, None] - mean_v) + cond_sd * rule.nodes[None, :]
    u = v[:, None] + a * x
    vals = _eval(f, u, x)
    return float(np.sum((vals @ rule.weights) * wv * dens_v))


def expect_gauss_aux(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    gauss_scale: float,
    aux: ScalarDistribution,
    rule: Optional[QuadratureRule] = None,
    mc_budget: int = DEFAULT_MC_BUDGET,
    kinks: Optional[Kinks] = None,
    seed: int = 0,
) -> float:
    """Estimate ``E[f(gauss_scale * Z, X)]``, ``Z ~ N(0,1)`` independent of ``X ~ aux``.

    Gaussian and Bernoulli-Gaussian ``aux`` use nested quadrature,
    discrete ``aux`` exact summation, and the remaining continuous laws a
    seeded Monte Carlo sample of ``mc_budget`` points crossed with
    quadrature in ``Z``. When ``kinks`` is given, the rule in the kinked
    direction is replaced by piecewise Gauss-Legendre split at the kinks,
    which keeps soft-threshold-type integrands at full accuracy.
    """
    sigma = float(gauss_scale)
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise InvalidInput(f"gauss_scale must be finite and >= 0, got {gauss_scale}")
    rule = rule or gauss_hermite(DEFAULT_ORDER)
    if isinstance(aux, PointMass):
        return _expect_over_atoms(f, sigma, [aux.value], [1.0], rule, kinks)
    if isinstance(aux, Rademacher):
        return _expect_over_atoms(f, sigma, [-1.0, 1.0], [0.5, 0.5], rule, kinks)
    if isinstance(aux, FiniteDiscrete):
        return _expect_over_atoms(f, sigma, aux.atoms, aux.probs, rule, kinks)
    if isinstance(aux, Gaussian):
        return _expect_gaussian_aux(f, sigma, aux.mean_, aux.var, rule, kinks)
    if isinstance(aux, BernoulliGaussian):
        slab = _expect_gaussian_aux(f, sigma, 0.0, aux.var, rule, kinks)
        if aux.eps == 1.0:
            return slab
        spike = _expect_over_atoms(f, sigma, [0.0], [1.0], rule, kinks)
        return aux.eps * slab + (1.0 - aux.eps) * spike
    if int(mc_budget) < 1:
        raise InvalidInput("mc_budget must be >= 1")
    xs = sample(aux, int(mc_budget), seed, rng.MONTE_CARLO)
    probs = np.full(xs.size, 1.0 / xs.size)
    return _expect_over_atoms(f, sigma, xs, probs, rule, kinks, legendre_order=min(rule.order, 24))
