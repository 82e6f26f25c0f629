"""Time-indexed entrywise denoisers ``f_t(u, s)`` with analytic ``d/du``.

A denoiser acts on a first argument ``u`` (the AMP iterate) and a side
argument ``s`` (the signal ``x0`` or the noise ``w``). Every builtin
carries a growth certificate ``|f| <= c1 * exp(c2 * (|u|^lam + |s|^lam))``
and declares where it fails to be differentiable in ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .distributions import Kinks, ScalarDistribution, sample
from .errors import InvalidInput, NumericalFailure, Unsupported
from . import rng

KAPPA_DEFAULT = 1.1402


@dataclass(frozen=True)
class ControlledBound:
    c1: float
    c2: float
    lam: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise InvalidInput("controlled bound needs c1 > 0 and c2 > 0")
        if not (1.0 <= self.lam < 2.0):
            raise InvalidInput(f"controlled bound exponent must be in [1, 2), got {self.lam}")

    def log_envelope(self, u, s):
        return math.log(self.c1) + self.c2 * (np.abs(u) ** self.lam + np.abs(s) ** self.lam)


UNIT_BOUND = ControlledBound(1.0, 1.0, 1.0)


class Schedule:
    """Threshold or variance schedule indexed by iteration."""

    def __init__(self, values: Sequence[float] = (), *, fixed: Optional[float] = None,
                 start: Optional[float] = None, ratio: Optional[float] = None):
        self.values = tuple(float(v) for v in values)
        self.fixed = fixed
        self.start = start
        self.ratio = ratio

    @classmethod
    def constant(cls, value: float) -> "Schedule":
        return cls(fixed=float(value))

    @classmethod
    def geometric(cls, start: float, ratio: float) -> "Schedule":
        return cls(start=float(start), ratio=float(ratio))

    def at(self, t: int) -> float:
        if self.fixed is not None:
            return self.fixed
        if self.start is not None:
            return self.start * self.ratio**t
        if 0 <= t < len(self.values):
            return self.values[t]
        raise InvalidInput(f"schedule of length {len(self.values)} has no entry for t={t}")

    def to_config(self) -> dict:
        if self.fixed is not None:
            return {"type": "fixed", "value": self.fixed}
        if self.start is not None:
            return {"type": "geometric", "start": self.start, "ratio": self.ratio}
        return {"type": "explicit", "values": list(self.values)}

    def __eq__(self, other):
        return isinstance(other, Schedule) and self.to_config() == other.to_config()

    def __hash__(self):
        return hash(repr(self.to_config()))

    def __repr__(self):
        return f"Schedule({self.to_config()})"


def as_schedule(x) -> Schedule:
    if isinstance(x, Schedule):
        return x
    if isinstance(x, (int, float)):
        return Schedule.constant(x)
    if isinstance(x, dict):
        kind = x.get("type")
        if kind == "fixed":
            return Schedule.constant(x["value"])
        if kind == "geometric":
            return Schedule.geometric(x["start"], x["ratio"])
        if kind == "explicit":
            return Schedule(x["values"])
        raise Unsupported(f"unknown schedule type {kind!r}")
    return Schedule(x)


@dataclass(frozen=True)
class Denoiser:
    """Entrywise controlled function. ``fn`` and ``dfn`` take ``(t, u, s)`` arrays."""

    name: str
    fn: Callable
    dfn: Callable
    bound: ControlledBound = UNIT_BOUND
    kinks_fn: Optional[Callable[[int], Optional[Kinks]]] = None
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, t, u, s):
        return self.fn(t, u, s)

    def deriv(self, t, u, s):
        return self.dfn(t, u, s)

    def kinks(self, t: int) -> Optional[Kinks]:
        return self.kinks_fn(t) if self.kinks_fn else None

    def to_config(self) -> dict:
        cfg = {"name": self.name}
        for k, v in self.params.items():
            cfg[k] = v.to_config() if isinstance(v, (Schedule, ScalarDistribution)) else v
        return cfg


def _pair(u, s):
    u = np.asarray(u, dtype=float)
    if s is None:
        s = np.zeros_like(u)
    s = np.asarray(s, dtype=float)
    if u.shape != s.shape:
        raise InvalidInput(f"length mismatch: {u.shape} vs {s.shape}")
    return u, s


def eval_vec(d: Denoiser, t: int, u, s) -> np.ndarray:
    u, s = _pair(u, s)
    out = np.asarray(d.fn(t, u, s), dtype=float)
    out = np.broadcast_to(out, u.shape).copy()
    if not np.all(np.isfinite(out)):
        raise NumericalFailure(f"{d.name} produced non-finite output at t={t}")
    return out


def deriv_vec(d: Denoiser, t: int, u, s) -> np.ndarray:
    u, s = _pair(u, s)
    out = np.asarray(d.dfn(t, u, s), dtype=float)
    out = np.broadcast_to(out, u.shape).copy()
    if not np.all(np.isfinite(out)):
        raise NumericalFailure(f"{d.name} derivative produced non-finite output at t={t}")
    return out


@dataclass
class BoundCheck:
    passed: bool
    worst_margin: float
    worst_point: tuple
    trials: int


def check_controlled_bound(d: Denoiser, samplers, trials: int, seed: int, t: int = 0,
                           bound: Optional[ControlledBound] = None) -> BoundCheck:
    """Sample ``(u, s)`` and test ``|d(t,u,s)| <= c1 exp(c2(|u|^lam + |s|^lam))``.

    The margin is ``log|d| - log(envelope)``; the check passes when the
    largest margin is ``<= 0``.
    """
    if trials < 1:
        raise InvalidInput("trials must be >= 1")
    bound = bound or d.bound
    du, ds = samplers
    u = sample(du, trials, seed, rng.GENERIC)
    s = sample(ds, trials, seed + 1, rng.GENERIC)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        val = np.abs(np.asarray(d.fn(t, u, s), dtype=float))
        logv = np.where(np.isfinite(val), np.log(val), np.inf)
    margin = logv - bound.log_envelope(u, s)
    k = int(np.argmax(margin))
    worst = float(margin[k])
    return BoundCheck(worst <= 0.0, worst, (float(u[k]), float(s[k])), trials)


def finite_difference_error(d: Denoiser, t: int, u, s, step: float = 1e-6,
                            clearance: float = 1e-4) -> float:
    """Largest ``|deriv - centered difference|`` over points at least ``clearance`` from a kink."""
    u, s = _pair(u, s)
    fd = (np.asarray(d.fn(t, u + step, s)) - np.asarray(d.fn(t, u - step, s))) / (2 * step)
    an = np.broadcast_to(np.asarray(d.dfn(t, u, s), dtype=float), u.shape)
    keep = np.ones(u.shape, dtype=bool)
    k = d.kinks(t)
    if k is not None:
        dist = np.abs(u[:, None] - k.locations(s)).min(axis=1)
        keep = dist >= clearance
    if not keep.any():
        return 0.0
    return float(np.max(np.abs(fd - an)[keep]))


# --------------------------------------------------------------------------
# builtins


def soft(x, theta):
    """Soft threshold ``sign(x) * max(|x| - theta, 0)``."""
    if math.isinf(theta):
        return np.zeros_like(np.asarray(x, dtype=float))
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)


def soft_deriv(x, theta):
    # derivative at |x| == theta is taken as 0
    return (np.abs(x) > theta).astype(float)


def identity() -> Denoiser:
    return Denoiser("identity", lambda t, u, s: u, lambda t, u, s: np.ones_like(u))


def residual() -> Denoiser:
    """``g(b, w) = b - w``."""
    return Denoiser("residual", lambda t, u, s: u - s, lambda t, u, s: np.ones_like(u))


def add() -> Denoiser:
    """``g(b, w) = b + w``."""
    return Denoiser("add", lambda t, u, s: u + s, lambda t, u, s: np.ones_like(u))


def linear(a: float) -> Denoiser:
    a = float(a)
    return Denoiser(
        "linear",
        lambda t, u, s: a * u,
        lambda t, u, s: np.full_like(u, a),
        ControlledBound(max(abs(a), 1.0), 1.0, 1.0),
        params={"a": a},
    )


def constant_signal() -> Denoiser:
    """``f(h, x0) = x0``; the iterate is ignored."""
    return Denoiser("constant_signal", lambda t, u, s: s + 0.0 * u, lambda t, u, s: np.zeros_like(u))


def tanh() -> Denoiser:
    return Denoiser(
        "tanh",
        lambda t, u, s: np.tanh(u),
        lambda t, u, s: 1.0 / np.cosh(u) ** 2,
    )


def soft_threshold(theta) -> Denoiser:
    sched = as_schedule(theta)

    def kinks(t):
        th = sched.at(t)
        return None if math.isinf(th) else Kinks(0.0, (-th, th))

    return Denoiser(
        "soft_threshold",
        lambda t, u, s: soft(u, sched.at(t)),
        lambda t, u, s: soft_deriv(u, sched.at(t)),
        UNIT_BOUND,
        kinks,
        params={"theta": sched},
    )


def bg_posterior(u, eps, var, tau_sq):
    """Posterior mean and its derivative for ``X ~ eps N(0,var) + (1-eps) delta_0`` seen through ``X + tau Z``."""
    u = np.asarray(u, dtype=float)
    wiener = var / (var + tau_sq)
    if eps >= 1.0:
        return wiener * u, np.full_like(u, wiener)
    curv = 1.0 / tau_sq - 1.0 / (var + tau_sq)
    logit = math.log(eps) - math.log1p(-eps) + 0.5 * math.log(tau_sq / (var + tau_sq)) + 0.5 * curv * u * u
    pi = expit(logit)
    mean = pi * wiener * u
    dmean = wiener * (pi + u * u * curv * pi * (1.0 - pi))
    return mean, dmean


def bg_transition(eps, var, tau_sq, spread: int = 4) -> Optional[Kinks]:
    """Breakpoints around ``|u| = u*`` where the posterior switches from spike to slab.

    The posterior mean is smooth but turns sharply at small ``tau``;
    splitting quadrature there keeps SE integrals accurate.
    """
    if eps >= 1.0:
        return None
    curv = 1.0 / tau_sq - 1.0 / (var + tau_sq)
    top = 2.0 * (math.log1p(-eps) - math.log(eps) + 0.5 * math.log((var + tau_sq) / tau_sq))
    if not top > 0:
        return None
    ustar = math.sqrt(top / curv)
    width = 1.0 / (curv * ustar)
    pts = [ustar + j * width for j in range(-spread, spread + 1) if ustar + j * width > 0]
    return Kinks(0.0, tuple(sorted([-p for p in pts] + pts)))


def bg_posterior_mean(eps: float, var: float, tau_sq) -> Denoiser:
    """``E[X | X + tau_t Z' = u]`` under a Bernoulli-Gaussian prior, ``tau_t^2`` from a schedule."""
    eps, var = float(eps), float(var)
    if not (0.0 < eps <= 1.0 and var > 0):
        raise InvalidInput("bg_posterior_mean needs 0 < eps <= 1 and var > 0")
    sched = as_schedule(tau_sq)
    return Denoiser(
        "bg_posterior_mean",
        lambda t, u, s: bg_posterior(u, eps, var, sched.at(t))[0],
        lambda t, u, s: bg_posterior(u, eps, var, sched.at(t))[1],
        UNIT_BOUND,
        lambda t: bg_transition(eps, var, sched.at(t)),
        params={"eps": eps, "var": var, "tau_sq": sched},
    )


def cs_composite(inner: Denoiser, name: Optional[str] = None, c1: float = 2.0) -> Denoiser:
    """``f_t(h, x0) = inner_{t-1}(x0 - h) - x0``; the estimate error of a separable CS denoiser.

    ``inner`` is evaluated at index ``t - 1``; callers give it a schedule
    whose entry ``-1`` is never requested or is handled by the wrapper.
    """

    def fn(t, h, x0):
        return inner.fn(t - 1, x0 - h, np.zeros_like(h)) - x0

    def dfn(t, h, x0):
        return -np.asarray(inner.dfn(t - 1, x0 - h, np.zeros_like(h)), dtype=float)

    def kinks(t):
        k = inner.kinks(t - 1)
        if k is None:
            return None
        return Kinks(1.0, tuple(sorted(-c for c in k.offsets)))

    return Denoiser(name or f"cs_{inner.name}", fn, dfn, ControlledBound(c1, 1.0, 1.0), kinks,
                    params={"inner": inner.to_config()})


class _WithInitial(Schedule):
    """Base schedule, with ``init`` returned for negative indices."""

    def __init__(self, base: Schedule, init: float):
        super().__init__()
        self.base = base
        self.init = init

    def at(self, t):
        return self.init if t < 0 else self.base.at(t)

    def to_config(self):
        return self.base.to_config()


def cs_soft_threshold_f(theta, theta_init: float = math.inf) -> Denoiser:
    """``f_t(h, x0) = eta_{theta_{t-1}}(x0 - h) - x0``; at ``t = 0`` the threshold is ``theta_init``."""
    sched = as_schedule(theta)
    d = cs_composite(soft_threshold(_WithInitial(sched, float(theta_init))), "cs_soft_threshold_f")
    params = {"theta": sched}
    if not math.isinf(theta_init):
        params["theta_init"] = float(theta_init)
    return Denoiser(d.name, d.fn, d.dfn, d.bound, d.kinks_fn, params=params)


def cs_bg_f(eps: float, var: float, tau_sq) -> Denoiser:
    """Composite CS denoiser around the Bernoulli-Gaussian posterior mean."""
    d = cs_composite(bg_posterior_mean(eps, var, tau_sq), "cs_bg_f")
    return Denoiser(d.name, d.fn, d.dfn, d.bound, d.kinks_fn,
                    params={"eps": float(eps), "var": float(var), "tau_sq": as_schedule(tau_sq)})


_BUILTINS = {
    "identity": (identity, set()),
    "residual": (residual, set()),
    "add": (add, set()),
    "linear": (lambda p: linear(p["a"]), {"a"}),
    "constant_signal": (constant_signal, set()),
    "tanh": (tanh, set()),
    "soft_threshold": (lambda p: soft_threshold(p["theta"]), {"theta"}),
    "bg_posterior_mean": (lambda p: bg_posterior_mean(p["eps"], p["var"], p["tau_sq"]), {"eps", "var", "tau_sq"}),
    "cs_soft_threshold_f": (
        lambda p: cs_soft_threshold_f(p["theta"], p.get("theta_init", math.inf)),
        {"theta", "theta_init"},
    ),
    "cs_bg_f": (lambda p: cs_bg_f(p["eps"], p["var"], p["tau_sq"]), {"eps", "var", "tau_sq"}),
}


def builtin(name: str, params: Optional[dict] = None) -> Denoiser:
    """Construct a builtin denoiser by name."""
    params = dict(params or {})
    if name not in _BUILTINS:
        raise Unsupported(f"unknown denoiser {name!r}; choose from {sorted(_BUILTINS)}")
    factory, allowed = _BUILTINS[name]
    extra = set(params) - allowed
    if extra:
        raise InvalidInput(f"unknown parameters for {name}: {sorted(extra)}")
    try:
        return factory(params) if allowed else factory()
    except KeyError as exc:
        raise InvalidInput(f"{name} is missing parameter {exc}") from None


def from_config(cfg) -> Denoiser:
    if isinstance(cfg, Denoiser):
        return cfg
    if isinstance(cfg, str):
        return builtin(cfg)
    if not isinstance(cfg, dict) or "name" not in cfg:
        raise InvalidInput(f"denoiser literal needs a 'name': {cfg!r}")
    params = {k: v for k, v in cfg.items() if k != "name"}
    return builtin(cfg["name"], params)
