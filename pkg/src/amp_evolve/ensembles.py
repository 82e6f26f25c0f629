"""Measurement matrices with independent, possibly non-identical entries.

Entry ``(i, j)`` of a generated ``n x N`` matrix is ``mu_ij / sqrt(n)``
where ``mu_ij`` is a standardized law chosen by an :class:`EntryRule`.
Each distribution referenced by a rule owns a keyed stream, and within
it row ``i`` is its own Philox counter stream, so the value at ``(i, j)``
depends only on ``(seed, rule, i, j)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from . import rng
from .distributions import (
    MAX_CLOSED_FORM_ORDER,
    Gaussian,
    LaplaceSym,
    Rademacher,
    ScalarDistribution,
    UniformSym,
    abs_moment,
    from_config as dist_from_config,
)
from .errors import InvalidInput, InvalidSpec, Unsupported

STANDARD_TOL = 1e-9


@dataclass(frozen=True)
class EntryRule:
    """Base class for entry rules."""

    def distributions(self) -> tuple:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Homogeneous(EntryRule):
    dist: ScalarDistribution

    def distributions(self):
        return (self.dist,)

    def to_config(self):
        return {"rule": "homogeneous", "dist": self.dist.to_config()}


@dataclass(frozen=True)
class Checkerboard(EntryRule):
    """``even`` where ``i + j`` is even, ``odd`` elsewhere."""

    even: ScalarDistribution
    odd: ScalarDistribution

    def distributions(self):
        return (self.even, self.odd)

    def to_config(self):
        return {"rule": "checkerboard", "even": self.even.to_config(), "odd": self.odd.to_config()}


@dataclass(frozen=True)
class RowPeriodic(EntryRule):
    """Row ``i`` uses ``dists[i % len(dists)]``."""

    dists: tuple

    def distributions(self):
        return tuple(self.dists)

    def to_config(self):
        return {"rule": "row_periodic", "dists": [d.to_config() for d in self.dists]}


@dataclass(frozen=True)
class PositionHash(EntryRule):
    """Entry ``(i, j)`` uses ``dists[k]`` with ``k`` drawn from a seeded hash of ``(i, j)``.

    The hash is keyed by the generation seed, so the assignment of laws to
    positions is fixed for a given seed and uniform over the list.
    """

    dists: tuple

    def distributions(self):
        return tuple(self.dists)

    def to_config(self):
        return {"rule": "position_hash", "dists": [d.to_config() for d in self.dists]}


@dataclass(frozen=True)
class EnsembleSpec:
    rule: EntryRule
    alpha: float = 2.0
    name: str = ""

    def to_config(self) -> dict:
        cfg = self.rule.to_config()
        cfg["alpha"] = self.alpha
        return cfg


@dataclass
class ValidationReport:
    passed: bool
    alpha: float
    entries: List[dict] = field(default_factory=list)
    problems: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "alpha": self.alpha,
            "entries": self.entries,
            "problems": self.problems,
        }


def validate(spec: EnsembleSpec) -> ValidationReport:
    """Check that every entry law is standardized and has a finite ``(2+2 alpha)`` moment."""
    report = ValidationReport(passed=True, alpha=spec.alpha)
    if not spec.alpha > 1:
        report.passed = False
        report.problems.append(f"alpha must exceed 1, got {spec.alpha}")
    order = 2.0 + 2.0 * spec.alpha
    for idx, dist in enumerate(spec.rule.distributions()):
        mean, var = dist.mean, dist.variance
        mom = abs_moment(dist, order)
        entry = {
            "index": idx,
            "dist": dist.to_config(),
            "mean": mean,
            "variance": var,
            "moment_order": order,
            "abs_moment": mom,
        }
        ceil_order = math.ceil(order)
        if ceil_order <= MAX_CLOSED_FORM_ORDER:
            entry["raw_moment_ceil"] = dist.raw_moment(ceil_order)
        ok = True
        if abs(mean) > STANDARD_TOL:
            ok = False
            report.problems.append(f"distribution {idx} ({dist.tag}): nonzero mean {mean:.3g}")
        if abs(var - 1.0) > STANDARD_TOL:
            ok = False
            report.problems.append(f"distribution {idx} ({dist.tag}): variance {var:.6g} != 1")
        if not math.isfinite(mom):
            ok = False
            report.problems.append(f"distribution {idx} ({dist.tag}): infinite moment of order {order}")
        entry["passed"] = ok
        report.passed = report.passed and ok
        report.entries.append(entry)
    return report


def _dist_rows(dist: ScalarDistribution, base_key: int, rows: Sequence[int], N: int) -> np.ndarray:
    streams = rng.RowStreams(base_key)
    out = np.empty((len(rows), N))
    for r, i in enumerate(rows):
        out[r] = dist.draw(streams.at(i), N)
    return out


def _hash_picks(streams: rng.RowStreams, i: int, N: int, k: int) -> np.ndarray:
    return np.minimum((streams.at(i).random(N) * k).astype(int), k - 1)


def generate(spec: EnsembleSpec, n: int, N: int, seed: int) -> np.ndarray:
    """Draw an ``n x N`` matrix with entries ``mu_ij / sqrt(n)``.

    Under :class:`PositionHash`, law ``d`` fills its positions in row ``i``
    left to right from the stream ``(d, i)``, so an entry still depends
    only on the seed, the rule and the entries to its left.
    """
    report = validate(spec)
    if not report.passed:
        raise InvalidSpec("; ".join(report.problems))
    if int(n) != n or int(N) != N or n < 1 or N < 1:
        raise InvalidInput(f"matrix dimensions must be positive integers, got {n} x {N}")
    n, N = int(n), int(N)
    rule = spec.rule
    dists = rule.distributions()
    keys = [rng.derive_key(seed, rng.MATRIX, d) for d in range(len(dists))]
    rows = range(n)
    if isinstance(rule, Homogeneous):
        A = _dist_rows(dists[0], keys[0], rows, N)
    elif isinstance(rule, Checkerboard):
        # entry (i, j) is value j // 2 of the (parity, i) stream
        streams = [rng.RowStreams(key) for key in keys]
        A = np.empty((n, N))
        for i in rows:
            p = i % 2
            A[i, p::2] = dists[0].draw(streams[0].at(i), len(range(p, N, 2)))
            A[i, 1 - p::2] = dists[1].draw(streams[1].at(i), len(range(1 - p, N, 2)))
    elif isinstance(rule, RowPeriodic):
        streams = [rng.RowStreams(key) for key in keys]
        A = np.empty((n, N))
        for i in rows:
            d = i % len(dists)
            A[i] = dists[d].draw(streams[d].at(i), N)
    elif isinstance(rule, PositionHash):
        hstreams = rng.RowStreams(rng.derive_key(seed, rng.POSITION_HASH))
        streams = [rng.RowStreams(key) for key in keys]
        k = len(dists)
        A = np.empty((n, N))
        for i in rows:
            pick = _hash_picks(hstreams, i, N, k)
            row = A[i]
            for d in range(k):
                mask = pick == d
                row[mask] = dists[d].draw(streams[d].at(i), int(np.count_nonzero(mask)))
    else:
        raise Unsupported(f"unknown entry rule {type(rule).__name__}")
    A /= math.sqrt(n)
    A.setflags(write=False)
    return A


def position_hash_choice(seed: int, n: int, N: int, k: int) -> np.ndarray:
    """The ``n x N`` table of law indices a :class:`PositionHash` rule uses under ``seed``."""
    hstreams = rng.RowStreams(rng.derive_key(seed, rng.POSITION_HASH))
    return np.stack([_hash_picks(hstreams, i, N, k) for i in range(n)])


def matvec(A: np.ndarray, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if A.ndim != 2 or v.ndim != 1 or A.shape[1] != v.size:
        raise InvalidInput(f"cannot multiply {A.shape} by vector of length {v.size}")
    return A @ v


def matvec_t(A: np.ndarray, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if A.ndim != 2 or v.ndim != 1 or A.shape[0] != v.size:
        raise InvalidInput(f"cannot multiply transpose of {A.shape} by vector of length {v.size}")
    return A.T @ v


def dump_matrix(A: np.ndarray, path) -> None:
    """Binary dump: two little-endian uint64 dims, then row-major little-endian float64."""
    A = np.ascontiguousarray(A, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", A.shape[0], A.shape[1]))
        fh.write(A.tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        n, N = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * N:
        raise InvalidInput(f"matrix file holds {data.size} values, header says {n}x{N}")
    return data.reshape(n, N).astype(float)


# --------------------------------------------------------------------------
# config literals and named presets

PRESETS = {
    "gaussian": lambda: Homogeneous(Gaussian(0.0, 1.0)),
    "rademacher": lambda: Homogeneous(Rademacher()),
    "checkerboard": lambda: Checkerboard(Rademacher(), UniformSym(math.sqrt(3.0))),
    "position_hash": lambda: PositionHash(
        (Gaussian(0.0, 1.0), Rademacher(), UniformSym(math.sqrt(3.0)), LaplaceSym(1.0 / math.sqrt(2.0)))
    ),
}


def preset(name: str, alpha: float = 2.0) -> EnsembleSpec:
    if name not in PRESETS:
        raise Unsupported(f"unknown ensemble preset {name!r}; choose from {sorted(PRESETS)}")
    return EnsembleSpec(PRESETS[name](), alpha, name)


_RULE_KEYS = {
    "homogeneous": {"dist"},
    "checkerboard": {"even", "odd"},
    "row_periodic": {"dists"},
    "position_hash": {"dists"},
}


def from_config(cfg) -> EnsembleSpec:
    """Parse ``{"rule": ..., ..., "alpha": 2.0}`` or ``{"preset": "rademacher"}``."""
    if isinstance(cfg, EnsembleSpec):
        return cfg
    if isinstance(cfg, str):
        return preset(cfg)
    if not isinstance(cfg, dict):
        raise InvalidInput(f"ensemble literal must be an object, got {cfg!r}")
    alpha = float(cfg.get("alpha", 2.0))
    name = cfg.get("name", "")
    if "preset" in cfg:
        extra = set(cfg) - {"preset", "alpha", "name"}
        if extra:
            raise InvalidInput(f"unknown ensemble keys {sorted(extra)}")
        spec = preset(cfg["preset"], alpha)
        return EnsembleSpec(spec.rule, alpha, name or spec.name)
    kind = cfg.get("rule")
    if kind not in _RULE_KEYS:
        raise Unsupported(f"unknown entry rule {kind!r}")
    extra = set(cfg) - {"rule", "alpha", "name"} - _RULE_KEYS[kind]
    if extra:
        raise InvalidInput(f"unknown keys for {kind}: {sorted(extra)}")
    try:
        if kind == "homogeneous":
            rule = Homogeneous(dist_from_config(cfg["dist"]))
        elif kind == "checkerboard":
            rule = Checkerboard(dist_from_config(cfg["even"]), dist_from_config(cfg["odd"]))
        elif kind == "row_periodic":
            rule = RowPeriodic(tuple(dist_from_config(d) for d in cfg["dists"]))
        else:
            rule = PositionHash(tuple(dist_from_config(d) for d in cfg["dists"]))
    except KeyError as exc:
        raise InvalidInput(f"{kind} rule is missing {exc}") from None
    return EnsembleSpec(rule, alpha, name or kind)
