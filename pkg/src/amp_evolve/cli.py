"""Command-line experiment runner.

    amp-evolve <mode> --config <path> [--out <dir>] [--seed <u64>] [--jobs <k>]

The configuration is a JSON object. Unknown keys are rejected and every
omitted key takes the default listed in ``DEFAULTS``. Exit codes: 0 all
checks pass, 1 a verification check failed, 2 usage or parse error, 3
semantic configuration error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from itertools import combinations
from typing import Any, Dict, List, Optional

import numpy as np
import scipy

from . import __version__, rng
from . import denoisers as den
from . import distributions as dist
from . import ensembles as ens
from . import experiments as X
from . import verification as V
from .amp import CSV_SCHEMA_LINE
from .errors import (
    AmpEvolveError,
    DegenerateDistribution,
    InvalidInput,
    InvalidSpec,
    NumericalFailure,
    RankDeficient,
    Unsupported,
)

MODES = (
    "run-amp",
    "se-predict",
    "verify-theorem1",
    "verify-propositions",
    "universality-sweep",
    "validate-ensemble",
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SEMANTIC, EXIT_NUMERIC = 0, 1, 2, 3, 4

DEFAULTS: Dict[str, Any] = {
    "ensemble": "gaussian",
    "ensembles": ["gaussian", "rademacher", "checkerboard"],
    "signal": {"type": "bernoulli_gaussian", "eps": 0.1, "var": 1.0},
    "noise": {"type": "gaussian", "mean": 0.0, "var": 1e-4},
    "algorithm": {"type": "cs_soft_threshold", "kappa": den.KAPPA_DEFAULT},
    "N": 2000,
    "rho": 0.5,
    "T": 10,
    "replications": 1,
    "seed": 0,
    "retain": [],
    "quadrature_order": dist.DEFAULT_ORDER,
    "tolerances": {
        "inner_C": V.INNER_C_DEFAULT,
        "inner_pass_rate": 0.95,
        "deviation": 0.10,
        "spread": 0.05,
    },
    "propositions": {
        "n_grid": [100, 400, 1600],
        "projection_dim": 3,
        "projection_reps": 100,
        "lindeberg_N": 1000,
        "lindeberg_reps": 5,
        "bilinear_N": 1000,
        "bilinear_reps": 2000,
        "bilinear_var_band": [0.9, 1.1],
        "stein_cov": 0.3,
        "stein_trials": 100000,
        "conditioning_N": 400,
        "conditioning_T": 3,
        "conditioning_resamples": 5,
    },
}

_TOP_KEYS = set(DEFAULTS) | {"n"}


class ConfigError(AmpEvolveError):
    """Malformed text (exit 2) when ``parse`` is set, invalid content (exit 3) otherwise."""

    def __init__(self, message: str, parse: bool = False, report: Optional[dict] = None):
        super().__init__(message)
        self.parse = parse
        self.report = report


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    canonical: dict
    ensemble: ens.EnsembleSpec
    ensembles: Dict[str, ens.EnsembleSpec]
    signal: dist.ScalarDistribution
    noise: dist.ScalarDistribution
    N: int
    n: int
    T: int
    replications: int
    seed: int
    retain: Any
    notes: List[str] = field(default_factory=list)

    @property
    def rho(self) -> float:
        return self.n / self.N

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(emit_canonical(self).encode()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.canonical == other.canonical


def _check_keys(obj: dict, allowed, where: str) -> None:
    extra = set(obj) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def _int(value, name: str, lo: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value or value < lo:
        raise ConfigError(f"{name} must be an integer >= {lo}, got {value!r}")
    return int(value)


def _ensemble(cfg, where: str) -> ens.EnsembleSpec:
    try:
        spec = ens.from_config(cfg)
    except (InvalidInput, Unsupported, DegenerateDistribution) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    report = ens.validate(spec)
    if not report.passed:
        raise ConfigError(f"{where} fails validation: " + "; ".join(report.problems), report=report.to_dict())
    return spec


def _distribution(cfg, where: str) -> dist.ScalarDistribution:
    try:
        return dist.from_config(cfg)
    except (InvalidInput, Unsupported, DegenerateDistribution) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _algorithm(cfg) -> dict:
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise ConfigError("algorithm must be an object with a 'type'")
    kind = cfg["type"]
    if kind == "cs_soft_threshold":
        _check_keys(cfg, {"type", "kappa", "thetas"}, "algorithm")
        if "thetas" in cfg and "kappa" in cfg:
            raise ConfigError("algorithm: give either kappa or thetas, not both")
        if "thetas" in cfg:
            thetas = cfg["thetas"]
            if not isinstance(thetas, list) or not all(isinstance(x, (int, float)) and x > 0 for x in thetas):
                raise ConfigError("algorithm.thetas must be a list of positive numbers")
            return {"type": kind, "thetas": [float(x) for x in thetas]}
        kappa = cfg.get("kappa", den.KAPPA_DEFAULT)
        if not isinstance(kappa, (int, float)) or not kappa > 0:
            raise ConfigError("algorithm.kappa must be positive")
        return {"type": kind, "kappa": float(kappa)}
    if kind == "general":
        _check_keys(cfg, {"type", "f", "g", "q0"}, "algorithm")
        out = {"type": kind}
        for role in ("f", "g"):
            if role not in cfg:
                raise ConfigError(f"algorithm.{role} is required for type 'general'")
            try:
                out[role] = den.from_config(cfg[role]).to_config()
            except (InvalidInput, Unsupported) as exc:
                raise ConfigError(f"algorithm.{role}: {exc}") from None
        q0 = cfg.get("q0", "signal")
        if isinstance(q0, str):
            if q0 not in X.Q0_RULES:
                raise ConfigError(f"algorithm.q0 must be one of {X.Q0_RULES} or a distribution")
            out["q0"] = q0
        else:
            out["q0"] = _distribution(q0, "algorithm.q0").to_config()
        return out
    raise ConfigError(f"unknown algorithm type {kind!r}; use 'cs_soft_threshold' or 'general'")


def _retain(value):
    if value == "all":
        return "all"
    if isinstance(value, list) and all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in value):
        return sorted(set(value))
    raise ConfigError("retain must be 'all' or a list of nonnegative iteration indices")


def _subtree(raw: dict, key: str) -> dict:
    given = raw.get(key, {})
    if not isinstance(given, dict):
        raise ConfigError(f"{key} must be an object")
    _check_keys(given, DEFAULTS[key], key)
    out = dict(DEFAULTS[key])
    out.update(given)
    return out


def config_from_dict(raw: dict, seed_override: Optional[int] = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "configuration")
    canon: Dict[str, Any] = {}

    spec = _ensemble(raw.get("ensemble", DEFAULTS["ensemble"]), "ensemble")
    canon["ensemble"] = spec.to_config()
    names = raw.get("ensembles", DEFAULTS["ensembles"])
    if not isinstance(names, list) or not names:
        raise ConfigError("ensembles must be a nonempty list")
    sweep: Dict[str, ens.EnsembleSpec] = {}
    canon["ensembles"] = []
    for i, item in enumerate(names):
        s = _ensemble(item, f"ensembles[{i}]")
        label = item if isinstance(item, str) else (item.get("name") or f"ensemble{i}")
        if label in sweep:
            raise ConfigError(f"duplicate ensemble label {label!r}")
        sweep[label] = s
        canon["ensembles"].append(item if isinstance(item, str) else dict(s.to_config(), name=label))

    signal = _distribution(raw.get("signal", DEFAULTS["signal"]), "signal")
    noise = _distribution(raw.get("noise", DEFAULTS["noise"]), "noise")
    canon["signal"], canon["noise"] = signal.to_config(), noise.to_config()
    canon["algorithm"] = _algorithm(raw.get("algorithm", DEFAULTS["algorithm"]))

    N = _int(raw.get("N", DEFAULTS["N"]), "N", 1)
    notes = []
    if "n" in raw and "rho" in raw:
        raise ConfigError("give either n or rho, not both")
    if "n" in raw:
        n = _int(raw["n"], "n", 1)
        canon["n"] = n
    else:
        rho = raw.get("rho", DEFAULTS["rho"])
        if not isinstance(rho, (int, float)) or not 0 < rho <= 1:
            raise ConfigError(f"rho must lie in (0, 1], got {rho!r}")
        n = int(round(rho * N))
        canon["rho"] = float(rho)
        if n != rho * N:
            notes.append(f"rho*N = {rho * N} rounded to n = {n}")
    if not 1 <= n <= N:
        raise ConfigError(f"n = {n} must lie in [1, N = {N}]")
    canon["N"] = N
    canon["T"] = _int(raw.get("T", DEFAULTS["T"]), "T", 1)
    canon["replications"] = _int(raw.get("replications", DEFAULTS["replications"]), "replications", 1)
    seed = raw.get("seed", DEFAULTS["seed"]) if seed_override is None else seed_override
    canon["seed"] = _int(seed, "seed", 0)
    if canon["seed"] >= 2**64:
        raise ConfigError("seed must fit in 64 bits")
    canon["retain"] = _retain(raw.get("retain", DEFAULTS["retain"]))
    order = _int(raw.get("quadrature_order", DEFAULTS["quadrature_order"]), "quadrature_order", 2)
    if order > 256:
        raise ConfigError("quadrature_order must be <= 256")
    canon["quadrature_order"] = order

    tol = _subtree(raw, "tolerances")
    for k, v in tol.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(f"tolerances.{k} must be a positive number")
        tol[k] = float(v)
    canon["tolerances"] = tol
    props = _subtree(raw, "propositions")
    canon["propositions"] = props

    cfg = ExperimentConfig(canon, spec, sweep, signal, noise, N, n, canon["T"], canon["replications"],
                           canon["seed"], canon["retain"], notes)
    setup_for(cfg)  # surfaces SE/denoiser problems as configuration errors
    return cfg


def _json_error(exc: json.JSONDecodeError) -> ConfigError:
    return ConfigError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}", parse=True)


def parse_config(source: str, seed_override: Optional[int] = None) -> ExperimentConfig:
    """Parse a config from a path or from inline JSON text."""
    text = source
    if not source.lstrip().startswith("{"):
        try:
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source!r}: {exc}", parse=True) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _json_error(exc) from None
    return config_from_dict(raw, seed_override)


def emit_canonical(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.canonical, sort_keys=True, indent=1)


# --------------------------------------------------------------------------
# setups (rebuilt from the canonical dict so worker processes can share them)


def setup_for(cfg: ExperimentConfig) -> X.Setup:
    return _setup_cached(json.dumps(cfg.canonical, sort_keys=True))


@lru_cache(maxsize=8)
def _setup_cached(canon_json: str) -> X.Setup:
    c = json.loads(canon_json)
    spec = ens.from_config(c["ensemble"])
    signal, noise = dist.from_config(c["signal"]), dist.from_config(c["noise"])
    N = c["N"]
    n = c["n"] if "n" in c else int(round(c["rho"] * N))
    rule = dist.gauss_hermite(c["quadrature_order"])
    alg = c["algorithm"]
    try:
        if alg["type"] == "cs_soft_threshold":
            return X.cs_setup(spec, signal, noise, n / N, N, c["T"], alg.get("kappa", den.KAPPA_DEFAULT),
                              alg.get("thetas"), rule)
        q0 = alg["q0"] if isinstance(alg["q0"], str) else dist.from_config(alg["q0"])
        return X.generic_setup(spec, signal, noise, n / N, N, c["T"], den.from_config(alg["f"]),
                               den.from_config(alg["g"]), q0, rule)
    except InvalidInput as exc:
        raise ConfigError(f"algorithm: {exc}") from None


# --------------------------------------------------------------------------
# output


def atomic_write(path: str, text: str) -> None:
    """Write through a temporary file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header: List[str], rows) -> str:
    buf = io.StringIO()
    buf.write(CSV_SCHEMA_LINE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


class Outputs:
    def __init__(self, out_dir: str):
        self.dir = out_dir
        self.written: List[str] = []

    def write(self, name: str, text: str) -> None:
        atomic_write(os.path.join(self.dir, name), text)
        self.written.append(name)


# --------------------------------------------------------------------------
# modes


def _rep_seeds(cfg: ExperimentConfig) -> List[int]:
    return [rng.replication_seed(cfg.seed, r) for r in range(cfg.replications)]


def _task_run(args):
    canon_json, rep_seed, retain, onsager, ens_cfg = args
    setup = _setup_cached(canon_json)
    spec = ens.from_config(ens_cfg) if ens_cfg is not None else None
    return X.run_replication(setup, rep_seed, onsager=onsager, retain=retain, ensemble=spec)


def _run_all(cfg: ExperimentConfig, jobs: int, retain=None, ensemble: Optional[dict] = None):
    canon_json = json.dumps(cfg.canonical, sort_keys=True)
    items = [(canon_json, s, retain, True, ensemble) for s in _rep_seeds(cfg)]
    return X.replicate(_task_run, items, jobs)


def mode_run_amp(cfg, out: Outputs, jobs: int) -> int:
    setup = setup_for(cfg)
    retain = cfg.retain if cfg.retain else None
    trajs = _run_all(cfg, jobs, retain)
    for r, tr in enumerate(trajs):
        out.write(f"trajectory_r{r:03d}.csv", tr.to_csv())
        out.write(f"gram_r{r:03d}.json", tr.gram_json())
        if tr.vectors:
            rows = [(kind, t, i, float(v)) for kind, byt in tr.vectors.items() for t, vec in byt.items()
                    for i, v in enumerate(vec)]
            out.write(f"vectors_r{r:03d}.csv", _csv(["kind", "t", "i", "value"], rows))
    out.write("se.csv", setup.se.to_csv())
    return EXIT_OK


def mode_se_predict(cfg, out: Outputs, jobs: int) -> int:
    out.write("se.csv", setup_for(cfg).se.to_csv())
    return EXIT_OK


def mode_validate_ensemble(cfg, out: Outputs, jobs: int) -> int:
    reports = {"ensemble": ens.validate(cfg.ensemble).to_dict()}
    out.write("validation.json", json.dumps(reports, indent=1))
    return EXIT_OK if all(r["passed"] for r in reports.values()) else EXIT_FAIL


def mode_verify_theorem1(cfg, out: Outputs, jobs: int) -> int:
    setup = setup_for(cfg)
    tol = cfg.canonical["tolerances"]
    trajs = _run_all(cfg, jobs, retain="all")
    report = V.VerificationReport()
    devs, inner_pass, inner_total = [], 0, 0
    for r, tr in enumerate(trajs):
        seed = _rep_seeds(cfg)[r]
        dev = X.se_relative_deviation(tr, setup.se)
        devs.append(float(dev.max()))
        inner = V.check_inner_identities(tr, C=tol["inner_C"])
        inner_pass += sum(c.passed for c in inner.checks)
        inner_total += len(inner.checks)
        for c in inner.checks:
            c.seed = seed
        perp = V.perp_moment_check(tr, cfg.ensemble.alpha)
        report.add(f"perp_moments[r{r}]", 1.0 - perp.pass_rate, 0.0, passed=perp.passed,
                   rule="every perp moment <= full moment", n=tr.n, N=tr.N, seed=seed)
    med = float(np.median(devs))
    report.add("se_deviation_median", med, tol["deviation"], rule="median over seeds of max_t relative deviation",
               n=cfg.n, N=cfg.N, reps=cfg.replications, seed=cfg.seed, details={"per_seed": devs})
    rate = inner_pass / inner_total
    report.add("inner_identities_pass_rate", 1.0 - rate, 1.0 - tol["inner_pass_rate"],
               rule=f"(pair, seed) pass rate >= {tol['inner_pass_rate']:g} at C={tol['inner_C']:g}",
               n=cfg.n, N=cfg.N, reps=cfg.replications, seed=cfg.seed, details={"pass_rate": rate})
    rows = [(r, t, float(tr.qq[t] / tr.rho), setup.se.sigma_sq[t], float(d))
            for r, tr in enumerate(trajs) for t, d in enumerate(X.se_relative_deviation(tr, setup.se))]
    out.write("se_deviation.csv", _csv(["replication", "t", "qq_over_rho", "sigma_sq", "relative_deviation"], rows))
    out.write("report.json", report.to_json())
    return EXIT_OK if report.passed else EXIT_FAIL


def mode_universality_sweep(cfg, out: Outputs, jobs: int) -> int:
    setup = setup_for(cfg)
    tol = cfg.canonical["tolerances"]
    sig = np.asarray(setup.se.sigma_sq[: cfg.T])
    report = V.VerificationReport()
    qq = {}
    for label, spec in cfg.ensembles.items():
        trajs = _run_all(cfg, jobs, ensemble=spec.to_config())
        Q = np.array([tr.qq / tr.rho for tr in trajs])
        D = np.array([X.se_relative_deviation(tr, setup.se) for tr in trajs])
        qq[label] = Q
        rows = [(t, sig[t], float(np.median(Q[:, t])), float(np.median(D[:, t]))) for t in range(cfg.T)]
        out.write(f"se_deviation_{label}.csv",
                  _csv(["t", "sigma_sq", "median_qq_over_rho", "median_relative_deviation"], rows))
        report.add(f"se_deviation[{label}]", float(np.median(D.max(axis=1))), tol["deviation"],
                   rule="median over seeds of max_t relative deviation", n=cfg.n, N=cfg.N,
                   reps=cfg.replications, seed=cfg.seed)
    labels = list(qq)
    allow = tol["spread"] * np.maximum(sig, 1e-3)
    rows = []
    for a, b in combinations(labels, 2):
        diff = np.median(np.abs(qq[a] - qq[b]), axis=0)
        rows += [(a, b, t, float(diff[t]), float(allow[t])) for t in range(cfg.T)]
    out.write("pairwise_mse_difference.csv",
              _csv(["ensemble_a", "ensemble_b", "t", "median_abs_difference", "allowance"], rows))
    if len(labels) > 1:
        stack = np.stack([qq[k] for k in labels])
        spread = np.median(stack.max(axis=0) - stack.min(axis=0), axis=0)
        for t in range(cfg.T):
            report.add(f"spread[t={t}]", float(spread[t]), float(allow[t]),
                       rule=f"{tol['spread']:g} * max(sigma_t^2, 1e-3)", n=cfg.n, N=cfg.N,
                       reps=cfg.replications, seed=cfg.seed)
    out.write("report.json", report.to_json())
    return EXIT_OK if report.passed else EXIT_FAIL


def _diffuse_unit(seed: int, tag: int, size: int) -> np.ndarray:
    v = rng.generator(seed, rng.GENERIC, tag).standard_normal(size)
    return v / np.linalg.norm(v)


def mode_verify_propositions(cfg, out: Outputs, jobs: int) -> int:
    p = cfg.canonical["propositions"]
    spec, seed, rho = cfg.ensemble, cfg.seed, cfg.rho
    report = V.VerificationReport()
    # projections onto a random low-dimensional subspace
    report.extend(V.projection_decay(1.0, p["projection_dim"], p["n_grid"], p["projection_reps"], seed))
    # entry moments of order 2 + 2 alpha
    for d in dict.fromkeys(spec.rule.distributions()):
        report.extend(V.moment_decay_check(d, spec.alpha, p["n_grid"]))
    # Lindeberg: A v for a diffuse v
    Nl = p["lindeberg_N"]
    nl = X.rows_for(rho, Nl)
    report.extend(V.lindeberg_empirical(spec, _diffuse_unit(seed, 1, Nl) * math.sqrt(Nl), nl,
                                        p["lindeberg_reps"], seed))
    # bilinear forms v^T A u
    Nb = p["bilinear_N"]
    nb = X.rows_for(rho, Nb)
    lo, hi = p["bilinear_var_band"]
    report.extend(V.bilinear_gaussianity(spec, _diffuse_unit(seed, 2, Nb), _diffuse_unit(seed, 3, nb),
                                         p["bilinear_reps"], seed, (lo, hi)))
    # Gaussian integration by parts
    report.extend(V.stein_identity_check(np.tanh, lambda z: 1.0 / np.cosh(z) ** 2, p["stein_cov"],
                                         p["stein_trials"], seed))
    # conditional resampling on constraints from a short run
    small = dict(cfg.canonical, N=p["conditioning_N"], T=p["conditioning_T"], replications=1)
    small.pop("n", None)
    small["rho"] = rho
    scfg = config_from_dict(small)
    setup = setup_for(scfg)
    tr = X.run_replication(setup, rng.replication_seed(seed, 0), retain="all")
    cons = V.harvest_constraints(tr, p["conditioning_T"])
    worst = 0.0
    for k in range(p["conditioning_resamples"]):
        A = V.conditional_resample(cons, spec, rng.replication_seed(seed + 1, k))
        worst = max(worst, *V.constraint_residuals(A, cons))
    report.add("conditional_resample_residual", worst, 1e-8, rule="relative Frobenius",
               n=cons.n, N=cons.N, reps=p["conditioning_resamples"], seed=seed)
    out.write("report.json", report.to_json())
    return EXIT_OK if report.passed else EXIT_FAIL


_DISPATCH = {
    "run-amp": mode_run_amp,
    "se-predict": mode_se_predict,
    "verify-theorem1": mode_verify_theorem1,
    "verify-propositions": mode_verify_propositions,
    "universality-sweep": mode_universality_sweep,
    "validate-ensemble": mode_validate_ensemble,
}


# --------------------------------------------------------------------------
# entry point


def _versions() -> dict:
    return {
        "amp_evolve": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _manifest(mode, cfg: Optional[ExperimentConfig], code, wall, started, artifacts, failure=None) -> str:
    m = {
        "mode": mode,
        "exit_code": code,
        "started_utc": started,
        "wall_time_s": wall,
        "versions": _versions(),
        "artifacts": artifacts,
    }
    if cfg is not None:
        m.update(
            config_hash=cfg.config_hash,
            config=cfg.canonical,
            seeds={"base": cfg.seed, "replications": _rep_seeds(cfg)},
            sizes={"n": cfg.n, "N": cfg.N, "rho_effective": cfg.rho},
            notes=cfg.notes,
        )
    if failure:
        m["failure"] = failure
    return json.dumps(m, indent=1)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amp-evolve", description="AMP, state evolution and finite-n verification.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="JSON config path, or inline JSON text")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int, default=None, help="override the config's base seed")
    p.add_argument("--jobs", type=int, default=None, help="concurrent replications (default: $AMP_EVOLVE_JOBS or 1)")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    out = Outputs(args.out)
    cfg = None
    failure = None
    try:
        jobs = args.jobs if args.jobs is not None else X.default_jobs()
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1", parse=True)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer", parse=True)
        cfg = parse_config(args.config, args.seed)
        out.write("config.canonical.json", emit_canonical(cfg))
        code = _DISPATCH[args.mode](cfg, out, jobs)
    except ConfigError as exc:
        code = EXIT_USAGE if exc.parse else EXIT_SEMANTIC
        print(f"amp-evolve: {exc}", file=sys.stderr)
        failure = {"kind": "parse" if exc.parse else "semantic", "message": str(exc)}
        if exc.report is not None:
            failure["validation_report"] = exc.report
            print(json.dumps(exc.report, indent=1), file=sys.stderr)
    except (NumericalFailure, RankDeficient) as exc:
        code = EXIT_NUMERIC
        failure = {"kind": "numerical", "message": str(exc), "iteration": getattr(exc, "iteration", None)}
        print(f"amp-evolve: numerical failure: {exc}", file=sys.stderr)
    except (InvalidInput, InvalidSpec, Unsupported, DegenerateDistribution) as exc:
        code = EXIT_SEMANTIC
        failure = {"kind": "semantic", "message": str(exc)}
        print(f"amp-evolve: {exc}", file=sys.stderr)
    wall = time.perf_counter() - t0
    try:
        atomic_write(os.path.join(args.out, "manifest.json"),
                     _manifest(args.mode, cfg, code, wall, started, out.written, failure))
    except OSError as exc:
        print(f"amp-evolve: cannot write manifest: {exc}", file=sys.stderr)
        code = code or EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())
