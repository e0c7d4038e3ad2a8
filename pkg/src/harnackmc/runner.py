"""Config-driven experiments: parse a TOML document, run the selected suites, assemble a report.

A config has the tables ``model``, ``coupling``, ``solver``, ``suite`` and
optionally ``probe`` and ``output``.  Every default is filled in by
:func:`load_config` so the emitted report describes the run completely.
"""
from __future__ import annotations

import copy
import csv
import json
import math
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .coupling import CouplingConfig
from .errors import ConfigurationError, DomainError
from .harnack import (Comparison, Estimate, HarnackReport, TestFunction, bound_set, coupled_run, estimate_semigroup,
                      log_harnack_sides, power_harnack_bound, power_harnack_sides, sfde_log_harnack_bound,
                      test_function, verdict, weighted_summary, TEST_FUNCTIONS_VERSION, POWER_VARIANTS,
                      LOG_HARNACK_VARIANTS)
from .model import CATALOG, SdeSpec, SegmentPath, SfdeSpec, catalog_model, declared_checks
from .modulus import BIHARI_VARIANTS
from .oracle import LinearModelParams, exact_Ptf, exact_log_harnack_gap
from .simulate import STREAM_PLAIN, StepPolicy, terminal_segment_distance, uniqueness_probe

SUITES = ("log-harnack", "power-harnack", "sfde-log-harnack", "girsanov-identity", "entropy", "moment",
          "uniqueness-probe", "assumption-spot-checks")
WEIGHTED_SUITES = {"log-harnack", "power-harnack", "girsanov-identity", "entropy", "moment"}
COUPLED_FRACTION_MIN = 0.99

DEFAULTS = {
    "model": {"params": {}},
    "coupling": {"theta": 1.0, "gamma": None, "eps_couple": None, "ball_radius": 1e6, "blowup_guard": 1e4},
    "solver": {"h_max": 2.0 ** -10, "h_min": 1e-9, "stiffness_factor": 0.1, "paths": 10_000, "chunk_size": 4096},
    "suite": {"run": ["log-harnack"], "power_q": [], "test_function": {"name": "exp"},
              "power_test_function": {"name": "sigmoid"}, "bihari_variant": "as-stated", "bound_scale": 1.0,
              "n_se": 3.0, "spot_check_pairs": 10_000},
    "probe": {"x0": None, "T": 1.0, "mesh_levels": [2.0 ** -10, 2.0 ** -12, 2.0 ** -14],
              "perturbations": [1e-4, 1e-6, 1e-8, 0.0], "paths": 4},
    "output": {"dir": "harnack_out"},
}


def _fail(path: str, msg: str):
    raise ConfigurationError(f"{path}: {msg}")


def _number(cfg, table, key, positive=False, allow_none=False):
    v = cfg[table].get(key)
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        _fail(f"{table}.{key}", f"expected a number, got {v!r}")
    if positive and not v > 0:
        _fail(f"{table}.{key}", "must be positive")
    return float(v)


def _vector(v, path):
    arr = np.atleast_1d(np.asarray(v, dtype=float)) if isinstance(v, (int, float, list)) else None
    if arr is None or arr.ndim != 1 or not np.all(np.isfinite(arr)):
        _fail(path, f"expected a number or list of numbers, got {v!r}")
    return arr


@dataclass
class Experiment:
    """A validated configuration plus the objects built from it."""

    raw: Dict[str, Any]  # resolved config with defaults
    spec: Any
    cfg: CouplingConfig
    policy: StepPolicy
    n_paths: int
    suites: List[str]
    f: TestFunction
    f_power: TestFunction

    @property
    def is_sfde(self) -> bool:
        return isinstance(self.spec, SfdeSpec)


def _merge(defaults, user, path=""):
    out = copy.deepcopy(defaults)
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("params",):
            out[k] = _merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def load_config(path_or_text, overrides: Optional[dict] = None, is_text: bool = False) -> Experiment:
    """Parse and validate a TOML experiment config.

    ``overrides`` maps ``table.key`` to a value and is applied before
    validation (the CLI uses it for --seed, --paths and --step).
    """
    try:
        text = path_or_text if is_text else Path(path_or_text).read_text()
        user = tomllib.loads(text)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from exc
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        _fail(sorted(unknown)[0], "unknown table")
    for table in ("model", "coupling", "solver"):
        if table not in user:
            _fail(table, "missing table")
    raw = _merge(DEFAULTS, user)
    for key, v in (overrides or {}).items():
        table, name = key.split(".")
        raw[table][name] = v
    for table, keys in DEFAULTS.items():
        extra = set(raw[table]) - set(keys) - {"name", "T", "x", "y", "phi", "psi", "seed"}
        if extra:
            _fail(f"{table}.{sorted(extra)[0]}", "unknown field")

    name = raw["model"].get("name")
    if name not in CATALOG:
        _fail("model.name", f"unknown model {name!r}; catalog has {', '.join(CATALOG)}")
    try:
        spec = catalog_model(name, raw["model"]["params"])
    except ConfigurationError as exc:
        _fail("model.params", str(exc))

    sol = raw["solver"]
    if "seed" not in sol:
        _fail("solver.seed", "required (no nondeterministic default)")
    seed = sol["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        _fail("solver.seed", "must be a nonnegative integer")
    n_paths = sol["paths"]
    if isinstance(n_paths, bool) or not isinstance(n_paths, int) or n_paths < 2:
        _fail("solver.paths", "must be an integer >= 2")
    try:
        policy = StepPolicy(h_max=_number(raw, "solver", "h_max", True), rng_seed=seed,
                            h_min=_number(raw, "solver", "h_min", True),
                            stiffness_factor=_number(raw, "solver", "stiffness_factor", True),
                            chunk_size=int(sol["chunk_size"]))
    except ConfigurationError as exc:
        _fail("solver", str(exc))

    cp = raw["coupling"]
    T = _number(raw, "coupling", "T", True)
    gamma = _number(raw, "coupling", "gamma", True, allow_none=True)
    if gamma is None:
        gamma = spec.modulus.gamma
        if gamma is None:
            _fail("coupling.gamma", f"model modulus {spec.modulus.name!r} has no gamma; set it explicitly")
        cp["gamma"] = gamma
    common = dict(T=T, theta=_number(raw, "coupling", "theta"), gamma=gamma,
                  eps_couple=_number(raw, "coupling", "eps_couple", True, allow_none=True),
                  ball_radius=_number(raw, "coupling", "ball_radius", True),
                  blowup_guard=_number(raw, "coupling", "blowup_guard", True))
    try:
        if isinstance(spec, SfdeSpec):
            for k in ("phi", "psi"):
                if k not in cp:
                    _fail(f"coupling.{k}", "required for a functional model")
            phi = SegmentPath.constant(_vector(cp["phi"], "coupling.phi"), spec.r0, policy.h_max, spec.dim)
            psi = SegmentPath.constant(_vector(cp["psi"], "coupling.psi"), spec.r0, policy.h_max, spec.dim)
            cfg = CouplingConfig(start_x=phi, start_y=psi, schedule="xi_tilde", **common)
        else:
            for k in ("x", "y"):
                if k not in cp:
                    _fail(f"coupling.{k}", "required")
            x, y = _vector(cp["x"], "coupling.x"), _vector(cp["y"], "coupling.y")
            if x.size == 1 and spec.dim > 1:
                x, y = np.full(spec.dim, x[0]), np.full(spec.dim, y[0])
            if x.shape != (spec.dim,) or y.shape != (spec.dim,):
                _fail("coupling.x", f"start points must have dimension {spec.dim}")
            cfg = CouplingConfig(start_x=x, start_y=y, **common)
    except ConfigurationError as exc:
        msg = str(exc)
        if ":" in msg.split(" ")[0]:
            raise
        _fail("coupling", msg)
    if common["eps_couple"] is None:
        cp["eps_couple"] = cfg.eps_couple

    st = raw["suite"]
    suites = st["run"]
    if not isinstance(suites, list) or not suites:
        _fail("suite.run", "expected a nonempty list")
    for i, s in enumerate(suites):
        if s not in SUITES:
            _fail(f"suite.run[{i}]", f"unknown suite {s!r}; choose from {', '.join(SUITES)}")
    if isinstance(spec, SfdeSpec):
        bad = [s for s in suites if s in WEIGHTED_SUITES]
        if bad:
            _fail("suite.run", f"{bad[0]!r} needs a point model; use sfde-log-harnack for {spec.name}")
    elif "sfde-log-harnack" in suites:
        _fail("suite.run", "sfde-log-harnack needs a functional model")
    if st["bihari_variant"] not in BIHARI_VARIANTS:
        _fail("suite.bihari_variant", f"expected one of {BIHARI_VARIANTS}")
    fs = {}
    for key in ("test_function", "power_test_function"):
        spec_f = dict(st[key])
        try:
            fs[key] = test_function(spec_f.pop("name", "exp"), **spec_f)
        except ConfigurationError as exc:
            _fail(f"suite.{key}", str(exc))
    if "power-harnack" in suites:
        if not st["power_q"]:
            _fail("suite.power_q", "power-harnack needs at least one q")
        for i, q in enumerate(st["power_q"]):
            try:
                power_harnack_bound(spec, None, T, cfg.start_x, cfg.start_y, float(q))
            except DomainError as exc:
                _fail(f"suite.power_q[{i}]", str(exc))
    if "moment" in suites and (spec.delta is None or not spec.delta(T) > 0):
        _fail("suite.run", "moment suite needs delta(T) > 0")
    return Experiment(raw, spec, cfg, policy, n_paths, list(suites), fs["test_function"], fs["power_test_function"])


# ---------------------------------------------------------------------------
# suites


def _meta(exp: Experiment) -> dict:
    c = exp.cfg
    if c.is_segment:
        sx, sy = c.start_x.values[0].tolist(), c.start_y.values[0].tolist()
    else:
        sx, sy = c.start_x.tolist(), c.start_y.tolist()
    return {"model": exp.spec.name, "T": c.T, "start_x": sx, "start_y": sy}


def _cmp(name, lhs, baseline, se, bound, bound_name, meta, **kw):
    return Comparison(name, float(lhs), float(baseline), float(se), float(bound), bound_name, meta, **kw)


def run_experiment(exp: Experiment, workers: int = 1, dump_dir: Optional[Path] = None) -> HarnackReport:
    """Run every selected suite and return one report."""
    meta = _meta(exp)
    st = exp.raw["suite"]
    n_se, scale = float(st["n_se"]), float(st["bound_scale"])
    spec, cfg, policy, N = exp.spec, exp.cfg, exp.policy, exp.n_paths
    comps, est, flags, extra = [], {}, {"unreliable": False}, {}
    bounds = None
    suites = exp.suites

    if not exp.is_sfde and any(s in WEIGHTED_SUITES for s in suites):
        qs = [float(q) for q in st["power_q"]] if "power-harnack" in suites else []
        bounds = bound_set(spec, None, cfg.T, cfg.start_x, cfg.start_y, cfg.theta, qs)
        run = coupled_run(spec, cfg, N, policy, workers)
        if dump_dir is not None:
            _dump_csv(run.record, dump_dir / "paths_coupled.csv")
        powers = [1.0 + bounds.moment_p] if bounds.moment_p is not None else []
        ws = weighted_summary(run, exp.f, powers)
        flags["unreliable"] |= ws.unreliable
        flags["coupled_run"] = ws.flags
        est["weighted_mean"] = ws.mean
        est["coupled_fraction"] = Estimate(ws.coupled_fraction, 0.0, run.n)
        est["entropy"] = ws.entropy
        comps.append(_cmp("coupling-success", COUPLED_FRACTION_MIN, ws.coupled_fraction, 0.0, 0.0, "fraction>=0.99",
                          meta, theorem_level=False, note="reweighted coupled fraction"))

        if "log-harnack" in suites:
            lhs, base, se = log_harnack_sides(run, exp.f)
            est["log_harnack_lhs"] = lhs
            est["log_harnack_baseline"] = Estimate(base, 0.0, run.n)
            for v in LOG_HARNACK_VARIANTS:
                b = getattr(bounds, f"log_harnack_{v}")
                comps.append(_cmp(f"log-harnack[{v}]", lhs.mean, base, se, b, f"log_harnack_{v}", meta))
            if spec.name == "ou" and exp.f.name == "exp":
                gap = exact_log_harnack_gap(LinearModelParams.from_spec(spec), cfg.start_x, cfg.start_y, cfg.T,
                                            exp.f.params["c"])
                for v in LOG_HARNACK_VARIANTS:
                    b = getattr(bounds, f"log_harnack_{v}")
                    comps.append(_cmp(f"log-harnack-oracle[{v}]", gap.lhs, gap.rhs_baseline, 0.0, b,
                                      f"log_harnack_{v}", meta, note="closed-form Gaussian sides"))
            extra["tighter_log_harnack"] = bounds.tighter_log_harnack

        if "power-harnack" in suites:
            for q in qs:
                lhs, base, se = power_harnack_sides(run, exp.f_power, q)
                est[f"power_harnack_lhs[q={q:g}]"] = Estimate(lhs, 0.0, run.n)
                for v in POWER_VARIANTS:
                    b = bounds.power_harnack_exponent(q, v)
                    comps.append(_cmp(f"power-harnack[q={q:g},{v}]", lhs, base, se, b, f"power_exponent_{v}", meta))

        if "girsanov-identity" in suites:
            plain = estimate_semigroup(spec, cfg.start_y, cfg.T, exp.f, N, policy, stream=STREAM_PLAIN,
                                       workers=workers)
            est["plain_mean_from_y"] = plain
            se = math.hypot(ws.mean.se, plain.se)
            comps.append(_cmp("girsanov-identity", abs(ws.mean.mean - plain.mean), 0.0, se, 0.0, "zero", meta,
                              note="|E[R f(X(T))] - plain MC from y|"))
            if spec.name == "ou" and exp.f.name in ("exp", "constant"):
                P = LinearModelParams.from_spec(spec)
                exact = (exact_Ptf(P, cfg.start_y, cfg.T, "exp_c", c=exp.f.params["c"]) if exp.f.name == "exp"
                         else exact_Ptf(P, cfg.start_y, cfg.T, "constant", constant=exp.f.params["value"]))
                est["oracle_P_T_f_y"] = Estimate(exact, 0.0, 0)
                comps.append(_cmp("girsanov-oracle", abs(ws.mean.mean - exact), 0.0, ws.mean.se, 0.0, "zero",
                                  meta, note="|E[R f(X(T))] - closed form|"))

        if "entropy" in suites:
            comps.append(_cmp("entropy-bound", ws.entropy.mean, 0.0, ws.entropy.se, bounds.entropy_bound,
                              "entropy_bound", meta))
            comps.append(_cmp("entropy-nonnegative", 0.0, ws.entropy.mean, ws.entropy.se, 0.0, "zero", meta,
                              theorem_level=False))

        if "moment" in suites:
            a = 1.0 + bounds.moment_p
            m = ws.moments[a]
            est[f"moment[1+p={a:.6g}]"] = m
            comps.append(_cmp("moment-bound", m.mean, 0.0, m.se, bounds.moment_bound, "moment_bound", meta,
                              note=bounds.variants_used.get("moment_c", "")))

    if "sfde-log-harnack" in suites:
        variant = st["bihari_variant"]
        sb = sfde_log_harnack_bound(spec, None, cfg.T, cfg.start_x, cfg.start_y, variant)
        run = coupled_run(spec, cfg, N, policy, workers)
        if dump_dir is not None:
            _dump_csv(run.record, dump_dir / "paths_sfde.csv")
        ws = weighted_summary(run, exp.f)
        flags["unreliable"] |= ws.unreliable
        flags["sfde_run"] = ws.flags
        lhs, base, se = log_harnack_sides(run, exp.f)
        est["sfde_log_harnack_lhs"] = lhs
        est["sfde_log_harnack_baseline"] = Estimate(base, 0.0, run.n)
        est["sfde_coupled_fraction"] = Estimate(ws.coupled_fraction, 0.0, run.n)
        comps.append(_cmp(f"sfde-log-harnack[{variant}]", lhs.mean, base, se, sb.value, "sfde_log_harnack", meta))
        comps.append(_cmp("sfde-coupling-success", COUPLED_FRACTION_MIN, ws.coupled_fraction, 0.0, 0.0,
                          "fraction>=0.99", meta, theorem_level=False))
        rec = run.record
        dist = terminal_segment_distance(rec)[rec.coupled]
        worst = float(dist.max()) if dist.size else 0.0
        comps.append(_cmp("sfde-final-state", worst, 0.0, 0.0, 0.0, "zero", meta,
                          note="max terminal segment distance over coupled paths"))
        extra["sfde_bound"] = {"value": sb.value, "first_term": sb.first_term, "Phi": sb.Phi,
                               "Phi_variant": sb.variant, "Phi_overflow": sb.overflow}
        extra["sfde_final_state_equal"] = worst == 0.0

    if "uniqueness-probe" in suites:
        comps.extend(_probe(exp, meta, extra))

    if "assumption-spot-checks" in suites:
        for key, rep in declared_checks_for(exp).items():
            comps.append(_cmp(f"spot-check[{key}]", rep.max_ratio, 0.0, 0.0, 1.0 + 1e-9, "ratio<=1", meta,
                              theorem_level=False))

    report = verdict(comps, bounds, meta, est, flags, n_se=n_se, bound_scale=scale)
    report.metadata.update(provenance(exp))
    report.metadata["extra"] = extra
    return report


def declared_checks_for(exp: Experiment) -> dict:
    n = int(exp.raw["suite"]["spot_check_pairs"])
    return {key: fn(exp.spec, n_pairs=n, rng_seed=exp.policy.rng_seed, T=exp.cfg.T)
            for key, fn in declared_checks(exp.spec).items()}


def _probe(exp: Experiment, meta: dict, extra: dict) -> List[Comparison]:
    pr = exp.raw["probe"]
    x0 = pr["x0"]
    if x0 is None:
        x0 = exp.raw["coupling"].get("x", exp.raw["coupling"].get("phi"))
    x0 = _vector(x0, "probe.x0")
    tab = uniqueness_probe(exp.spec, x0, float(pr["T"]), pr["mesh_levels"], pr["perturbations"],
                           seed=exp.policy.rng_seed, n_paths=int(pr["paths"]))
    extra["probe"] = {"C_fit": tab.C_fit, "entries": [
        {"h": e.h, "eps": e.eps, "sup_dist2": e.sup_dist2, "mean_sup_dist2": e.mean_sup_dist2,
         "censored": e.censored, "envelope": e.envelope, "envelope_flag": e.envelope_flag} for e in tab.entries]}
    out = [_cmp("probe-decay", 0.0 if tab.decays_in_eps() else 1.0, 0.0, 0.0, 0.0, "monotone", meta,
                note="sup-distance nonincreasing as eps decreases at the finest mesh")]
    worst = max((e.sup_dist2 / e.envelope if e.envelope > 0 else (0.0 if e.sup_dist2 == 0 else math.inf))
                for e in tab.entries)
    out.append(_cmp("probe-envelope", worst, 0.0, 0.0, 1.0 + 1e-9, "ratio<=1", meta,
                    note="largest sup-distance / Bihari envelope"))
    return out


def provenance(exp: Experiment) -> dict:
    return {
        "config": _jsonable(exp.raw),
        "versions": {"harnackmc": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "test_functions_version": TEST_FUNCTIONS_VERSION,
        "seed": exp.policy.rng_seed,
        "h": exp.policy.h_max,
        "n_paths": exp.n_paths,
    }


def bounds_only(exp: Experiment) -> dict:
    spec, cfg = exp.spec, exp.cfg
    if exp.is_sfde:
        out = {}
        for v in BIHARI_VARIANTS:
            sb = sfde_log_harnack_bound(spec, None, cfg.T, cfg.start_x, cfg.start_y, v)
            out[v] = {"value": sb.value, "first_term": sb.first_term, "Phi": sb.Phi, "Phi_overflow": sb.overflow}
        return {"sfde_log_harnack": out}
    qs = [float(q) for q in exp.raw["suite"]["power_q"]]
    return bound_set(spec, None, cfg.T, cfg.start_x, cfg.start_y, cfg.theta, qs).as_dict()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def report_document(report: HarnackReport, wall_seconds: float) -> dict:
    """Report body plus a separate timing table; the body is reproducible bit for bit."""
    return {"body": _jsonable(report.as_dict()), "timing": {"wall_seconds": wall_seconds}}


def write_report(doc: dict, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


CSV_COLUMNS = ("path_index", "tau", "coupled", "log_R", "exit_flag", "weight_exploded")


def _dump_csv(rec, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i in range(rec.n_paths):
            tau = "" if math.isnan(rec.tau[i]) else repr(float(rec.tau[i]))
            w.writerow([i, tau, int(rec.coupled[i]), repr(float(rec.log_R[i])), int(rec.exited[i]),
                        int(rec.weight_exploded[i])])


def timed_run(exp: Experiment, workers: int = 1, dump_dir: Optional[Path] = None):
    t0 = time.perf_counter()
    report = run_experiment(exp, workers, dump_dir)
    return report, time.perf_counter() - t0
