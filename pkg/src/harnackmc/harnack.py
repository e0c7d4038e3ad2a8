"""Closed-form Harnack, entropy and moment bounds, Monte Carlo estimators and verdicts.

Bounds are written in terms of the constants of the model at horizon T:
K = K(T), lambda = lambda(T), delta = delta(T), and phi(s) = int_0^s u.
Where a displayed formula admits two readings both are computed and
``variants_used`` in :class:`BoundSet` records which one each number uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .coupling import CouplingConfig, xi
from .errors import ConfigurationError, DomainError
from .model import SdeSpec, SegmentPath, SfdeSpec
from .modulus import ModulusSpec, eval_phi, eval_Phi
from .simulate import (STREAM_PLAIN, PathRecord, StepPolicy, simulate_coupled_sde, simulate_coupled_sfde,
                       simulate_sde, simulate_sfde)

N_SE = 3.0
LOG_HARNACK_VARIANTS = ("stated", "lemma")
POWER_VARIANTS = ("stated", "derived")
K_GRID = np.logspace(-3, 1, 81)
VARIANT_NOTES = {
    "log_harnack": "stated: lambda(T) in the denominator; lemma: lambda(T)^2 as the entropy lemma gives",
    "moment_c": "the constant c in p is read as lambda(T)",
    "power_threshold": "q must exceed both the stated and the proof threshold",
    "power_exponent": "stated: with the 1/delta factor; derived: chaining the moment bound through Hoelder",
}


# ---------------------------------------------------------------------------
# constants


def _gamma(m: ModulusSpec) -> float:
    if m.gamma is None:
        raise ConfigurationError(f"modulus {m.name!r} has no condition-U constant gamma")
    return m.gamma


def _dist2(x, y) -> float:
    if isinstance(x, SegmentPath):
        return float(np.sum((x.end - y.end) ** 2))
    d = np.atleast_1d(np.asarray(x, dtype=float)) - np.atleast_1d(np.asarray(y, dtype=float))
    return float(d @ d)


def _K_lam(spec: SdeSpec, T: float):
    K = spec.K(T)
    if not K > 0:
        raise DomainError("K(T) must be positive")
    if spec.lam is None or not spec.lam(T) > 0:
        raise DomainError("lambda(T) must be positive")
    return K, spec.lam(T)


def _one_minus_e(K: float, T: float, gamma: float) -> float:
    return -math.expm1(-2.0 * K * T / gamma)


# ---------------------------------------------------------------------------
# bounds


def log_harnack_bound(spec: SdeSpec, m: Optional[ModulusSpec], T: float, x, y, variant: str = "stated") -> float:
    """K phi(|x - y|^2) / (lambda (1 - exp(-2 K T / gamma))), lambda squared for ``lemma``."""
    if variant not in LOG_HARNACK_VARIANTS:
        raise ConfigurationError(f"variant must be one of {LOG_HARNACK_VARIANTS}")
    m = spec.modulus if m is None else m
    g = _gamma(m)
    K, lam = _K_lam(spec, T)
    den = (lam if variant == "stated" else lam * lam) * _one_minus_e(K, T, g)
    return K * eval_phi(m, _dist2(x, y)) / den


def minimize_log_harnack_over_K(spec: SdeSpec, m: Optional[ModulusSpec], T: float, x, y,
                                variant: str = "stated", grid=K_GRID):
    """Best bound over admissible constants K on a log grid; returns (K*, bound)."""
    vals = [log_harnack_bound(spec.with_constants(K=float(k)), m, T, x, y, variant) for k in grid]
    i = int(np.argmin(vals))
    return float(grid[i]), float(vals[i])


def power_thresholds(lam: float, delta: float):
    """(stated, proof) lower limits for q."""
    return 1.0 + (delta + 2.0 * lam * math.sqrt(delta)) / lam ** 2, 1.0 + (delta ** 2 + 2.0 * lam * delta) / lam ** 2


def theta_for_q(lam: float, delta: float, q: float) -> float:
    return 2.0 * delta / (lam * (math.sqrt(q) - 1.0))


def power_harnack_bound(spec: SdeSpec, m: Optional[ModulusSpec], T: float, x, y, q: float,
                        variant: str = "stated") -> float:
    """Exponent C in (P_T f(y))^q <= P_T f^q(x) e^C.

    stated:  K sqrt(q) (sqrt(q) - 1) phi / (2 delta ((sqrt(q) - 1) lambda - delta) (1 - e))
    derived: the same without the 1/delta factor, which is what the moment
             bound at theta = 2 delta / (lambda (sqrt(q) - 1)) produces.
    """
    if variant not in POWER_VARIANTS:
        raise ConfigurationError(f"variant must be one of {POWER_VARIANTS}")
    m = spec.modulus if m is None else m
    g = _gamma(m)
    K, lam = _K_lam(spec, T)
    delta = spec.delta(T) if spec.delta is not None else 0.0
    if not delta > 0:
        raise DomainError("the power Harnack bound needs delta(T) > 0")
    stated, proof = power_thresholds(lam, delta)
    if not q > max(stated, proof):
        raise DomainError(f"q = {q:g} must exceed both the stated threshold {stated:.6g} "
                          f"and the proof threshold {proof:.6g}")
    sq = math.sqrt(q)
    gap = (sq - 1.0) * lam - delta
    if not gap > 0:
        raise DomainError("(sqrt(q) - 1) lambda - delta must be positive")
    val = K * sq * (sq - 1.0) * eval_phi(m, _dist2(x, y)) / (2.0 * gap * _one_minus_e(K, T, g))
    return val / delta if variant == "stated" else val


@dataclass(frozen=True)
class EntropyMoment:
    entropy: float
    p: Optional[float]
    moment_rhs: Optional[float]
    note: str = ""


def entropy_and_moment_bounds(spec: SdeSpec, m: Optional[ModulusSpec], T: float, x, y, theta: float) -> EntropyMoment:
    """Bounds on E[R log R] and on E[R^{1+p}] with p = lambda^2 theta^2 / (4 delta^2 + 4 theta lambda delta)."""
    if not 0 < theta < 2:
        raise ConfigurationError("theta must lie in (0, 2)")
    m = spec.modulus if m is None else m
    g = _gamma(m)
    K, lam = _K_lam(spec, T)
    ph = eval_phi(m, _dist2(x, y))
    ent = K * ph / (lam * lam * theta * (2.0 - theta) * _one_minus_e(K, T, g))
    delta = spec.delta(T) if spec.delta is not None else 0.0
    if not delta > 0:
        return EntropyMoment(ent, None, None, "delta(T) = 0: the moment formula degenerates")
    p = lam ** 2 * theta ** 2 / (4.0 * delta ** 2 + 4.0 * theta * lam * delta)
    cfg = CouplingConfig(T=T, theta=theta, start_x=np.zeros(1), start_y=np.ones(1), gamma=g)
    xi0 = xi(cfg, K, 0.0)
    expo = (2.0 * delta + lam * theta) * theta * ph / (4.0 * delta * xi0 * (2.0 * delta + 2.0 * lam * theta))
    return EntropyMoment(ent, p, math.exp(expo), VARIANT_NOTES["moment_c"])


@dataclass(frozen=True)
class SfdeBound:
    value: float
    first_term: float
    Phi: float
    overflow: bool
    variant: str


def sfde_log_harnack_bound(spec: SfdeSpec, m: Optional[ModulusSpec], T: float, phi: SegmentPath, psi: SegmentPath,
                           variant: str = "as-stated") -> SfdeBound:
    """K4 (2 gamma phi(|phi(0) - psi(0)|^2) / T + T {8 K1^2 + 8 K2 K3 + K2} Phi(T, ||phi - psi||))."""
    m = spec.modulus if m is None else m
    g = _gamma(m)
    K1, K2, K3, K4, K = (f(T) for f in (spec.K1, spec.K2, spec.K3, spec.K4, spec.K))
    first = 2.0 * g * eval_phi(m, _dist2(phi, psi)) / T
    coef = 8.0 * K1 ** 2 + 8.0 * K2 * K3 + K2
    Phi = eval_Phi(m, T, (phi - psi).sup_norm(), K1, K2, K3, K, variant)
    if Phi.overflow:
        return SfdeBound(math.inf, first, Phi.value, True, variant)
    second = T * coef * Phi.value if coef > 0 else 0.0
    return SfdeBound(K4 * (first + second), first, Phi.value, False, variant)


@dataclass
class BoundSet:
    """Every closed-form bound for one (model, T, x, y, theta)."""

    log_harnack_stated: float
    log_harnack_lemma: float
    entropy_bound: float
    moment_p: Optional[float]
    moment_bound: Optional[float]
    power_exponents: Dict[float, Dict[str, float]] = field(default_factory=dict)
    sfde_log_harnack: Optional[float] = None
    sfde_detail: Optional[SfdeBound] = None
    variants_used: Dict[str, str] = field(default_factory=dict)

    def power_harnack_exponent(self, q: float, variant: str = "stated") -> float:
        return self.power_exponents[q][variant]

    @property
    def tighter_log_harnack(self) -> str:
        return "lemma" if self.log_harnack_lemma < self.log_harnack_stated else "stated"

    def as_dict(self) -> dict:
        out = {
            "log_harnack_stated": self.log_harnack_stated,
            "log_harnack_lemma": self.log_harnack_lemma,
            "tighter_log_harnack": self.tighter_log_harnack,
            "entropy_bound": self.entropy_bound,
            "moment_p": self.moment_p,
            "moment_bound": self.moment_bound,
            "power_exponents": {str(q): v for q, v in self.power_exponents.items()},
            "sfde_log_harnack": self.sfde_log_harnack,
            "variants_used": dict(self.variants_used),
        }
        if self.sfde_detail is not None:
            d = self.sfde_detail
            out["sfde_detail"] = {"first_term": d.first_term, "Phi": d.Phi, "Phi_overflow": d.overflow,
                                  "Phi_variant": d.variant}
        return out


def bound_set(spec: SdeSpec, m: Optional[ModulusSpec], T: float, x, y, theta: float = 1.0,
              qs: Sequence[float] = ()) -> BoundSet:
    em = entropy_and_moment_bounds(spec, m, T, x, y, theta)
    bs = BoundSet(
        log_harnack_stated=log_harnack_bound(spec, m, T, x, y, "stated"),
        log_harnack_lemma=log_harnack_bound(spec, m, T, x, y, "lemma"),
        entropy_bound=em.entropy,
        moment_p=em.p,
        moment_bound=em.moment_rhs,
        variants_used={"log_harnack": VARIANT_NOTES["log_harnack"], "entropy": "lambda(T)^2 denominator"},
    )
    if em.p is not None:
        bs.variants_used["moment_c"] = VARIANT_NOTES["moment_c"]
    for q in qs:
        bs.power_exponents[float(q)] = {v: power_harnack_bound(spec, m, T, x, y, q, v) for v in POWER_VARIANTS}
    if qs:
        bs.variants_used["power_threshold"] = VARIANT_NOTES["power_threshold"]
        bs.variants_used["power_exponent"] = VARIANT_NOTES["power_exponent"]
    return bs


# ---------------------------------------------------------------------------
# test functions

TEST_FUNCTIONS_VERSION = "1"


@dataclass(frozen=True)
class TestFunction:
    """A strictly positive bounded function of the state, applied row-wise to (n, d)."""

    name: str
    fn: Callable
    params: dict
    at_least_one: bool

    __test__ = False  # not a pytest class

    def __call__(self, z) -> np.ndarray:
        return self.fn(np.atleast_2d(z))

    def log(self, z) -> np.ndarray:
        return np.log(self(z))


EXP_CLIP = 50.0


def test_function(name: str, **params) -> TestFunction:
    """Catalog: exp (exp of <c, z> clipped to +-50), bump, sigmoid, constant."""
    if name == "exp":
        c = float(params.get("c", 1.0))

        def fn(z):
            return np.exp(np.clip(c * z.sum(axis=1), -EXP_CLIP, EXP_CLIP))

        return TestFunction("exp", fn, {"c": c}, False)
    if name == "bump":
        center, width = float(params.get("center", 0.0)), float(params.get("width", 1.0))

        def fn(z):
            return 1.0 + np.exp(-np.sum((z - center) ** 2, axis=1) / (2.0 * width ** 2))

        return TestFunction("bump", fn, {"center": center, "width": width}, True)
    if name == "sigmoid":
        c = float(params.get("c", 1.0))

        def fn(z):
            return 1.0 + 0.5 * (1.0 + np.tanh(0.5 * c * z.sum(axis=1)))

        return TestFunction("sigmoid", fn, {"c": c}, True)
    if name == "constant":
        v = float(params.get("value", 1.0))
        if not v > 0:
            raise ConfigurationError("constant test function must be positive")
        return TestFunction("constant", lambda z: np.full(z.shape[0], v), {"value": v}, v >= 1.0)
    raise ConfigurationError(f"unknown test function {name!r}")


# ---------------------------------------------------------------------------
# estimators


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    n: int

    @classmethod
    def of(cls, values: np.ndarray) -> "Estimate":
        v = np.asarray(values, dtype=float)
        n = v.size
        se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(v.mean()), se, int(n))

    def as_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n": self.n}


def _terminal(rec: PathRecord) -> np.ndarray:
    return rec.X_T


def estimate_semigroup(spec: Union[SdeSpec, SfdeSpec], start, T: float, f: TestFunction, N: int,
                       policy: StepPolicy, *, stream: int = STREAM_PLAIN, workers: int = 1,
                       log: bool = False) -> Estimate:
    """Plain Monte Carlo estimate of P_T f(start), or of P_T log f when ``log``."""
    if f.name == "constant" and not log:
        return Estimate(f.params["value"], 0.0, N)
    if isinstance(spec, SfdeSpec):
        rec = simulate_sfde(spec, start, T, policy, N, stream=stream, workers=workers)
    else:
        rec = simulate_sde(spec, start, T, policy, N, stream=stream, workers=workers)
    z = _terminal(rec)[~rec.exited]
    return Estimate.of(f.log(z) if log else f(z))


@dataclass
class WeightedRun:
    """Per-path quantities of one coupled run, with exploded-weight paths removed."""

    R: np.ndarray
    X_T: np.ndarray
    coupled: np.ndarray
    record: PathRecord

    @property
    def n(self) -> int:
        return self.R.size


@dataclass
class WeightedEstimate:
    mean: Estimate  # E[R f(X(T))]
    coupled_fraction: float
    entropy: Estimate  # E[R log R]
    moments: Dict[float, Estimate]  # exponent a -> E[R^a]
    unreliable: bool
    flags: dict


def coupled_run(spec: Union[SdeSpec, SfdeSpec], cfg: CouplingConfig, N: int, policy: StepPolicy,
                workers: int = 1) -> WeightedRun:
    """Coupled run; coinciding start points degenerate to plain Monte Carlo with R == 1."""
    same = (np.array_equal(cfg.start_x.values, cfg.start_y.values) if cfg.is_segment
            else np.array_equal(cfg.start_x, cfg.start_y))
    if same:
        if isinstance(spec, SfdeSpec):
            rec = simulate_sfde(spec, cfg.start_x, cfg.T + spec.r0, policy, N, workers=workers)
        else:
            rec = simulate_sde(spec, cfg.start_x, cfg.T, policy, N, workers=workers)
        rec.coupled[:] = True
        rec.tau[:] = 0.0
    elif isinstance(spec, SfdeSpec):
        rec = simulate_coupled_sfde(spec, cfg, policy, N, workers=workers)
    else:
        rec = simulate_coupled_sde(spec, cfg, policy, N, workers=workers)
    keep = ~rec.weight_exploded & ~rec.exited
    return WeightedRun(np.exp(rec.log_R[keep]), rec.X_T[keep], rec.coupled[keep], rec)


def weighted_summary(run: WeightedRun, f: TestFunction, moment_powers: Sequence[float] = ()) -> WeightedEstimate:
    R = run.R
    mean = Estimate.of(R * f(run.X_T))
    frac = float(np.sum(R * run.coupled) / np.sum(R))
    ent = Estimate.of(R * np.log(R))
    moments = {float(a): Estimate.of(R ** a) for a in moment_powers}
    return WeightedEstimate(mean, frac, ent, moments, run.record.unreliable, run.record.flag_summary())


def estimate_weighted(spec: Union[SdeSpec, SfdeSpec], cfg: CouplingConfig, f: TestFunction, N: int,
                      policy: StepPolicy, *, qs: Sequence[float] = (), moment_powers: Sequence[float] = (),
                      workers: int = 1) -> WeightedEstimate:
    """E[R f(X(T))], the weighted coupled fraction, E[R log R] and E[R^{q/(q-1)}]."""
    powers = list(moment_powers) + [q / (q - 1.0) for q in qs]
    return weighted_summary(coupled_run(spec, cfg, N, policy, workers), f, powers)


def log_harnack_sides(run: WeightedRun, f: TestFunction):
    """LHS E[R log f(X(T))], baseline log E f(X(T)) and the delta-method SE of their difference."""
    lf, fx = run.R * f.log(run.X_T), f(run.X_T)
    A, B = lf.mean(), fx.mean()
    infl = lf - fx / B
    se = float(infl.std(ddof=1) / math.sqrt(run.n))
    return Estimate(float(A), float(lf.std(ddof=1) / math.sqrt(run.n)), run.n), float(math.log(B)), se


def power_harnack_sides(run: WeightedRun, f: TestFunction, q: float):
    """q log E[R f(X(T))] and log E f^q(X(T)) from one run, with a delta-method SE of the difference."""
    a, b = run.R * f(run.X_T), f(run.X_T) ** q
    A, B = a.mean(), b.mean()
    infl = q * a / A - b / B
    se = float(infl.std(ddof=1) / math.sqrt(run.n))
    return float(q * math.log(A)), float(math.log(B)), se


# ---------------------------------------------------------------------------
# verdicts


@dataclass(frozen=True)
class Comparison:
    """One inequality lhs - baseline <= bound, with the SE of lhs - baseline."""

    name: str
    lhs: float
    baseline: float
    se: float
    bound: float
    bound_name: str
    meta: dict = field(default_factory=dict)
    theorem_level: bool = True
    note: str = ""


@dataclass(frozen=True)
class Verdict:
    name: str
    lhs: float
    rhs: float
    se: float
    margin: float
    passed: bool
    bound_name: str
    theorem_level: bool
    note: str = ""

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("name", "lhs", "rhs", "se", "margin", "passed", "bound_name",
                                             "theorem_level", "note")}


@dataclass
class HarnackReport:
    estimates: Dict[str, Estimate]
    bounds: Optional[BoundSet]
    verdicts: List[Verdict]
    metadata: dict
    flags: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts) and not self.flags.get("unreliable", False)

    @property
    def red_flags(self) -> List[Verdict]:
        """Failed theorem-level inequalities; theory says these pass in the continuum limit."""
        return [v for v in self.verdicts if v.theorem_level and not v.passed]

    def as_dict(self) -> dict:
        return {
            "metadata": dict(self.metadata),
            "estimates": {k: e.as_dict() for k, e in self.estimates.items()},
            "bounds": None if self.bounds is None else self.bounds.as_dict(),
            "verdicts": [v.as_dict() for v in self.verdicts],
            "red_flags": [v.name for v in self.red_flags],
            "flags": dict(self.flags),
            "passed": self.passed,
        }


META_KEYS = ("model", "T", "start_x", "start_y")


def verdict(comparisons: Sequence[Comparison], bounds: Optional[BoundSet], metadata: dict,
            estimates: Optional[Dict[str, Estimate]] = None, flags: Optional[dict] = None,
            n_se: float = N_SE, bound_scale: float = 1.0) -> HarnackReport:
    """Pass iff lhs <= baseline + bound_scale * bound + n_se * se.

    Every comparison's metadata must agree with ``metadata`` on the model,
    horizon and start points.  ``bound_scale`` exists for negative controls.
    """
    out = []
    for c in comparisons:
        for k in META_KEYS:
            if k in c.meta and k in metadata and c.meta[k] != metadata[k]:
                raise ConfigurationError(f"comparison {c.name!r} was run with {k}={c.meta[k]!r}, "
                                         f"report has {metadata[k]!r}")
        rhs = c.baseline + bound_scale * c.bound if math.isfinite(c.bound) else math.inf
        margin = rhs - c.lhs
        ok = margin >= -n_se * c.se
        out.append(Verdict(c.name, c.lhs, rhs, c.se, margin, bool(ok), c.bound_name, c.theorem_level, c.note))
    return HarnackReport(dict(estimates or {}), bounds, out, dict(metadata), dict(flags or {}))
