"""Non-Lipschitz moduli u and the scalar transforms built from them.

A modulus is a C^1 function u: (0, inf) -> [1, inf) with a divergent
Osgood integral, ``int_0^1 ds / (s u(s)) = inf``.  From it we derive

* ``phi(s) = int_0^s u(r) dr``
* ``G(s) = int_1^s dr / (r u(r))`` and its inverse
* the Bihari bound ``C(T, r)`` and ``Phi(T, r) = C u(C)``

Closed forms are used when the modulus carries them; everything else goes
through adaptive Gauss-Kronrod quadrature (``scipy.integrate.quad``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigurationError, DomainError, NumericalFailure

CLASS_TAGS = ("U-decreasing", "U-general", "Ubar")
BIHARI_VARIANTS = ("as-stated", "time-scaled")

QUAD_RTOL = 1e-10
QUAD_ATOL = 1e-14
_MAX_DECADES = 330
_LOG_MAX = math.log(np.finfo(float).max)
_LOG_TINY = math.log(np.finfo(float).tiny)
FLOAT_MAX = float(np.finfo(float).max)


@dataclass(frozen=True)
class ModulusSpec:
    """A modulus u with its derivative and optional closed forms.

    ``u`` and ``du`` must accept numpy arrays.  ``phi``, ``G`` and ``G_inv``
    are optional closed forms; when absent they are computed by quadrature.
    ``gamma`` is the constant with ``phi(s) <= gamma s u(s)^2``.
    """

    name: str
    u: Callable
    du: Callable
    class_tag: str = "U-general"
    gamma: Optional[float] = None
    phi: Optional[Callable] = None
    G: Optional[Callable] = None
    G_inv: Optional[Callable] = None

    def __post_init__(self):
        if self.class_tag not in CLASS_TAGS:
            raise ConfigurationError(f"class_tag must be one of {CLASS_TAGS}, got {self.class_tag!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")

    def __call__(self, s):
        return self.u(s)


# ---------------------------------------------------------------------------
# catalog moduli


def constant_modulus(gamma: float = 1.0) -> ModulusSpec:
    """u == 1, the Lipschitz case.  phi(s) = s, G = log."""
    return ModulusSpec(
        name="constant",
        u=lambda s: np.ones_like(np.asarray(s, dtype=float)),
        du=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
        class_tag="Ubar",
        gamma=gamma,
        phi=lambda s: np.asarray(s, dtype=float) * 1.0,
        G=lambda s: np.log(s),
        G_inv=lambda y: np.exp(y),
    )


def _log_u(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return np.maximum(1.0, -np.log(s))


def _log_du(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(s < math.exp(-1.0), -1.0 / s, 0.0)


def _log_phi(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = s * (1.0 - np.log(s))
    out = np.where(s < math.exp(-1.0), small, s + math.exp(-1.0))
    return np.where(s == 0, 0.0, out)


def _log_G(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = -1.0 - np.log(-np.log(s))
        big = np.log(s)
    return np.where(s < math.exp(-1.0), small, big)


def _log_G_inv(y):
    y = np.asarray(y, dtype=float)
    with np.errstate(over="ignore"):
        small = np.exp(-np.exp(-1.0 - y))
        big = np.exp(y)
    return np.where(y < -1.0, small, big)


def log_modulus() -> ModulusSpec:
    """u(s) = log(e v 1/s); the standard log-Lipschitz modulus, gamma = 2."""
    return ModulusSpec(
        name="log",
        u=_log_u,
        du=_log_du,
        class_tag="U-decreasing",
        gamma=2.0,
        phi=_log_phi,
        G=_log_G,
        G_inv=_log_G_inv,
    )


def _loglog_u(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        L = -np.log(s)
    return np.maximum(1.0, L) * np.log(np.maximum(math.e, L))


def _loglog_du(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = -np.log(s)
        mid = -1.0 / s
        low = -(np.log(L) + 1.0) / s
    return np.where(L > math.e, low, np.where(L > 1.0, mid, 0.0))


def loglog_modulus() -> ModulusSpec:
    """u(s) = log(e v 1/s) * loglog(e^e v 1/s).  No closed forms: quadrature only."""
    return ModulusSpec(name="loglog", u=_loglog_u, du=_loglog_du, class_tag="U-decreasing")


def power_modulus(alpha: float) -> ModulusSpec:
    """u(s) = max(1, s^-alpha).  For alpha > 0 the Osgood integral converges."""
    if alpha < 0:
        raise ConfigurationError("alpha must be nonnegative")

    def u(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return np.maximum(1.0, s ** -alpha)

    def du(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(s < 1.0, -alpha * s ** (-alpha - 1.0), 0.0)

    return ModulusSpec(name=f"power({alpha:g})", u=u, du=du, class_tag="U-general")


# ---------------------------------------------------------------------------
# quadrature helpers


def _quad(f, a, b):
    res = integrate.quad(f, a, b, epsabs=QUAD_ATOL, epsrel=QUAD_RTOL, limit=200, full_output=1)
    val, err = res[0], res[1]
    if len(res) > 3 and err > QUAD_RTOL * abs(val) + QUAD_ATOL:
        raise NumericalFailure(f"quadrature on [{a:g}, {b:g}] failed: {res[3]}")
    return val


def _scalar_u(m: ModulusSpec):
    return lambda r: float(m.u(r))


def eval_phi(m: ModulusSpec, s: float) -> float:
    """phi(s) = int_0^s u(r) dr."""
    if s < 0:
        raise DomainError("phi is defined for s >= 0")
    if s == 0:
        return 0.0
    if m.phi is not None:
        return float(m.phi(s))
    u = _scalar_u(m)
    # geometric subdivision toward the (integrable) singularity at 0
    total = 0.0
    hi = float(s)
    for _ in range(_MAX_DECADES):
        lo = hi / 10.0
        piece = _quad(u, lo, hi)
        total += piece
        if piece <= 1e-17 * total or lo < 1e-300:
            return total
        hi = lo
    raise NumericalFailure("phi quadrature did not settle")


def _G_quad(m: ModulusSpec, s: float) -> float:
    # substitute r = e^l: int_0^{log s} dl / u(e^l)
    g = lambda l: 1.0 / float(m.u(math.exp(l)))
    end = math.log(s)
    n = max(1, int(math.ceil(abs(end) / 8.0)))
    edges = np.linspace(0.0, end, n + 1)
    return float(sum(_quad(g, a, b) for a, b in zip(edges[:-1], edges[1:])))


def eval_G(m: ModulusSpec, s: float) -> float:
    """G(s) = int_1^s dr / (r u(r)); G(0) = -inf for an Osgood modulus."""
    if s < 0:
        raise DomainError("G is defined for s > 0")
    if s == 0:
        return -math.inf
    if math.isinf(s):
        return math.inf
    if m.G is not None:
        return float(m.G(s))
    return _G_quad(m, s)


class GInverse(NamedTuple):
    value: float
    flag: Optional[str]  # None, "underflow" or "overflow"


def inv_G_checked(m: ModulusSpec, y: float) -> GInverse:
    """G^{-1}(y) with an explicit underflow / overflow flag.

    Underflow returns 0 (G(0+) = -inf); overflow saturates at the largest
    finite float.
    """
    if math.isnan(y):
        raise DomainError("G^{-1} of nan")
    if y == -math.inf:
        return GInverse(0.0, "underflow")
    if y == math.inf:
        return GInverse(FLOAT_MAX, "overflow")
    if m.G_inv is not None:
        with np.errstate(over="ignore", under="ignore"):
            v = float(m.G_inv(y))
        if not math.isfinite(v):
            return GInverse(FLOAT_MAX, "overflow")
        if v == 0.0:
            return GInverse(0.0, "underflow")
        return GInverse(v, None)

    G = lambda l: eval_G(m, math.exp(l)) - y
    lo, hi = -1.0, 1.0
    while G(lo) > 0:
        lo *= 2.0
        if lo < _LOG_TINY:
            if G(_LOG_TINY) > 0:
                return GInverse(0.0, "underflow")
            lo = _LOG_TINY
            break
    while G(hi) < 0:
        hi *= 2.0
        if hi > _LOG_MAX:
            if G(_LOG_MAX) < 0:
                return GInverse(FLOAT_MAX, "overflow")
            hi = _LOG_MAX
            break
    l = optimize.brentq(G, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return GInverse(math.exp(l), None)


def inv_G(m: ModulusSpec, y: float) -> float:
    """G^{-1}(y); 0 on underflow, largest float on overflow."""
    return inv_G_checked(m, y).value


# ---------------------------------------------------------------------------
# Bihari bound


class BihariBound(NamedTuple):
    value: float
    overflow: bool
    variant: str


def bihari_C(
    m: ModulusSpec,
    T: float,
    r: float,
    K1: float,
    K2: float,
    K3: float,
    K: float,
    variant: str = "as-stated",
) -> BihariBound:
    """C(T, r) = G^{-1}(G(2 r^2) + increment).

    ``as-stated`` uses increment G(4 A) with A = K1 + 2 K2 K3 + 32 K;
    ``time-scaled`` uses 4 A T, the form a Gronwall-type argument over
    [0, T] produces.
    """
    if variant not in BIHARI_VARIANTS:
        raise ConfigurationError(f"variant must be one of {BIHARI_VARIANTS}")
    if r < 0 or min(K1, K2, K3, K) < 0 or T <= 0:
        raise DomainError("bihari_C needs T > 0 and nonnegative r and constants")
    if r == 0:
        return BihariBound(0.0, False, variant)
    A = 4.0 * (K1 + 2.0 * K2 * K3 + 32.0 * K)
    if variant == "as-stated":
        step = eval_G(m, A)
    else:
        step = A * T
    y = eval_G(m, 2.0 * r * r) + step
    val, flag = inv_G_checked(m, y)
    return BihariBound(val, flag == "overflow", variant)


def _su_vanishes_at_zero(m: ModulusSpec) -> bool:
    s = 1e-300
    return float(s * m.u(s)) < 1e-250


def eval_Phi(m: ModulusSpec, T: float, r: float, K1: float, K2: float, K3: float, K: float,
             variant: str = "as-stated") -> BihariBound:
    """Phi(T, r) = C u(C), with the overflow flag of C carried along."""
    C = bihari_C(m, T, r, K1, K2, K3, K, variant)
    if C.value == 0.0:
        if not _su_vanishes_at_zero(m):
            raise DomainError("Phi(T, 0) is undefined unless s u(s) -> 0 as s -> 0")
        return BihariBound(0.0, C.overflow, variant)
    with np.errstate(over="ignore"):
        val = C.value * float(m.u(C.value))
    if not math.isfinite(val):
        return BihariBound(FLOAT_MAX, True, variant)
    return BihariBound(val, C.overflow, variant)


# ---------------------------------------------------------------------------
# class membership spot checks


@dataclass
class Check:
    status: str  # "pass", "fail" or "inconclusive"
    value: float
    detail: str = ""


@dataclass
class MembershipReport:
    modulus: str
    class_tag: str
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.status == "pass" for c in self.checks.values())

    @property
    def failed(self) -> bool:
        return any(c.status == "fail" for c in self.checks.values())


def default_grid() -> np.ndarray:
    return np.logspace(-14, 2, 321)


def condition_U_constant(m: ModulusSpec, grid=None) -> float:
    """Smallest gamma with phi(s) <= gamma s u(s)^2 on the grid."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    ratios = [eval_phi(m, s) / (s * float(m.u(s)) ** 2) for s in grid]
    return float(max(ratios))


def check_condition_U(m: ModulusSpec, gamma: Optional[float] = None, grid=None) -> Check:
    gamma = m.gamma if gamma is None else gamma
    if gamma is None:
        return Check("inconclusive", math.nan, "no gamma supplied")
    sharp = condition_U_constant(m, grid)
    ok = sharp <= gamma * (1 + 1e-9)
    return Check("pass" if ok else "fail", sharp, f"sup phi/(s u^2) = {sharp:.6g} vs gamma = {gamma:g}")


def _decade_increments(m: ModulusSpec, n_decades: int) -> np.ndarray:
    # int over [10^-(j+1), 10^-j] of ds / (s u(s)), in the log variable
    g = lambda l: 1.0 / float(m.u(math.exp(l)))
    ln10 = math.log(10.0)
    return np.array([_quad(g, -(j + 1) * ln10, -j * ln10) for j in range(n_decades)])


def check_class_membership(m: ModulusSpec, grid=None) -> MembershipReport:
    """Numerical spot checks of the defining properties of U / Ubar.

    Divergence of the Osgood integral is judged from how fast the per-decade
    contributions shrink over the last two decades of the grid: geometric
    decay means a convergent integral.
    """
    grid = default_grid() if grid is None else np.sort(np.asarray(grid, dtype=float))
    checks = {}

    u = np.asarray(m.u(grid), dtype=float)
    umin = float(u.min())
    checks["u_ge_1"] = Check("pass" if umin >= 1 - 1e-12 else "fail", umin)

    n_dec = int(math.floor(-math.log10(grid[0]) + 1e-9))
    if n_dec < 3:
        checks["osgood_divergence"] = Check("inconclusive", math.nan, "grid too short")
    else:
        inc = _decade_increments(m, n_dec)
        total = float(inc.sum())
        if inc[-1] <= 1e-12:
            status = "fail"
            rho = 0.0
        else:
            rho = float(inc[-1] / inc[-2])
            status = "pass" if rho >= 0.8 else ("fail" if rho < 0.5 else "inconclusive")
        checks["osgood_divergence"] = Check(
            status, rho, f"int_eps^1 ds/(s u) = {total:.6g} at eps = 1e-{n_dec}; last decade ratio {rho:.4f}")

    smallest = grid[grid <= grid[0] * 100.0]
    lim = np.asarray(m.u(smallest), dtype=float) + smallest * np.asarray(m.du(smallest), dtype=float)
    lim_min = float(lim.min())
    checks["liminf_u_plus_ru'"] = Check("pass" if lim_min > 0 else "fail", lim_min)

    if m.class_tag == "U-decreasing":
        du = np.asarray(m.du(grid), dtype=float)
        worst = float(du.max())
        checks["du_le_0"] = Check("pass" if worst <= 1e-12 else "fail", worst)
    if m.class_tag == "Ubar":
        su = grid * u
        steps = np.diff(su)
        mono = float(steps.min())
        checks["su_nondecreasing"] = Check("pass" if mono >= -1e-12 * su.max() else "fail", mono)
        a, b = grid[:-2], grid[2:]
        mid = 0.5 * (a + b)
        gap = mid * np.asarray(m.u(mid), dtype=float) - 0.5 * (su[:-2] + su[2:])
        worst = float(gap.min())
        checks["su_midpoint_concave"] = Check("pass" if worst >= -1e-10 * max(1.0, su.max()) else "fail", worst)
    if m.gamma is not None:
        checks["condition_U"] = check_condition_U(m, grid=grid)

    return MembershipReport(m.name, m.class_tag, checks)
