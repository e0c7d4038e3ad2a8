"""SDE / SFDE problem definitions, the built-in catalog and assumption spot checks.

Coefficient callables are batched: ``drift(t, x)`` takes points of shape
``(n, d)`` and returns ``(n, d)``; ``diffusion(t, x)`` returns ``(n, d, d)``.
The functional drift of an SFDE is ``a(t, seg)`` where ``seg`` is a
:class:`SegmentView` exposing the window ``X(t + s), s in [-r0, 0]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .modulus import ModulusSpec, constant_modulus, log_modulus


class Const:
    """A constant function of time that prints its value."""

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, t):
        return self.value

    def __repr__(self):
        return f"Const({self.value:g})"


def as_time_fn(v) -> Callable:
    if v is None or callable(v):
        return v
    return Const(v)


# ---------------------------------------------------------------------------
# segments


@dataclass(frozen=True)
class SegmentPath:
    """A path on [-r0, 0] stored on the uniform grid -r0, -r0 + h, ..., 0."""

    h: float
    values: np.ndarray  # (m + 1, d)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise ConfigurationError("segment values must have shape (m + 1, d) with m >= 1")
        if not self.h > 0:
            raise ConfigurationError("segment step must be positive")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[0] - 1

    @property
    def r0(self) -> float:
        return self.m * self.h

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def end(self) -> np.ndarray:
        return self.values[-1]

    @property
    def times(self) -> np.ndarray:
        return -self.r0 + self.h * np.arange(self.m + 1)

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def __sub__(self, other: "SegmentPath") -> "SegmentPath":
        if not math.isclose(self.h, other.h) or self.values.shape != other.values.shape:
            raise ConfigurationError("segments are not on the same grid")
        return SegmentPath(self.h, self.values - other.values)

    @classmethod
    def constant(cls, value, r0: float, h: float, dim: Optional[int] = None) -> "SegmentPath":
        m = grid_count(r0, h)
        v = np.atleast_1d(np.asarray(value, dtype=float))
        if dim is not None and v.size == 1:
            v = np.full(dim, v[0])
        return cls(h, np.tile(v, (m + 1, 1)))

    @classmethod
    def from_function(cls, fn, r0: float, h: float) -> "SegmentPath":
        m = grid_count(r0, h)
        s = -r0 + h * np.arange(m + 1)
        return cls(h, np.array([np.atleast_1d(fn(si)) for si in s], dtype=float))


def grid_count(r0: float, h: float) -> int:
    """Number of steps of size h in [-r0, 0]; r0 must be a multiple of h."""
    m = int(round(r0 / h))
    if m < 1 or abs(m * h - r0) > 1e-9 * max(r0, h):
        raise ConfigurationError(f"r0 = {r0:g} is not an integer multiple of h = {h:g}")
    return m


class SegmentView:
    """Batched window X(t + s), s in [-r0, 0], over a stored history.

    Values between grid nodes are linearly interpolated.
    """

    def __init__(self, times: np.ndarray, values: np.ndarray, t: float, r0: float, upto: Optional[int] = None):
        self.times = times
        self.values = values  # (n, n_nodes, d)
        self.t = t
        self.r0 = r0
        self.upto = len(times) if upto is None else upto

    @classmethod
    def from_segments(cls, values: np.ndarray, h: float) -> "SegmentView":
        """Wrap segments of shape (n, m + 1, d) sampled on [-r0, 0]."""
        values = np.asarray(values, dtype=float)
        m = values.shape[1] - 1
        times = -m * h + h * np.arange(m + 1)
        times[-1] = 0.0
        return cls(times, values, 0.0, m * h)

    def at(self, s: float) -> np.ndarray:
        """X(t + s) for every path, shape (n, d)."""
        tq = self.t + s
        times = self.times[: self.upto]
        i = int(np.searchsorted(times, tq, side="right")) - 1
        i = min(max(i, 0), len(times) - 1)
        if i == len(times) - 1 or times[i] == tq:
            return self.values[:, i]
        w = (tq - times[i]) / (times[i + 1] - times[i])
        if w <= 0.0:
            return self.values[:, i]
        return self.values[:, i] * (1.0 - w) + self.values[:, i + 1] * w

    @property
    def current(self) -> np.ndarray:
        return self.at(0.0)

    def grid_values(self, h: float) -> np.ndarray:
        """Materialise the window on the uniform grid of step h, shape (n, m + 1, d)."""
        m = grid_count(self.r0, h)
        return np.stack([self.at(-self.r0 + j * h) for j in range(m + 1)], axis=1)

    def sup_norm(self, h: float) -> np.ndarray:
        return np.linalg.norm(self.grid_values(h), axis=2).max(axis=1)


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class SdeSpec:
    """dX = sigma(t, X) dB + b(t, X) dt with the constants of its assumptions.

    ``K``, ``Ktilde``, ``lam`` and ``delta`` are functions of time; plain
    numbers are promoted to constants.
    """

    name: str
    dim: int
    drift: Callable
    diffusion: Callable
    K: Callable
    Ktilde: Callable
    lam: Optional[Callable]
    delta: Optional[Callable]
    modulus: ModulusSpec
    modulus_tilde: ModulusSpec
    params: dict = field(default_factory=dict)
    additive: bool = False  # diffusion independent of x

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("dim must be a positive integer")
        for name in ("K", "Ktilde", "lam", "delta"):
            object.__setattr__(self, name, as_time_fn(getattr(self, name)))

    def with_constants(self, **kw) -> "SdeSpec":
        from dataclasses import replace

        return replace(self, **{k: as_time_fn(v) for k, v in kw.items()})


@dataclass(frozen=True)
class SfdeSpec:
    """dX = {b(t, X(t)) + a(t, X_t)} dt + sigma(t, X(t)) dB with delay r0."""

    name: str
    dim: int
    r0: float
    drift: Callable
    functional: Callable
    diffusion: Callable
    K: Callable
    K1: Callable
    K2: Callable
    K3: Callable
    K4: Callable
    modulus: ModulusSpec
    params: dict = field(default_factory=dict)
    additive: bool = False

    def __post_init__(self):
        if not self.r0 > 0:
            raise ConfigurationError("delay r0 must be positive")
        for name in ("K", "K1", "K2", "K3", "K4"):
            object.__setattr__(self, name, as_time_fn(getattr(self, name)))

    @classmethod
    def from_sde(cls, sde: SdeSpec, r0: float, K1=None, K2=0.0, K3=0.0, K4=None) -> "SfdeSpec":
        """Embed an SDE as an SFDE with zero functional drift."""
        zero = lambda t, seg: np.zeros_like(seg.current)
        K4 = K4 if K4 is not None else (1.0 / sde.lam(0.0) ** 2 if sde.lam is not None else 1.0)
        return cls(
            name=f"{sde.name}+delay0",
            dim=sde.dim,
            r0=r0,
            drift=sde.drift,
            functional=zero,
            diffusion=sde.diffusion,
            K=sde.Ktilde,
            K1=K1 if K1 is not None else sde.K,
            K2=K2,
            K3=K3,
            K4=K4,
            modulus=sde.modulus,
            params=dict(sde.params),
            additive=sde.additive,
        )


# ---------------------------------------------------------------------------
# catalog


def _identity_diffusion(scale: float, d: int):
    eye = np.eye(d) * scale

    def sigma(t, x):
        return np.broadcast_to(eye, (x.shape[0], d, d))

    return sigma


CATALOG = ("ou", "log_lipschitz_drift", "sine_diffusion", "delay_ou")


def _pos(params, key, default, allow_zero=False):
    v = float(params.get(key, default))
    if v < 0 or (v == 0 and not allow_zero) or not math.isfinite(v):
        raise ConfigurationError(f"parameter {key!r} must be {'nonnegative' if allow_zero else 'positive'}, got {v}")
    return v


def catalog_model(name: str, params: Optional[dict] = None):
    """Build one of the catalog models.

    ou                   dX = -kappa X dt + sigma0 dB         (u == 1)
    log_lipschitz_drift  dX = -X u(|X|^2) dt + dB             (u = log(e v 1/s))
    sine_diffusion       dX = -X dt + (2 + sin X) dB          (lambda = 1, delta = 2)
    delay_ou             dX = (-X + alpha X(t - r0)) dt + sigma0 dB
    """
    params = dict(params or {})
    known = {
        "ou": {"K", "d", "kappa", "sigma0", "Ktilde"},
        "log_lipschitz_drift": {"K", "d", "Ktilde"},
        "sine_diffusion": {"K", "Ktilde"},
        "delay_ou": {"alpha", "r0", "sigma0", "K", "K1", "K3", "d"},
    }
    if name not in known:
        raise ConfigurationError(f"unknown model {name!r}; catalog has {', '.join(CATALOG)}")
    extra = set(params) - known[name]
    if extra:
        raise ConfigurationError(f"unknown parameters for {name}: {sorted(extra)}")

    if name == "ou":
        d = int(params.get("d", 1))
        kappa = _pos(params, "kappa", 1.0)
        sigma0 = _pos(params, "sigma0", 1.0, allow_zero=True)
        K = _pos(params, "K", 0.01)
        return SdeSpec(
            name="ou",
            dim=d,
            drift=lambda t, x: -kappa * x,
            diffusion=_identity_diffusion(sigma0, d),
            K=K,
            Ktilde=_pos(params, "Ktilde", 1.0),
            lam=sigma0 if sigma0 > 0 else None,
            delta=0.0,
            modulus=constant_modulus(),
            modulus_tilde=constant_modulus(),
            params={"kappa": kappa, "sigma0": sigma0, "K": K, "d": d},
            additive=True,
        )

    if name == "log_lipschitz_drift":
        d = int(params.get("d", 1))
        lm = log_modulus()
        K = _pos(params, "K", 1.0)

        def drift(t, x):
            r2 = np.sum(x * x, axis=1, keepdims=True)
            return -x * lm.u(r2)

        return SdeSpec(
            name="log_lipschitz_drift",
            dim=d,
            drift=drift,
            diffusion=_identity_diffusion(1.0, d),
            K=K,
            Ktilde=_pos(params, "Ktilde", 1.0),
            lam=1.0,
            delta=0.0,
            modulus=lm,
            modulus_tilde=constant_modulus(),
            params={"K": K, "d": d},
            additive=True,
        )

    if name == "sine_diffusion":
        K = _pos(params, "K", 1.0)

        def sigma(t, x):
            return (2.0 + np.sin(x))[:, :, None]

        return SdeSpec(
            name="sine_diffusion",
            dim=1,
            drift=lambda t, x: -x,
            diffusion=sigma,
            K=K,
            Ktilde=_pos(params, "Ktilde", 1.0),
            lam=1.0,
            delta=2.0,
            modulus=constant_modulus(),
            modulus_tilde=constant_modulus(),
            params={"K": K},
        )

    # delay_ou
    alpha = float(params.get("alpha", 0.5))
    r0 = _pos(params, "r0", 1.0)
    sigma0 = _pos(params, "sigma0", 1.0)
    d = int(params.get("d", 1))
    K = _pos(params, "K", 0.01)
    K1 = _pos(params, "K1", 0.01)
    K3 = float(params.get("K3", 0.0))
    return SfdeSpec(
        name="delay_ou",
        dim=d,
        r0=r0,
        drift=lambda t, x: -x,
        functional=lambda t, seg: alpha * seg.at(-r0),
        diffusion=_identity_diffusion(sigma0, d),
        K=K,
        K1=K1,
        K2=alpha ** 2,
        K3=K3,
        K4=sigma0 ** -2,
        modulus=constant_modulus(),
        params={"alpha": alpha, "r0": r0, "sigma0": sigma0, "K": K, "K1": K1, "K3": K3, "d": d},
        additive=True,
    )


# ---------------------------------------------------------------------------
# assumption spot checks

RATIO_TOL = 1e-9


@dataclass
class CheckReport:
    """Largest observed LHS/RHS ratio per inequality; pass iff all <= 1 + 1e-9."""

    name: str
    ratios: dict
    n_samples: int
    n_skipped: int = 0
    witnesses: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r <= 1.0 + RATIO_TOL for r in self.ratios.values())

    @property
    def max_ratio(self) -> float:
        return max(self.ratios.values()) if self.ratios else -math.inf


def _ratio(lhs, rhs):
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = lhs / rhs
    zero = rhs <= 0
    r = np.where(zero, np.where(lhs <= 1e-14, 0.0, np.inf), r)
    return r


def _time_grid(T):
    return np.array([0.0, T / 4, T / 2, 3 * T / 4, T])


def _sample_pairs(rng, n, d, box, T):
    lo, hi = box
    t = rng.choice(_time_grid(T), size=n)
    x = rng.uniform(lo, hi, size=(n, d))
    y = rng.uniform(lo, hi, size=(n, d))
    return t, x, y


def _by_time(fn, t, *arrays):
    """Evaluate a batched coefficient grouping samples by time."""
    out = None
    for tv in np.unique(t):
        idx = t == tv
        res = fn(float(tv), *(a[idx] for a in arrays))
        if out is None:
            out = np.empty((len(t),) + res.shape[1:])
        out[idx] = res
    return out


def _record(report, key, r, t, *pts):
    i = int(np.argmax(r))
    report.ratios[key] = float(r[i])
    report.witnesses[key] = {"t": float(t[i]), "points": [np.asarray(p[i]).tolist() for p in pts]}


def _finite_rows(*arrays):
    ok = np.ones(len(arrays[0]), dtype=bool)
    for a in arrays:
        ok &= np.all(np.isfinite(a.reshape(len(a), -1)), axis=1)
    return ok


def spot_check_H1(spec: SdeSpec, n_pairs: int = 10_000, box=(-5.0, 5.0), rng_seed: int = 0, T: float = 1.0) -> CheckReport:
    """<b(x)-b(y), x-y> + |sigma(x)-sigma(y)|_HS^2 / 2 <= K |x-y|^2 u(|x-y|^2), and the Ktilde bound."""
    rng = np.random.default_rng(rng_seed)
    t, x, y = _sample_pairs(rng, n_pairs, spec.dim, box, T)
    bx, by = _by_time(spec.drift, t, x), _by_time(spec.drift, t, y)
    sx, sy = _by_time(spec.diffusion, t, x), _by_time(spec.diffusion, t, y)
    ok = _finite_rows(bx, by, sx, sy)
    t, x, y, bx, by, sx, sy = (a[ok] for a in (t, x, y, bx, by, sx, sy))
    z = x - y
    r2 = np.sum(z * z, axis=1)
    hs = np.sum((sx - sy) ** 2, axis=(1, 2))
    K = np.array([spec.K(tv) for tv in t])
    Kt = np.array([spec.Ktilde(tv) for tv in t])
    rep = CheckReport("H1", {}, int(ok.sum()), int((~ok).sum()))
    _record(rep, "drift", _ratio(np.sum((bx - by) * z, axis=1) + 0.5 * hs, K * r2 * spec.modulus.u(r2)), t, x, y)
    _record(rep, "diffusion", _ratio(hs, Kt * r2 * spec.modulus_tilde.u(r2)), t, x, y)
    return rep


def spot_check_H2(spec: SdeSpec, n_pairs: int = 10_000, box=(-5.0, 5.0), rng_seed: int = 0, T: float = 1.0) -> CheckReport:
    """|sigma(t, x) v| >= lambda(t) |v|, i.e. smallest singular value >= lambda."""
    if spec.lam is None:
        raise ConfigurationError(f"{spec.name} declares no ellipticity constant lambda")
    rng = np.random.default_rng(rng_seed)
    t, x, _ = _sample_pairs(rng, n_pairs, spec.dim, box, T)
    sx = _by_time(spec.diffusion, t, x)
    ok = _finite_rows(sx)
    t, x, sx = t[ok], x[ok], sx[ok]
    smin = np.linalg.svd(sx, compute_uv=False)[:, -1]
    lam = np.array([spec.lam(tv) for tv in t])
    rep = CheckReport("H2", {}, int(ok.sum()), int((~ok).sum()))
    _record(rep, "ellipticity", _ratio(lam, smin), t, x)
    return rep


def spot_check_H3(spec: SdeSpec, n_pairs: int = 10_000, box=(-5.0, 5.0), rng_seed: int = 0, T: float = 1.0) -> CheckReport:
    """|(sigma(x) - sigma(y))^* (x - y)| <= delta |x - y|."""
    if spec.delta is None:
        raise ConfigurationError(f"{spec.name} declares no delta")
    rng = np.random.default_rng(rng_seed)
    t, x, y = _sample_pairs(rng, n_pairs, spec.dim, box, T)
    sx, sy = _by_time(spec.diffusion, t, x), _by_time(spec.diffusion, t, y)
    ok = _finite_rows(sx, sy)
    t, x, y, sx, sy = (a[ok] for a in (t, x, y, sx, sy))
    z = x - y
    lhs = np.linalg.norm(np.einsum("nji,nj->ni", sx - sy, z), axis=1)
    dl = np.array([spec.delta(tv) for tv in t])
    rep = CheckReport("H3", {}, int(ok.sum()), int((~ok).sum()))
    _record(rep, "delta", _ratio(lhs, dl * np.linalg.norm(z, axis=1)), t, x, y)
    return rep


def spot_check_A(spec: SfdeSpec, n_pairs: int = 10_000, box=(-5.0, 5.0), rng_seed: int = 0, T: float = 1.0,
                 segment_nodes: int = 16) -> CheckReport:
    """Assumption (A) items (i)-(iv) on random points and random grid segments."""
    rng = np.random.default_rng(rng_seed)
    d = spec.dim
    t, x, y = _sample_pairs(rng, n_pairs, d, box, T)
    m = segment_nodes
    h = spec.r0 / m
    lo, hi = box
    phi = rng.uniform(lo, hi, size=(n_pairs, m + 1, d))
    psi = rng.uniform(lo, hi, size=(n_pairs, m + 1, d))
    # half of the segment pairs are small perturbations so the modulus near 0 gets exercised
    half = n_pairs // 2
    scale = 10.0 ** rng.uniform(-6, 0, size=(half, 1, 1))
    psi[:half] = phi[:half] + scale * rng.standard_normal((half, m + 1, d))

    bx, by = _by_time(spec.drift, t, x), _by_time(spec.drift, t, y)
    sx, sy = _by_time(spec.diffusion, t, x), _by_time(spec.diffusion, t, y)
    ax = _by_time(lambda tv, v: spec.functional(tv, SegmentView.from_segments(v, h)), t, phi)
    ay = _by_time(lambda tv, v: spec.functional(tv, SegmentView.from_segments(v, h)), t, psi)
    ok = _finite_rows(bx, by, sx, sy, ax, ay)
    t, x, y, bx, by, sx, sy, ax, ay, phi, psi = (a[ok] for a in (t, x, y, bx, by, sx, sy, ax, ay, phi, psi))

    u = spec.modulus.u
    z = x - y
    r2 = np.sum(z * z, axis=1)
    hs = np.sum((sx - sy) ** 2, axis=(1, 2))
    K = np.array([spec.K(tv) for tv in t])
    K1 = np.array([spec.K1(tv) for tv in t])
    K2 = np.array([spec.K2(tv) for tv in t])
    K3 = np.array([spec.K3(tv) for tv in t])
    K4 = np.array([spec.K4(tv) for tv in t])
    seg2 = np.max(np.sum((phi - psi) ** 2, axis=2), axis=1)

    rep = CheckReport("A", {}, int(ok.sum()), int((~ok).sum()))
    _record(rep, "(i)", _ratio(np.sum((bx - by) * z, axis=1) + 0.5 * hs, K1 * r2 * u(r2)), t, x, y)
    _record(rep, "(ii)", _ratio(hs, K * r2 * u(r2)), t, x, y)
    _record(rep, "(iii)", _ratio(np.sum((ax - ay) ** 2, axis=1), K2 * seg2 * u(seg2)), t, phi, psi)
    inv_y = np.linalg.inv(sy)
    m3 = np.linalg.norm(np.einsum("nij,njk->nik", sx - sy, inv_y), ord=2, axis=(1, 2)) ** 2
    _record(rep, "(iv)a", _ratio(m3, K3), t, x, y)
    m4 = np.linalg.norm(np.linalg.inv(sx), ord=2, axis=(1, 2)) ** 2
    _record(rep, "(iv)b", _ratio(m4, K4), t, x)
    return rep


def declared_checks(spec) -> dict:
    """The spot checks a catalog model claims to satisfy."""
    if isinstance(spec, SfdeSpec):
        return {"A": spot_check_A}
    checks = {"H1": spot_check_H1}
    if spec.lam is not None:
        checks["H2"] = spot_check_H2
    if spec.delta is not None:
        checks["H3"] = spot_check_H3
    return checks
