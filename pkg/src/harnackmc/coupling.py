"""Coupling schedules, coupled drifts and Girsanov log-weight increments.

The second process Y is pushed toward X by the drift

    sigma(t, Y) eta(t),   eta = sigma(t, X)^{-1} (X - Y) u(|X - Y|^2) / xi(t),

and the density ``R = exp(-int <eta, dB> - 1/2 int |eta|^2 dt)`` turns
``B + int eta dt`` into a Brownian motion, under which Y solves the
original equation from its own starting point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from .errors import ConfigurationError, DomainError, NumericalFailure
from .model import SdeSpec, SegmentPath, SegmentView, SfdeSpec

SCHEDULES = ("xi", "xi_tilde")
XI_FLOOR = 1e-12


@dataclass(frozen=True)
class CouplingConfig:
    """Horizon, tuning parameter and start points of a coupling run.

    ``start_x``/``start_y`` are points for an SDE and :class:`SegmentPath`
    objects for an SFDE.  ``eps_couple`` defaults to 1e-6 (1 + |x - y|).
    """

    T: float
    theta: float
    start_x: Union[np.ndarray, SegmentPath]
    start_y: Union[np.ndarray, SegmentPath]
    gamma: float
    eps_couple: Optional[float] = None
    schedule: str = "xi"
    ball_radius: float = 1e6
    blowup_guard: float = 1e4

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError("T must be positive")
        if not 0 < self.theta < 2:
            raise ConfigurationError("theta must lie in (0, 2)")
        if not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"schedule must be one of {SCHEDULES}")
        if isinstance(self.start_x, SegmentPath) != isinstance(self.start_y, SegmentPath):
            raise ConfigurationError("start_x and start_y must both be points or both be segments")
        if self.is_segment:
            if not math.isclose(self.start_x.h, self.start_y.h) or self.start_x.values.shape != self.start_y.values.shape:
                raise ConfigurationError("segments phi and psi must share their grid")
        else:
            object.__setattr__(self, "start_x", np.atleast_1d(np.asarray(self.start_x, dtype=float)))
            object.__setattr__(self, "start_y", np.atleast_1d(np.asarray(self.start_y, dtype=float)))
            if self.start_x.shape != self.start_y.shape:
                raise ConfigurationError("start points have different dimensions")
        if self.eps_couple is None:
            object.__setattr__(self, "eps_couple", 1e-6 * (1.0 + self.distance))
        if not self.eps_couple > 0:
            raise ConfigurationError("eps_couple must be positive")

    @property
    def is_segment(self) -> bool:
        return isinstance(self.start_x, SegmentPath)

    @property
    def distance(self) -> float:
        """|x - y|, or the sup-distance of the two initial segments."""
        if self.is_segment:
            return (self.start_x - self.start_y).sup_norm()
        return float(np.linalg.norm(self.start_x - self.start_y))


# ---------------------------------------------------------------------------
# schedules


def xi(cfg: CouplingConfig, K_T: float, t):
    """xi(t) = (2 - theta)/(2 K) [1 - exp(2K (t - T)/gamma)] on [0, T)."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= cfg.T) or np.any(t < 0):
        raise DomainError("xi is defined on [0, T)")
    if not K_T > 0:
        raise DomainError("K(T) must be positive")
    val = (2.0 - cfg.theta) / (2.0 * K_T) * -np.expm1(2.0 * K_T * (t - cfg.T) / cfg.gamma)
    return float(val) if val.ndim == 0 else val


def xi_prime(cfg: CouplingConfig, K_T: float, t):
    t = np.asarray(t, dtype=float)
    val = -(2.0 - cfg.theta) / cfg.gamma * np.exp(2.0 * K_T * (t - cfg.T) / cfg.gamma)
    return float(val) if val.ndim == 0 else val


def xi_tilde(cfg: CouplingConfig, t):
    """xi~(t) = (T - t)/(2 gamma) on [0, T]."""
    t = np.asarray(t, dtype=float)
    val = np.maximum(cfg.T - t, 0.0) / (2.0 * cfg.gamma)
    return float(val) if val.ndim == 0 else val


def schedule_value(cfg: CouplingConfig, K_T: float, t: float) -> float:
    if cfg.schedule == "xi_tilde":
        return xi_tilde(cfg, t)
    return xi(cfg, K_T, t)


def uv_residual(cfg: CouplingConfig, K_T: float, t):
    """2 - 2 K xi(t) + gamma xi'(t) - theta; zero up to rounding."""
    return 2.0 - 2.0 * K_T * xi(cfg, K_T, t) + cfg.gamma * xi_prime(cfg, K_T, t) - cfg.theta


# ---------------------------------------------------------------------------
# linear algebra on batches


def solve(S: np.ndarray, v: np.ndarray) -> np.ndarray:
    """S^{-1} v for batches S (n, d, d), v (n, d)."""
    if S.shape[-1] == 1:
        if np.any(S[:, 0, 0] == 0):
            raise NumericalFailure("singular diffusion matrix")
        return v / S[:, 0, :]
    try:
        return np.linalg.solve(S, v[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("singular diffusion matrix") from exc


def matvec(S: np.ndarray, v: np.ndarray) -> np.ndarray:
    if S.shape[-1] == 1:
        return S[:, :, 0] * v
    return np.einsum("nij,nj->ni", S, v)


# ---------------------------------------------------------------------------
# coupled drifts


class CoupledDrift(NamedTuple):
    drift_X: np.ndarray
    drift_Y: np.ndarray
    eta: np.ndarray  # the Girsanov integrand (Lambda in the functional case)
    stiff: bool


def _as_batch(p):
    p = np.asarray(p, dtype=float)
    return p[None, :] if p.ndim == 1 else p


def _coupling_eta(spec, cfg: CouplingConfig, t: float, X, Y, sX, K_T):
    Z = X - Y
    zz = np.sum(Z * Z, axis=1, keepdims=True)
    sched = schedule_value(cfg, K_T, t)
    if not sched > 0:
        raise DomainError("coupling schedule vanished; t must be < T")
    return solve(sX, Z) * spec.modulus.u(zz) / sched, sched


def coupled_drift_sde(spec: SdeSpec, cfg: CouplingConfig, t: float, X, Y, K_T: Optional[float] = None) -> CoupledDrift:
    """b(t, X) and b(t, Y) + sigma(t, Y) sigma(t, X)^{-1} (X - Y) u(|X - Y|^2) / xi(t)."""
    X, Y = _as_batch(X), _as_batch(Y)
    if np.any(np.all(X == Y, axis=1)):
        raise DomainError("coupled drift requested at X == Y (already coupled)")
    K_T = spec.K(cfg.T) if K_T is None else K_T
    sX, sY = spec.diffusion(t, X), spec.diffusion(t, Y)
    eta, sched = _coupling_eta(spec, cfg, t, X, Y, sX, K_T)
    return CoupledDrift(spec.drift(t, X), spec.drift(t, Y) + matvec(sY, eta), eta, sched < XI_FLOOR)


def coupled_drift_sfde(spec: SfdeSpec, cfg: CouplingConfig, t: float, X_seg: SegmentView, Y_seg: SegmentView) -> CoupledDrift:
    """Drifts of the functional coupling and Lambda.

    Y uses the functional drift evaluated on X's segment; the coupling term
    is switched off for t >= T.
    """
    X, Y = X_seg.current, Y_seg.current
    sX, sY = spec.diffusion(t, X), spec.diffusion(t, Y)
    aX, aY = spec.functional(t, X_seg), spec.functional(t, Y_seg)
    drift_X = spec.drift(t, X) + aX
    drift_Y = spec.drift(t, Y) + aX
    lam = solve(sY, aX - aY)
    stiff = False
    if t < cfg.T:
        live = ~np.all(X == Y, axis=1)
        Z = X - Y
        zz = np.sum(Z * Z, axis=1, keepdims=True)
        sched = xi_tilde(cfg, t)
        push = solve(sX, Z) * spec.modulus.u(zz) / sched * live[:, None]
        drift_Y = drift_Y + matvec(sY, push)
        lam = lam + push
        stiff = sched < XI_FLOOR
    return CoupledDrift(drift_X, drift_Y, lam, stiff)


def log_weight_increment(eta: np.ndarray, dB: np.ndarray, dt: float, guard: float = 1e4):
    """-<eta, dB> - |eta|^2 dt / 2, plus a flag where |eta|^2 dt exceeds the guard."""
    e2 = np.sum(eta * eta, axis=1)
    return -np.sum(eta * dB, axis=1) - 0.5 * e2 * dt, e2 * dt > guard


def girsanov_increment(spec, cfg: CouplingConfig, t: float, X, Y, dB, dt: float, Lambda=None, K_T=None):
    """One step of log R.  Rows with X == Y contribute exactly 0.

    For the functional case pass ``Lambda`` from :func:`coupled_drift_sfde`.
    """
    dB = _as_batch(dB)
    if Lambda is not None:
        eta = _as_batch(Lambda)
    else:
        X, Y = _as_batch(X), _as_batch(Y)
        K_T = spec.K(cfg.T) if K_T is None else K_T
        live = ~np.all(X == Y, axis=1)
        eta = np.zeros_like(X)
        if live.any():
            sX = spec.diffusion(t, X[live])
            eta[live] = _coupling_eta(spec, cfg, t, X[live], Y[live], sX, K_T)[0]
    return log_weight_increment(eta, dB, dt, cfg.blowup_guard)
