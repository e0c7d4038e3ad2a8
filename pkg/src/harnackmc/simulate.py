"""Euler-Maruyama integration of plain and coupled SDE / SFDE systems.

All paths of a run share one deterministic time grid.  For coupled runs the
grid is refined toward T so that every step obeys

    dt <= stiffness_factor * xi(t) / u_cap,

where ``u_cap`` bounds u(|Z|^2) over all separations above the coupling
threshold.  Once that cap falls below ``h_min`` a final step to T is taken
without the coupling drift and paths still apart are flagged.

Brownian increments come from counter-based per-path streams keyed by
``(seed, stream, path index)``, and paths are processed in fixed-size chunks
so results do not depend on the number of workers.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .coupling import CouplingConfig, log_weight_increment, matvec, schedule_value, solve
from .errors import ConfigurationError, NumericalFailure
from .model import SdeSpec, SegmentPath, SegmentView, SfdeSpec, grid_count
from .modulus import eval_G, inv_G_checked

STREAM_MAIN = 0  # coupled runs and the X-marginal
STREAM_PLAIN = 1  # independent plain Monte Carlo
STREAM_PROBE = 2  # uniqueness probe

UNRELIABLE_FRACTION = 1e-3
DUMP_MAGIC = b"HMCP"
DUMP_VERSION = 1


@dataclass(frozen=True)
class StepPolicy:
    """Base step, floor, stiffness factor and seed of a run."""

    h_max: float
    rng_seed: int
    h_min: float = 1e-9
    stiffness_factor: float = 0.1
    scheme_tag: str = "euler-maruyama"
    chunk_size: int = 4096

    def __post_init__(self):
        if not (self.h_max > 0 and self.h_min > 0):
            raise ConfigurationError("step sizes must be positive")
        if self.h_min > self.h_max:
            raise ConfigurationError("h_min must not exceed h_max")
        if not 0 < self.stiffness_factor <= 1:
            raise ConfigurationError("stiffness_factor must lie in (0, 1]")
        if self.scheme_tag != "euler-maruyama":
            raise ConfigurationError("only the euler-maruyama scheme is available")
        if not (isinstance(self.rng_seed, (int, np.integer)) and 0 <= self.rng_seed < 2 ** 64):
            raise ConfigurationError("rng_seed must be an integer in [0, 2**64)")
        if self.chunk_size < 1:
            raise ConfigurationError("chunk_size must be positive")


# ---------------------------------------------------------------------------
# random numbers


def path_generator(seed: int, stream: int, index: int) -> np.random.Generator:
    """Independent generator for one path, keyed by (seed, stream, index)."""
    key = (((int(stream) << 40) | int(index)) << 64) | int(seed)
    return np.random.Generator(np.random.Philox(key=key))


def brownian_increments(seed: int, stream: int, indices: Sequence[int], dts: np.ndarray, d: int) -> np.ndarray:
    """Increments dB of shape (n, steps, d) on steps of length ``dts``."""
    dts = np.asarray(dts, dtype=float)
    sq = np.sqrt(dts)[:, None]
    out = np.empty((len(indices), len(dts), d))
    for j, i in enumerate(indices):
        out[j] = path_generator(seed, stream, i).standard_normal((len(dts), d)) * sq
    return out


# ---------------------------------------------------------------------------
# grids


def uniform_grid(t0: float, t1: float, h: float) -> np.ndarray:
    n = max(1, int(math.ceil((t1 - t0) / h - 1e-9)))
    ts = t0 + h * np.arange(n + 1)
    ts[-1] = t1
    return ts


def modulus_cap(modulus, eps: float, radius: float) -> float:
    """sup of u(s) over eps^2 <= s <= (2 radius)^2, on a log grid."""
    s = np.logspace(math.log10(eps ** 2), math.log10((2.0 * radius) ** 2), 400)
    return float(np.max(modulus.u(s)))


def coupling_grid(cfg: CouplingConfig, K_T: float, policy: StepPolicy, u_cap: float):
    """Shared grid on [0, T] and a per-step flag telling whether the coupling drift is on."""
    T, h = cfg.T, policy.h_max
    ts, push = [0.0], []
    t = 0.0
    while t < T:
        rem = T - t
        cap = policy.stiffness_factor * schedule_value(cfg, K_T, t) / u_cap
        if cap < policy.h_min:
            ts.append(T)
            push.append(False)
            break
        dt = min(h, cap)
        if dt >= rem:
            t = T
        else:
            t = t + dt
        ts.append(t)
        push.append(True)
    return np.array(ts), np.array(push, dtype=bool)


# ---------------------------------------------------------------------------
# records


@dataclass
class PathRecord:
    """Batched trajectories and per-path flags of one run.

    ``X_T``/``Y_T`` are the final states, ``tau`` and ``exit_time`` are NaN
    where the event did not happen.  Full paths are kept only when the run
    was asked to record them.  Segment runs also carry the terminal segments.
    """

    times: np.ndarray
    X_T: np.ndarray
    log_R: np.ndarray
    tau: np.ndarray
    exit_time: np.ndarray
    coupled: np.ndarray
    exited: np.ndarray
    weight_exploded: np.ndarray
    step_floor_hit: np.ndarray
    Y_T: Optional[np.ndarray] = None
    X: Optional[np.ndarray] = None
    Y: Optional[np.ndarray] = None
    log_R_path: Optional[np.ndarray] = None
    X_seg_T: Optional[np.ndarray] = None
    Y_seg_T: Optional[np.ndarray] = None
    max_cap_ratio: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.X_T.shape[0]

    @property
    def Z(self) -> Optional[np.ndarray]:
        return None if self.Y is None else self.X - self.Y

    @property
    def Z_T(self) -> Optional[np.ndarray]:
        return None if self.Y_T is None else self.X_T - self.Y_T

    @property
    def exploded_fraction(self) -> float:
        return float(np.mean(self.weight_exploded))

    @property
    def unreliable(self) -> bool:
        return self.exploded_fraction > UNRELIABLE_FRACTION

    def flag_summary(self) -> dict:
        return {
            "n_paths": int(self.n_paths),
            "coupled": int(self.coupled.sum()),
            "exited": int(self.exited.sum()),
            "weight_exploded": int(self.weight_exploded.sum()),
            "step_floor_hit": int(self.step_floor_hit.sum()),
            "unreliable": bool(self.unreliable),
        }


def _concat(parts: List[dict], times, meta) -> PathRecord:
    keys = ("X_T", "log_R", "tau", "exit_time", "coupled", "exited", "weight_exploded", "step_floor_hit",
            "Y_T", "X", "Y", "log_R_path", "X_seg_T", "Y_seg_T")
    out = {}
    for k in keys:
        vals = [p.get(k) for p in parts]
        out[k] = None if vals[0] is None else np.concatenate(vals, axis=0)
    cap = max(p.get("max_cap_ratio", 0.0) for p in parts)
    return PathRecord(times=times, max_cap_ratio=cap, meta=meta, **out)


def _run_chunks(fn, n_paths: int, chunk: int, workers: int) -> List[dict]:
    bounds = [(s, min(s + chunk, n_paths)) for s in range(0, n_paths, chunk)]
    if workers <= 1 or len(bounds) == 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalFailure("non-finite value in model coefficients")


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=1))


def _meta(policy, n_paths, T, kind, **extra):
    m = {"kind": kind, "seed": int(policy.rng_seed), "h": policy.h_max, "h_min": policy.h_min,
         "stiffness_factor": policy.stiffness_factor, "scheme": policy.scheme_tag, "T": T,
         "n_paths": int(n_paths), "chunk_size": policy.chunk_size}
    m.update(extra)
    return m


# ---------------------------------------------------------------------------
# plain SDE


def _euler_sde(spec: SdeSpec, x0: np.ndarray, grid: np.ndarray, dB: np.ndarray, radius: float, full: bool) -> dict:
    n, d = dB.shape[0], spec.dim
    X = np.tile(x0, (n, 1))
    exited = np.zeros(n, dtype=bool)
    exit_t = np.full(n, np.nan)
    XP = None
    if full:
        XP = np.empty((n, len(grid), d))
        XP[:, 0] = X
    for k in range(len(grid) - 1):
        t, dt = grid[k], grid[k + 1] - grid[k]
        bX, sX = spec.drift(t, X), spec.diffusion(t, X)
        _check_finite(bX[~exited], sX[~exited])
        Xn = X + bX * dt + matvec(sX, dB[:, k])
        Xn[exited] = X[exited]
        out = ~exited & (_norm(Xn) > radius)
        if out.any():
            exit_t[out] = grid[k + 1]
            exited |= out
        X = Xn
        if full:
            XP[:, k + 1] = X
    return {"X_T": X, "exited": exited, "exit_time": exit_t, "X": XP}


def simulate_sde(spec: SdeSpec, x0, T: float, policy: StepPolicy, n_paths: int = 1, *,
                 grid: Optional[np.ndarray] = None, stream: int = STREAM_MAIN, record: str = "terminal",
                 workers: int = 1, ball_radius: float = 1e6) -> PathRecord:
    """Euler-Maruyama paths of dX = b dt + sigma dB from x0 on [0, T].

    ``grid`` overrides the uniform grid of step ``policy.h_max``; passing the
    grid of a coupled run reproduces its X paths exactly.
    """
    if not T > 0:
        raise ConfigurationError("T must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (spec.dim,):
        raise ConfigurationError(f"start point must have dimension {spec.dim}")
    grid = uniform_grid(0.0, T, policy.h_max) if grid is None else np.asarray(grid, dtype=float)
    if grid[0] != 0.0 or not math.isclose(grid[-1], T) or np.any(np.diff(grid) <= 0):
        raise ConfigurationError("grid must increase from 0 to T")
    full = record == "full"
    dts = np.diff(grid)

    def work(a, b):
        dB = brownian_increments(policy.rng_seed, stream, range(a, b), dts, spec.dim)
        return _euler_sde(spec, x0, grid, dB, ball_radius, full)

    parts = _run_chunks(work, n_paths, policy.chunk_size, workers)
    n = n_paths
    for p in parts:
        m = p["X_T"].shape[0]
        p.update(log_R=np.zeros(m), tau=np.full(m, np.nan), coupled=np.zeros(m, bool),
                 weight_exploded=np.zeros(m, bool), step_floor_hit=np.zeros(m, bool))
    return _concat(parts, grid, _meta(policy, n, T, "sde", stream=stream, start=x0.tolist()))


# ---------------------------------------------------------------------------
# coupled SDE


def _hit_fraction(Z, Zn, eps):
    """Fraction of the step at which |Z| reaches eps or crosses zero."""
    zz, zn = np.sum(Z * Z, axis=1), np.sum(Zn * Zn, axis=1)
    dot = np.sum(Z * Zn, axis=1)
    flip = dot <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        f_flip = zz / (zz - dot)
        a, b = np.sqrt(zz), np.sqrt(zn)
        f_eps = (a - eps) / (a - b)
    frac = np.where(flip, f_flip, f_eps)
    return np.clip(np.nan_to_num(frac, nan=1.0), 0.0, 1.0), flip | (zn <= eps * eps)


def _coupled_sde_chunk(spec, cfg, grid, push, sched, dB, full, guard):
    n, d = dB.shape[0], spec.dim
    eps, radius = cfg.eps_couple, cfg.ball_radius
    X, Y = np.tile(cfg.start_x, (n, 1)), np.tile(cfg.start_y, (n, 1))
    logR = np.zeros(n)
    tau, exit_t = np.full(n, np.nan), np.full(n, np.nan)
    coupled, exited, exploded = (np.zeros(n, dtype=bool) for _ in range(3))
    if full:
        XP, YP, LP = np.empty((n, len(grid), d)), np.empty((n, len(grid), d)), np.zeros((n, len(grid)))
        XP[:, 0], YP[:, 0] = X, Y
    for k in range(len(grid) - 1):
        t, dt = grid[k], grid[k + 1] - grid[k]
        db = dB[:, k]
        act = ~exited
        bX, sX = spec.drift(t, X), spec.diffusion(t, X)
        _check_finite(bX[act], sX[act])
        Xn = X + bX * dt + matvec(sX, db)
        Yn = Xn.copy()
        live = act & ~coupled
        if live.any():
            idx = slice(None) if live.all() else np.flatnonzero(live)
            Xl, Yl, dbl = X[idx], Y[idx], db[idx]
            Z = Xl - Yl
            bY, sY = spec.drift(t, Yl), spec.diffusion(t, Yl)
            _check_finite(bY, sY)
            if push[k]:
                zz = np.sum(Z * Z, axis=1, keepdims=True)
                eta = solve(sX[idx], Z) * spec.modulus.u(zz) / sched[k]
            else:
                eta = np.zeros_like(Z)
            Yn[idx] = Yl + bY * dt + matvec(sY, dbl + eta * dt)
            incr, boom = log_weight_increment(eta, dbl, dt, guard)
            logR[idx] += incr
            exploded[idx] |= boom
            if push[k]:
                frac, hit = _hit_fraction(Z, Xn[idx] - Yn[idx], eps)
                if hit.any():
                    j = np.flatnonzero(live)[hit]
                    tau[j] = t + frac[hit] * dt
                    coupled[j] = True
                    Yn[j] = Xn[j]
        Xn[exited], Yn[exited] = X[exited], Y[exited]
        out = act & ((_norm(Xn) > radius) | (_norm(Yn) > radius))
        if out.any():
            exit_t[out] = grid[k + 1]
            exited |= out
        X, Y = Xn, Yn
        if full:
            XP[:, k + 1], YP[:, k + 1], LP[:, k + 1] = X, Y, logR
    floor = ~coupled & ~exited if not push[-1] else np.zeros(n, dtype=bool)
    res = {"X_T": X, "Y_T": Y, "log_R": logR, "tau": tau, "exit_time": exit_t, "coupled": coupled,
           "exited": exited, "weight_exploded": exploded, "step_floor_hit": floor}
    if full:
        res.update(X=XP, Y=YP, log_R_path=LP)
    return res


def _coupling_setup(spec, cfg, policy):
    K_T = spec.K(cfg.T) if cfg.schedule == "xi" else 1.0  # unused by xi_tilde
    u_cap = modulus_cap(spec.modulus, cfg.eps_couple, cfg.ball_radius)
    grid, push = coupling_grid(cfg, K_T, policy, u_cap)
    sched = np.array([schedule_value(cfg, K_T, t) if p else np.inf for t, p in zip(grid[:-1], push)])
    dts = np.diff(grid)
    ratio = float(np.max(np.where(push, dts * u_cap / (policy.stiffness_factor * sched), 0.0)))
    return K_T, u_cap, grid, push, sched, ratio


def simulate_coupled_sde(spec: SdeSpec, cfg: CouplingConfig, policy: StepPolicy, n_paths: int = 1, *,
                         record: str = "terminal", workers: int = 1) -> PathRecord:
    """Integrate the coupled pair (X from x, Y from y) with shared noise and accumulate log R.

    ``max_cap_ratio`` in the record is the largest dt / (stiffness_factor xi(t) / u_cap)
    over steps with the coupling drift on; it never exceeds 1.
    """
    if cfg.is_segment:
        raise ConfigurationError("segment start points need simulate_coupled_sfde")
    if cfg.start_x.shape != (spec.dim,):
        raise ConfigurationError(f"start points must have dimension {spec.dim}")
    if np.array_equal(cfg.start_x, cfg.start_y):
        raise ConfigurationError("start_x and start_y coincide; nothing to couple")
    K_T, u_cap, grid, push, sched, ratio = _coupling_setup(spec, cfg, policy)
    full = record == "full"
    dts = np.diff(grid)

    def work(a, b):
        dB = brownian_increments(policy.rng_seed, STREAM_MAIN, range(a, b), dts, spec.dim)
        return _coupled_sde_chunk(spec, cfg, grid, push, sched, dB, full, cfg.blowup_guard)

    parts = _run_chunks(work, n_paths, policy.chunk_size, workers)
    for p in parts:
        p["max_cap_ratio"] = ratio
    meta = _meta(policy, n_paths, cfg.T, "coupled_sde", theta=cfg.theta, gamma=cfg.gamma,
                 K_T=K_T if cfg.schedule == "xi" else None,
                 eps_couple=cfg.eps_couple, u_cap=u_cap, schedule=cfg.schedule, n_steps=len(grid) - 1,
                 start_x=cfg.start_x.tolist(), start_y=cfg.start_y.tolist())
    return _concat(parts, grid, meta)


# ---------------------------------------------------------------------------
# SFDE


def _sfde_grid(r0: float, seg_h: float, m_seg: int, inner: np.ndarray, T: float, h: float):
    """History times: initial segment nodes, the grid on [0, T], then uniform steps on [T, T + r0]."""
    head = -r0 + seg_h * np.arange(m_seg + 1)
    head[-1] = 0.0
    m = grid_count(r0, h)
    tail = T + h * np.arange(1, m + 1)
    tail[-1] = T + r0
    return np.concatenate([head, inner[1:], tail]), m


def _sfde_chunk(spec, times, n_head, dB, full, m_tail, phi, radius, coupling=None):
    """Integrate X (and, when ``coupling`` is given, the coupled Y and log R) over the history grid.

    ``coupling`` holds cfg, push, sched, psi and guard of a coupled run.
    """
    n, d = dB.shape[0], spec.dim
    n_nodes = len(times)
    HX = np.empty((n, n_nodes, d))
    HX[:, :n_head] = phi
    HY = LP = None
    if coupling is not None:
        cfg, push, sched, guard = coupling["cfg"], coupling["push"], coupling["sched"], coupling["guard"]
        HY = np.empty((n, n_nodes, d))
        HY[:, :n_head] = coupling["psi"]
        if full:
            LP = np.zeros((n, n_nodes))
    logR = np.zeros(n)
    tau, exit_t = np.full(n, np.nan), np.full(n, np.nan)
    coupled, exited, exploded = (np.zeros(n, dtype=bool) for _ in range(3))
    r0 = spec.r0
    for k, j in enumerate(range(n_head - 1, n_nodes - 1)):
        t, dt = times[j], times[j + 1] - times[j]
        db = dB[:, k]
        act = ~exited
        X = HX[:, j]
        Xv = SegmentView(times, HX, t, r0, upto=j + 1)
        bX, sX, aX = spec.drift(t, X), spec.diffusion(t, X), spec.functional(t, Xv)
        _check_finite(bX[act], sX[act], aX[act])
        Xn = X + (bX + aX) * dt + matvec(sX, db)
        if coupling is not None:
            Y = HY[:, j]
            Yv = SegmentView(times, HY, t, r0, upto=j + 1)
            bY, sY, aY = spec.drift(t, Y), spec.diffusion(t, Y), spec.functional(t, Yv)
            _check_finite(bY[act], sY[act], aY[act])
            lam = solve(sY, aX - aY)
            pushing = k < len(push) and push[k]
            live = act & ~coupled
            pv = np.zeros_like(X)
            if pushing and live.any():
                Z = X[live] - Y[live]
                zz = np.sum(Z * Z, axis=1, keepdims=True)
                pv[live] = solve(sX[live], Z) * spec.modulus.u(zz) / sched[k]
            Yn = Y + (bY + aX) * dt + matvec(sY, db + pv * dt)
            eta = np.where(act[:, None], lam + pv, 0.0)
            incr, boom = log_weight_increment(eta, db, dt, guard)
            logR += incr
            exploded |= boom
            if pushing and live.any():
                idx = np.flatnonzero(live)
                frac, hit = _hit_fraction(X[idx] - Y[idx], Xn[idx] - Yn[idx], cfg.eps_couple)
                tau[idx[hit]] = t + frac[hit] * dt
                coupled[idx[hit]] = True
            Yn[coupled] = Xn[coupled]
            Yn[exited] = Y[exited]
        Xn[exited] = X[exited]
        far = _norm(Xn) > radius
        if coupling is not None:
            far |= _norm(Yn) > radius
        out = act & far
        if out.any():
            exit_t[out] = times[j + 1]
            exited |= out
        HX[:, j + 1] = Xn
        if coupling is not None:
            HY[:, j + 1] = Yn
            if LP is not None:
                LP[:, j + 1] = logR
    res = {"X_T": HX[:, -1].copy(), "X_seg_T": HX[:, -(m_tail + 1):].copy(), "exited": exited,
           "exit_time": exit_t, "X": HX if full else None}
    if coupling is not None:
        floor = ~coupled & ~exited if not push[-1] else np.zeros(n, dtype=bool)
        res.update(Y_T=HY[:, -1].copy(), Y_seg_T=HY[:, -(m_tail + 1):].copy(), log_R=logR, tau=tau,
                   coupled=coupled, weight_exploded=exploded, step_floor_hit=floor,
                   Y=HY if full else None, log_R_path=LP)
    else:
        res.update(log_R=np.zeros(n), tau=np.full(n, np.nan), coupled=np.zeros(n, bool),
                   weight_exploded=np.zeros(n, bool), step_floor_hit=np.zeros(n, bool))
    return res


def _check_segment(spec: SfdeSpec, seg: SegmentPath, h: float):
    if seg.dim != spec.dim:
        raise ConfigurationError(f"segment must have dimension {spec.dim}")
    if not math.isclose(seg.r0, spec.r0, rel_tol=1e-9):
        raise ConfigurationError(f"segment covers [-{seg.r0:g}, 0] but the delay is {spec.r0:g}")
    grid_count(spec.r0, h)


def simulate_sfde(spec: SfdeSpec, phi: SegmentPath, T: float, policy: StepPolicy, n_paths: int = 1, *,
                  stream: int = STREAM_MAIN, record: str = "terminal", workers: int = 1,
                  ball_radius: float = 1e6) -> PathRecord:
    """Euler-Maruyama paths of the functional equation from the segment phi on [0, T].

    The terminal segment X_T on the grid of step ``policy.h_max`` is kept.
    """
    if not T > 0:
        raise ConfigurationError("T must be positive")
    _check_segment(spec, phi, policy.h_max)
    inner = uniform_grid(0.0, T, policy.h_max)
    head = -spec.r0 + phi.h * np.arange(phi.m + 1)
    head[-1] = 0.0
    times = np.concatenate([head, inner[1:]])
    m_tail = min(grid_count(spec.r0, policy.h_max), len(inner) - 1)
    dts = np.diff(times)[phi.m:]
    full = record == "full"

    def work(a, b):
        dB = brownian_increments(policy.rng_seed, stream, range(a, b), dts, spec.dim)
        return _sfde_chunk(spec, times, phi.m + 1, dB, full, m_tail, phi.values, ball_radius)

    parts = _run_chunks(work, n_paths, policy.chunk_size, workers)
    return _concat(parts, times, _meta(policy, n_paths, T, "sfde", stream=stream, r0=spec.r0))


def simulate_coupled_sfde(spec: SfdeSpec, cfg: CouplingConfig, policy: StepPolicy, n_paths: int = 1, *,
                          record: str = "terminal", workers: int = 1) -> PathRecord:
    """Coupled functional pair from (phi, psi) on [0, T + r0] with the xi~ schedule.

    Y uses the functional drift of X, so after coupling the two solutions
    coincide; the weight keeps the term sigma(Y)^{-1}(a(X_t) - a(Y_t)) until the
    windows have merged.
    """
    if not cfg.is_segment:
        raise ConfigurationError("simulate_coupled_sfde needs segment start points")
    if cfg.schedule != "xi_tilde":
        raise ConfigurationError("the functional coupling uses the xi_tilde schedule")
    phi, psi = cfg.start_x, cfg.start_y
    _check_segment(spec, phi, policy.h_max)
    if np.array_equal(phi.values, psi.values):
        raise ConfigurationError("phi and psi coincide; nothing to couple")
    K_T, u_cap, inner, push, sched, ratio = _coupling_setup(spec, cfg, policy)
    times, m_tail = _sfde_grid(spec.r0, phi.h, phi.m, inner, cfg.T, policy.h_max)
    dts = np.diff(times)[phi.m:]
    full = record == "full"

    def work(a, b):
        dB = brownian_increments(policy.rng_seed, STREAM_MAIN, range(a, b), dts, spec.dim)
        coupling = {"cfg": cfg, "push": push, "sched": sched, "psi": psi.values, "guard": cfg.blowup_guard}
        return _sfde_chunk(spec, times, phi.m + 1, dB, full, m_tail, phi.values, cfg.ball_radius, coupling)

    parts = _run_chunks(work, n_paths, policy.chunk_size, workers)
    for p in parts:
        p["max_cap_ratio"] = ratio
    meta = _meta(policy, n_paths, cfg.T, "coupled_sfde", theta=cfg.theta, gamma=cfg.gamma, r0=spec.r0,
                 eps_couple=cfg.eps_couple, u_cap=u_cap, schedule=cfg.schedule, n_steps=len(dts))
    return _concat(parts, times, meta)


def terminal_segment_distance(rec: PathRecord) -> np.ndarray:
    """sup over the terminal grid of |X - Y| for each path of a coupled functional run."""
    if rec.X_seg_T is None or rec.Y_seg_T is None:
        raise ConfigurationError("record carries no terminal segments")
    return np.max(np.linalg.norm(rec.X_seg_T - rec.Y_seg_T, axis=2), axis=1)


# ---------------------------------------------------------------------------
# uniqueness probe


@dataclass(frozen=True)
class ProbeEntry:
    h: float
    eps: float
    sup_dist2: float  # max over paths of sup_t |X - X~|^2
    mean_sup_dist2: float
    censored: int
    envelope: float
    envelope_flag: Optional[str]

    @property
    def below_envelope(self) -> bool:
        return self.sup_dist2 <= self.envelope * (1 + 1e-9)


@dataclass
class ProbeTable:
    entries: List[ProbeEntry]
    C_fit: float
    T: float
    n_paths: int
    seed: int

    def at(self, h: float, eps: float) -> ProbeEntry:
        for e in self.entries:
            if math.isclose(e.h, h) and e.eps == eps:
                return e
        raise KeyError((h, eps))

    def decays_in_eps(self, h: Optional[float] = None) -> bool:
        """sup-distance nonincreasing as eps decreases at mesh h (default: finest)."""
        h = min(e.h for e in self.entries) if h is None else h
        row = sorted((e for e in self.entries if math.isclose(e.h, h)), key=lambda e: -e.eps)
        vals = [e.sup_dist2 for e in row]
        return all(b <= a for a, b in zip(vals, vals[1:]))


def _pair_paths(spec, start, start_pert, dB, h, radius):
    """Two Euler paths sharing dB on a uniform grid; returns |D|^2 per node and per-step growth ratios."""
    n, steps = dB.shape[0], dB.shape[1]
    seg = isinstance(start, SegmentPath)
    if seg:
        m = start.m
        times = np.concatenate([start.times, h * np.arange(1, steps + 1)])
        H = np.empty((2, n, m + 1 + steps, spec.dim))
        H[0, :, : m + 1], H[1, :, : m + 1] = start.values, start_pert.values
        states = None
    else:
        states = [np.tile(start, (n, 1)), np.tile(start_pert, (n, 1))]
    D2 = np.empty((n, steps + 1))
    D0 = np.atleast_2d(start.end - start_pert.end) if seg else np.atleast_2d(start - start_pert)
    D2[:, 0] = np.sum(D0 * D0, axis=1)
    rates = []
    censored = np.zeros(n, dtype=bool)
    for k in range(steps):
        t = k * h
        new = []
        for s in range(2):
            if seg:
                j = m + k
                X = H[s, :, j]
                a = spec.functional(t, SegmentView(times, H[s], t, spec.r0, upto=j + 1))
                Xn = X + (spec.drift(t, X) + a) * h + matvec(spec.diffusion(t, X), dB[:, k])
                H[s, :, j + 1] = Xn
            else:
                X = states[s]
                Xn = X + spec.drift(t, X) * h + matvec(spec.diffusion(t, X), dB[:, k])
                states[s] = Xn
            new.append(Xn)
        D2[:, k + 1] = np.sum((new[0] - new[1]) ** 2, axis=1)
        censored |= (_norm(new[0]) > radius) | (_norm(new[1]) > radius) | ~np.isfinite(D2[:, k + 1])
        prev = D2[:, k]
        ok = prev > 0
        if ok.any():
            u = spec.modulus.u(prev[ok])
            rates.append(np.max((D2[ok, k + 1] - prev[ok]) / (h * prev[ok] * u)))
    return D2, censored, (max(rates) if rates else -np.inf)


def uniqueness_probe(spec: Union[SdeSpec, SfdeSpec], x0, T: float, mesh_levels: Sequence[float],
                     perturbations: Sequence[float], seed: int, n_paths: int = 4,
                     ball_radius: float = 1e6) -> ProbeTable:
    """Shared-noise pairs from x0 and x0 + eps e1 at several meshes.

    Coarse meshes reuse sums of the finest-level increments, so every level
    sees the same Brownian path.  ``C_fit`` is the largest realised one-step
    growth rate (|D_{k+1}|^2 - |D_k|^2) / (h |D_k|^2 u(|D_k|^2)), floored at 0,
    and each entry is compared with G^{-1}(G(2 eps^2) + C_fit T).
    """
    mesh = [float(h) for h in mesh_levels]
    eps_list = [float(e) for e in perturbations]
    if any(b >= a for a, b in zip(mesh, mesh[1:])):
        raise ConfigurationError("mesh_levels must be strictly decreasing")
    if any(e < 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigurationError("perturbations must be nonnegative and strictly decreasing")
    h_fine = mesh[-1]
    n_fine = int(round(T / h_fine))
    if abs(n_fine * h_fine - T) > 1e-9 * T:
        raise ConfigurationError("T must be a multiple of the finest mesh")
    ratios = [int(round(h / h_fine)) for h in mesh]
    if any(abs(r * h_fine - h) > 1e-12 * h for r, h in zip(ratios, mesh)):
        raise ConfigurationError("every mesh must be an integer multiple of the finest one")
    seg = isinstance(spec, SfdeSpec)
    if seg:
        base = x0 if isinstance(x0, SegmentPath) else SegmentPath.constant(x0, spec.r0, mesh[0], spec.dim)
        for h in mesh:
            grid_count(spec.r0, h)
    else:
        base = np.atleast_1d(np.asarray(x0, dtype=float))
    dB_fine = brownian_increments(seed, STREAM_PROBE, range(n_paths), np.full(n_fine, h_fine), spec.dim)

    raw, C_fit = [], 0.0
    for h, r in zip(mesh, ratios):
        dB = dB_fine.reshape(n_paths, n_fine // r, r, spec.dim).sum(axis=2)
        for e in eps_list:
            if seg:
                start = SegmentPath.from_function(lambda s: _seg_interp(base, s), spec.r0, h)
                pert = SegmentPath(h, start.values + e * np.eye(spec.dim)[0])
            else:
                start, pert = base, base + e * np.eye(spec.dim)[0]
            D2, cens, rate = _pair_paths(spec, start, pert, dB, h, ball_radius)
            ok = ~cens
            sup = np.max(D2[ok], axis=1) if ok.any() else np.array([np.nan])
            raw.append((h, e, float(np.max(sup)), float(np.mean(sup)), int(cens.sum())))
            if e > 0:
                C_fit = max(C_fit, rate)
    entries = []
    for h, e, sup, mean, cens in raw:
        if e == 0:
            env, flag = 0.0, None
        else:
            g = inv_G_checked(spec.modulus, eval_G(spec.modulus, 2 * e * e) + C_fit * T)
            env, flag = g.value, g.flag
        entries.append(ProbeEntry(h, e, sup, mean, cens, env, flag))
    return ProbeTable(entries, C_fit, T, n_paths, seed)


def _seg_interp(seg: SegmentPath, s: float) -> np.ndarray:
    ts = seg.times
    return np.array([np.interp(s, ts, seg.values[:, i]) for i in range(seg.dim)])


# ---------------------------------------------------------------------------
# binary path dump


_HEADER = struct.Struct("<4sIIQQddQ")  # magic, version, d, n_nodes, n_paths, h, T, seed


def write_path_dump(rec: PathRecord, path) -> None:
    """Little-endian float64 rows (t, X..., Y..., logR) per grid node, one block per path."""
    if rec.X is None:
        raise ConfigurationError("path dump needs a record with full paths")
    n, nodes, d = rec.X.shape
    Y = rec.Y if rec.Y is not None else np.full_like(rec.X, np.nan)
    L = rec.log_R_path if rec.log_R_path is not None else np.zeros((n, nodes))
    body = np.concatenate([np.broadcast_to(rec.times, (n, nodes))[..., None], rec.X, Y, L[..., None]], axis=2)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, d, nodes, n, float(rec.meta.get("h", np.nan)),
                              float(rec.meta.get("T", np.nan)), int(rec.meta.get("seed", 0))))
        fh.write(body.astype("<f8").tobytes())


def read_path_dump(path) -> dict:
    """Inverse of :func:`write_path_dump`; returns header fields and arrays."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, d, nodes, n, h, T, seed = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC or version != DUMP_VERSION:
        raise ConfigurationError("not a path dump of a supported version")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, nodes, 2 * d + 2)
    return {"version": version, "d": d, "h": h, "T": T, "seed": seed, "times": body[0, :, 0].copy(),
            "X": body[:, :, 1:1 + d].copy(), "Y": body[:, :, 1 + d:1 + 2 * d].copy(), "log_R": body[:, :, -1].copy()}
