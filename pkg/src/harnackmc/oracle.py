"""Closed-form Ornstein-Uhlenbeck semigroup used to validate the estimators.

For dX = -kappa X dt + sigma0 dB the law of X(T) given X(0) = x is Gaussian
with mean x e^{-kappa T} and per-coordinate variance
v(T) = sigma0^2 (1 - e^{-2 kappa T}) / (2 kappa).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError
from .model import SdeSpec

F_TAGS = ("exp_c", "log_exp_c", "constant")


@dataclass(frozen=True)
class LinearModelParams:
    kappa: float
    sigma0: float
    d: int = 1

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigurationError("kappa must be positive")
        if not self.sigma0 > 0:
            raise ConfigurationError("sigma0 must be positive")
        if self.d < 1:
            raise ConfigurationError("d must be a positive integer")

    @classmethod
    def from_spec(cls, spec: SdeSpec) -> "LinearModelParams":
        if spec.name != "ou":
            raise ConfigurationError(f"no closed form for model {spec.name!r}")
        p = spec.params
        return cls(p["kappa"], p["sigma0"], p["d"])

    def mean(self, x, T: float) -> np.ndarray:
        return self._point(x) * math.exp(-self.kappa * T)

    def variance(self, T: float) -> float:
        return self.sigma0 ** 2 * -math.expm1(-2.0 * self.kappa * T) / (2.0 * self.kappa)

    def _point(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.d,):
            raise ConfigurationError(f"point must have dimension {self.d}")
        return x


def _coef(params: LinearModelParams, c) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return np.full(params.d, c[0]) if c.size == 1 else c


def exact_Ptf(params: LinearModelParams, x, T: float, f_tag: str, c=1.0, constant: float = 1.0) -> float:
    """E f(X^x(T)) for f(z) = exp(<c, z>), log of that, or a constant."""
    if f_tag not in F_TAGS:
        raise ConfigurationError(f"unknown f_tag {f_tag!r}; expected one of {F_TAGS}")
    if f_tag == "constant":
        return float(constant)
    c = _coef(params, c)
    mu = params.mean(x, T)
    if f_tag == "log_exp_c":
        return float(c @ mu)
    return float(math.exp(c @ mu + 0.5 * params.variance(T) * (c @ c)))


class LogHarnackGap(NamedTuple):
    lhs: float  # P_T log f(y)
    rhs_baseline: float  # log P_T f(x)

    @property
    def gap(self) -> float:
        """Smallest bound value that makes the log-Harnack inequality hold."""
        return self.lhs - self.rhs_baseline


def exact_log_harnack_gap(params: LinearModelParams, x, y, T: float, c=1.0) -> LogHarnackGap:
    """Both sides of the log-Harnack inequality for f(z) = exp(<c, z>)."""
    cv = _coef(params, c)
    lhs = float(cv @ params.mean(y, T))
    base = float(cv @ params.mean(x, T) + 0.5 * params.variance(T) * (cv @ cv))
    return LogHarnackGap(lhs, base)
