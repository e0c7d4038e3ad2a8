import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harnackmc.coupling import (CouplingConfig, coupled_drift_sde, coupled_drift_sfde, girsanov_increment,
                                log_weight_increment, solve, uv_residual, xi, xi_prime, xi_tilde)
from harnackmc.errors import ConfigurationError, DomainError, NumericalFailure
from harnackmc.model import SegmentPath, SegmentView, catalog_model

XI0 = 0.5 * (1 - math.exp(-2.0))  # 0.432332


def cfg(T=1.0, theta=1.0, gamma=1.0, x=(1.0, 0.0), y=(0.0, 0.0), **kw):
    return CouplingConfig(T=T, theta=theta, start_x=np.array(x), start_y=np.array(y), gamma=gamma, **kw)


def test_xi_value():
    assert xi(cfg(), 1.0, 0.0) == pytest.approx(0.432332, abs=1e-6)
    assert xi(cfg(), 1.0, 0.0) == pytest.approx(XI0, rel=1e-15)


def test_xi_vanishes_at_horizon():
    c = cfg()
    assert xi(c, 1.0, 1.0 - 1e-12) < 1e-11
    with pytest.raises(DomainError):
        xi(c, 1.0, 1.0)
    with pytest.raises(DomainError):
        xi(c, 1.0, -0.1)


def test_xi_derivative_matches_finite_difference():
    c = cfg(theta=0.7, gamma=1.3, T=2.0)
    t, h = 0.8, 1e-6
    fd = (xi(c, 0.4, t + h) - xi(c, 0.4, t - h)) / (2 * h)
    assert xi_prime(c, 0.4, t) == pytest.approx(fd, rel=1e-7)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1.99), st.floats(1e-3, 10.0), st.floats(0.1, 5.0), st.floats(0.1, 10.0),
       st.floats(0.0, 0.999))
def test_uv_identity(theta, K, gamma, T, frac):
    c = cfg(T=T, theta=theta, gamma=gamma)
    assert abs(uv_residual(c, K, frac * T)) < 1e-12


def test_xi_tilde_values():
    assert xi_tilde(cfg(T=1.0, gamma=1.0), 0.0) == 0.5
    assert xi_tilde(cfg(T=1.0, gamma=1.0), 1.0) == 0.0
    assert xi_tilde(cfg(T=2.0, gamma=0.5), 1.0) == 1.0


def test_config_validation():
    with pytest.raises(ConfigurationError):
        cfg(theta=2.0)
    with pytest.raises(ConfigurationError):
        cfg(T=0.0)
    with pytest.raises(ConfigurationError):
        cfg(x=(1.0,), y=(0.0, 0.0))
    with pytest.raises(ConfigurationError):
        cfg(schedule="other")
    c = cfg()
    assert c.eps_couple == pytest.approx(2e-6)
    assert c.distance == 1.0


def test_coupled_drift_example():
    spec = catalog_model("ou", {"K": 1.0, "d": 2})
    X, Y = np.array([1.0, 0.0]), np.array([0.0, 0.0])
    dr = coupled_drift_sde(spec, cfg(), 0.0, X, Y)
    added = dr.drift_Y - spec.drift(0.0, Y[None])
    np.testing.assert_allclose(added, [[1 / XI0, 0.0]], rtol=1e-14)
    assert added[0, 0] == pytest.approx(2.31304, abs=1e-5)
    np.testing.assert_allclose(dr.drift_X, [[-1.0, 0.0]])


def test_coupled_drift_rejects_coupled_pair():
    spec = catalog_model("ou", {"K": 1.0, "d": 2})
    with pytest.raises(DomainError):
        coupled_drift_sde(spec, cfg(), 0.0, np.zeros(2), np.zeros(2))


def test_girsanov_increment_example():
    spec = catalog_model("ou", {"K": 1.0, "d": 2})
    inc, boom = girsanov_increment(spec, cfg(), 0.0, np.array([1.0, 0.0]), np.zeros(2), np.zeros(2), 1e-3)
    assert inc[0] == pytest.approx(-0.5 * (1 / XI0) ** 2 * 1e-3, rel=1e-13)
    assert inc[0] == pytest.approx(-2.67507e-3, abs=1e-8)
    assert not boom[0]


def test_girsanov_increment_zero_after_coupling():
    spec = catalog_model("ou", {"K": 1.0, "d": 2})
    X = np.array([[0.3, 0.1], [1.0, 0.0]])
    Y = np.array([[0.3, 0.1], [0.0, 0.0]])
    dB = np.array([[0.5, -0.2], [0.1, 0.1]])
    inc, _ = girsanov_increment(spec, cfg(), 0.2, X, Y, dB, 1e-3)
    assert inc[0] == 0.0 and inc[1] != 0.0


def test_weight_explosion_flag():
    inc, boom = log_weight_increment(np.array([[1e3]]), np.zeros((1, 1)), 0.1, guard=1e4)
    assert boom[0]


def test_singular_diffusion_raises():
    with pytest.raises(NumericalFailure):
        solve(np.zeros((1, 2, 2)), np.ones((1, 2)))
    with pytest.raises(NumericalFailure):
        solve(np.zeros((1, 1, 1)), np.ones((1, 1)))


def test_coupled_drift_sfde_pre_and_post_horizon():
    spec = catalog_model("delay_ou", {"alpha": 0.5, "r0": 0.5})
    h = 0.25
    phi, psi = SegmentPath.constant(0.0, 0.5, h), SegmentPath.constant(1.0, 0.5, h)
    c = CouplingConfig(T=1.0, theta=1.0, start_x=phi, start_y=psi, gamma=1.0, schedule="xi_tilde")
    times = phi.times
    Xs = SegmentView(times, phi.values[None], 0.0, 0.5)
    Ys = SegmentView(times, psi.values[None], 0.0, 0.5)
    d = coupled_drift_sfde(spec, c, 0.0, Xs, Ys)
    # a(X) - a(Y) = 0.5 (0 - 1) plus the push (X - Y) / xi~(0) = -1 / 0.5
    np.testing.assert_allclose(d.eta, [[-0.5 - 2.0]])
    np.testing.assert_allclose(d.drift_Y, [[-1.0 + 0.0 - 2.0]])
    Xs2 = SegmentView(times + 1.0, phi.values[None], 1.0, 0.5)
    Ys2 = SegmentView(times + 1.0, psi.values[None], 1.0, 0.5)
    d2 = coupled_drift_sfde(spec, c, 1.0, Xs2, Ys2)
    np.testing.assert_allclose(d2.eta, [[-0.5]])
