import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harnackmc.errors import ConfigurationError, DomainError
from harnackmc.modulus import (ModulusSpec, bihari_C, check_class_membership, check_condition_U,
                               condition_U_constant, constant_modulus, eval_G, eval_Phi, eval_phi, inv_G,
                               inv_G_checked, log_modulus, loglog_modulus, power_modulus)


def quad_only(m):
    """Same u without closed forms, so every transform goes through quadrature."""
    return ModulusSpec(m.name + "-quad", m.u, m.du, m.class_tag, m.gamma)


def test_phi_constant_modulus():
    assert eval_phi(constant_modulus(), 1.0) == 1.0


@pytest.mark.parametrize("m", [constant_modulus(), log_modulus(), loglog_modulus(), power_modulus(0.5)])
def test_phi_at_zero(m):
    assert eval_phi(m, 0.0) == 0.0


def test_phi_log_modulus_value():
    # int_0^{1/e} -log r dr = r - r log r at 1/e
    assert eval_phi(log_modulus(), 1 / math.e) == pytest.approx(2 / math.e, abs=1e-6)
    assert eval_phi(quad_only(log_modulus()), 1 / math.e) == pytest.approx(2 / math.e, rel=1e-9)


@pytest.mark.parametrize("s", [1e-12, 1e-5, 0.01, 0.3, 1.0, 5.0, 100.0])
def test_log_modulus_closed_forms_match_quadrature(s):
    m, q = log_modulus(), quad_only(log_modulus())
    assert eval_phi(m, s) == pytest.approx(eval_phi(q, s), rel=1e-8)
    assert eval_G(m, s) == pytest.approx(eval_G(q, s), rel=1e-8, abs=1e-12)


def test_phi_negative_argument():
    with pytest.raises(DomainError):
        eval_phi(constant_modulus(), -1.0)


def test_G_values():
    assert eval_G(constant_modulus(), 2.0) == pytest.approx(math.log(2.0), rel=1e-14)
    for m in (constant_modulus(), log_modulus(), quad_only(loglog_modulus())):
        assert eval_G(m, 1.0) == 0.0
    assert eval_G(log_modulus(), 0.0) == -math.inf
    assert inv_G(constant_modulus(), 1.0) == pytest.approx(math.e, rel=1e-14)


def test_inv_G_underflow_and_overflow_flags():
    m = constant_modulus()
    assert inv_G_checked(m, -1e6) == (0.0, "underflow")
    v, flag = inv_G_checked(m, 1e6)
    assert flag == "overflow" and math.isfinite(v)
    assert inv_G_checked(quad_only(m), -1e6).flag == "underflow"
    assert inv_G_checked(m, -math.inf) == (0.0, "underflow")


@pytest.mark.parametrize("m", [constant_modulus(), log_modulus(), quad_only(log_modulus()), loglog_modulus()])
def test_G_round_trip_twelve_decades(m):
    for s in np.logspace(-6, 6, 25):
        assert inv_G(m, eval_G(m, s)) == pytest.approx(s, rel=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-8, 1e3), st.floats(1e-8, 1e3))
def test_phi_monotone(a, b):
    m = log_modulus()
    lo, hi = sorted((a, b))
    assert eval_phi(m, lo) <= eval_phi(m, hi)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-6, 1e6))
def test_G_increasing_property(s):
    m = loglog_modulus()
    assert eval_G(m, s) < eval_G(m, s * 1.5)


def test_bihari_zero_radius():
    for v in ("as-stated", "time-scaled"):
        assert bihari_C(log_modulus(), 1.0, 0.0, 3.0, 1.0, 2.0, 5.0, v).value == 0.0


def test_bihari_as_stated_constant_modulus():
    b = bihari_C(constant_modulus(), 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, "as-stated")
    assert b.value == pytest.approx(264.0, rel=1e-12)
    assert not b.overflow


def test_bihari_time_scaled_constant_modulus():
    # 2 r^2 exp(4 * 33 * T) is about 4.2e57, finite
    b = bihari_C(constant_modulus(), 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, "time-scaled")
    assert b.value == pytest.approx(2 * math.exp(132.0), rel=1e-12)
    assert not b.overflow
    big = bihari_C(constant_modulus(), 10.0, 1.0, 1.0, 0.0, 0.0, 1.0, "time-scaled")
    assert big.overflow and math.isfinite(big.value)


def test_bihari_rejects_unknown_variant():
    with pytest.raises(ConfigurationError):
        bihari_C(constant_modulus(), 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, "other")


def test_Phi_examples():
    assert eval_Phi(log_modulus(), 1.0, 0.0, 1.0, 1.0, 1.0, 1.0).value == 0.0
    assert eval_Phi(constant_modulus(), 1.0, 1.0, 1.0, 0.0, 0.0, 1.0).value == pytest.approx(264.0, rel=1e-12)
    # u == 1 on [1/e, inf) so Phi = C there
    m = log_modulus()
    C = bihari_C(m, 1.0, 0.5, 0.1, 0.0, 0.0, 0.1).value
    assert C >= 1 / math.e
    assert eval_Phi(m, 1.0, 0.5, 0.1, 0.0, 0.0, 0.1).value == pytest.approx(C, rel=1e-12)


def test_Phi_at_zero_needs_vanishing_su():
    with pytest.raises(DomainError):
        eval_Phi(power_modulus(1.0), 1.0, 0.0, 1.0, 0.0, 0.0, 1.0)


def test_membership_constant_and_log_pass():
    assert check_class_membership(constant_modulus()).passed
    rep = check_class_membership(log_modulus())
    assert rep.passed, rep.checks


def test_membership_power_fails_osgood():
    rep = check_class_membership(power_modulus(0.5))
    assert rep.failed
    assert rep.checks["osgood_divergence"].status == "fail"


def test_condition_U():
    m = constant_modulus()
    assert condition_U_constant(m) == pytest.approx(1.0)
    assert check_condition_U(m, 1.0).status == "pass"
    assert check_condition_U(m, 0.5).status == "fail"
    assert check_condition_U(log_modulus()).status == "pass"
