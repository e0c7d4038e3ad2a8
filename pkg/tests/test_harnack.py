import math

import numpy as np
import pytest

from harnackmc.coupling import CouplingConfig
from harnackmc.errors import ConfigurationError, DomainError
from harnackmc.harnack import (Comparison, Estimate, bound_set, coupled_run, entropy_and_moment_bounds,
                               estimate_semigroup, estimate_weighted, log_harnack_bound, log_harnack_sides,
                               minimize_log_harnack_over_K, power_harnack_bound, power_thresholds,
                               sfde_log_harnack_bound, test_function as make_f, theta_for_q, verdict)
from harnackmc.model import SegmentPath, SfdeSpec, catalog_model
from harnackmc.modulus import log_modulus
from harnackmc.oracle import LinearModelParams, exact_log_harnack_gap
from harnackmc.simulate import StepPolicy

XI0 = 0.5 * (1 - math.exp(-2.0))
LH = 0.01 / -math.expm1(-0.02)  # 0.505017


@pytest.fixture(scope="module")
def ou():
    return catalog_model("ou", {"K": 0.01})


@pytest.fixture(scope="module")
def sine():
    return catalog_model("sine_diffusion", {"K": 1.0})


def test_log_harnack_examples(ou):
    for v in ("stated", "lemma"):
        assert log_harnack_bound(ou, None, 1.0, [0.0], [1.0], v) == pytest.approx(0.505017, abs=1e-6)
        assert log_harnack_bound(ou, None, 1.0, [0.3], [0.3], v) == 0.0
    ou2 = catalog_model("ou", {"K": 0.01, "sigma0": 2.0})
    assert log_harnack_bound(ou2, None, 1.0, [0.0], [1.0], "stated") == pytest.approx(0.252508, abs=1e-6)
    assert log_harnack_bound(ou2, None, 1.0, [0.0], [1.0], "lemma") == pytest.approx(0.126254, abs=1e-6)


def test_log_harnack_needs_gamma(ou):
    from harnackmc.modulus import loglog_modulus
    with pytest.raises(ConfigurationError):
        log_harnack_bound(ou, loglog_modulus(), 1.0, [0.0], [1.0])


def test_log_harnack_monotone_in_distance(ou):
    m = log_modulus()
    vals = [log_harnack_bound(ou, m, 1.0, [0.0], [r]) for r in (0.01, 0.1, 0.5, 1.0, 3.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_minimize_over_K(ou):
    K, best = minimize_log_harnack_over_K(ou, None, 1.0, [0.0], [1.0])
    assert best <= log_harnack_bound(ou, None, 1.0, [0.0], [1.0]) + 1e-15
    # K / (1 - exp(-2 K T)) decreases to 1/(2T) as K -> 0
    assert best == pytest.approx(0.5, abs=1e-3)
    assert K == pytest.approx(1e-3)


def test_power_thresholds_and_exponents(sine):
    stated, proof = power_thresholds(1.0, 2.0)
    assert stated == pytest.approx(3 + 2 * math.sqrt(2), rel=1e-14)  # 5.8284
    assert proof == 9.0
    sq = math.sqrt(10.0)
    derived = sq * (sq - 1) / (2 * ((sq - 1) - 2) * -math.expm1(-2.0))
    assert power_harnack_bound(sine, None, 1.0, [0.0], [1.0], 10.0, "derived") == pytest.approx(derived, rel=1e-13)
    assert power_harnack_bound(sine, None, 1.0, [0.0], [1.0], 10.0, "stated") == pytest.approx(derived / 2, rel=1e-13)
    assert power_harnack_bound(sine, None, 1.0, [0.5], [0.5], 10.0) == 0.0


def test_power_q_below_threshold(sine):
    with pytest.raises(DomainError, match="5.82843.*9"):
        power_harnack_bound(sine, None, 1.0, [0.0], [1.0], 8.0)


def test_theta_for_q_gives_conjugate_moment():
    # at theta_q the moment exponent p equals 1/(q - 1), i.e. 1 + p = q/(q - 1)
    lam, delta, q = 1.3, 0.7, 20.0
    th = theta_for_q(lam, delta, q)
    p = lam ** 2 * th ** 2 / (4 * delta ** 2 + 4 * th * lam * delta)
    assert p == pytest.approx(1 / (q - 1), rel=1e-12)


def test_entropy_and_moment_examples(ou, sine):
    em = entropy_and_moment_bounds(ou, None, 1.0, [0.0], [1.0], 1.0)
    assert em.entropy == pytest.approx(LH, rel=1e-14)
    assert em.p is None and em.moment_rhs is None and "delta" in em.note
    sm = entropy_and_moment_bounds(sine, None, 1.0, [0.0], [1.0], 1.0)
    assert sm.p == pytest.approx(1 / 24, rel=1e-14)
    assert sm.moment_rhs == pytest.approx(math.exp(5 / (48 * XI0)), rel=1e-14)
    assert sm.moment_rhs == pytest.approx(1.27246, abs=2e-5)


def test_entropy_bound_smallest_at_theta_one(ou):
    vals = {th: entropy_and_moment_bounds(ou, None, 1.0, [0.0], [1.0], th).entropy for th in (0.5, 1.0, 1.5)}
    assert vals[1.0] < vals[0.5] and vals[0.5] == pytest.approx(vals[1.5])


def test_bound_set(sine):
    bs = bound_set(sine, None, 1.0, [0.0], [1.0], 1.0, qs=[10.0])
    assert bs.tighter_log_harnack == "stated"  # lambda = 1: equal, stated kept
    assert set(bs.power_exponents[10.0]) == {"stated", "derived"}
    d = bs.as_dict()
    assert "power_exponent" in d["variants_used"] and d["moment_p"] == pytest.approx(1 / 24)


def test_sfde_bound_examples(ou):
    spec = catalog_model("delay_ou", {"alpha": 0.5, "r0": 0.5})
    h = 2.0 ** -4
    phi, psi = SegmentPath.constant(0.0, 0.5, h), SegmentPath.constant(1.0, 0.5, h)
    same = sfde_log_harnack_bound(spec, None, 1.0, phi, phi)
    assert same.value == 0.0 and same.Phi == 0.0
    b = sfde_log_harnack_bound(spec, None, 1.0, phi, psi, "as-stated")
    A = 4 * (0.01 + 0 + 32 * 0.01)
    Phi = 2 * A
    assert b.Phi == pytest.approx(Phi, rel=1e-12)
    assert b.value == pytest.approx(2.0 + (8 * 0.01 ** 2 + 0.25) * Phi, rel=1e-12)
    assert not b.overflow and b.variant == "as-stated"
    # no functional drift: K4 (2 gamma phi / T + 8 T K1^2 Phi)
    sf = SfdeSpec.from_sde(ou, 0.5)
    b0 = sfde_log_harnack_bound(sf, None, 1.0, phi, psi)
    assert b0.value == pytest.approx(2.0 + 8 * 0.01 ** 2 * b0.Phi, rel=1e-12)


def test_sfde_bound_overflow_is_flagged():
    spec = catalog_model("delay_ou", {"alpha": 0.5, "r0": 0.5, "K": 10.0, "K1": 10.0})
    h = 2.0 ** -4
    b = sfde_log_harnack_bound(spec, None, 10.0, SegmentPath.constant(0.0, 0.5, h),
                               SegmentPath.constant(1.0, 0.5, h), "time-scaled")
    assert b.overflow and b.value == math.inf


def test_test_functions():
    z = np.array([[0.0], [1.0], [-100.0]])
    np.testing.assert_allclose(make_f("exp")(z), [1.0, math.e, math.exp(-50)])
    s = make_f("sigmoid")(z)
    assert np.all((s >= 1) & (s <= 2))
    assert make_f("bump").at_least_one and make_f("sigmoid").at_least_one
    with pytest.raises(ConfigurationError):
        make_f("nope")
    with pytest.raises(ConfigurationError):
        make_f("constant", value=0.0)


def test_estimate_semigroup_constant(ou):
    est = estimate_semigroup(ou, [0.0], 1.0, make_f("constant"), 100, StepPolicy(0.01, 0))
    assert est.mean == 1.0 and est.se == 0.0


def test_estimate_semigroup_log_target(ou):
    est = estimate_semigroup(ou, [1.0], 1.0, make_f("exp"), 20_000, StepPolicy(2.0 ** -8, 0), log=True)
    assert abs(est.mean - math.exp(-1)) <= 3 * est.se + 2.0 ** -8


def test_estimate_weighted_degenerate_start(ou):
    cfg = CouplingConfig(1.0, 1.0, [0.5], [0.5], 1.0)
    w = estimate_weighted(ou, cfg, make_f("exp"), 500, StepPolicy(2.0 ** -6, 0))
    assert w.coupled_fraction == 1.0
    assert w.entropy.mean == 0.0


def test_estimate_weighted_tracks_oracle(ou):
    cfg = CouplingConfig(1.0, 1.0, [0.0], [1.0], 1.0)
    w = estimate_weighted(ou, cfg, make_f("exp"), 20_000, StepPolicy(2.0 ** -8, 5), moment_powers=[2.0])
    assert abs(w.mean.mean - math.exp(math.exp(-1) + XI0 / 2)) <= 3 * w.mean.se + 0.02
    assert w.coupled_fraction >= 0.99
    assert 0 <= w.entropy.mean <= LH + 3 * w.entropy.se
    assert w.moments[2.0].mean >= 1.0 - 3 * w.moments[2.0].se


def test_log_harnack_sides_x_equal_y(ou):
    run = coupled_run(ou, CouplingConfig(1.0, 1.0, [0.5], [0.5], 1.0), 2000, StepPolicy(2.0 ** -6, 0))
    lhs, base, se = log_harnack_sides(run, make_f("exp"))
    # Jensen: E log f <= log E f
    assert lhs.mean <= base


# ---------------------------------------------------------------------------
# verdicts

META = {"model": "ou", "T": 1.0, "start_x": [0.0], "start_y": [1.0]}


def oracle_comparison():
    g = exact_log_harnack_gap(LinearModelParams(1.0, 1.0), 0.0, 1.0, 1.0, 1.0)
    return Comparison("log-harnack-oracle", g.lhs, g.rhs_baseline, 0.0, LH, "log_harnack_stated", META)


def test_verdict_oracle_margin():
    rep = verdict([oracle_comparison()], None, META)
    v = rep.verdicts[0]
    assert rep.passed and v.passed
    assert v.margin == pytest.approx(0.216166 + 0.505017 - 0.367879, abs=2e-6)
    assert v.margin >= 0.35


def test_verdict_negative_control():
    rep = verdict([oracle_comparison()], None, META, bound_scale=0.01)
    assert not rep.passed
    assert [v.name for v in rep.red_flags] == ["log-harnack-oracle"]


def test_verdict_equal_points_trivial():
    g = exact_log_harnack_gap(LinearModelParams(1.0, 1.0), 0.4, 0.4, 1.0, 1.0)
    rep = verdict([Comparison("eq", g.lhs, g.rhs_baseline, 0.0, 0.0, "zero")], None, META)
    assert rep.passed and rep.verdicts[0].margin >= 0


def test_verdict_uses_standard_errors():
    c = Comparison("noisy", 1.1, 1.0, 0.05, 0.0, "zero", META)
    assert verdict([c], None, META).passed
    assert not verdict([c], None, META, n_se=1.0).passed


def test_verdict_metadata_mismatch():
    c = Comparison("x", 0.0, 0.0, 0.0, 0.0, "zero", dict(META, T=2.0))
    with pytest.raises(ConfigurationError):
        verdict([c], None, META)


def test_report_unreliable_flag_fails():
    rep = verdict([oracle_comparison()], None, META, flags={"unreliable": True})
    assert not rep.passed and rep.red_flags == []
    assert rep.as_dict()["passed"] is False


def test_estimate_of():
    e = Estimate.of(np.array([1.0, 2.0, 3.0]))
    assert e.mean == 2.0 and e.se == pytest.approx(1 / math.sqrt(3)) and e.n == 3
