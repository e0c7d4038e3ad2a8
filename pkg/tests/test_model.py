from dataclasses import replace

import numpy as np
import pytest

from harnackmc.errors import ConfigurationError
from harnackmc.model import (CATALOG, SegmentPath, SegmentView, SfdeSpec, catalog_model, declared_checks,
                             grid_count, spot_check_A, spot_check_H1, spot_check_H2, spot_check_H3)


def test_catalog_ou():
    s = catalog_model("ou", {})
    x = np.array([[1.5], [-2.0]])
    np.testing.assert_array_equal(s.drift(0.0, x), -x)
    np.testing.assert_array_equal(s.diffusion(0.0, x), np.ones((2, 1, 1)))
    assert s.lam(1.0) == 1.0 and s.K(1.0) == 0.01


def test_catalog_sine_delta():
    s = catalog_model("sine_diffusion", {})
    assert s.delta(1.0) == 2.0 and s.lam(1.0) == 1.0


def test_catalog_delay_ou_constants():
    s = catalog_model("delay_ou", {"alpha": 0.5, "r0": 1.0, "sigma0": 1.0})
    assert isinstance(s, SfdeSpec)
    assert s.K2(1.0) == pytest.approx(0.25)
    assert s.K4(1.0) == pytest.approx(1.0)


def test_catalog_errors():
    with pytest.raises(ConfigurationError):
        catalog_model("nope", {})
    with pytest.raises(ConfigurationError):
        catalog_model("ou", {"bogus": 1})
    with pytest.raises(ConfigurationError):
        catalog_model("ou", {"kappa": -1})
    assert set(CATALOG) >= {"ou", "log_lipschitz_drift", "sine_diffusion", "delay_ou"}


def test_spot_check_ou_passes():
    s = catalog_model("ou", {"K": 0.01})
    for key, fn in declared_checks(s).items():
        assert fn(s, n_pairs=100_000, rng_seed=0).passed, key


def test_spot_check_log_lipschitz_reports_ratio():
    s = catalog_model("log_lipschitz_drift", {"K": 3.0})
    rep = spot_check_H1(s, n_pairs=100_000, box=(-2.0, 2.0), rng_seed=0)
    assert rep.passed
    assert 0.0 < rep.ratios["drift"] < 1.0
    assert rep.n_samples == 100_000


def test_spot_check_sine_diffusion_lipschitz_sigma():
    s = catalog_model("sine_diffusion", {"Ktilde": 1.0})
    rep = spot_check_H1(s, n_pairs=100_000, rng_seed=0)
    assert rep.ratios["diffusion"] <= 1.0
    assert spot_check_H2(s, n_pairs=20_000).passed
    assert spot_check_H3(s, n_pairs=20_000).passed


def test_spot_checks_find_violations():
    ou = catalog_model("ou", {"K": 0.01})
    expanding = replace(ou, drift=lambda t, x: 3.0 * x)
    rep = spot_check_H1(expanding, n_pairs=1000)
    assert not rep.passed and rep.max_ratio > 1
    assert "drift" in rep.witnesses
    sine = catalog_model("sine_diffusion", {}).with_constants(delta=0.5)
    assert not spot_check_H3(sine, n_pairs=10_000).passed
    assert not spot_check_H2(ou.with_constants(lam=2.0), n_pairs=1000).passed


def test_spot_check_A_delay_ou():
    s = catalog_model("delay_ou", {"alpha": 0.5, "r0": 0.5})
    rep = spot_check_A(s, n_pairs=5000)
    assert rep.passed, rep.ratios


def test_spot_checks_deterministic_in_seed():
    s = catalog_model("sine_diffusion", {})
    a = spot_check_H1(s, n_pairs=2000, rng_seed=7)
    b = spot_check_H1(s, n_pairs=2000, rng_seed=7)
    assert a.ratios == b.ratios


def test_segment_path_basics():
    seg = SegmentPath.constant(2.0, 1.0, 0.25)
    assert seg.m == 4 and seg.dim == 1
    np.testing.assert_allclose(seg.times, [-1.0, -0.75, -0.5, -0.25, 0.0])
    assert seg.sup_norm() == 2.0
    f = SegmentPath.from_function(lambda s: s, 1.0, 0.5)
    np.testing.assert_allclose(f.values[:, 0], [-1.0, -0.5, 0.0])
    assert (seg - SegmentPath.constant(1.0, 1.0, 0.25)).sup_norm() == 1.0


def test_segment_errors():
    with pytest.raises(ConfigurationError):
        grid_count(1.0, 0.3)
    with pytest.raises(ConfigurationError):
        SegmentPath(0.1, np.zeros(1))
    with pytest.raises(ConfigurationError):
        SegmentPath.constant(0.0, 1.0, 0.25) - SegmentPath.constant(0.0, 1.0, 0.5)


def test_segment_view_interpolates():
    times = np.array([-1.0, -0.5, 0.0, 0.5])
    vals = np.array([[[0.0], [1.0], [2.0], [3.0]]])
    view = SegmentView(times, vals, 0.5, 1.0, upto=4)
    np.testing.assert_allclose(view.current, [[3.0]])
    np.testing.assert_allclose(view.at(-1.0), [[1.0]])
    np.testing.assert_allclose(view.at(-0.25), [[2.5]])
