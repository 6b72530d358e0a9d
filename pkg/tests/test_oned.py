import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from rwre.env_model import DirichletIID, DiscreteLaw, Environment, Homogeneous
from rwre.errors import DomainError
from rwre.oned import (Regime, check_B, check_invariance, classify, density_normalizer,
                       kks_exponent, mirror, potential, series_velocity, sinai_diagnostic,
                       solomon_velocity, summarize, velocity)
from rwre.walk_sim import kernel_entry


def test_summary_of_two_point_law():
    s = summarize(DiscreteLaw.two_point(0.8, 0.4))
    # rho in {1/4, 3/2}
    assert s.exact
    assert s.E_rho == pytest.approx(0.875, rel=1e-15)
    assert s.E_log_rho == pytest.approx(0.5 * (math.log(0.25) + math.log(1.5)), rel=1e-14)
    assert s.E_inv_rho == pytest.approx(0.5 * (4 + 2 / 3), rel=1e-14)


@pytest.mark.parametrize("law,regime", [
    (DiscreteLaw.two_point(0.3, 0.9), Regime.TRANSIENT_RIGHT),
    (DiscreteLaw.two_point(0.3, 0.7), Regime.RECURRENT_SINAI),
    (Homogeneous.one_dim(0.5), Regime.DEGENERATE_SIMPLE),
    (Homogeneous.one_dim(0.3), Regime.TRANSIENT_LEFT),
    (DirichletIID(1, (2.0, 2.0)), Regime.RECURRENT_SINAI),
    (DirichletIID(1, (3.0, 1.0)), Regime.TRANSIENT_RIGHT),
])
def test_classification(law, regime):
    assert classify(law, 100_000).regime is regime


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_mirror_flips_the_regime(p1, p2):
    law = DiscreteLaw.two_point(p1, p2)
    a, b = classify(law).regime, classify(mirror(law)).regime
    flip = {Regime.TRANSIENT_RIGHT: Regime.TRANSIENT_LEFT,
            Regime.TRANSIENT_LEFT: Regime.TRANSIENT_RIGHT}
    assert b is flip.get(a, a)


def test_solomon_velocity_values():
    assert solomon_velocity(DiscreteLaw.two_point(0.8, 0.4)) == pytest.approx(1 / 15, rel=1e-14)
    assert solomon_velocity(Homogeneous.one_dim(0.75)) == pytest.approx(0.5, rel=1e-14)
    assert solomon_velocity(Homogeneous.one_dim(0.25)) == pytest.approx(-0.5, rel=1e-14)
    # transient but E[rho] > 1: zero speed
    law = DiscreteLaw.two_point(0.3, 0.9)
    assert not check_B(law).B_plus
    assert solomon_velocity(law) == 0.0


def test_series_raw_and_normalized_values():
    law = DiscreteLaw.two_point(0.8, 0.4)
    sv = series_velocity(law, 60)
    assert sv.raw == pytest.approx(1 - 0.875 ** 60, rel=1e-12)
    assert sv.normalized == pytest.approx(1 / 15, rel=1e-12)
    assert sv.truncation_bound == pytest.approx(0.875 ** 60 / 0.125, rel=1e-12)
    with pytest.raises(DomainError):
        series_velocity(DiscreteLaw.two_point(0.3, 0.9))


def test_direct_velocity_homogeneous():
    e = velocity(Homogeneous.one_dim(0.75), "direct_mc", n=2000, replicas=200)
    assert e.contains(0.5) or abs(e.value - 0.5) < 3 * e.std_error


def test_kks_exponent_against_brentq():
    law = DiscreteLaw.two_point(1 / 3, 0.8)  # rho in {2, 1/4}
    r = kks_exponent(law)
    root = brentq(lambda k: 0.5 * (2.0 ** k + 0.25 ** k) - 1.0, 0.1, 5.0, xtol=1e-15)
    assert r.kks_kappa == pytest.approx(root, abs=1e-10)
    assert r.residual <= 1e-10
    assert r.sub_ballistic
    with pytest.raises(DomainError):
        kks_exponent(Homogeneous.one_dim(0.75))  # no rho > 1


def test_invariance_identity_small_budget():
    chk = check_invariance(DiscreteLaw.two_point(0.8, 0.4), kernel_entry(0), 60, 40_000)
    assert chk.consistent


def test_density_normalizer_closed_form():
    e = density_normalizer(DiscreteLaw.two_point(0.8, 0.4), 60)
    assert e.value == pytest.approx(1.875 * (1 - 0.875 ** 60) / 0.125, rel=1e-12)


def test_potential_is_harmonic():
    env = Environment(DiscreteLaw.two_point(0.3, 0.7), 5)
    t = potential(env, -30, 30)
    assert t.harmonicity_residual() < 1e-12
    assert t.martingale_residual() < 1e-12
    assert t.value(0) == 0.0
    assert np.all(np.diff(t.values) < 0)


def test_sinai_diagnostic_shapes():
    t = sinai_diagnostic(DiscreteLaw.two_point(0.3, 0.7), [1, 100, 1000], replicas=100)
    assert [r.n for r in t.rows] == [1, 100, 1000]
    assert math.isnan(t.rows[0].normalized)
    assert t.ratio >= 1.0
