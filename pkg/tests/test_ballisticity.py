import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.ballisticity import (GammaFit, Param, PBoxSpec, SlabSpec, atypical_exit_bound,
                               atypical_quenched_exit, box_domain, c3_threshold, check_P_M,
                               cone_directions, dL_exit_estimate, decomposition_diagnostic,
                               decomposition_parameters, dl_geometry, dl_reference,
                               effective_criterion, fit_T_gamma, orthonormal_frame,
                               slab_exit_probability, slab_report, unit_direction)
from rwre.env_model import Homogeneous
from rwre.errors import ConfigError, DomainError, InsufficientDataError, ResourceError


def ruin_back(p, L, b=1):
    """Probability that a homogeneous walk from 0 reaches -bL before L."""
    rho = (1 - p) / p
    if rho == 1:
        return L / ((1 + b) * L)
    top = rho ** (b * L) - rho ** ((1 + b) * L)
    return top / (1 - rho ** ((1 + b) * L))


# geometry


def test_orthonormal_frame_is_orthonormal_with_first_row_l():
    for l in [(1.0, 0.0), (1.0, 1.0), (2.0, -1.0, 0.5)]:
        f = orthonormal_frame(l)
        np.testing.assert_allclose(f @ f.T, np.eye(len(l)), atol=1e-12)
        np.testing.assert_allclose(f[0], unit_direction(l), atol=1e-15)


def test_unit_direction_rejects_zero_and_wrong_size():
    with pytest.raises(ConfigError):
        unit_direction((0.0, 0.0))
    with pytest.raises(ConfigError):
        unit_direction((1.0, 0.0), dim=3)


def test_cone_directions_count_and_angle():
    c = cone_directions((1.0, 0.0, 0.0), 0.2)
    assert c.shape == (5, 3)
    np.testing.assert_allclose(np.linalg.norm(c, axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(c[1:] @ c[0], math.cos(0.2), atol=1e-14)


def test_box_domain_cell_cap():
    with pytest.raises(ResourceError):
        box_domain((1.0, 0.0), 5, 5, 1000, cap=1000)


# slab exits


def test_slab_exact_matches_ruin_formula():
    law = Homogeneous.one_dim(0.75)
    res = slab_exit_probability(law, SlabSpec((1.0,), 1.0, 10.0), "exact_env_mc")
    assert res.estimate.value == pytest.approx(ruin_back(0.75, 10), abs=1e-10)
    assert res.estimate.replicas == 1


@given(st.floats(0.55, 0.95), st.integers(2, 12), st.integers(1, 3))
def test_slab_exact_ruin_property(p, L, b):
    res = slab_exit_probability(Homogeneous.one_dim(p), SlabSpec((1.0,), float(b), float(L)),
                                "exact_env_mc")
    assert res.estimate.value == pytest.approx(ruin_back(p, L, b), abs=1e-10)


def test_slab_walk_symmetric_is_half():
    law = Homogeneous.one_dim(0.5)
    res = slab_exit_probability(law, SlabSpec((1.0,), 1.0, 5.0), "walk_mc", replicas=4000,
                                master_seed=3)
    e = res.estimate
    assert e.censored_fraction == 0
    assert e.lower <= 0.5 <= e.upper
    assert abs(e.value - 0.5) < 0.03


def test_slab_walk_agrees_with_exact_for_biased_line():
    law = Homogeneous.one_dim(0.6)
    res = slab_exit_probability(law, SlabSpec((1.0,), 1.0, 4.0), "walk_mc", replicas=4000,
                                master_seed=5)
    assert res.estimate.lower - 0.01 <= ruin_back(0.6, 4) <= res.estimate.upper + 0.01


def test_slab_exact_two_dim_reports_lateral_trace(drift_2d):
    res = slab_exit_probability(drift_2d, SlabSpec((1.0, 0.0), 1.0, 3.0), "exact_env_mc",
                                replicas=4, max_doublings=2)
    assert res.lateral_bound is not None
    assert len(res.lateral_trace) >= 2
    assert res.lateral_delta is not None and res.lateral_delta >= 0
    assert 0.0 <= res.estimate.value <= 1.0


def test_slab_unknown_method():
    with pytest.raises(ConfigError):
        slab_exit_probability(Homogeneous.one_dim(0.6), SlabSpec((1.0,), 1, 3), "nope")


# decay fit


def test_fit_T_gamma_recovers_exponent():
    # p(L) = exp(-0.3 L^0.7) exactly
    pts = [(L, math.exp(-0.3 * L ** 0.7)) for L in (5, 10, 20, 40)]
    g = fit_T_gamma(pts)
    assert isinstance(g, GammaFit)
    assert g.gamma_hat == pytest.approx(0.7, abs=1e-10)
    assert not g.rejected


def test_fit_T_gamma_on_exact_biased_slab_is_one():
    rep = slab_report(Homogeneous.one_dim(0.75), (1.0,), 1.0, (5, 10, 20, 40))
    assert rep.holds
    assert abs(rep.fit["gamma_hat"] - 1.0) <= 0.1


def test_fit_T_gamma_rejects_flat_profile():
    g = fit_T_gamma([(L, 0.5) for L in (5, 10, 20, 40)])
    assert g.rejected and g.reason == "no decay in L"


def test_fit_T_gamma_excludes_floor_points():
    pts = [(5, 0.1), (10, 0.01), (20, 1e-4), (40, 1e-8), (80, 0.0)]
    g = fit_T_gamma(pts)
    assert g.excluded_L == (80.0,)
    with pytest.raises(InsufficientDataError):
        fit_T_gamma([(5, 0.1), (10, 0.0), (20, 0.0), (40, 0.0)])


# (P)_M


def test_pbox_spec_geometry():
    s = PBoxSpec(30, (1.0, 0.0))
    assert s.N_minus1 == 20.0
    assert s.tilde_lateral == 27000.0
    assert s.box_lateral == 25 * 27000.0
    r = PBoxSpec(30, (1.0, 0.0), reduced_lateral=5)
    assert (r.tilde_lateral, r.box_lateral) == (5.0, 125.0)
    with pytest.raises(ConfigError):
        PBoxSpec(7, (1.0,))


def test_c3_threshold_is_huge():
    assert c3_threshold(2, 0.15) > 1e40


def test_P_M_needs_override_for_full_box(drift_2d):
    with pytest.raises(ResourceError):
        check_P_M(drift_2d, 30, 1.0)


def test_P_M_drift_holds_and_symmetric_fails(drift_2d):
    rep = check_P_M(drift_2d, 10, 1.0, env_budget=4, start_sample=10, reduced_lateral=3)
    sym = check_P_M(Homogeneous.symmetric(2), 10, 1.0, start_sample=10, reduced_lateral=3)
    assert rep.holds is True
    assert sym.holds is False
    names = {p.name for p in rep.provenance}
    assert {"N0", "start_sample", "lateral"} <= names
    assert "N0" in rep.overridden and "lateral" in rep.overridden
    assert "overridden" in rep.verdict


def test_param_rejects_unknown_source():
    with pytest.raises(ConfigError):
        Param("x", 1.0, "guess")


# effective criterion and decomposition


def test_effective_criterion_biased_line_below_one():
    law = Homogeneous.one_dim(0.8)
    rep = effective_criterion(law, 10, 15, a_grid=(0.0, 0.5, 1.0))
    rows = {r["a"]: r for r in rep.rows}
    # a = 0 gives E[rho^0] = 1, so the value is the prefactor L
    assert rows[0.0]["E_rho_a"] == 1.0
    assert rows[0.0]["value"] == pytest.approx(10.0)
    assert rep.holds
    assert set(rep.overridden) == {"c1", "c2"}


def test_effective_criterion_rho_matches_ruin_ratio():
    p, L = 0.7, 10
    law = Homogeneous.one_dim(p)
    rep = effective_criterion(law, L, 15, a_grid=(1.0,))
    # one-dimensional box (-(L-2), L+2): exits at -(L-2) and L+2
    back = ruin_back(p, L + 2, (L - 2) / (L + 2))
    assert rep.rows[0]["E_rho_a"] == pytest.approx(back / (1 - back), rel=1e-8)


def test_effective_criterion_requires_L_above_c1():
    with pytest.raises(DomainError):
        effective_criterion(Homogeneous.one_dim(0.8), 10, 15, c1_override=20)


def test_decomposition_parameters_shape():
    par = decomposition_parameters(16, 2, 0.1)
    assert len(par["beta"]) == par["n"]
    assert all(a > b for a, b in zip(par["thresholds"], par["thresholds"][1:]))
    with pytest.raises(DomainError):
        decomposition_parameters(10, 2, 0.1)


def test_decomposition_partitions_the_expectation(drift_2d):
    rep = decomposition_diagnostic(drift_2d, 16, env_budget=6, L_tilde=6)
    assert abs(rep.residual) <= 1e-12 * max(1.0, rep.expectation)
    assert sum(rep.counts) == 6
    assert rep.E_n_zero_on_elliptic
    assert rep.min_front_probability >= rep.front_floor
    assert any(p.name == "L_tilde" and p.source == "override" for p in rep.provenance)


def test_atypical_exit_rows(drift_2d):
    rows = atypical_quenched_exit(drift_2d, 16, (0.3, 0.6), env_budget=6, L_tilde=6)
    assert [r.beta for r in rows] == [0.3, 0.6]
    assert rows[0].threshold > rows[1].threshold
    for r in rows:
        assert 0.0 <= r.estimate.value <= 1.0
        assert r.bound == atypical_exit_bound(16, r.beta, 2)


def test_atypical_exit_bound_decreases_in_L():
    assert atypical_exit_bound(1e6, 0.9, 2) < atypical_exit_bound(1e3, 0.9, 2)


# D_L


def test_dl_geometry_and_reference():
    g = dl_geometry(20)
    assert g["front"] == 200 and g["back"] == 20
    assert g["lateral"] == pytest.approx(20 ** 3 * math.log(math.log(20)) / math.log(20))
    assert 0 < dl_reference(40) < dl_reference(20) < 1
    with pytest.raises(DomainError):
        dl_geometry(10)


def test_dl_exit_for_biased_line_is_rare():
    res = dL_exit_estimate(Homogeneous.one_dim(0.8), 20, budget=300, master_seed=1)
    # back exit needs a deficit of 20 against drift 0.6; probability (1/4)^20
    assert res.estimate.value == 0.0
    assert res.below_reference
    assert res.horizon == 2200 * 20
