import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.env_model import (AnisotropicProduct, BalancedIID, DirichletIID, DiscreteLaw,
                            Environment, Homogeneous, JumpSet, NestlingClass, TrapLaw,
                            TransitionKernel, check_E_beta, combinatorial_quantity,
                            dirichlet_moment, ellipticity_report, jump_vectors, local_drift,
                            nestling_class, sample_kernels, trap_criterion, trap_support_bound)
from rwre.errors import ConfigError

LAWS = [
    Homogeneous.one_dim(0.75),
    DiscreteLaw.two_point(0.3, 0.9),
    DirichletIID(2, (1.0, 2.0, 0.5, 1.5)),
    BalancedIID(2, 0.1),
    BalancedIID(3, 0.05),
    TrapLaw(),
    TrapLaw(phi_min=0.05, phi_max=0.2),
    AnisotropicProduct(),
    DirichletIID(3, (1, 1, 1, 1, 1, 1)),
]


def test_jump_order():
    assert jump_vectors(2).tolist() == [[1, 0], [-1, 0], [0, 1], [0, -1]]
    js = JumpSet(3)
    assert js.index((0, 0, -1)) == 5
    assert js.opposite(4) == 5 and js.opposite(1) == 0


def test_dimension_bounds():
    with pytest.raises(ConfigError):
        JumpSet(4)
    with pytest.raises(ConfigError):
        JumpSet(0)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: type(l).__name__)
def test_kernels_are_probability_vectors(law):
    ks = sample_kernels(law, 2000, 7)
    assert ks.shape == (2000, 2 * law.dim)
    assert (ks >= 0).all()
    assert np.abs(ks.sum(axis=1) - 1).max() <= 1e-12


@pytest.mark.parametrize("law", LAWS, ids=lambda l: type(l).__name__)
def test_environment_is_a_function_of_the_site(law):
    env = Environment(law, 123)
    sites = np.random.default_rng(0).integers(-50, 50, size=(40, law.dim))
    a = env.kernels_at(sites)
    b = env.kernels_at(sites[::-1])[::-1]
    assert np.array_equal(a, b)
    c = Environment(law, 123).kernels_at(sites[:1])
    assert np.array_equal(a[:1], c)


def test_different_seeds_give_different_environments():
    law = DirichletIID(1, (1.0, 1.0))
    sites = np.arange(20).reshape(-1, 1)
    assert not np.array_equal(Environment(law, 1).kernels_at(sites),
                              Environment(law, 2).kernels_at(sites))


def test_dirichlet_mean_matches_parameters():
    alpha = np.array([1.0, 2.0, 0.5, 1.5])
    ks = sample_kernels(DirichletIID(2, tuple(alpha)), 200_000, 3)
    assert np.allclose(ks.mean(axis=0), alpha / alpha.sum(), atol=4e-3)


def test_dirichlet_rejects_non_positive_parameters():
    with pytest.raises(ConfigError):
        DirichletIID(1, (0.0, 1.0))
    with pytest.raises(ConfigError):
        DirichletIID(2, (1.0, 1.0))


def test_dirichlet_moment_against_numpy_sampler():
    alpha = np.array([2.0, 3.0, 2.5, 4.0])
    betas = np.array([0.3, 0.5, 0.2, 0.4])
    x = np.random.default_rng(11).dirichlet(alpha, 400_000)
    mc = np.mean(np.prod(x ** (-betas), axis=1))
    assert dirichlet_moment(alpha, betas) == pytest.approx(mc, rel=0.01)
    assert dirichlet_moment(alpha, [2.0, 0, 0, 0]) == math.inf


def test_combinatorial_quantity():
    # 2 * 1.4 - max(0.5+0.3, 0.2+0.4)
    assert combinatorial_quantity([0.5, 0.3, 0.2, 0.4], 2) == pytest.approx(2.0)


def test_check_E_beta_for_uniform_dirichlet():
    res = check_E_beta(DirichletIID(2, (1, 1, 1, 1)), [0.2] * 4, n_samples=40_000)
    assert res["combinatorial_margin"] > 0
    assert res["moment_estimate"].value == pytest.approx(
        dirichlet_moment([1, 1, 1, 1], [0.2] * 4), rel=0.05)


def test_balanced_law_has_zero_drift_and_weight_bounds():
    law = BalancedIID(2, 0.1)
    ks = sample_kernels(law, 5000, 0)
    assert np.array_equal(ks[:, 0], ks[:, 1]) and np.array_equal(ks[:, 2], ks[:, 3])
    assert ks.min() >= 0.1 - 1e-15 and ks.max() <= 0.4 + 1e-15
    assert np.abs(local_drift(ks, 2)).max() == 0.0


def test_trap_law_structure():
    ks = sample_kernels(TrapLaw(), 5000, 1)
    phi = ks[:, 1]
    assert np.allclose(ks[:, 0], 2 * phi)
    assert phi.max() <= 0.2
    vertical = np.sort(ks[:, 2:], axis=1)
    assert np.allclose(vertical[:, 0], phi) and np.allclose(vertical[:, 1], 1 - 4 * phi)
    # the large vertical weight points up or down with equal frequency
    assert np.mean(ks[:, 2] > ks[:, 3]) == pytest.approx(0.5, abs=0.03)


def test_trap_criterion_finite_when_bounded_below():
    law = TrapLaw(phi_min=0.05, phi_max=0.2)
    out = trap_criterion(law, 20_000, 0)
    bound = trap_support_bound(law)
    for e, row in out.items():
        assert not row["divergent"]
        assert row["estimate"].value <= bound + 1e-9


def test_anisotropic_default_ratio_moments():
    m = AnisotropicProduct().ratio_moments()
    assert m["E_ratio"] == pytest.approx(1.0, abs=1e-15)
    assert m["E_log_ratio"] < 0


@pytest.mark.parametrize("law,expected", [
    (DiscreteLaw(2, ((0.35, 0.15, 0.25, 0.25), (0.3, 0.2, 0.25, 0.25)), (0.5, 0.5)),
     NestlingClass.NON_NESTLING),
    (Homogeneous.symmetric(2), NestlingClass.MARGINALLY_NESTLING),
    (DiscreteLaw.two_point(0.3, 0.9), NestlingClass.PLAIN_NESTLING),
    (DirichletIID(2, (1, 1, 1, 1)), NestlingClass.PLAIN_NESTLING),
])
def test_nestling_classes(law, expected):
    assert nestling_class(law, 4000, 0)["class"] is expected


def test_ellipticity_report_for_uniform_dirichlet():
    rep = ellipticity_report(DirichletIID(1, (1.0, 1.0)), 50_000, alpha=0.5)
    # E[U^(-1/2)] = 2 for U uniform
    assert rep["inverse_moment"].value == pytest.approx(2.0, rel=0.03)
    assert rep["kappa_hat"] > 0


def test_transition_kernel_validation():
    with pytest.raises(ConfigError):
        TransitionKernel(np.array([0.6, 0.6]), JumpSet(1))
    k = TransitionKernel(np.array([0.7, 0.3]), JumpSet(1))
    assert k[(1,)] == 0.7
    assert k.drift().tolist() == pytest.approx([0.4])
    assert k.with_hold(0.5).probs.tolist() == pytest.approx([0.35, 0.15, 0.5])


@given(st.lists(st.floats(0.05, 5.0), min_size=4, max_size=4), st.integers(0, 2 ** 31))
def test_dirichlet_kernels_on_simplex(alpha, seed):
    ks = sample_kernels(DirichletIID(2, tuple(alpha)), 50, seed)
    assert (ks >= 0).all() and np.abs(ks.sum(axis=1) - 1).max() <= 1e-12


def test_trap_criterion_diverges_vertically_for_default_law():
    out = trap_criterion(TrapLaw(), 200_000, 0)
    assert out[2]["divergent"] and out[3]["divergent"]
    assert not out[0]["divergent"]
