import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.env_model import (BalancedIID, DirichletIID, Environment, Homogeneous, TrapLaw,
                            jump_vectors)
from rwre.errors import ConfigError, ResourceError
from rwre.exact_quenched import (FiniteDomain, QuenchedField, absorbing_dp, check_cell_cap,
                                 edge_trap, exit_probabilities, exit_probability,
                                 expected_exit_time, nstep_mass_trace, nstep_probabilities,
                                 rho_B, torus_invariant_measure)


def ruin(p: float, a: int, b: int, x: int) -> float:
    """Probability that the p-walk started at x hits b before a."""
    if p == 0.5:
        return (x - a) / (b - a)
    r = (1 - p) / p
    return (1 - r ** (x - a)) / (1 - r ** (b - a))


def test_interval_exit_matches_gamblers_ruin():
    dom = FiniteDomain.interval(-2, 2)
    field = QuenchedField.from_env(dom, Environment(Homogeneous.one_dim(0.75), 0))
    p, rep = exit_probability(field, "right", (0,))
    assert p == pytest.approx(0.9, abs=1e-12)
    assert rep.residual_inf_norm < 1e-12


@given(st.floats(0.05, 0.95), st.integers(1, 15), st.integers(1, 15))
def test_interval_exit_property(p, left, right):
    dom = FiniteDomain.interval(-left, right)
    field = QuenchedField.from_env(dom, Environment(Homogeneous.one_dim(p), 0))
    vals = exit_probabilities(field, "right").values
    for x in range(-left + 1, right):
        assert vals[dom.index_of((x,))] == pytest.approx(ruin(p, -left, right, x), abs=1e-10)


def test_exit_probabilities_partition_unity():
    law = DirichletIID(2, (1, 1, 1, 1))
    dom = FiniteDomain.slab((1.0, 0.0), 4, 6, lateral=5)
    dom.validate()
    field = QuenchedField.from_env(dom, Environment(law, 5))
    total = sum(exit_probabilities(field, piece).values for piece in dom.pieces)
    assert np.abs(total - 1).max() < 1e-10


def test_random_environment_exit_matches_product_formula():
    # one-dimensional quenched ruin: P_0[hit b before a] = sum_{a<=j<0} Pi_j / sum_{a<=j<b} Pi_j
    law = DirichletIID(1, (2.0, 1.0))
    env = Environment(law, 11)
    a, b = -6, 7
    dom = FiniteDomain.interval(a, b)
    field = QuenchedField.from_env(dom, env)
    ks = env.kernels_at(np.arange(a + 1, b).reshape(-1, 1))
    rho = ks[:, 1] / ks[:, 0]
    prods = np.concatenate([[1.0], np.cumprod(rho)])  # products over sites a+1..
    closed = prods[: 0 - a].sum() / prods.sum()
    p, _ = exit_probability(field, "right", (0,))
    assert p == pytest.approx(closed, rel=1e-10)


def test_expected_exit_time_symmetric():
    dom = FiniteDomain.interval(-5, 5)
    field = QuenchedField.from_env(dom, Environment(Homogeneous.one_dim(0.5), 0))
    t, _ = expected_exit_time(field, (0,))
    assert t == pytest.approx(25.0, rel=1e-10)


def test_rho_B_ratio():
    dom = FiniteDomain.interval(-3, 3)
    field = QuenchedField.from_env(dom, Environment(Homogeneous.one_dim(0.6), 0))
    r = rho_B(field, front="right")
    pr = ruin(0.6, -3, 3, 0)
    assert r.value == pytest.approx((1 - pr) / pr, rel=1e-10)


def test_absorbing_dp_agrees_with_linear_solve():
    dom = FiniteDomain.interval(-4, 4)
    field = QuenchedField.from_env(dom, Environment(DirichletIID(1, (1, 1)), 3))
    res = absorbing_dp(field, (0,))
    p, _ = exit_probability(field, "right", (0,))
    assert res.absorbed["right"] == pytest.approx(p, abs=1e-12)
    assert np.all(np.diff(res.survival) <= 1e-15)


def test_edge_trap_identity():
    env = Environment(TrapLaw(), 4)
    for move in range(4):
        et = edge_trap(env, (0, 0), move, 20)
        assert et.max_survival_error() <= 1e-12
        assert et.max_partial_sum_error() <= 1e-12


def test_nstep_probabilities_binomial():
    env = Environment(Homogeneous.one_dim(0.7), 0)
    ns = nstep_probabilities(env, (0,), 10)
    k = np.arange(11)
    binom = np.array([math.comb(10, j) for j in k]) * 0.7 ** k * 0.3 ** (10 - k)
    for j in k:
        assert ns.prob((2 * j - 10,)) == pytest.approx(binom[j], rel=1e-12)
    assert ns.prob((1,)) == 0.0
    assert ns.total_mass() == pytest.approx(1.0, abs=1e-13)


@given(st.integers(0, 2 ** 32), st.integers(1, 25), st.floats(0.0, 0.6))
def test_nstep_log_and_plain_agree(seed, n, hold):
    env = Environment(DirichletIID(2, (1, 1, 1, 1)), seed)
    a = nstep_probabilities(env, (0, 0), n, hold)
    b = nstep_probabilities(env, (0, 0), n, hold, log_domain=False)
    assert np.allclose(a.probs, b.probs, rtol=1e-10, atol=1e-300)
    assert abs(nstep_mass_trace(env, (0, 0), n, hold)[-1] - 1.0) < 1e-12


def test_cell_cap():
    with pytest.raises(ResourceError, match="largest feasible n"):
        check_cell_cap(10_000, 2)
    check_cell_cap(100, 2)


def test_torus_measure_of_balanced_field():
    env = Environment(BalancedIID(2, 0.1), 1)
    tm = torus_invariant_measure(env, 5)
    assert tm.report.residual_inf_norm <= 1e-10
    assert tm.normalization_error <= 1e-8
    assert tm.phi.min() > 0
    with pytest.raises(ConfigError):
        torus_invariant_measure(Environment(DirichletIID(2, (1, 1, 1, 1)), 0), 3)


def test_domain_codes():
    dom = FiniteDomain.interval(0, 3)
    assert dom.size == 2
    assert dom.code(np.array([[0], [1], [2], [3], [9]])).tolist() == [-2, 0, 1, -3, -1]
    assert jump_vectors(1).tolist() == [[1], [-1]]
