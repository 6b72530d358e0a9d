import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.env_model import BalancedIID, DirichletIID, DiscreteLaw, Environment, Homogeneous
from rwre.errors import ConfigError, ContractError
from rwre.keyed_rng import derive_seed, derive_seeds, stream_uniform
from rwre.walk_sim import (BelowStart, DirectionalLevel, EnterSet, KernelWindow,
                           RULE_HORIZON, StoppingSpec, Trigger, Walker, WalkState,
                           apply_R, cesaro_mean, constant_functional, estimate_no_backtrack,
                           first_hit_D, kernel_entry, positions_at, replica_seeds, run_many,
                           run_until, simulate_path, step)


def _path(law, env_seed, walk_seed, n, hold=0.0):
    kind, params, table = law.packed()
    return simulate_path(kind, params, table, law.dim, np.uint64(env_seed), np.uint64(walk_seed),
                         hold, np.zeros(law.dim, dtype=np.int64), n)


def test_seed_derivation_is_deterministic_and_distinct():
    a = derive_seeds(5, 1, 2, 100)
    assert np.array_equal(a, derive_seeds(5, 1, 2, 100))
    assert np.unique(a).size == 100
    assert int(a[3]) == derive_seed(5, 1, 2, 3)
    assert not np.array_equal(a, derive_seeds(5, 1, 3, 100))
    u = np.array([stream_uniform(np.uint64(9), t) for t in range(20000)])
    assert 0 < u.min() and u.max() < 1
    assert u.mean() == pytest.approx(0.5, abs=0.01)


def test_path_is_reproducible():
    law = DirichletIID(2, (1, 1, 1, 1))
    assert np.array_equal(_path(law, 1, 2, 500), _path(law, 1, 2, 500))
    assert not np.array_equal(_path(law, 1, 2, 500), _path(law, 1, 3, 500))


def test_step_agrees_with_batch_simulation():
    law = DirichletIID(2, (1, 2, 1, 1))
    env = Environment(law, 17)
    path = _path(law, env.seed_u64, 99, 50)
    s = WalkState((0, 0))
    for t in range(50):
        s = step(env, s, 99)
        assert s.position == tuple(path[t + 1])


@given(st.integers(0, 2 ** 40), st.integers(0, 2 ** 40), st.integers(1, 300),
       st.sampled_from([1, 2, 3]))
def test_parity_and_reachability(env_seed, walk_seed, n, dim):
    law = DirichletIID(dim, tuple([1.0] * (2 * dim)))
    path = _path(law, env_seed, walk_seed, n)
    steps = np.abs(np.diff(path, axis=0)).sum(axis=1)
    assert (steps == 1).all()
    l1 = np.abs(path[-1]).sum()
    assert l1 <= n and (l1 - n) % 2 == 0


def test_holding_walk_holds_at_the_right_rate():
    law = Homogeneous.symmetric(2)
    path = _path(law, 0, 5, 40_000, hold=0.3)
    held = np.all(np.diff(path, axis=0) == 0, axis=1)
    assert held.mean() == pytest.approx(0.3, abs=0.01)


def test_positions_at_checkpoints_match_paths():
    law = DiscreteLaw.two_point(0.3, 0.9)
    es, ws = replica_seeds(1, 2, 5)
    kind, params, table = law.packed()
    pos = positions_at(kind, params, table, 1, es, ws, 0.0, np.zeros(1, dtype=np.int64),
                       np.array([10, 100], dtype=np.int64))
    for r in range(5):
        p = _path(law, es[r], ws[r], 100)
        assert pos[r, 0, 0] == p[10, 0] and pos[r, 1, 0] == p[100, 0]


def test_gamblers_ruin_by_simulation():
    # p = 3/4, leave (-3, 3): P[exit right] = (1 - rho^3) / (1 - rho^6), rho = 1/3
    law = Homogeneous.one_dim(0.75)
    R = 4000
    es, ws = replica_seeds(3, 4, R)
    spec = StoppingSpec(10_000, levels=(DirectionalLevel((1,), 2), DirectionalLevel((-1,), 2)))
    b = run_many(Walker(Environment(law, 0)), es, ws, np.zeros(1, dtype=np.int64), spec)
    p = np.mean(b.codes == 1)
    exact = (1 - 3.0 ** -3) / (1 - 3.0 ** -6)
    assert abs(p - exact) <= 4 * np.sqrt(exact * (1 - exact) / R)
    assert (b.codes != RULE_HORIZON).all()


def test_run_until_triggers():
    env = Environment(Homogeneous.one_dim(0.5), 0)
    out = run_until(env, (0,), StoppingSpec(10_000, below_start=BelowStart((1,))), 4)
    assert out.triggered is Trigger.BELOW_START and out.final_state.position == (-1,)
    out = run_until(env, (0,), StoppingSpec(10_000, enter_set=EnterSet(((5,),))), 4)
    assert out.triggered in (Trigger.ENTER_SET, Trigger.HORIZON_CENSORED)
    if out.triggered is Trigger.ENTER_SET:
        assert out.final_state.position == (5,)
    out = run_until(env, (0,), StoppingSpec(0), 4)
    assert out.triggered is Trigger.HORIZON_CENSORED and out.final_state.time == 0


def test_first_hit_D_for_leftward_walk():
    env = Environment(Homogeneous.one_dim(0.1), 0)
    hit = first_hit_D(env, (0,), (1,), 1000, 7)
    assert hit.time is not None and not hit.censored_alive


def test_no_backtrack_probability_for_biased_walk():
    # P[never below the start] = (2p - 1)/p = 2/3 for p = 3/4
    e = estimate_no_backtrack(Homogeneous.one_dim(0.75), (1,), 20_000, 2000, 0)
    assert e.lower - 0.01 <= 2 / 3 <= e.upper + 0.01
    assert e.width < 0.06


def test_walker_validation():
    env = Environment(Homogeneous.one_dim(0.5), 0)
    with pytest.raises(ConfigError):
        Walker(env, 1.0)
    assert Walker.holding(env).hold == 0.5
    with pytest.raises(ConfigError):
        Walker.holding(Environment(DirichletIID(1, (1, 1)), 0))


def test_kernel_window_and_R_operator():
    law = DirichletIID(2, (1, 1, 1, 1))
    env = Environment(law, 3)
    w = KernelWindow.from_env(env, (0, 0), 2)
    assert np.array_equal(w.kernel((1, -1)), env.kernels_at(np.array([[1, -1]]))[0])
    with pytest.raises(ContractError):
        w.kernel((3, 0))
    # R applied to a constant is the constant
    assert apply_R(w, constant_functional(2.5)) == pytest.approx(2.5)
    g = kernel_entry(0)
    expected = sum(env.kernels_at(np.array([[0, 0]]))[0][i]
                   * env.kernels_at(np.array([m]))[0][0]
                   for i, m in enumerate([[1, 0], [-1, 0], [0, 1], [0, -1]]))
    assert apply_R(w, g) == pytest.approx(expected, rel=1e-14)


def test_cesaro_mean_of_constant_and_homogeneous_entry():
    e = cesaro_mean(BalancedIID(2), constant_functional(1.0), 50, 10, 0)
    assert e.value == pytest.approx(1.0)
    e = cesaro_mean(Homogeneous.one_dim(0.7), kernel_entry(0), 50, 10, 0)
    assert e.value == pytest.approx(0.7)
