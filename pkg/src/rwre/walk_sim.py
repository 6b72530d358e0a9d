"""Quenched walk simulation.

The uniform that drives the step taken at time ``t`` is
``stream_uniform(walk_seed, t)``, so a walk is a pure function of
``(environment seed, walk seed)``.  A step first decides whether to hold
(probability ``hold``) and otherwise inverts the cumulative kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numba as nb
import numpy as np

from .env_model import Environment, EnvironmentLaw, jump_vectors, site_kernel
from .errors import ConfigError, ContractError
from .keyed_rng import TAG_ENV, TAG_WALK, as_u64, derive_seeds, stream_uniform
from .stats import EstimateWithCI, censored_band, mean_ci

RULE_HORIZON = 0
RULE_BELOW_START = -1
RULE_ENTER_SET = -2


# ---------------------------------------------------------------------------
# numba cores


@nb.njit(cache=True, _nrt=False)
def _choose(kernel, k, u):
    acc = 0.0
    for i in range(k - 1):
        acc += kernel[i]
        if u < acc:
            return i
    return k - 1


@nb.njit(cache=True, _nrt=False)
def _advance(kind, params, table, dim, env_seed, walk_seed, hold, t, pos, buf):
    """Advance ``pos`` in place by one step; returns the move index or -1 for a hold."""
    u = stream_uniform(walk_seed, t)
    if hold > 0.0:
        if u < hold:
            return -1
        u = (u - hold) / (1.0 - hold)
    x = pos[0]
    y = pos[1] if dim > 1 else 0
    z = pos[2] if dim > 2 else 0
    site_kernel(kind, params, table, dim, env_seed, x, y, z, buf)
    m = _choose(buf, 2 * dim, u)
    axis = m // 2
    if m % 2 == 0:
        pos[axis] += 1
    else:
        pos[axis] -= 1
    return m


@nb.njit(cache=True, _nrt=False)
def _dot(pos, l, dim):
    s = 0.0
    for j in range(dim):
        s += pos[j] * l[j]
    return s


@nb.njit(cache=True, _nrt=False)
def _in_set(pos, dim, origin, shape, mask_flat):
    idx = 0
    for j in range(dim):
        c = pos[j] - origin[j]
        if c < 0 or c >= shape[j]:
            return False
        idx = idx * shape[j] + c
    return mask_flat[idx]


@nb.njit(cache=True)
def run_batch(kind, params, table, dim, env_seeds, walk_seeds, hold, start,
              level_dirs, level_vals, below_dir, use_below, set_origin, set_shape,
              set_mask, use_set, track_dir, horizon):
    """Run one walk per (env seed, walk seed) pair until the first rule fires.

    Rule codes: ``i+1`` for level rule ``i`` (``X_n . l_i > u_i``, ``n >= 1``),
    -1 for dropping below the start level, -2 for entering the set, 0 for
    horizon censoring.
    """
    r = env_seeds.shape[0]
    codes = np.zeros(r, dtype=np.int64)
    times = np.zeros(r, dtype=np.int64)
    finals = np.zeros((r, dim), dtype=np.int64)
    maxh = np.zeros(r)
    minh = np.zeros(r)
    buf = np.empty(2 * dim)
    pos = np.empty(dim, dtype=np.int64)
    nrules = level_vals.shape[0]
    for i in range(r):
        for j in range(dim):
            pos[j] = start[j]
        h0 = _dot(pos, track_dir, dim)
        hmax = h0
        hmin = h0
        b0 = _dot(pos, below_dir, dim)
        code = 0
        t = 0
        if use_set and _in_set(pos, dim, set_origin, set_shape, set_mask):
            code = -2
        while code == 0 and t < horizon:
            _advance(kind, params, table, dim, env_seeds[i], walk_seeds[i], hold, t, pos, buf)
            t += 1
            h = _dot(pos, track_dir, dim)
            if h > hmax:
                hmax = h
            if h < hmin:
                hmin = h
            for q in range(nrules):
                if _dot(pos, level_dirs[q], dim) > level_vals[q]:
                    code = q + 1
                    break
            if code != 0:
                break
            if use_below and _dot(pos, below_dir, dim) < b0:
                code = -1
                break
            if use_set and _in_set(pos, dim, set_origin, set_shape, set_mask):
                code = -2
                break
        codes[i] = code
        times[i] = t
        for j in range(dim):
            finals[i, j] = pos[j]
        maxh[i] = hmax
        minh[i] = hmin
    return codes, times, finals, maxh, minh


@nb.njit(cache=True)
def positions_at(kind, params, table, dim, env_seeds, walk_seeds, hold, start, checkpoints):
    """Positions at the (sorted) checkpoint times for every replica."""
    r = env_seeds.shape[0]
    c = checkpoints.shape[0]
    out = np.zeros((r, c, dim), dtype=np.int64)
    buf = np.empty(2 * dim)
    pos = np.empty(dim, dtype=np.int64)
    for i in range(r):
        for j in range(dim):
            pos[j] = start[j]
        t = 0
        for q in range(c):
            while t < checkpoints[q]:
                _advance(kind, params, table, dim, env_seeds[i], walk_seeds[i], hold, t, pos, buf)
                t += 1
            for j in range(dim):
                out[i, q, j] = pos[j]
    return out


@nb.njit(cache=True)
def simulate_path(kind, params, table, dim, env_seed, walk_seed, hold, start, n):
    out = np.empty((n + 1, dim), dtype=np.int64)
    buf = np.empty(2 * dim)
    pos = np.empty(dim, dtype=np.int64)
    for j in range(dim):
        pos[j] = start[j]
        out[0, j] = start[j]
    for t in range(n):
        _advance(kind, params, table, dim, env_seed, walk_seed, hold, t, pos, buf)
        for j in range(dim):
            out[t + 1, j] = pos[j]
    return out


@nb.njit(cache=True)
def simulate_heights(kind, params, table, dim, env_seed, walk_seed, hold, start, n, ldir):
    """Heights ``X_t . l`` for an integer direction ``l`` (exact int64)."""
    out = np.empty(n + 1, dtype=np.int64)
    buf = np.empty(2 * dim)
    pos = np.empty(dim, dtype=np.int64)
    h = 0
    for j in range(dim):
        pos[j] = start[j]
        h += start[j] * ldir[j]
    out[0] = h
    for t in range(n):
        m = _advance(kind, params, table, dim, env_seed, walk_seed, hold, t, pos, buf)
        if m >= 0:
            if m % 2 == 0:
                h += ldir[m // 2]
            else:
                h -= ldir[m // 2]
        out[t + 1] = h
    return out


# ---------------------------------------------------------------------------
# Python API


@dataclass(frozen=True)
class WalkState:
    position: tuple
    time: int = 0

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("time must be non-negative")
        object.__setattr__(self, "position", tuple(int(v) for v in self.position))


@dataclass(frozen=True)
class Walker:
    """An environment together with a hold probability.

    ``hold = 0`` gives the nearest-neighbour walk; ``hold > 0`` the
    holding-time walk whose kernel is ``(1-hold) * omega + hold * delta_0``.
    """

    env: Environment
    hold: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.hold < 1.0:
            raise ConfigError("hold probability must lie in [0, 1)")

    @classmethod
    def holding(cls, env: Environment, hold: float | None = None) -> "Walker":
        if hold is None:
            hold = env.law.declared_kappa
            if hold is None:
                raise ConfigError("law has no ellipticity constant; give the hold probability")
        return cls(env, float(hold))

    @property
    def dim(self):
        return self.env.dim


def step(walker: Walker | Environment, state: WalkState, stream: int) -> WalkState:
    """One quenched step driven by the uniform number ``state.time`` of the
    walk stream ``stream``."""
    if isinstance(walker, Environment):
        walker = Walker(walker)
    env = walker.env
    kind, params, table = env.packed
    pos = np.array(state.position, dtype=np.int64)
    buf = np.empty(2 * env.dim)
    _advance(kind, params, table, env.dim, env.seed_u64, as_u64(stream), walker.hold,
             state.time, pos, buf)
    return WalkState(tuple(pos), state.time + 1)


@dataclass(frozen=True)
class DirectionalLevel:
    """Fires at the first ``n >= 1`` with ``X_n . l > u``."""

    direction: tuple
    level: float


@dataclass(frozen=True)
class BelowStart:
    """Fires at the first ``n`` with ``X_n . l < X_0 . l``."""

    direction: tuple


@dataclass(frozen=True)
class EnterSet:
    sites: tuple  # tuple of coordinate tuples


@dataclass(frozen=True)
class StoppingSpec:
    horizon: int
    levels: tuple = ()
    below_start: BelowStart | None = None
    enter_set: EnterSet | None = None
    track: tuple | None = None  # direction for max/min height statistics

    def __post_init__(self):
        if self.horizon < 0:
            raise ConfigError("horizon must be non-negative")


class Trigger(str, Enum):
    HORIZON_CENSORED = "HorizonCensored"
    LEVEL = "Level"
    BELOW_START = "BelowStart"
    ENTER_SET = "EnterSet"


@dataclass(frozen=True)
class RunOutcome:
    triggered: Trigger
    rule_index: int  # index into StoppingSpec.levels for LEVEL triggers, else -1
    final_state: WalkState
    max_height: float
    min_height: float
    trajectory: np.ndarray | None = None


@dataclass(frozen=True)
class BatchOutcome:
    codes: np.ndarray
    times: np.ndarray
    finals: np.ndarray
    max_height: np.ndarray
    min_height: np.ndarray
    horizon: int

    @property
    def censored(self) -> np.ndarray:
        return self.codes == RULE_HORIZON

    def fraction(self, code: int) -> float:
        return float(np.mean(self.codes == code))


def _pack_spec(spec: StoppingSpec, dim: int):
    nlev = len(spec.levels)
    dirs = np.zeros((max(nlev, 1), dim))
    vals = np.zeros(nlev)
    for i, rule in enumerate(spec.levels):
        dirs[i] = np.asarray(rule.direction, dtype=float)
        vals[i] = rule.level
    dirs = dirs[:nlev] if nlev else np.zeros((0, dim))
    if spec.below_start is not None:
        below = np.asarray(spec.below_start.direction, dtype=float)
        use_below = True
    else:
        below = np.zeros(dim)
        use_below = False
    if spec.enter_set is not None and len(spec.enter_set.sites) > 0:
        sites = np.asarray(spec.enter_set.sites, dtype=np.int64).reshape(-1, dim)
        origin = sites.min(axis=0)
        shape = sites.max(axis=0) - origin + 1
        mask = np.zeros(tuple(shape), dtype=np.bool_)
        mask[tuple((sites - origin).T)] = True
        use_set = True
        mask_flat = mask.ravel()
    else:
        origin = np.zeros(dim, dtype=np.int64)
        shape = np.ones(dim, dtype=np.int64)
        mask_flat = np.zeros(1, dtype=np.bool_)
        use_set = False
    if spec.track is not None:
        track = np.asarray(spec.track, dtype=float)
    elif nlev:
        track = dirs[0].copy()
    elif use_below:
        track = below.copy()
    else:
        track = np.eye(dim)[0]
    return (dirs, vals, below, use_below, origin.astype(np.int64), shape.astype(np.int64),
            mask_flat, use_set, track)


def run_many(walker: Walker, env_seeds: np.ndarray, walk_seeds: np.ndarray, start,
             spec: StoppingSpec) -> BatchOutcome:
    """Vectorized :func:`run_until` over replicas.  ``env_seeds`` may hold
    one seed per replica (annealed sampling) or the walker's own seed repeated."""
    dim = walker.dim
    kind, params, table = walker.env.law.packed()
    packed = _pack_spec(spec, dim)
    st = np.asarray(start, dtype=np.int64).reshape(dim)
    res = run_batch(kind, params, table, dim, np.asarray(env_seeds, dtype=np.uint64),
                    np.asarray(walk_seeds, dtype=np.uint64), walker.hold, st, *packed,
                    spec.horizon)
    return BatchOutcome(*res, horizon=spec.horizon)


def _decode(code: int) -> tuple[Trigger, int]:
    if code == RULE_HORIZON:
        return Trigger.HORIZON_CENSORED, -1
    if code == RULE_BELOW_START:
        return Trigger.BELOW_START, -1
    if code == RULE_ENTER_SET:
        return Trigger.ENTER_SET, -1
    return Trigger.LEVEL, code - 1


def run_until(walker: Walker | Environment, start, spec: StoppingSpec, stream: int,
              store_trajectory: bool = False) -> RunOutcome:
    if isinstance(walker, Environment):
        walker = Walker(walker)
    env = walker.env
    b = run_many(walker, np.array([env.seed_u64]), np.array([as_u64(stream)]), start, spec)
    trig, idx = _decode(int(b.codes[0]))
    traj = None
    if store_trajectory:
        kind, params, table = env.packed
        traj = simulate_path(kind, params, table, env.dim, env.seed_u64, as_u64(stream),
                             walker.hold, np.asarray(start, dtype=np.int64), int(b.times[0]))
    return RunOutcome(trig, idx, WalkState(tuple(b.finals[0]), int(b.times[0])),
                      float(b.max_height[0]), float(b.min_height[0]), traj)


@dataclass(frozen=True)
class DHit:
    """Outcome of the search for ``D``: ``time`` is ``None`` when the walk was
    still at or above its starting level at the horizon."""

    time: int | None
    height_at_horizon: float | None = None

    @property
    def censored_alive(self) -> bool:
        return self.time is None


def first_hit_D(walker: Walker | Environment, start, l, horizon: int, stream: int) -> DHit:
    if isinstance(walker, Environment):
        walker = Walker(walker)
    spec = StoppingSpec(horizon, below_start=BelowStart(tuple(l)), track=tuple(l))
    out = run_until(walker, start, spec, stream)
    if out.triggered is Trigger.BELOW_START:
        return DHit(out.final_state.time)
    h = float(np.dot(out.final_state.position, np.asarray(l, dtype=float)))
    return DHit(None, h)


def replica_seeds(master_seed: int, stream_id: int, replicas: int) -> tuple[np.ndarray, np.ndarray]:
    """Environment and walk seeds for ``replicas`` independent replicas."""
    return (derive_seeds(master_seed, TAG_ENV, stream_id, replicas),
            derive_seeds(master_seed, TAG_WALK, stream_id, replicas))


def default_confirm_height(horizon: int) -> float:
    """Height above the start at the horizon treated as a confirmed escape."""
    return math.sqrt(horizon) * math.log(max(horizon, 3))


def estimate_no_backtrack(law: EnvironmentLaw, l, horizon: int, replicas: int,
                          master_seed: int, stream_id: int = 0, hold: float = 0.0,
                          confirm_height: float | None = None,
                          level: float = 0.95) -> EstimateWithCI:
    """Censored band for ``P[D = infinity]`` under the averaged law.

    A replica that drops below its starting level is a definite failure.
    A replica alive at the horizon at height at least ``confirm_height``
    counts as a confirmed survivor; alive replicas below that height are
    censored and only widen the band.
    """
    dim = law.dim
    env_seeds, walk_seeds = replica_seeds(master_seed, stream_id, replicas)
    walker = Walker(Environment(law, 0), hold)
    spec = StoppingSpec(horizon, below_start=BelowStart(tuple(l)), track=tuple(l))
    b = run_many(walker, env_seeds, walk_seeds, np.zeros(dim, dtype=np.int64), spec)
    if confirm_height is None:
        confirm_height = default_confirm_height(horizon)
    alive = b.codes == RULE_HORIZON
    height = b.finals @ np.asarray(l, dtype=float)
    confirmed = int(np.sum(alive & (height >= confirm_height)))
    censored = int(np.sum(alive)) - confirmed
    return censored_band(confirmed, censored, replicas, level, "no-backtrack-band",
                         (master_seed, stream_id))


# ---------------------------------------------------------------------------
# environment viewed from the particle


@dataclass(frozen=True)
class KernelWindow:
    """Kernels on the cube ``[-radius, radius]^d`` around a centre site."""

    dim: int
    radius: int
    kernels: np.ndarray  # shape (2r+1,)*d + (2d,)

    @classmethod
    def from_env(cls, env: Environment, centre, radius: int) -> "KernelWindow":
        d = env.dim
        axes = [np.arange(-radius, radius + 1)] * d
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        sites = grid + np.asarray(centre, dtype=np.int64)
        ks = env.kernels_at(sites).reshape((2 * radius + 1,) * d + (2 * d,))
        return cls(d, radius, ks)

    def kernel(self, offset) -> np.ndarray:
        off = np.asarray(offset, dtype=np.int64).reshape(self.dim)
        if np.abs(off).max(initial=0) > self.radius:
            raise ContractError(f"offset {tuple(off)} outside window of radius {self.radius}")
        return self.kernels[tuple(off + self.radius)]

    def shifted(self, move) -> "KernelWindow":
        """Window of radius ``r-1`` centred at ``move`` (the shift ``t_e omega``)."""
        if self.radius < 1:
            raise ContractError("cannot shift a window of radius 0")
        m = np.asarray(move, dtype=np.int64).reshape(self.dim)
        sl = tuple(slice(self.radius + mj - (self.radius - 1),
                         self.radius + mj + self.radius) for mj in m)
        return KernelWindow(self.dim, self.radius - 1, self.kernels[sl])


@dataclass(frozen=True)
class LocalFunctional:
    """A function of the environment that only reads kernels within
    ``radius`` of the origin.

    ``vectorized(env, sites)`` optionally evaluates it at many translated
    copies of one environment; ``batch(kernels)`` optionally evaluates it on
    a stack of windows, ``kernels`` having shape ``(n,) + (2r+1,)*d + (2d,)``
    with the origin at index ``r`` along every spatial axis.
    """

    radius: int
    fn: Callable[[KernelWindow], float]
    name: str = "f"
    vectorized: Callable[[Environment, np.ndarray], np.ndarray] | None = None
    batch: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, window: KernelWindow) -> float:
        if window.radius < self.radius:
            raise ContractError(f"{self.name} needs radius {self.radius}, window has {window.radius}")
        return self.fn(window)


def constant_functional(c: float = 1.0) -> LocalFunctional:
    return LocalFunctional(0, lambda w: c, f"const({c})",
                           lambda env, sites: np.full(len(sites), float(c)),
                           lambda ks: np.full(ks.shape[0], float(c)))


def kernel_entry(move_index: int, offset=None) -> LocalFunctional:
    """``omega(offset, e)`` where ``e`` is the jump with index ``move_index``."""

    def fn(w: KernelWindow) -> float:
        off = np.zeros(w.dim, dtype=np.int64) if offset is None else offset
        return float(w.kernel(off)[move_index])

    def vec(env: Environment, sites: np.ndarray) -> np.ndarray:
        s = sites if offset is None else sites + np.asarray(offset, dtype=np.int64)
        return env.kernels_at(s)[:, move_index]

    def batch(ks: np.ndarray) -> np.ndarray:
        d = ks.ndim - 2
        r = (ks.shape[1] - 1) // 2
        off = np.zeros(d, dtype=np.int64) if offset is None else np.asarray(offset)
        idx = (slice(None),) + tuple(int(r + o) for o in off) + (move_index,)
        return ks[idx]

    radius = 0 if offset is None else int(np.abs(offset).max())
    return LocalFunctional(radius, fn, f"omega(., {move_index})", vec, batch)


def apply_R(window: KernelWindow, f: LocalFunctional) -> float:
    """``Rf(omega) = sum_e omega(0, e) f(t_e omega)`` on a finite window."""
    if window.radius < f.radius + 1:
        raise ContractError(
            f"window radius {window.radius} too small for a functional of radius {f.radius}")
    k0 = window.kernel(np.zeros(window.dim, dtype=np.int64))
    moves = jump_vectors(window.dim)
    terms = [k0[i] * f(window.shifted(moves[i])) for i in range(moves.shape[0])]
    return math.fsum(terms)


def cesaro_mean(law: EnvironmentLaw, f: LocalFunctional, n: int, replicas: int,
                master_seed: int, stream_id: int = 0, hold: float = 0.0,
                level: float = 0.95) -> EstimateWithCI:
    """Estimate ``(1/(n+1)) sum_{i<=n} E[f(environment seen from X_i)]``.

    Each replica draws its own environment and walk; the per-replica
    Cesaro averages are the Monte Carlo samples.
    """
    env_seeds, walk_seeds = replica_seeds(master_seed, stream_id, replicas)
    kind, params, table = law.packed()
    dim = law.dim
    vals = np.empty(replicas)
    start = np.zeros(dim, dtype=np.int64)
    for r in range(replicas):
        path = simulate_path(kind, params, table, dim, env_seeds[r], walk_seeds[r], hold, start, n)
        env = Environment(law, int(env_seeds[r]))
        if f.vectorized is not None:
            fv = f.vectorized(env, path)
        else:
            fv = np.array([f(KernelWindow.from_env(env, x, f.radius)) for x in path])
        vals[r] = math.fsum(fv) / (n + 1)
    return mean_ci(vals, level, "cesaro", seeds=(master_seed, stream_id))
