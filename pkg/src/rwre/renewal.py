"""Renewal (regeneration) structure of a directionally transient walk.

A time ``n >= 1`` is a renewal time in the integer direction ``l`` when the
height ``X_n . l`` is a strict record (above every earlier height) and is
never undercut afterwards.  On a finite path "afterwards" can only be
checked up to the horizon, so a candidate counts as confirmed only when at
least ``window`` further steps were observed after it.  Blocks between
consecutive renewals (from the second on) are i.i.d., which is what the
estimators and diagnostics here rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .env_model import EnvironmentLaw
from .errors import ConfigError, DomainError, InsufficientDataError
from .stats import (EstimateWithCI, censored_band, lag_correlations, mean_ci,
                    ratio_of_means_ci, stabilization, two_sample_ks)
from .walk_sim import (DirectionalLevel, StoppingSpec, Walker, default_confirm_height,
                       estimate_no_backtrack, replica_seeds, run_many, simulate_path)
from .env_model import Environment

MIN_VELOCITY_BLOCKS = 30
MIN_IID_BLOCKS = 100


def _integer_direction(l, dim: int) -> np.ndarray:
    v = np.asarray(l)
    if v.shape != (dim,):
        raise ConfigError(f"direction needs {dim} components")
    if not np.all(np.equal(np.mod(v, 1), 0)):
        raise ConfigError("renewal decomposition uses an integer direction")
    v = v.astype(np.int64)
    if math.gcd(*[abs(int(c)) for c in v]) != 1:
        raise ConfigError("integer direction must have coprime components")
    return v


@nb.njit(cache=True)
def _candidates(h):
    """Times ``n >= 1`` with ``h[n] > max h[:n]`` and ``h[n] <= min h[n:]``."""
    n = h.shape[0]
    sufmin = np.empty(n, dtype=np.int64)
    m = h[n - 1]
    for i in range(n - 1, -1, -1):
        if h[i] < m:
            m = h[i]
        sufmin[i] = m
    out = np.empty(n, dtype=np.int64)
    k = 0
    runmax = h[0]
    for i in range(1, n):
        if h[i] > runmax:
            runmax = h[i]
            if h[i] <= sufmin[i]:
                out[k] = i
                k += 1
    return out[:k]


@nb.njit(cache=True)
def _attempts(h, tau1):
    """Number of ladder attempts up to and including the first renewal: the
    walk waits to exceed the running maximum, then either never drops below
    the new level (success) or does, after which the maximum is updated."""
    n = h.shape[0]
    r = h[0]
    t = 0
    k = 0
    while True:
        s = t + 1
        while s < n and h[s] <= r:
            s += 1
        if s >= n:
            return -1
        k += 1
        if s == tau1:
            return k
        d = s + 1
        while d < n and h[d] >= h[s]:
            d += 1
        if d >= n:
            return -1
        for i in range(t, d + 1):
            if h[i] > r:
                r = h[i]
        t = d


@nb.njit(cache=True)
def _block_radii(path, taus):
    """``max |X_m - X_{start}|_1`` over each block, blocks starting at 0."""
    k = taus.shape[0]
    d = path.shape[1]
    out = np.zeros(k, dtype=np.int64)
    prev = 0
    for b in range(k):
        best = 0
        for m in range(prev, taus[b] + 1):
            s = 0
            for j in range(d):
                s += abs(path[m, j] - path[prev, j])
            if s > best:
                best = s
        out[b] = best
        prev = taus[b]
    return out


@dataclass(frozen=True)
class RenewalRecord:
    """Confirmed renewals of one path.

    ``taus`` are the confirmed renewal times, ``positions`` the sites at
    those times, ``attempts`` the number of ladder attempts up to the first
    renewal (``None`` if not confirmed within the horizon), ``radii`` the
    block radii (first block measured from the start), ``pending`` the
    number of candidates dropped because fewer than ``window`` steps
    followed them.
    """

    direction: tuple
    taus: np.ndarray
    positions: np.ndarray
    heights: np.ndarray
    attempts: int | None
    horizon: int
    window: int
    radii: np.ndarray
    pending: int = 0
    final_height: int = 0

    def __post_init__(self):
        if self.taus.size > 1:
            if not (np.all(np.diff(self.taus) > 0) and np.all(np.diff(self.heights) > 0)):
                raise AssertionError("renewal times and heights must increase strictly")

    @property
    def confirmed(self) -> int:
        return int(self.taus.size)

    @property
    def tau1(self) -> int | None:
        return int(self.taus[0]) if self.taus.size else None

    def increments(self) -> "RenewalIncrements":
        t = self.taus
        h = self.heights
        first = (int(t[0]), int(h[0])) if t.size else None
        return RenewalIncrements(np.diff(t), np.diff(h), np.diff(self.positions, axis=0),
                                 first, self.radii[1:] if t.size else np.zeros(0, np.int64))


@dataclass(frozen=True)
class RenewalIncrements:
    """Blocks ``k >= 2`` of one or several records; the first block is kept apart."""

    times: np.ndarray
    heights: np.ndarray
    displacements: np.ndarray
    first: tuple | None
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self):
        if self.heights.size and not np.all(self.heights > 0):
            raise AssertionError("block heights must be positive")

    @property
    def count(self) -> int:
        return int(self.times.size)


def decompose(path, direction, window: int = 0) -> RenewalRecord:
    """Renewal decomposition of a stored path (``(n+1, d)`` positions, or a
    1D array of integer heights when ``direction`` is ``None``)."""
    arr = np.asarray(path)
    if direction is None:
        if arr.ndim != 1:
            raise ConfigError("heights must be one-dimensional when no direction is given")
        h = arr.astype(np.int64)
        pos = h.reshape(-1, 1)
        ldir = (1,)
    else:
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        lv = _integer_direction(direction, arr.shape[1])
        h = arr.astype(np.int64) @ lv
        pos = arr.astype(np.int64)
        ldir = tuple(int(c) for c in lv)
    if window < 0:
        raise ConfigError("confirmation window must be non-negative")
    horizon = h.size - 1
    cand = _candidates(h)
    keep = cand <= horizon - window
    taus = cand[keep]
    tau1 = int(taus[0]) if taus.size else -1
    att = int(_attempts(h, tau1)) if tau1 > 0 else -1
    radii = _block_radii(pos, taus) if taus.size else np.zeros(0, np.int64)
    return RenewalRecord(ldir, taus, pos[taus], h[taus], att if att > 0 else None,
                         horizon, int(window), radii, int(cand.size - taus.size),
                         int(h[-1] - h[0]))


def verify_record(path, record: RenewalRecord) -> bool:
    """Check the defining property of every confirmed renewal on the stored path."""
    arr = np.asarray(path, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    h = arr @ np.asarray(record.direction, dtype=np.int64)
    for t in record.taus:
        if not (h[:t].max() < h[t] <= h[t:].min()):
            return False
    return True


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class RecordSet:
    """Renewal records of independent replicas plus the window actually used."""

    records: tuple
    window: int
    horizon: int
    seeds: tuple

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def increments(self) -> RenewalIncrements:
        parts = [r.increments() for r in self.records]
        d = self.records[0].positions.shape[1] if self.records else 1
        times = np.concatenate([p.times for p in parts]) if parts else np.zeros(0, np.int64)
        hts = np.concatenate([p.heights for p in parts]) if parts else np.zeros(0, np.int64)
        disp = (np.concatenate([p.displacements for p in parts]) if parts
                else np.zeros((0, d), np.int64))
        rad = np.concatenate([p.radii for p in parts]) if parts else np.zeros(0, np.int64)
        return RenewalIncrements(times, hts, disp, None, rad)

    def first_blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(tau_1, height at tau_1, first-block radius) for replicas with a renewal."""
        rs = [r for r in self.records if r.confirmed]
        return (np.array([r.taus[0] for r in rs], dtype=np.int64),
                np.array([r.heights[0] for r in rs], dtype=np.int64),
                np.array([r.radii[0] for r in rs], dtype=np.int64))


def _adaptive_window(cands: list, horizon: int, replicas: int, tol: float = 0.01) -> int:
    """Start at ten times the mean block length and double while the
    confirmed renewal rate per observed step still moves by more than ``tol``."""
    gaps = [np.diff(c) for c in cands if c.size > 1]
    allg = np.concatenate(gaps) if gaps else np.zeros(0)
    mean_block = float(allg.mean()) if allg.size else horizon / 10.0
    w = int(max(10, math.ceil(10 * mean_block)))
    w = min(w, horizon // 2)

    def rate(win):
        cnt = sum(int(np.sum(c <= horizon - win)) for c in cands)
        return cnt / (replicas * max(horizon - win, 1))

    while 2 * w <= horizon // 2:
        r1, r2 = rate(w), rate(2 * w)
        if r1 == 0 or abs(r2 - r1) / r1 <= tol:
            break
        w *= 2
    return w


def simulate_records(law: EnvironmentLaw, direction, horizon: int, replicas: int,
                     master_seed: int = 0, stream_id: int = 1, window: int | None = None,
                     hold: float = 0.0) -> RecordSet:
    """Simulate ``replicas`` independent (environment, walk) pairs for
    ``horizon`` steps and decompose each path.  ``window=None`` picks the
    confirmation window adaptively."""
    dim = law.dim
    lv = _integer_direction(direction, dim)
    env_seeds, walk_seeds = replica_seeds(master_seed, 1000 + stream_id, replicas)
    kind, params, table = law.packed()
    start = np.zeros(dim, dtype=np.int64)
    paths_h, cands = [], []
    for r in range(replicas):
        path = simulate_path(kind, params, table, dim, env_seeds[r], walk_seeds[r], hold,
                             start, horizon)
        h = path @ lv
        paths_h.append(path)
        cands.append(_candidates(h))
    if window is None:
        window = _adaptive_window(cands, horizon, replicas)
    recs = tuple(decompose(p, lv, window) for p in paths_h)
    return RecordSet(recs, int(window), horizon, (master_seed, stream_id))


# ---------------------------------------------------------------------------
# estimators


def estimate_velocity(records: RecordSet | list, level: float = 0.95,
                      component: int | None = None) -> EstimateWithCI:
    """Ratio of mean block height (or displacement component) to mean block
    duration over blocks ``k >= 2``, with a delta-method interval.  The
    default returns the speed along the decomposition direction."""
    rs = records if isinstance(records, RecordSet) else RecordSet(tuple(records), 0, 0, ())
    inc = rs.increments()
    if inc.count < MIN_VELOCITY_BLOCKS:
        raise InsufficientDataError(
            f"{inc.count} renewal blocks; at least {MIN_VELOCITY_BLOCKS} are needed")
    num = inc.heights if component is None else inc.displacements[:, component]
    if component is None and rs.records:
        # speed along the unit vector l/|l|, not along the integer vector
        lv = np.asarray(rs.records[0].direction, dtype=float)
        num = inc.heights / float(np.linalg.norm(lv))
    return ratio_of_means_ci(num, inc.times, level, "renewal-ratio", rs.seeds)


def estimate_velocity_vector(records: RecordSet, level: float = 0.95) -> list:
    d = records.records[0].positions.shape[1]
    return [estimate_velocity(records, level, j) for j in range(d)]


@dataclass(frozen=True)
class IIDReport:
    time_correlations: list
    height_correlations: list
    band: float
    within_band: bool
    ks_statistic: float
    ks_pvalue: float
    blocks: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def check_iid(increments: RenewalIncrements, first_times: np.ndarray | None = None,
              max_lag: int = 3, min_blocks: int = MIN_IID_BLOCKS) -> IIDReport:
    """Lag correlations of block durations and heights against the band
    ``3 / sqrt(blocks)``, and a two-sample distance between first blocks and
    the rest (first blocks follow a different law, so this one is informative
    only)."""
    n = increments.count
    if n < min_blocks:
        raise InsufficientDataError(f"{n} blocks; at least {min_blocks} are needed")
    tc = lag_correlations(increments.times, max_lag)
    hc = lag_correlations(increments.heights, max_lag)
    band = 3.0 / math.sqrt(n)
    ok = all(abs(c) <= band for c in tc + hc)
    if first_times is not None and len(first_times) > 1:
        ks, pv = two_sample_ks(first_times, increments.times)
    else:
        ks, pv = float("nan"), float("nan")
    return IIDReport(tc, hc, band, ok, ks, pv, n)


def overlapping_blocks(heights: np.ndarray, width: int, stride: int) -> RenewalIncrements:
    """Negative control: height gains over sliding windows that overlap when
    ``stride < width``.  Not renewal blocks, so neighbours are correlated."""
    h = np.asarray(heights, dtype=np.int64)
    starts = np.arange(0, h.size - width, stride)
    gains = h[starts + width] - h[starts]
    keep = gains > 0
    return RenewalIncrements(np.full(int(keep.sum()), width, dtype=np.int64), gains[keep],
                             gains[keep].reshape(-1, 1), None)


# ---------------------------------------------------------------------------
# directional transience and the renewal expectation identity


def transience_probe(law: EnvironmentLaw, direction, horizon: int, replicas: int,
                     master_seed: int = 0, stream_id: int = 2, level: float = 0.95,
                     window: int | None = None) -> EstimateWithCI:
    """Heuristic band for ``P[X_n . l -> infinity]``.

    A replica is a confirmed escape when it has a renewal confirmed with
    window ``horizon // 2`` and ends at least ``sqrt(n) log n`` above its
    start.  It is a confirmed non-escape when it has no such renewal and
    ends within ``sqrt(n)`` of its start or below it, i.e. inside the range
    of a diffusive walk.  Everything else is censored.
    """
    if window is None:
        window = horizon // 2
    rs = simulate_records(law, direction, horizon, replicas, master_seed, stream_id, window)
    thr = default_confirm_height(horizon)
    low = math.sqrt(horizon)
    pos = neg = 0
    for rec in rs:
        if rec.confirmed and rec.final_height >= thr:
            pos += 1
        elif not rec.confirmed and rec.final_height <= low:
            neg += 1
    return censored_band(pos, replicas - pos - neg, replicas, level, "transience-probe",
                         (master_seed, stream_id))


@dataclass(frozen=True)
class LevelHitRow:
    level: int
    estimate: EstimateWithCI


@dataclass(frozen=True)
class IdentityCheck:
    """Both sides of ``E[X_tau1 . l | D = inf] = 1 / (P[D = inf | A_l] * h)``
    where ``h`` is the limiting probability that level ``i`` is hit exactly
    when the walk first exceeds ``i - 1``."""

    lhs: EstimateWithCI
    rhs: float
    rhs_lower: float
    rhs_upper: float
    no_backtrack: EstimateWithCI
    transience: EstimateWithCI
    level_hits: tuple
    stabilized: bool

    @property
    def consistent(self) -> bool:
        return self.lhs.lower <= self.rhs_upper and self.rhs_lower <= self.lhs.upper

    def as_dict(self) -> dict:
        return {"lhs": self.lhs.as_dict(), "rhs": self.rhs, "rhs_lower": self.rhs_lower,
                "rhs_upper": self.rhs_upper, "no_backtrack": self.no_backtrack.as_dict(),
                "transience": self.transience.as_dict(),
                "level_hits": [{"level": r.level, **r.estimate.as_dict()}
                               for r in self.level_hits],
                "stabilized": self.stabilized, "consistent": self.consistent}


def level_hit_probability(law: EnvironmentLaw, direction, level: int, horizon: int,
                          replicas: int, master_seed: int = 0, stream_id: int = 3,
                          conf: float = 0.95) -> EstimateWithCI:
    """Band for ``P[H_{i-1} < inf, X_{H_{i-1}} . l = i]`` with ``i = level``;
    walks that have not passed ``i - 1`` by the horizon are censored."""
    dim = law.dim
    lv = _integer_direction(direction, dim)
    env_seeds, walk_seeds = replica_seeds(master_seed, 2000 + stream_id * 97 + level, replicas)
    spec = StoppingSpec(horizon, levels=(DirectionalLevel(tuple(lv), level - 1),))
    b = run_many(Walker(Environment(law, 0)), env_seeds, walk_seeds,
                 np.zeros(dim, dtype=np.int64), spec)
    hit = b.codes == 1
    exact = int(np.sum(hit & ((b.finals @ lv) == level)))
    cens = int(np.sum(b.codes == 0))
    return censored_band(exact, cens, replicas, conf, "level-hit-band",
                         (master_seed, stream_id, level))


def lemma_expectation_identity(law: EnvironmentLaw, direction, horizon: int = 20_000,
                               replicas: int = 2000, levels=(2, 4, 8, 16, 32),
                               master_seed: int = 0, level: float = 0.95) -> IdentityCheck:
    """Monte Carlo check of the renewal expectation identity.

    The left side is the mean height of blocks ``k >= 2`` (which have the
    law of the first block conditioned on never backtracking).  The right
    side combines the censored bands for ``P[D = inf]``, ``P[A_l]`` and the
    exact level-hit probability at the largest level of ``levels``.
    """
    probe = transience_probe(law, direction, horizon, min(replicas, 500), master_seed, 21, level)
    if probe.upper < 0.5:
        raise DomainError("transience probe does not support transience in this direction")
    rs = simulate_records(law, direction, horizon, max(replicas // 10, 50), master_seed, 22)
    inc = rs.increments()
    if inc.count < MIN_VELOCITY_BLOCKS:
        raise InsufficientDataError("too few renewal blocks for the left side")
    lhs = mean_ci(inc.heights, level, "block-height-mean", seeds=(master_seed, 22))
    nb_band = estimate_no_backtrack(law, direction, horizon, replicas, master_seed, 23,
                                    level=level)
    rows = tuple(LevelHitRow(int(i), level_hit_probability(law, direction, int(i), horizon,
                                                            replicas, master_seed, 24, level))
                 for i in levels)
    vals = [r.estimate.value for r in rows]
    stab = bool(max(vals) - min(vals) <= 2 * max(r.estimate.width for r in rows) + 1e-12)
    hit = rows[-1].estimate
    # conditional probability of no backtracking given transience, as a band
    p_lo = nb_band.lower / max(probe.upper, 1e-300)
    p_hi = min(1.0, nb_band.upper / max(probe.lower, 1e-300))
    p_mid = nb_band.value / max(probe.value, 1e-300)

    def inv(a, b):
        return 1.0 / (a * b) if a * b > 0 else float("inf")

    rhs = inv(min(p_mid, 1.0), hit.value)
    return IdentityCheck(lhs, rhs, inv(p_hi, hit.upper), inv(p_lo, hit.lower), nb_band, probe,
                         rows, stab)


# ---------------------------------------------------------------------------
# renewal radii and tails


@dataclass(frozen=True)
class RadiusMomentRow:
    gamma: float
    C: float
    estimate: float
    tail_index: float
    divergent: bool


def renewal_radius_moments(records: RecordSet, gammas, Cs, ratio: float = 0.10
                           ) -> tuple | None:
    """Empirical ``E[exp(max_{i <= tau_1} |X_i|_1^gamma / C)]`` over first
    blocks, with a stabilization flag per ``(gamma, C)``.  Returns ``None``
    when no replica has a confirmed renewal."""
    _, _, radii = records.first_blocks()
    if radii.size == 0:
        return None
    rows = []
    r = radii.astype(float)
    for g in gammas:
        for c in Cs:
            with np.errstate(over="ignore"):
                vals = np.exp(r ** g / c) if g > 0 else np.full(r.size, math.exp(1.0 / c))
            if not np.isfinite(vals).all():
                rows.append(RadiusMomentRow(float(g), float(c), float("inf"), 0.0, True))
                continue
            rep = stabilization(vals, ratio=ratio)
            rows.append(RadiusMomentRow(float(g), float(c), rep.estimate.value,
                                        rep.tail_index, rep.divergent))
    return tuple(rows)


@dataclass(frozen=True)
class TailProfile:
    u: np.ndarray
    log_survival: np.ndarray
    upper_envelope: np.ndarray  # -(log u)^alpha
    lower_envelope: np.ndarray  # -C (log u)^d
    slope_vs_u: float
    blocks: int
    warning: str = ""

    def as_rows(self) -> list:
        return [(int(a), float(b), float(c), float(e)) for a, b, c, e in
                zip(self.u, self.log_survival, self.upper_envelope, self.lower_envelope)]


def tail_profile(samples: np.ndarray, dim: int, alpha: float | None = None,
                 C: float = 1.0, min_blocks: int = 10_000, points: int = 30) -> TailProfile:
    """Empirical ``log P[tau >= u]`` on a log-spaced grid of ``u`` with the
    reference curves ``-(log u)^alpha`` and ``-C (log u)^d``, plus the slope
    of the log-survival against ``u`` (negative for geometric decay)."""
    t = np.sort(np.asarray(samples, dtype=np.int64))
    n = t.size
    warn = "" if n >= min_blocks else f"only {n} blocks (fewer than {min_blocks})"
    if n == 0:
        raise InsufficientDataError("no renewal times")
    if alpha is None:
        alpha = 2.0 * dim / (dim + 1)
    u = np.unique(np.round(np.geomspace(1, max(int(t[-1]), 2), points)).astype(np.int64))
    surv = 1.0 - np.searchsorted(t, u, side="left") / n
    with np.errstate(divide="ignore"):
        ls = np.log(surv)
    lu = np.log(np.maximum(u, 1).astype(float))
    up = -(lu ** alpha)
    lowc = -C * lu ** dim
    ok = np.isfinite(ls)
    slope = float(np.polyfit(u[ok].astype(float), ls[ok], 1)[0]) if ok.sum() >= 2 else 0.0
    return TailProfile(u, ls, up, lowc, slope, n, warn)
