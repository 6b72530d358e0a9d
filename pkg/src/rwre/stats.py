"""Monte Carlo summaries: estimates with confidence intervals and
stabilization diagnostics for possibly infinite moments."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy import stats as _sps


@dataclass(frozen=True)
class EstimateWithCI:
    """A point estimate with a two-sided confidence interval.

    ``censored_fraction`` is the share of replicas whose outcome was not
    decided by the horizon.  ``seeds`` records the seed provenance
    (master seed and stream identifier).
    """

    value: float
    lower: float
    upper: float
    replicas: int
    level: float = 0.95
    method: str = ""
    censored_fraction: float = 0.0
    seeds: tuple = ()
    std_error: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.censored_fraction <= 1.0:
            raise ValueError("censored fraction must lie in [0, 1]")
        if not (self.lower <= self.value <= self.upper) and not math.isnan(self.value):
            # allow tiny rounding slack, reject genuine inversions
            slack = 1e-12 * max(1.0, abs(self.value))
            if self.lower - slack > self.value or self.value > self.upper + slack:
                raise ValueError(f"interval [{self.lower}, {self.upper}] does not contain {self.value}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper

    def as_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = [int(s) for s in self.seeds]
        return d


def z_value(level: float) -> float:
    return float(_sps.norm.ppf(0.5 + level / 2.0))


def wilson_interval(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    z = z_value(level)
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def proportion(successes: int, n: int, level: float = 0.95, method: str = "wilson",
               censored: int = 0, seeds: tuple = ()) -> EstimateWithCI:
    lo, hi = wilson_interval(successes, n, level)
    p = successes / n if n else float("nan")
    se = math.sqrt(p * (1 - p) / n) if n else float("nan")
    return EstimateWithCI(p, min(lo, p), max(hi, p), n, level, method,
                          censored / n if n else 0.0, seeds, se)


def censored_band(confirmed: int, censored: int, n: int, level: float = 0.95,
                  method: str = "censored-band", seeds: tuple = ()) -> EstimateWithCI:
    """Band for an event only observable at infinite time.

    Replicas that confirmed the event count as successes; censored replicas
    could go either way.  The lower end is the Wilson lower bound of the
    confirmed fraction and the upper end the Wilson upper bound of the
    confirmed-plus-censored fraction.  The point value is the midpoint of
    the two raw fractions.
    """
    if n <= 0:
        raise ValueError("band needs at least one replica")
    lo, _ = wilson_interval(confirmed, n, level)
    _, hi = wilson_interval(confirmed + censored, n, level)
    p_lo = confirmed / n
    p_hi = (confirmed + censored) / n
    mid = 0.5 * (p_lo + p_hi)
    return EstimateWithCI(mid, min(lo, mid), max(hi, mid), n, level, method,
                          censored / n, seeds)


def mean_ci(samples: Sequence[float] | np.ndarray, level: float = 0.95,
            method: str = "t-mean", censored_fraction: float = 0.0,
            seeds: tuple = ()) -> EstimateWithCI:
    """Student-t interval for a mean.  Summation uses ``math.fsum`` so the
    result does not depend on accumulation order."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    m = math.fsum(x) / n
    if n == 1:
        return EstimateWithCI(m, m, m, 1, level, method, censored_fraction, seeds, 0.0)
    var = math.fsum((x - m) ** 2) / (n - 1)
    se = math.sqrt(var / n)
    t = float(_sps.t.ppf(0.5 + level / 2.0, n - 1))
    return EstimateWithCI(m, m - t * se, m + t * se, n, level, method,
                          censored_fraction, seeds, se)


def ratio_of_means_ci(num: np.ndarray, den: np.ndarray, level: float = 0.95,
                      method: str = "ratio-delta", seeds: tuple = ()) -> EstimateWithCI:
    """Delta-method interval for E[num]/E[den] from paired samples."""
    a = np.asarray(num, dtype=float)
    b = np.asarray(den, dtype=float)
    n = a.size
    if n < 2:
        raise ValueError("need at least two paired samples")
    ma = math.fsum(a) / n
    mb = math.fsum(b) / n
    r = ma / mb
    resid = a - r * b
    var = math.fsum(resid ** 2) / (n - 1)
    se = math.sqrt(var / n) / abs(mb)
    z = z_value(level)
    return EstimateWithCI(r, r - z * se, r + z * se, n, level, method, 0.0, seeds, se)


def hill_tail_index(samples: np.ndarray, k: int | None = None) -> float:
    """Hill estimator of the Pareto tail index of positive samples.

    Returns ``inf`` for samples with no spread among the top order
    statistics (bounded or constant samples).
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())[::-1]
    x = x[x > 0]
    n = x.size
    if n < 20:
        return float("inf")
    if k is None:
        k = max(10, int(math.sqrt(n)))
    k = min(k, n - 1)
    logs = np.log(x[:k]) - math.log(x[k])
    h = math.fsum(logs) / k
    if h <= 1e-14:
        return float("inf")
    return 1.0 / h


@dataclass(frozen=True)
class StabilizationReport:
    """Outcome of the sample-doubling divergence diagnostic."""

    estimate: EstimateWithCI
    running: tuple  # running means at n/8, n/4, n/2, n
    relative_changes: tuple
    tail_index: float
    divergent: bool
    reason: str = ""

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate.as_dict(),
            "running": list(self.running),
            "relative_changes": list(self.relative_changes),
            "tail_index": self.tail_index,
            "divergent": self.divergent,
            "reason": self.reason,
        }


def stabilization(samples: np.ndarray, ratio: float = 0.10, doublings: int = 3,
                  tail_margin: float = 0.25, level: float = 0.95,
                  method: str = "t-mean", seeds: tuple = ()) -> StabilizationReport:
    """Decide whether the mean of ``samples`` looks finite.

    Two signals are combined.  The doubling rule flags divergence when every
    one of the last ``doublings`` doublings of the sample budget moves the
    running mean by more than ``ratio`` (relative).  Because the running mean
    of a variable with tail index exactly one only creeps up logarithmically,
    the rule is paired with a Hill tail-index estimate: an index below
    ``1 + tail_margin`` is also reported as divergent.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    est = mean_ci(x, level, method, seeds=seeds)
    sizes = [n >> (doublings - j) for j in range(doublings + 1)]
    running = []
    for s in sizes:
        s = max(s, 1)
        running.append(math.fsum(x[:s]) / s)
    changes = []
    for j in range(doublings):
        prev, cur = running[j], running[j + 1]
        scale = max(abs(prev), 1e-300)
        changes.append(abs(cur - prev) / scale)
    doubling_flag = all(c > ratio for c in changes)
    tail = hill_tail_index(x)
    tail_flag = tail < 1.0 + tail_margin
    reasons = []
    if doubling_flag:
        reasons.append("doubling")
    if tail_flag:
        reasons.append("tail-index")
    return StabilizationReport(est, tuple(running), tuple(changes), tail,
                               doubling_flag or tail_flag, "+".join(reasons))


def two_sample_ks(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Kolmogorov-Smirnov statistic and p-value between two samples."""
    res = _sps.ks_2samp(np.asarray(a, float), np.asarray(b, float))
    return float(res.statistic), float(res.pvalue)


def lag_correlations(x: np.ndarray, max_lag: int = 3) -> list[float]:
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    out = []
    for lag in range(1, max_lag + 1):
        if denom == 0.0 or x.size <= lag:
            out.append(0.0)
        else:
            out.append(float(np.dot(x[:-lag], x[lag:]) / denom))
    return out


def joint_intervals(estimates: dict, level: float = 0.99) -> dict:
    """Simultaneous intervals for several estimates at family level ``level``
    (Bonferroni: each at ``1 - (1 - level) / k``).  Intervals are rebuilt
    from the standard error when it is finite; estimates without one
    (closed forms, censored bands) keep their own interval."""
    k = max(len(estimates), 1)
    z = z_value(1.0 - (1.0 - level) / k)
    out = {}
    for name, e in estimates.items():
        se = e.std_error
        if se is not None and math.isfinite(se):
            out[name] = (e.value - z * se, e.value + z * se)
        else:
            out[name] = (e.lower, e.upper)
    return out


def agreement_matrix(estimates: dict, level: float = 0.99) -> dict:
    """Pairwise overlap of the simultaneous intervals.  On the line, pairwise
    overlap is equivalent to all intervals sharing a common point."""
    iv = joint_intervals(estimates, level)
    names = sorted(iv)
    mat = {a: {b: bool(iv[a][0] <= iv[b][1] and iv[b][0] <= iv[a][1]) for b in names}
           for a in names}
    return {"level": level, "intervals": {n: list(iv[n]) for n in names}, "agree": mat,
            "all_agree": all(mat[a][b] for a in names for b in names)}
