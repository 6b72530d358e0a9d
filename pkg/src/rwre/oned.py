"""One-dimensional analysis: statistics of the ratio ``rho = omega(x,-1)/omega(x,+1)``,
recurrence/transience classification, ballisticity conditions, velocity
formulas, the invariant density of the environment seen from the walk, the
sub-ballistic exponent, recurrent-regime scaling and the harmonic potential.

For laws with finite support every expectation is a finite sum, so the
classification and the closed-form quantities carry no Monte Carlo error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numba as nb
import numpy as np

from .env_model import (DirichletIID, DiscreteLaw, Environment, EnvironmentLaw, Homogeneous,
                        sample_kernels, site_kernel)
from .errors import ConfigError, DomainError
from .keyed_rng import TAG_AUX, derive_seeds
from .stats import EstimateWithCI, mean_ci
from .walk_sim import LocalFunctional, positions_at, replica_seeds

DEFAULT_TERMS = 60
ZERO_TOL = 1e-12


def _require_1d(law: EnvironmentLaw) -> None:
    if law.dim != 1:
        raise DomainError("one-dimensional law required")


def rho_support(law: EnvironmentLaw) -> tuple[np.ndarray, np.ndarray] | None:
    """Exact distribution of ``rho`` as (values, weights), or ``None`` when
    the law is continuous."""
    _require_1d(law)
    ks = law.support_kernels()
    if ks is None:
        return None
    with np.errstate(divide="ignore"):
        rho = ks[:, 1] / ks[:, 0]
    return rho, law.support_weights()


def rho_samples(law: EnvironmentLaw, n: int, seed: int = 0) -> np.ndarray:
    _require_1d(law)
    ks = sample_kernels(law, n, seed)
    with np.errstate(divide="ignore"):
        return ks[:, 1] / ks[:, 0]


def mirror(law: EnvironmentLaw) -> EnvironmentLaw:
    """The reflected law ``x -> -x`` (swaps the two jump probabilities)."""
    _require_1d(law)
    if isinstance(law, (Homogeneous, DiscreteLaw)):
        return law.mirror()
    if isinstance(law, DirichletIID):
        return DirichletIID(1, (law.alpha[1], law.alpha[0]))
    raise ConfigError(f"no reflection available for {type(law).__name__}")


def _symmetric_by_construction(law: EnvironmentLaw) -> bool:
    if isinstance(law, DirichletIID):
        return law.alpha[0] == law.alpha[1]
    sup = rho_support(law)
    if sup is None:
        return False
    rho, w = sup
    m = mirror(law)
    rho_m, w_m = rho_support(m)
    a = sorted(zip(np.round(rho, 14), np.round(w, 14)))
    b = sorted(zip(np.round(rho_m, 14), np.round(w_m, 14)))
    return a == b


# ---------------------------------------------------------------------------
# moments


def _exact(v: float, method: str) -> EstimateWithCI:
    return EstimateWithCI(v, v, v, 0, method=method)


@dataclass(frozen=True)
class OneDimSummary:
    """Moments of ``rho``.  ``exact`` is true for finitely supported laws, in
    which case every interval is degenerate."""

    E_log_rho: float
    E_rho: float
    E_inv_rho: float
    var_log_rho: float
    exact: bool
    intervals: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.var_log_rho < -ZERO_TOL:
            raise ValueError("negative variance")
        if math.isfinite(self.E_log_rho) and math.isfinite(self.E_rho):
            if self.E_rho < math.exp(self.E_log_rho) * (1.0 - 1e-12):
                raise AssertionError("Jensen inequality violated: E[rho] < exp(E[log rho])")

    def as_dict(self) -> dict:
        return {"E_log_rho": self.E_log_rho, "E_rho": self.E_rho,
                "E_inv_rho": self.E_inv_rho, "var_log_rho": self.var_log_rho,
                "exact": self.exact}


def summarize(law: EnvironmentLaw, n_samples: int = 200_000, seed: int = 0) -> OneDimSummary:
    sup = rho_support(law)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if sup is not None:
            rho, w = sup
            lr = np.log(rho)
            e_log = float(math.fsum(w * lr)) if np.isfinite(lr).all() else float(w @ lr)
            e_rho = float(math.fsum(w * rho)) if np.isfinite(rho).all() else float(w @ rho)
            inv = 1.0 / rho
            e_inv = float(math.fsum(w * inv)) if np.isfinite(inv).all() else float("inf")
            if np.isfinite(lr).all():
                var = float(math.fsum(w * (lr - e_log) ** 2))
            else:
                var = float("inf") if np.unique(lr).size > 1 else 0.0
            iv = {k: _exact(v, "closed-form") for k, v in
                  (("E_log_rho", e_log), ("E_rho", e_rho), ("E_inv_rho", e_inv))}
            return OneDimSummary(e_log, e_rho, e_inv, max(var, 0.0), True, iv)
        rho = rho_samples(law, n_samples, seed)
        lr = np.log(rho)
        iv = {"E_log_rho": mean_ci(lr, seeds=(seed,)),
              "E_rho": mean_ci(rho, seeds=(seed,)),
              "E_inv_rho": mean_ci(1.0 / rho, seeds=(seed,))}
        var = float(np.var(lr, ddof=1))
        return OneDimSummary(iv["E_log_rho"].value, iv["E_rho"].value, iv["E_inv_rho"].value,
                             var, False, iv)


# ---------------------------------------------------------------------------
# classification


class Regime(str, Enum):
    TRANSIENT_RIGHT = "TransientRight"
    TRANSIENT_LEFT = "TransientLeft"
    RECURRENT_SINAI = "RecurrentSinai"
    DEGENERATE_SIMPLE = "DegenerateSimple"


@dataclass(frozen=True)
class RegimeClass:
    """``margin`` is ``|E[log rho]|`` in standard-error units (``inf`` for
    exact laws with a non-zero mean).  ``undecided`` is set when a Monte
    Carlo interval straddles zero for a law not symmetric by construction."""

    regime: Regime
    margin: float
    E_log_rho: float
    var_log_rho: float
    undecided: bool = False

    def __post_init__(self):
        if self.regime is Regime.RECURRENT_SINAI and not self.var_log_rho > 0:
            raise AssertionError("recurrent random regime needs a non-degenerate rho")
        if self.regime is Regime.DEGENERATE_SIMPLE and self.var_log_rho != 0:
            raise AssertionError("degenerate regime needs a deterministic rho")

    def as_dict(self) -> dict:
        return {"regime": self.regime.value, "margin": self.margin,
                "E_log_rho": self.E_log_rho, "var_log_rho": self.var_log_rho,
                "undecided": self.undecided}


def classify(law: EnvironmentLaw, budget: int = 200_000, seed: int = 0,
             z: float = 3.0) -> RegimeClass:
    """Classify by the sign of ``E[log rho]``."""
    s = summarize(law, budget, seed)
    m, var = s.E_log_rho, s.var_log_rho
    if s.exact:
        if abs(m) <= ZERO_TOL:
            if var <= ZERO_TOL:
                return RegimeClass(Regime.DEGENERATE_SIMPLE, 0.0, 0.0, 0.0)
            return RegimeClass(Regime.RECURRENT_SINAI, 0.0, m, var)
        reg = Regime.TRANSIENT_RIGHT if m < 0 else Regime.TRANSIENT_LEFT
        return RegimeClass(reg, float("inf"), m, var)
    se = s.intervals["E_log_rho"].std_error
    margin = abs(m) / se if se > 0 else float("inf")
    if margin > z:
        reg = Regime.TRANSIENT_RIGHT if m < 0 else Regime.TRANSIENT_LEFT
        return RegimeClass(reg, margin, m, var)
    if _symmetric_by_construction(law):
        return RegimeClass(Regime.RECURRENT_SINAI, margin, m, var)
    reg = Regime.TRANSIENT_RIGHT if m < 0 else Regime.TRANSIENT_LEFT
    return RegimeClass(reg, margin, m, var, undecided=True)


@dataclass(frozen=True)
class BCheck:
    B_plus: bool
    B_minus: bool
    E_rho: float
    E_inv_rho: float

    def as_dict(self) -> dict:
        return {"B_plus": self.B_plus, "B_minus": self.B_minus,
                "E_rho": self.E_rho, "E_inv_rho": self.E_inv_rho}


def check_B(law: EnvironmentLaw, n_samples: int = 200_000, seed: int = 0) -> BCheck:
    """Ballisticity moment conditions for i.i.d. laws: ``E[rho] < 1`` to the
    right, ``E[1/rho] < 1`` to the left."""
    s = summarize(law, n_samples, seed)
    return BCheck(bool(s.E_rho < 1.0), bool(s.E_inv_rho < 1.0), s.E_rho, s.E_inv_rho)


# ---------------------------------------------------------------------------
# velocity


def solomon_velocity(law: EnvironmentLaw, n_samples: int = 200_000, seed: int = 0) -> float:
    """``(1-E rho)/(1+E rho)`` to the right, the mirrored value to the left,
    and zero otherwise."""
    b = check_B(law, n_samples, seed)
    if b.B_plus:
        return (1.0 - b.E_rho) / (1.0 + b.E_rho)
    if b.B_minus:
        return -(1.0 - b.E_inv_rho) / (1.0 + b.E_inv_rho)
    return 0.0


@dataclass(frozen=True)
class SeriesVelocity:
    """The series ``E[(1 - rho_0) sum_{j<J} prod_{k=1..j} rho_k]`` and its
    value divided by the mean of the invariant density series.

    For i.i.d. laws the raw series sums to ``1 - E[rho]^J`` whatever the law,
    so only the normalized value is a velocity; both are reported.
    """

    raw: float
    normalized: float
    density_mean: float
    truncation_bound: float
    terms: int
    note: str = ("raw series equals 1 - E[rho]^J for every i.i.d. law; "
                 "dividing by the density mean gives the classical velocity")

    def as_dict(self) -> dict:
        return {"raw": self.raw, "normalized": self.normalized,
                "density_mean": self.density_mean,
                "truncation_bound": self.truncation_bound, "terms": self.terms,
                "note": self.note}


def truncation_bound(e_rho: float, terms: int) -> float:
    """Bound on the relative error of the ``terms``-term density series:
    ``max(E[rho]^J / (1 - E[rho]), 2 E[rho]^J)``."""
    g = e_rho ** terms
    return max(g / (1.0 - e_rho), 2.0 * g)


def series_velocity(law: EnvironmentLaw, terms: int = DEFAULT_TERMS,
                    replicas: int = 200_000, seed: int = 0) -> SeriesVelocity:
    if terms < 1:
        raise ConfigError("need at least one series term")
    b = check_B(law, replicas, seed)
    if not b.B_plus:
        raise DomainError(f"series velocity needs E[rho] < 1 (got {b.E_rho:.6g})")
    er = b.E_rho
    sup = rho_support(law)
    if sup is not None:
        geo = math.fsum(er ** j for j in range(terms))
        raw = (1.0 - er) * geo
        dens = (1.0 + er) * geo
    else:
        ks = line_windows(law, derive_seeds(seed, TAG_AUX, 7, replicas), 0, terms - 1)
        rho = ks[:, :, 1] / ks[:, :, 0]
        tail = _series_tail(rho[:, 1:], terms)
        raw = float(np.mean((1.0 - rho[:, 0]) * tail))
        dens = float(np.mean((1.0 + rho[:, 0]) * tail))
    return SeriesVelocity(raw, raw / dens, dens, truncation_bound(er, terms), terms)


def velocity(law: EnvironmentLaw, method: str = "solomon_oracle", terms: int = DEFAULT_TERMS,
             n: int = 100_000, replicas: int = 500, master_seed: int = 0,
             stream_id: int = 0, level: float = 0.95) -> EstimateWithCI:
    """Asymptotic speed ``lim X_n / n`` by one of four methods.

    ``solomon_oracle`` and ``paper_formula`` are closed forms (exact for
    finitely supported laws); ``direct_mc`` averages ``X_n / n`` over
    replicas; ``renewal_mc`` uses renewal blocks.  ``paper_formula`` returns
    the raw series with its truncation bound as the interval.
    """
    _require_1d(law)
    if method == "solomon_oracle":
        v = solomon_velocity(law, seed=master_seed)
        return EstimateWithCI(v, v, v, 0, level, "solomon-oracle", seeds=(master_seed,))
    if method == "paper_formula":
        sv = series_velocity(law, terms, seed=master_seed)
        return EstimateWithCI(sv.raw, sv.raw - sv.truncation_bound, sv.raw + sv.truncation_bound,
                              0, level, "paper-formula", seeds=(master_seed,))
    if method == "direct_mc":
        return direct_velocity(law, n, replicas, master_seed, stream_id, level)
    if method == "renewal_mc":
        from .renewal import simulate_records, estimate_velocity
        b = check_B(law, seed=master_seed)
        sign = -1 if (b.B_minus or (not b.B_plus and summarize(law).E_log_rho > 0)) else 1
        recs = simulate_records(law, (sign,), n, replicas, master_seed, stream_id)
        est = estimate_velocity(recs, level=level)
        if sign == 1:
            return est
        return EstimateWithCI(-est.value, -est.upper, -est.lower, est.replicas, level,
                              est.method, est.censored_fraction, est.seeds, est.std_error)
    raise ConfigError(f"unknown velocity method {method!r}")


def direct_velocity(law: EnvironmentLaw, n: int, replicas: int, master_seed: int = 0,
                    stream_id: int = 0, level: float = 0.95, hold: float = 0.0,
                    direction=None) -> EstimateWithCI:
    """Mean of ``X_n . l / n`` over independent (environment, walk) replicas."""
    dim = law.dim
    l = np.eye(dim)[0] if direction is None else np.asarray(direction, dtype=float)
    env_seeds, walk_seeds = replica_seeds(master_seed, stream_id, replicas)
    kind, params, table = law.packed()
    pos = positions_at(kind, params, table, dim, env_seeds, walk_seeds, hold,
                       np.zeros(dim, dtype=np.int64), np.array([n], dtype=np.int64))
    return mean_ci(pos[:, 0, :] @ l / n, level, "direct-mc", seeds=(master_seed, stream_id))


# ---------------------------------------------------------------------------
# invariant density


@nb.njit(cache=True)
def _line_windows(kind, params, table, seeds, lo, hi):
    n = seeds.shape[0]
    m = hi - lo + 1
    out = np.empty((n, m, 2))
    buf = np.empty(2)
    for r in range(n):
        for i in range(m):
            site_kernel(kind, params, table, 1, seeds[r], lo + i, 0, 0, buf)
            out[r, i, 0] = buf[0]
            out[r, i, 1] = buf[1]
    return out


def line_windows(law: EnvironmentLaw, seeds: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Kernels on sites ``lo..hi`` for one environment per seed: shape ``(n, hi-lo+1, 2)``."""
    _require_1d(law)
    kind, params, table = law.packed()
    return _line_windows(kind, params, table, np.asarray(seeds, dtype=np.uint64), lo, hi)


def _series_tail(rho_right: np.ndarray, terms: int) -> np.ndarray:
    """``sum_{j<terms} prod_{k<=j} rho_k`` with ``rho_right[:, k-1] = rho_k``."""
    n = rho_right.shape[0]
    acc = np.ones(n)
    prod = np.ones(n)
    for k in range(terms - 1):
        prod = prod * rho_right[:, k]
        acc = acc + prod
    return acc


def density_series(kernels: np.ndarray, terms: int = DEFAULT_TERMS, side: str = "plus",
                   origin: int = 0) -> np.ndarray:
    """Unnormalized invariant density on a stack of 1D windows.

    ``kernels`` has shape ``(n, m, 2)`` and the origin sits at column
    ``origin``.  ``side='plus'`` evaluates
    ``(1 + rho_0) sum_{j<J} prod_{k=1..j} rho_k`` (needs sites ``0..J-1``);
    ``side='minus'`` the reflected series
    ``(1 + 1/rho_0) sum_{j<J} prod_{k=1..j} 1/rho_{-k}`` (sites ``-(J-1)..0``).
    """
    ks = np.asarray(kernels, dtype=float)
    if ks.ndim == 2:
        ks = ks[None]
    rho = ks[:, :, 1] / ks[:, :, 0]
    if side == "plus":
        if ks.shape[1] - origin < terms:
            raise ConfigError(f"window must cover sites 0..{terms - 1}")
        r0 = rho[:, origin]
        right = rho[:, origin + 1: origin + terms]
        return (1.0 + r0) * _series_tail(right, terms)
    if side == "minus":
        if origin < terms - 1:
            raise ConfigError(f"window must cover sites -{terms - 1}..0")
        r0 = 1.0 / rho[:, origin]
        left = 1.0 / rho[:, origin - 1::-1][:, : terms - 1] if origin > 0 else np.ones((rho.shape[0], 0))
        return (1.0 + r0) * _series_tail(left, terms)
    raise ConfigError("side must be 'plus' or 'minus'")


def invariant_density(law: EnvironmentLaw, window, terms: int = DEFAULT_TERMS,
                      side: str | None = None) -> float:
    """Unnormalized density at one realization.  ``window`` is a
    :class:`~rwre.walk_sim.KernelWindow` (radius at least ``terms - 1``) or an
    ``(m, 2)`` array of kernels on sites ``0..m-1``."""
    b = check_B(law)
    if side is None:
        side = "plus" if b.B_plus else "minus" if b.B_minus else None
    if side is None or (side == "plus" and not b.B_plus) or (side == "minus" and not b.B_minus):
        raise DomainError("invariant probability density needs E[rho] < 1 (or E[1/rho] < 1 "
                          "for the reflected series)")
    if hasattr(window, "kernels"):
        return float(density_series(window.kernels, terms, side, window.radius)[0])
    arr = np.asarray(window, dtype=float)
    origin = 0 if side == "plus" else arr.shape[0] - 1
    return float(density_series(arr, terms, side, origin)[0])


def density_normalizer(law: EnvironmentLaw, terms: int = DEFAULT_TERMS, replicas: int = 200_000,
                       master_seed: int = 0, level: float = 0.95) -> EstimateWithCI:
    """Mean of the truncated ``plus`` density series (exact for finitely
    supported laws, Monte Carlo otherwise)."""
    b = check_B(law, seed=master_seed)
    if not b.B_plus:
        raise DomainError("density normalizer needs E[rho] < 1")
    if rho_support(law) is not None:
        v = (1.0 + b.E_rho) * math.fsum(b.E_rho ** j for j in range(terms))
        return EstimateWithCI(v, v, v, 0, level, "closed-form", seeds=(master_seed,))
    ks = line_windows(law, derive_seeds(master_seed, TAG_AUX, 11, replicas), 0, terms - 1)
    return mean_ci(density_series(ks, terms), level, "mc", seeds=(master_seed,))


@dataclass(frozen=True)
class InvarianceCheck:
    """``|int Rg dnu - int g dnu|`` with its standard error and truncation bound."""

    integral_g: float
    integral_Rg: float
    discrepancy: float
    std_error: float
    truncation_bound: float
    replicas: int
    terms: int

    @property
    def tolerance(self) -> float:
        return 3.0 * self.std_error + self.truncation_bound

    @property
    def consistent(self) -> bool:
        return abs(self.discrepancy) <= self.tolerance

    def as_dict(self) -> dict:
        return {"integral_g": self.integral_g, "integral_Rg": self.integral_Rg,
                "discrepancy": self.discrepancy, "std_error": self.std_error,
                "truncation_bound": self.truncation_bound, "tolerance": self.tolerance,
                "consistent": self.consistent, "replicas": self.replicas, "terms": self.terms}


def check_invariance(law: EnvironmentLaw, g: LocalFunctional, terms: int = DEFAULT_TERMS,
                     replicas: int = 1_000_000, master_seed: int = 0, chunk: int = 50_000
                     ) -> InvarianceCheck:
    """Monte Carlo test of ``int R g dnu = int g dnu`` for the density measure.

    Both integrals are estimated from the same environments, as
    ``E[f (Rg - g)] / E[f]`` with ``f`` the truncated density, so the
    discrepancy's standard error comes from paired differences.
    """
    b = check_B(law, seed=master_seed)
    if not b.B_plus:
        raise DomainError("invariance check needs E[rho] < 1")
    if g.batch is None:
        raise ConfigError(f"functional {g.name} has no batch evaluator")
    r = g.radius
    lo = -(r + 1)
    hi = max(terms - 1, r + 1)
    origin = -lo
    seeds = derive_seeds(master_seed, TAG_AUX, 13, replicas)
    fs, gs, rgs = [], [], []
    for start in range(0, replicas, chunk):
        ks = line_windows(law, seeds[start:start + chunk], lo, hi)
        f = density_series(ks, terms, "plus", origin)
        win = ks[:, origin - r: origin + r + 1]
        right = ks[:, origin + 1 - r: origin + r + 2]
        left = ks[:, origin - 1 - r: origin + r]
        gv = g.batch(win)
        rg = ks[:, origin, 0] * g.batch(right) + ks[:, origin, 1] * g.batch(left)
        fs.append(f)
        gs.append(gv)
        rgs.append(rg)
    f = np.concatenate(fs)
    gv = np.concatenate(gs)
    rg = np.concatenate(rgs)
    n = f.size
    fm = math.fsum(f) / n
    ig = math.fsum(f * gv) / n / fm
    irg = math.fsum(f * rg) / n / fm
    diff = f * (rg - gv)
    dm = math.fsum(diff) / n
    # delta method for the ratio E[f h] / E[f]
    resid = diff - (dm / fm) * f
    se = math.sqrt(math.fsum(resid ** 2) / (n - 1) / n) / fm
    return InvarianceCheck(ig, irg, dm / fm, se, truncation_bound(b.E_rho, terms), n, terms)


# ---------------------------------------------------------------------------
# sub-ballistic exponent


@dataclass(frozen=True)
class KappaRoot:
    kks_kappa: float
    bracket: tuple
    residual: float
    sub_ballistic: bool

    def as_dict(self) -> dict:
        return {"kks_kappa": self.kks_kappa, "bracket": list(self.bracket),
                "residual": self.residual, "sub_ballistic": self.sub_ballistic}


def kks_exponent(law: EnvironmentLaw, n_samples: int = 200_000, seed: int = 0,
                 tol: float = 1e-10) -> KappaRoot:
    """Non-trivial root of ``E[rho^k] = 1``.

    The map ``k -> E[rho^k] - 1`` is convex, vanishes at 0 and has slope
    ``E[log rho] < 0`` there, so it is negative on ``(0, root)`` and
    positive beyond.  An upper bracket is found by doubling and a lower one
    by halving, then the root is bisected.
    """
    sup = rho_support(law)
    if sup is not None:
        rho, w = sup
    else:
        rho = rho_samples(law, n_samples, seed)
        w = np.full(rho.size, 1.0 / rho.size)
    with np.errstate(divide="ignore"):
        lr = np.log(rho)
    e_log = float(w @ lr)
    if not e_log < 0:
        raise DomainError(f"E[log rho] < 0 fails (got {e_log:.6g})")
    if not (w[rho > 1.0].sum() > 0):
        raise DomainError("P[rho > 1] > 0 fails: E[rho^k] < 1 for every k > 0")
    keep = np.isfinite(lr)
    lr_k, w_k = lr[keep], w[keep]

    def phi(k: float) -> float:
        return math.fsum(w_k * np.exp(k * lr_k)) - 1.0

    hi = 1.0
    while phi(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise DomainError("no root found below 1e6")
    lo = hi / 2.0
    while phi(lo) >= 0.0:
        lo /= 2.0
        if lo < 1e-300:
            raise DomainError("could not bracket away from the trivial root")
    bracket = (lo, hi)
    a, b = lo, hi
    for _ in range(200):
        mid = 0.5 * (a + b)
        if phi(mid) < 0.0:
            a = mid
        else:
            b = mid
        if b - a <= 4e-16 * b:
            break
    ka = a if abs(phi(a)) <= abs(phi(b)) else b
    res = abs(phi(ka))
    if res > tol:
        raise DomainError(f"bisection residual {res:.3e} above {tol:.1e}")
    return KappaRoot(ka, bracket, res, ka < 1.0)


# ---------------------------------------------------------------------------
# recurrent-regime scaling


@dataclass(frozen=True)
class SinaiRow:
    n: int
    median_abs: float
    normalized: float  # median |X_n| / (log n)^2, nan for n = 1


@dataclass(frozen=True)
class SinaiTable:
    rows: tuple
    ratio: float
    bound: float
    consistent: bool
    growing: bool

    def as_dict(self) -> dict:
        return {"rows": [r.__dict__ for r in self.rows], "ratio": self.ratio,
                "bound": self.bound, "consistent": self.consistent, "growing": self.growing}


def sinai_diagnostic(law: EnvironmentLaw, n_grid, replicas: int = 500, master_seed: int = 0,
                     stream_id: int = 0, bound: float = 5.0) -> SinaiTable:
    """Median of ``|X_n| / (log n)^2`` along a grid of times.

    ``ratio`` is max/min of the normalized medians over grid points with
    ``n >= 2``.  ``growing`` flags a ratio above ``bound`` with medians
    increasing along the grid, the signature of faster-than-logarithmic
    spreading.
    """
    _require_1d(law)
    grid = np.array(sorted(int(n) for n in n_grid), dtype=np.int64)
    env_seeds, walk_seeds = replica_seeds(master_seed, stream_id, replicas)
    kind, params, table = law.packed()
    pos = positions_at(kind, params, table, 1, env_seeds, walk_seeds, 0.0,
                       np.zeros(1, dtype=np.int64), grid)[:, :, 0]
    rows = []
    for j, n in enumerate(grid):
        med = float(np.median(np.abs(pos[:, j])))
        norm = med / math.log(n) ** 2 if n >= 2 else float("nan")
        rows.append(SinaiRow(int(n), med, norm))
    vals = np.array([r.normalized for r in rows if r.n >= 2])
    if vals.size == 0 or vals.min() <= 0:
        ratio = float("inf")
    else:
        ratio = float(vals.max() / vals.min())
    growing = bool(ratio > bound and vals.size > 1 and np.all(np.diff(vals) > 0))
    return SinaiTable(tuple(rows), ratio, bound, bool(ratio <= bound), growing)


# ---------------------------------------------------------------------------
# harmonic potential


@dataclass(frozen=True)
class PotentialTable:
    """Values of the harmonic function ``f`` with ``f(0) = 0`` and increments
    ``f(j+1) - f(j) = -prod_{i=1..j} rho_i`` (``j >= 0``) and
    ``-prod_{i=j+1..0} 1/rho_i`` (``j < 0``).

    ``log_increments[j]`` holds ``log|f(j+1) - f(j)|`` for every window edge, so
    the table stays usable when the values overflow (``log_domain``).
    """

    sites: np.ndarray
    values: np.ndarray
    log_increments: np.ndarray
    kernels: np.ndarray
    log_domain: bool

    def value(self, x: int) -> float:
        return float(self.values[int(x) - int(self.sites[0])])

    def harmonicity_residual(self) -> float:
        """Largest relative residual of ``q(y) D_y - p(y) D_{y-1} = 0`` at
        interior sites (``D_y`` the increment from ``y`` to ``y+1``)."""
        li = self.log_increments
        q = self.kernels[1:-1, 0]
        p = self.kernels[1:-1, 1]
        a = np.log(q) + li[1:]
        b = np.log(p) + li[:-1]
        return float(np.max(np.abs(np.expm1(a - b)))) if a.size else 0.0

    def martingale_residual(self) -> float:
        """``|E_0[f(X_1)] - f(0)|`` using the kernel at the origin."""
        i0 = -int(self.sites[0])
        q, p = self.kernels[i0]
        return abs(q * self.values[i0 + 1] + p * self.values[i0 - 1] - self.values[i0])

    def as_rows(self) -> list:
        return [(int(x), float(v)) for x, v in zip(self.sites, self.values)]


def potential(env: Environment | np.ndarray, lo: int, hi: int) -> PotentialTable:
    """Potential on sites ``lo..hi`` (``lo < 0 < hi``) for one realization.

    ``env`` is a one-dimensional :class:`Environment` or an array of kernels
    on ``lo..hi``.
    """
    if not lo < 0 < hi:
        raise ConfigError("window must contain -1, 0 and 1")
    sites = np.arange(lo, hi + 1, dtype=np.int64)
    if isinstance(env, Environment):
        _require_1d(env.law)
        ks = env.kernels_at(sites.reshape(-1, 1))
    else:
        ks = np.asarray(env, dtype=float)
        if ks.shape != (sites.size, 2):
            raise ConfigError("kernel array must match the window")
    with np.errstate(divide="ignore"):
        lrho = np.log(ks[:, 1]) - np.log(ks[:, 0])
    i0 = -lo
    # log|D_j| for j = lo .. hi-1 (edge j -> j+1)
    m = hi - lo
    logd = np.zeros(m)
    # j >= 0: sum_{i=1..j} log rho_i
    right = np.concatenate([[0.0], np.cumsum(lrho[i0 + 1: i0 + hi])])
    logd[i0:] = right
    # j < 0: -sum_{i=j+1..0} log rho_i, for j = -1, -2, ..., lo
    left = -np.cumsum(lrho[i0:0:-1])  # j=-1 uses i=0; j=-2 uses i=-1,0; ...
    logd[:i0] = left[::-1]
    overflow = bool(np.any(logd > 700.0))
    with np.errstate(over="ignore"):
        inc = -np.exp(logd)
    vals = np.empty(sites.size)
    vals[i0] = 0.0
    # f(x) for x > 0: cumulative increments
    vals[i0 + 1:] = np.cumsum(inc[i0:])
    # f(x) for x < 0: f(x) = f(x+1) - D_x
    vals[:i0] = -np.cumsum(inc[:i0][::-1])[::-1]
    return PotentialTable(sites, vals, logd, ks, overflow)
