"""Empirical quenched large-deviation rate function.

``I_hat(x) = -(1/n) log p_h^(n)(0, [nx])`` is computed exactly in one frozen
environment by the log-space forward recursion of the holding-time walk
(kernel ``(1 - h) omega + h delta_0``), so the support of ``p_h^(n)(0, .)``
is exactly the lattice points of the scaled unit ball ``n B_1(1)``.
``[y]`` is the componentwise floor.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .env_model import Environment, EnvironmentLaw, jump_vectors
from .errors import ConfigError, DomainError
from .exact_quenched import NStep, check_cell_cap, nstep_mass_trace, nstep_probabilities

SUPERADD_SLACK = 1e-12
CONSERVATION_TOL_SMALL = 1e-12  # n <= 200
CONSERVATION_TOL_LARGE = 1e-9


def default_hold(law: EnvironmentLaw) -> float:
    """Hold probability ``kappa`` (the declared ellipticity constant), or
    ``1/(2d+1)`` when the law declares none."""
    k = law.declared_kappa
    if k is not None and 0.0 < k < 1.0:
        return float(k)
    return 1.0 / (2 * law.dim + 1)


def lattice_point(x, n: int) -> np.ndarray:
    """``[nx]`` with the componentwise floor."""
    return np.floor(np.asarray(x, dtype=float) * n + 1e-12).astype(np.int64)


# ---------------------------------------------------------------------------
# gauge norm


@dataclass(frozen=True)
class GaugeNorm:
    """Minkowski gauge of the convex hull of the one-step jumps and 0.

    ``norm(x) = min{sum_e c_e : x = sum_e c_e e, c >= 0}``; for nearest-neighbour
    jumps this is ``|x|_1``.  ``steps(x)`` is the least number of holding-walk
    steps needed to reach ``x``.
    """

    jumps: np.ndarray

    @classmethod
    def nearest_neighbour(cls, dim: int) -> "GaugeNorm":
        return cls(jump_vectors(dim))

    @property
    def dim(self) -> int:
        return int(self.jumps.shape[1])

    @property
    def _is_nearest_neighbour(self) -> bool:
        return self.jumps.shape[0] == 2 * self.dim and \
            np.array_equal(np.abs(self.jumps).sum(axis=1), np.ones(2 * self.dim)) and \
            np.array_equal(np.abs(self.jumps).sum(axis=0), 2 * np.ones(self.dim))

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float).ravel()
        if self._is_nearest_neighbour:
            return float(np.abs(x).sum())
        res = optimize.linprog(np.ones(self.jumps.shape[0]), A_eq=self.jumps.T.astype(float),
                               b_eq=x, bounds=(0, None), method="highs")
        if not res.success:
            return float("inf")
        return float(res.fun)

    def steps(self, x) -> int:
        """Least ``n`` with ``x`` in the ``n``-step reachable set (breadth-first)."""
        target = tuple(int(v) for v in np.ravel(x))
        if self._is_nearest_neighbour:
            return int(sum(abs(v) for v in target))
        frontier = {tuple([0] * self.dim)}
        n = 0
        bound = int(math.ceil(self(target))) + 2
        while target not in frontier:
            n += 1
            if n > 4 * bound + 4:
                raise DomainError("target unreachable with this jump set")
            frontier = {tuple(int(a + b) for a, b in zip(p, e)) for p in frontier
                        for e in self.jumps} | frontier
            frontier -= {p for p in frontier if self(p) > n + 1e-9}
        return n

    def in_ball(self, x, tol: float = 1e-12) -> bool:
        return self(x) <= 1.0 + tol


# ---------------------------------------------------------------------------
# dynamic programme


def quenched_nstep(env: Environment, n: int, hold: float | None = None, start=None
                   ) -> NStep:
    """Log-space ``p_h^(n)(start, .)`` on the cube ``start + [-n, n]^d``."""
    if hold is None:
        hold = default_hold(env.law)
    if not 0.0 <= hold < 1.0:
        raise ConfigError("hold must lie in [0, 1)")
    if start is None:
        start = np.zeros(env.dim, dtype=np.int64)
    return nstep_probabilities(env, start, n, hold)


def conservation_error(env: Environment, n: int, hold: float | None = None) -> float:
    """Largest ``|total mass - 1|`` over steps ``0..n`` (plain sums)."""
    if hold is None:
        hold = default_hold(env.law)
    trace = nstep_mass_trace(env, np.zeros(env.dim, dtype=np.int64), n, hold)
    return float(np.abs(trace - 1.0).max())


def conservation_tolerance(n: int) -> float:
    return CONSERVATION_TOL_SMALL if n <= 200 else CONSERVATION_TOL_LARGE


@dataclass(frozen=True)
class RateEstimate:
    x: tuple
    n: int
    I_hat: float
    site: tuple
    env_seed: int
    hold: float
    infinite: bool
    outside_ball: bool
    boundary_approach: bool = False

    def as_dict(self) -> dict:
        d = asdict(self)
        d["x"] = list(self.x)
        d["site"] = list(self.site)
        return d


def _estimate(dp: NStep, env: Environment, x, n: int, hold: float) -> RateEstimate:
    xv = np.asarray(x, dtype=float).ravel()
    if xv.size != env.dim:
        raise ConfigError(f"x needs {env.dim} components")
    outside = float(np.abs(xv).sum()) > 1.0 + 1e-12
    boundary = (not outside) and abs(float(np.abs(xv).sum()) - 1.0) <= 1e-12 and n > 1
    point = xv * (1.0 - 1.0 / math.sqrt(n)) if boundary else xv
    y = lattice_point(point, n)
    lp = dp.log_prob(y) if not outside else float("-inf")
    infinite = not np.isfinite(lp)
    val = float("inf") if infinite else -lp / n
    return RateEstimate(tuple(float(v) for v in xv), int(n), val, tuple(int(v) for v in y),
                        int(env.master_seed), float(hold), bool(infinite), bool(outside),
                        bool(boundary))


def empirical_rate(env: Environment, x, n: int, hold: float | None = None) -> RateEstimate:
    """``-(1/n) log p_h^(n)(0, [nx])`` in the frozen environment ``env``.

    Points outside ``B_1(1)`` return ``+inf`` with ``outside_ball`` set.
    Points on the sphere ``|x|_1 = 1`` are evaluated at the interior
    approach ``(1 - n^{-1/2}) x`` and flagged.  A DP too large for the cell
    cap raises a resource error naming the feasible ``n``.
    """
    if hold is None:
        hold = default_hold(env.law)
    check_cell_cap(n, env.dim)
    dp = quenched_nstep(env, n, hold)
    return _estimate(dp, env, x, n, hold)


def superadditivity_check(env: Environment, n: int, m: int, x, y,
                          hold: float | None = None, slack: float = SUPERADD_SLACK) -> bool:
    """``p^(n+m)(0, x+y) >= p^(n)(0, x) p^(m)(x, x+y)`` up to relative ``slack``."""
    if hold is None:
        hold = default_hold(env.law)
    x = np.asarray(x, dtype=np.int64).reshape(env.dim)
    y = np.asarray(y, dtype=np.int64).reshape(env.dim)
    total = quenched_nstep(env, n + m, hold).log_prob(x + y)
    first = quenched_nstep(env, n, hold).log_prob(x)
    second = quenched_nstep(env, m, hold, start=x).log_prob(x + y)
    rhs = first + second
    if not np.isfinite(rhs):
        return True
    return bool(total >= rhs + math.log1p(-slack))


# ---------------------------------------------------------------------------
# Legendre oracle for homogeneous walks


def log_mgf(kernel, hold: float, lam) -> float:
    """``log(h + (1 - h) sum_e omega(e) exp(lam . e))``, evaluated stably."""
    k = np.asarray(kernel, dtype=float)
    d = k.size // 2
    moves = jump_vectors(d)
    lam = np.asarray(lam, dtype=float).reshape(d)
    ex = moves @ lam
    terms = [math.log(hold)] if hold > 0 else []
    terms += [math.log((1.0 - hold) * w) + e for w, e in zip(k, ex) if w > 0]
    mx = max(terms)
    return mx + math.log(math.fsum(math.exp(t - mx) for t in terms))


def legendre_rate(kernel, x, hold: float | None = None) -> float:
    """``sup_lam (lam . x - log_mgf(lam))`` for a homogeneous kernel.  The
    default hold matches :func:`default_hold` for the homogeneous law."""
    k = np.asarray(kernel, dtype=float)
    d = k.size // 2
    if hold is None:
        hold = float(k.min()) if 0.0 < k.min() < 1.0 else 1.0 / (2 * d + 1)
    xv = np.asarray(x, dtype=float).reshape(d)
    if float(np.abs(xv).sum()) > 1.0 + 1e-12:
        return float("inf")

    def neg(lam):
        return -(float(np.dot(lam, xv)) - log_mgf(k, hold, lam))

    if d == 1:
        res = optimize.minimize_scalar(lambda t: neg(np.array([t])), bounds=(-60, 60),
                                       method="bounded", options={"xatol": 1e-12})
        return float(-res.fun)
    res = optimize.minimize(neg, np.zeros(d), method="BFGS", options={"gtol": 1e-12})
    return float(-res.fun)


# ---------------------------------------------------------------------------
# curves and diagnostics


def bias_bound(n: int, dim: int) -> float:
    """Size of the finite-``n`` correction ``(d log n + 1) / n`` expected from
    the polynomial prefactor of local probabilities."""
    return (dim * math.log(n) + 1.0) / n


def richardson(n1: int, I1: float, n2: int, I2: float) -> float:
    """Eliminate a ``c log n / n`` correction from two values."""
    f1, f2 = math.log(n1) / n1, math.log(n2) / n2
    if not (np.isfinite(I1) and np.isfinite(I2)) or f1 == f2:
        return float(I2)
    return (I2 * f1 - I1 * f2) / (f1 - f2)


@dataclass(frozen=True)
class RateCurve:
    rows: tuple  # dicts: x, n, I_hat, infinite
    extrapolated: dict  # x -> {"I_n_prev", "I_n_max", "richardson"}
    convexity_violations: int
    convexity_checked: int
    tolerance: float
    drift_in_n: float
    drift_bound: float

    def as_dict(self) -> dict:
        return {"rows": list(self.rows),
                "extrapolated": {",".join(f"{v:g}" for v in k): v
                                 for k, v in self.extrapolated.items()},
                "convexity_violations": self.convexity_violations,
                "convexity_checked": self.convexity_checked, "tolerance": self.tolerance,
                "drift_in_n": self.drift_in_n, "drift_bound": self.drift_bound}


def _key(x) -> tuple:
    return tuple(round(float(v), 12) for v in np.ravel(x))


def rate_curve(env: Environment, n_grid: Sequence[int], x_grid: Sequence, hold: float | None = None
               ) -> RateCurve:
    """``I_hat`` on ``x_grid`` for each ``n``, with midpoint-convexity and
    drift-in-``n`` diagnostics at the largest ``n``.

    A triple ``(a, (a+b)/2, b)`` of grid points counts as a violation when
    ``I(mid) > (I(a) + I(b))/2 + 2 * bias_bound(n)``.  Violations are
    reported, not removed.
    """
    if env.dim not in (1, 2):
        raise DomainError("rate curves are built for dimensions 1 and 2")
    if hold is None:
        hold = default_hold(env.law)
    ns = sorted(int(n) for n in n_grid)
    if not ns:
        raise ConfigError("n_grid is empty")
    pts = [np.asarray(x, dtype=float).reshape(env.dim) for x in x_grid]
    rows = []
    table: dict = {}
    for n in ns:
        dp = quenched_nstep(env, n, hold)
        for x in pts:
            r = _estimate(dp, env, x, n, hold)
            table[(n, _key(x))] = r.I_hat
            rows.append({"x": list(r.x), "n": n, "I_hat": r.I_hat, "infinite": r.infinite,
                         "boundary_approach": r.boundary_approach})
    nmax = ns[-1]
    tol = 2.0 * bias_bound(nmax, env.dim)
    vals = {_key(x): table[(nmax, _key(x))] for x in pts}
    violations = checked = 0
    keys = list(vals)
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            mid = _key((np.array(keys[i]) + np.array(keys[j])) / 2.0)
            if mid in vals and mid != keys[i]:
                a, b, c = vals[keys[i]], vals[keys[j]], vals[mid]
                if not (np.isfinite(a) and np.isfinite(b)):
                    continue
                checked += 1
                if c > 0.5 * (a + b) + tol:
                    violations += 1
    extrap = {}
    drift = 0.0
    if len(ns) >= 2:
        n1 = ns[-2]
        for x in pts:
            k = _key(x)
            I1, I2 = table[(n1, k)], table[(nmax, k)]
            extrap[k] = {"I_n_prev": I1, "I_n_max": I2, "richardson": richardson(n1, I1, nmax, I2)}
            if np.isfinite(I1) and np.isfinite(I2):
                drift = max(drift, abs(I2 - I1))
        dbound = bias_bound(n1, env.dim)
    else:
        for x in pts:
            k = _key(x)
            extrap[k] = {"I_n_prev": float("nan"), "I_n_max": table[(nmax, k)],
                         "richardson": table[(nmax, k)]}
        dbound = bias_bound(nmax, env.dim)
    return RateCurve(tuple(rows), extrap, violations, checked, tol, drift, dbound)


@dataclass(frozen=True)
class SymmetryRow:
    x: float
    I_plus: float
    I_minus: float
    difference: float
    predicted: float
    tolerance: float

    @property
    def within(self) -> bool:
        return abs(self.difference - self.predicted) <= self.tolerance

    def as_dict(self) -> dict:
        d = asdict(self)
        d["within"] = self.within
        return d


def _log_rho_moments(law: EnvironmentLaw) -> tuple[float, float]:
    from .oned import summarize

    s = summarize(law)
    return s.E_log_rho, math.sqrt(max(s.var_log_rho, 0.0))


def symmetry_check_1d(env: Environment, x_grid: Sequence[float], n: int,
                      hold: float | None = None) -> tuple:
    """Compare ``I_hat(-x) - I_hat(x)`` with ``-x E[log rho]``.

    The tolerance is ``2 bias_bound(n) + 3 sd(log rho) sqrt(2|x|/n)``: the
    second term covers the quenched fluctuation of the potential over the
    ``2n|x|`` sites between the two targets.
    """
    if env.dim != 1:
        raise DomainError("the reflection identity is one-dimensional")
    if hold is None:
        hold = default_hold(env.law)
    e_log, sd = _log_rho_moments(env.law)
    dp = quenched_nstep(env, n, hold)
    out = []
    for x in x_grid:
        x = float(x)
        ip = _estimate(dp, env, [x], n, hold).I_hat
        im = _estimate(dp, env, [-x], n, hold).I_hat
        tol = 2.0 * bias_bound(n, 1) + 3.0 * sd * math.sqrt(2.0 * abs(x) / n)
        out.append(SymmetryRow(x, ip, im, im - ip, -x * e_log, tol))
    return tuple(out)


@dataclass(frozen=True)
class EvenOdd:
    n: int
    residual: float
    mass_direct: float
    mass_conditioned: float

    def as_dict(self) -> dict:
        return asdict(self)


def even_odd_reconstruction(env: Environment, n: int) -> EvenOdd:
    """Residual of ``P_0[X_{2n+1} = y] = sum_e omega(0,e) P_e[X_{2n} = y]``
    for the walk without holding, over all ``y``."""
    d = env.dim
    direct = nstep_probabilities(env, np.zeros(d, dtype=np.int64), 2 * n + 1, 0.0,
                                 log_domain=False).probs
    k0 = env.kernels_at(np.zeros((1, d), dtype=np.int64))[0]
    moves = jump_vectors(d)
    recon = np.zeros_like(direct)
    for e, w in zip(moves, k0):
        part = nstep_probabilities(env, e, 2 * n, 0.0, log_domain=False).probs
        # part covers e + [-2n, 2n]^d; place it inside [-(2n+1), 2n+1]^d
        sl = tuple(slice(int(c) + 1, int(c) + 1 + 2 * 2 * n + 1) for c in e)
        recon[sl] += w * part
    return EvenOdd(n, float(np.abs(direct - recon).max()), math.fsum(direct.ravel()),
                   math.fsum(recon.ravel()))


def seed_spread(law: EnvironmentLaw, x, n: int, seeds: Sequence[int],
                hold: float | None = None) -> dict:
    """``I_hat`` across independent environments (ergodicity diagnostic)."""
    vals = [empirical_rate(Environment(law, int(s)), x, n, hold).I_hat for s in seeds]
    v = np.asarray(vals)
    fin = v[np.isfinite(v)]
    return {"values": [float(a) for a in v],
            "mean": float(fin.mean()) if fin.size else float("inf"),
            "spread": float(fin.max() - fin.min()) if fin.size else 0.0}


def fuzz_superadditivity(law: EnvironmentLaw, cases: int, seed: int = 0,
                         max_steps: int = 12, hold: float | None = None) -> dict:
    """Random ``(env, n, m, x, y)`` cases of :func:`superadditivity_check`.

    ``x`` is drawn from the ``n``-step reachable set and ``y`` from the
    ``m``-step one so every case has positive right-hand side.
    """
    rng = np.random.default_rng(seed)
    d = law.dim
    violations = 0
    for _ in range(cases):
        env = Environment(law, int(rng.integers(0, 2 ** 31)))
        n = int(rng.integers(1, max_steps + 1))
        m = int(rng.integers(1, max_steps + 1))
        x = _reachable(rng, d, n)
        y = _reachable(rng, d, m)
        if not superadditivity_check(env, n, m, x, y, hold):
            violations += 1
    return {"cases": cases, "violations": violations}


def _reachable(rng: np.random.Generator, d: int, n: int) -> np.ndarray:
    """A uniformly random lattice point with ``|y|_1 <= n``, by rejection."""
    while True:
        y = rng.integers(-n, n + 1, size=d)
        if np.abs(y).sum() <= n:
            return y
