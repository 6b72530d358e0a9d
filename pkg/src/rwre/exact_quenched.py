"""Exact computations in one frozen environment.

Exit probabilities and expected exit times on finite domains come from the
linear system ``u(x) - sum_e omega(x,e) u(x+e) = data`` over interior sites,
solved by sparse LU with an explicit residual and maximum-principle check.
``n``-step transition probabilities come from a forward dynamic programme
on the exact support, optionally in log space.  Balanced environments
periodized on a torus give the stationary weights ``Phi_N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import logsumexp

from .env_model import Environment, jump_vectors
from .errors import ConfigError, ContractError, NumericalError, ResourceError

SOLVE_TOL = 1e-12
DEFAULT_CELL_CAP = 50_000_000


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class FiniteDomain:
    """Finite interior site set with its external boundary split into named
    pieces.  ``grid`` maps bounding-box cells to interior indices (``>= 0``),
    boundary pieces (``-2 - k`` for piece ``k``) or ``-1`` (outside)."""

    dim: int
    interior: np.ndarray
    pieces: tuple  # names
    boundary: Mapping[str, np.ndarray]
    origin: np.ndarray
    grid: np.ndarray

    @classmethod
    def from_sites(cls, interior, classify: Callable[[np.ndarray], np.ndarray] | None = None,
                   names: tuple = ("boundary",)) -> "FiniteDomain":
        """Domain with the given interior.  ``classify`` maps an ``(m, d)``
        array of boundary sites to piece indices into ``names``."""
        inner = np.unique(np.atleast_2d(np.asarray(interior, dtype=np.int64)), axis=0)
        d = inner.shape[1]
        moves = jump_vectors(d)
        nbrs = (inner[:, None, :] + moves[None, :, :]).reshape(-1, d)
        nbrs = np.unique(nbrs, axis=0)
        lo = np.minimum(inner.min(axis=0), nbrs.min(axis=0))
        hi = np.maximum(inner.max(axis=0), nbrs.max(axis=0))
        shape = tuple(int(v) for v in (hi - lo + 1))
        grid = np.full(shape, -1, dtype=np.int64)
        grid[tuple((inner - lo).T)] = np.arange(inner.shape[0])
        ext_mask = grid[tuple((nbrs - lo).T)] < 0
        ext = nbrs[ext_mask]
        if classify is None:
            labels = np.zeros(ext.shape[0], dtype=np.int64)
        else:
            labels = np.asarray(classify(ext), dtype=np.int64)
            if labels.shape != (ext.shape[0],) or labels.min(initial=0) < 0 or \
                    labels.max(initial=0) >= len(names):
                raise ConfigError("boundary classifier returned invalid piece labels")
        grid[tuple((ext - lo).T)] = -2 - labels
        bnd = {name: ext[labels == k] for k, name in enumerate(names)}
        return cls(d, inner, tuple(names), bnd, lo, grid)

    @classmethod
    def interval(cls, left: int, right: int) -> "FiniteDomain":
        """Interior ``left+1 .. right-1`` with pieces ``left`` and ``right``."""
        if right - left < 2:
            raise ConfigError("interval needs at least one interior site")
        inner = np.arange(left + 1, right).reshape(-1, 1)
        return cls.from_sites(inner, lambda s: (s[:, 0] >= right).astype(np.int64),
                              ("left", "right"))

    @classmethod
    def slab(cls, direction, back: float, front: float, lateral: int | None = None
             ) -> "FiniteDomain":
        """Sites with ``-back < x.l < front`` (and lateral half-width
        ``lateral`` in every coordinate orthogonal to the dominant axis of
        ``l``).  Pieces: ``front`` (``x.l >= front``), ``back``
        (``x.l <= -back``) and ``side``."""
        l = np.asarray(direction, dtype=float)
        d = l.size
        if d == 1:
            lo = math.floor(-back / abs(l[0])) - 1
            hi = math.ceil(front / abs(l[0])) + 1
            cand = np.arange(lo, hi + 1).reshape(-1, 1)
        else:
            if lateral is None:
                raise ConfigError("multi-dimensional slabs need a lateral bound")
            reach = int(math.ceil(max(back, front) / np.abs(l).max())) + lateral + 2
            axes = [np.arange(-reach, reach + 1)] * d
            cand = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
            perp = cand - np.outer(cand @ l / (l @ l), l)
            cand = cand[np.abs(perp).max(axis=1) <= lateral]
        h = cand @ l
        inner = cand[(h > -back) & (h < front)]

        def classify(s):
            hs = s @ l
            out = np.full(s.shape[0], 2, dtype=np.int64)
            out[hs >= front] = 0
            out[hs <= -back] = 1
            return out

        return cls.from_sites(inner, classify, ("front", "back", "side"))

    @property
    def size(self) -> int:
        return int(self.interior.shape[0])

    def code(self, sites) -> np.ndarray:
        s = np.atleast_2d(np.asarray(sites, dtype=np.int64)) - self.origin
        shape = np.array(self.grid.shape)
        inside = np.all((s >= 0) & (s < shape), axis=1)
        out = np.full(s.shape[0], -1, dtype=np.int64)
        out[inside] = self.grid[tuple(s[inside].T)]
        return out

    def index_of(self, site) -> int:
        c = int(self.code(site)[0])
        if c < 0:
            raise ConfigError(f"site {tuple(np.ravel(site))} is not interior")
        return c

    def validate(self) -> None:
        """Boundary pieces are disjoint and together equal the external boundary."""
        moves = jump_vectors(self.dim)
        nbrs = np.unique((self.interior[:, None, :] + moves).reshape(-1, self.dim), axis=0)
        codes = self.code(nbrs)
        if np.any(codes == -1):
            raise AssertionError("an interior neighbour is neither interior nor boundary")
        ext = nbrs[codes <= -2]
        allb = np.concatenate([self.boundary[p] for p in self.pieces]) if self.pieces else \
            np.zeros((0, self.dim), np.int64)
        if np.unique(allb, axis=0).shape[0] != allb.shape[0]:
            raise AssertionError("boundary pieces overlap")
        if allb.shape[0] != ext.shape[0]:
            raise AssertionError("boundary pieces do not cover the external boundary")


# ---------------------------------------------------------------------------
# fields and solves


@dataclass(frozen=True)
class QuenchedField:
    """Kernels frozen on the interior of a domain (rows aligned with
    ``domain.interior``)."""

    domain: FiniteDomain
    kernels: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=float)
        if k.shape != (self.domain.size, 2 * self.domain.dim):
            raise ConfigError("kernel array does not match the domain")
        if (k < 0).any() or np.abs(k.sum(axis=1) - 1).max() > 1e-12:
            raise ConfigError("kernels must be probability vectors")
        k = k.copy()
        k.setflags(write=False)
        object.__setattr__(self, "kernels", k)

    @classmethod
    def from_env(cls, domain: FiniteDomain, env: Environment) -> "QuenchedField":
        return cls(domain, env.kernels_at(domain.interior))

    @property
    def elliptic(self) -> bool:
        return bool((self.kernels > 0).all())


@dataclass(frozen=True)
class SolveReport:
    values: np.ndarray
    residual_inf_norm: float
    iterations: int
    method: str

    def as_dict(self) -> dict:
        return {"residual_inf_norm": self.residual_inf_norm, "iterations": self.iterations,
                "method": self.method}


@dataclass
class _System:
    A: sp.csr_matrix
    B: np.ndarray  # (n, pieces) one-step mass into each piece
    lu: object = None

    def factor(self):
        if self.lu is None:
            self.lu = spla.splu(self.A.tocsc())
        return self.lu


def _system(field: QuenchedField) -> _System:
    cached = field.__dict__.get("_system")
    if cached is not None:
        return cached
    dom = field.domain
    n = dom.size
    moves = jump_vectors(dom.dim)
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.ones(n)]
    B = np.zeros((n, len(dom.pieces)))
    for e in range(moves.shape[0]):
        codes = dom.code(dom.interior + moves[e])
        w = field.kernels[:, e]
        inner = codes >= 0
        rows.append(np.nonzero(inner)[0])
        cols.append(codes[inner])
        vals.append(-w[inner])
        bnd = codes <= -2
        np.add.at(B, (np.nonzero(bnd)[0], -2 - codes[bnd]), w[bnd])
        if np.any(codes == -1):
            raise ContractError("a neighbour of an interior site lies outside the domain")
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    sysm = _System(A, B)
    object.__setattr__(field, "_system", sysm)  # the field is immutable, so caching is safe
    return sysm


def _solve(sysm: _System, rhs: np.ndarray, tol: float, method: str) -> SolveReport:
    lu = sysm.factor()
    x = lu.solve(rhs)
    its = 1
    res = float(np.abs(sysm.A @ x - rhs).max(initial=0.0))
    scale = max(1.0, float(np.abs(x).max(initial=0.0)))
    while res > tol * scale and its < 4:  # iterative refinement
        x = x + lu.solve(rhs - sysm.A @ x)
        its += 1
        res = float(np.abs(sysm.A @ x - rhs).max(initial=0.0))
    if not np.isfinite(x).all() or res > tol * scale:
        raise NumericalError("linear solve did not reach tolerance", res)
    return SolveReport(x, res, its, method)


def exit_probabilities(field: QuenchedField, target: str | tuple, tol: float = SOLVE_TOL
                       ) -> SolveReport:
    """``P_x[walk leaves the domain through target]`` for every interior ``x``."""
    dom = field.domain
    names = (target,) if isinstance(target, str) else tuple(target)
    for t in names:
        if t not in dom.pieces:
            raise ConfigError(f"unknown boundary piece {t!r}")
    sysm = _system(field)
    cols = [dom.pieces.index(t) for t in names]
    rhs = sysm.B[:, cols].sum(axis=1)
    rep = _solve(sysm, rhs, tol, "sparse-lu")
    u = rep.values
    if u.min(initial=0.0) < -1e-12 or u.max(initial=0.0) > 1 + 1e-12:
        raise NumericalError("maximum principle violated", float(max(-u.min(), u.max() - 1)))
    return SolveReport(np.clip(u, 0.0, 1.0), rep.residual_inf_norm, rep.iterations, rep.method)


def exit_probability(field: QuenchedField, target: str | tuple, start) -> tuple[float, SolveReport]:
    rep = exit_probabilities(field, target)
    return float(rep.values[field.domain.index_of(start)]), rep


def expected_exit_time(field: QuenchedField, start, tol: float = SOLVE_TOL
                       ) -> tuple[float, SolveReport]:
    """``E_x[exit time]`` from ``u - P u = 1`` with zero boundary data."""
    sysm = _system(field)
    rep = _solve(sysm, np.ones(field.domain.size), tol, "sparse-lu")
    if rep.values.min() < 1.0 - 1e-9:
        raise NumericalError("expected exit time below one step", float(1 - rep.values.min()))
    return float(rep.values[field.domain.index_of(start)]), rep


@dataclass(frozen=True)
class RhoB:
    value: float
    log_value: float
    front_probability: float
    other_probability: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def rho_B(field: QuenchedField, start=None, front: str = "front", allow_log: bool = False
          ) -> RhoB:
    """Odds of leaving through anything but the front piece versus the front.

    Both probabilities come from the same factorization, so small values of
    either are resolved to relative accuracy instead of through ``1 - p``.
    """
    dom = field.domain
    if start is None:
        start = np.zeros(dom.dim, dtype=np.int64)
    others = tuple(p for p in dom.pieces if p != front)
    i = dom.index_of(start)
    pf = float(exit_probabilities(field, front).values[i])
    po = float(exit_probabilities(field, others).values[i]) if others else 0.0
    if pf < 1e-300:
        if not allow_log:
            raise NumericalError("front exit probability underflows; request the log ratio")
        return RhoB(float("inf"), math.log(max(po, 1e-300)) - math.log(1e-300), pf, po)
    val = po / pf
    return RhoB(val, math.log(val) if val > 0 else float("-inf"), pf, po)


# ---------------------------------------------------------------------------
# absorbing dynamics on a domain


@dataclass(frozen=True)
class AbsorptionResult:
    absorbed: dict  # piece -> mass
    survival: np.ndarray  # survival[t] = P[T > t]
    steps: int


def absorbing_dp(field: QuenchedField, start, max_steps: int = 1_000_000,
                 tol: float = 1e-15) -> AbsorptionResult:
    """Forward dynamics killed at the boundary; records the mass absorbed
    in each piece and the survival curve until the surviving mass drops
    below ``tol`` (or ``max_steps``)."""
    dom = field.domain
    sysm = _system(field)
    P = (sp.identity(dom.size, format="csr") - sysm.A).T.tocsr()  # transpose: row-vector action
    p = np.zeros(dom.size)
    p[dom.index_of(start)] = 1.0
    absorbed = np.zeros(len(dom.pieces))
    surv = [1.0]
    t = 0
    while t < max_steps:
        absorbed += p @ sysm.B
        p = P @ p
        t += 1
        s = float(p.sum())
        surv.append(s)
        if s < tol:
            break
    return AbsorptionResult({name: float(absorbed[k]) for k, name in enumerate(dom.pieces)},
                            np.array(surv), t)


@dataclass(frozen=True)
class EdgeTrap:
    """Survival of the walk confined to the edge ``{x, x+e}``.  ``survival[k]``
    is ``P_x[T > 2k]`` from the exact absorbing dynamics, ``product`` is
    ``omega(x,e) omega(x+e,-e)``."""

    site: tuple
    move: int
    product: float
    survival: np.ndarray
    partial_sums: np.ndarray

    def max_survival_error(self) -> float:
        k = np.arange(self.survival.size)
        return float(np.abs(self.survival - self.product ** k).max())

    def max_partial_sum_error(self) -> float:
        k = np.arange(self.partial_sums.size)
        closed = (1.0 - self.product ** (k + 1)) / (1.0 - self.product)
        return float(np.abs(self.partial_sums - closed).max())


def edge_trap(env: Environment, site, move: int, k_max: int) -> EdgeTrap:
    """Exact confinement probabilities on a two-site domain.

    The walk leaves ``{x, x+e}`` unless it alternates between the two sites,
    so ``P[T > 2k] = (omega(x,e) omega(x+e,-e))^k``; the partial sums of the
    survival sequence approach ``1 / (1 - product)``.
    """
    x = np.asarray(site, dtype=np.int64).reshape(env.dim)
    e = jump_vectors(env.dim)[move]
    dom = FiniteDomain.from_sites(np.vstack([x, x + e]))
    field_ = QuenchedField.from_env(dom, env)
    res = absorbing_dp(field_, x, max_steps=2 * k_max, tol=0.0)
    surv = res.survival[: 2 * k_max + 1 : 2]
    ks = env.kernels_at(np.vstack([x, x + e]))
    opp = move + 1 if move % 2 == 0 else move - 1
    prod = float(ks[0, move] * ks[1, opp])
    return EdgeTrap(tuple(int(v) for v in x), int(move), prod, surv,
                    np.array([math.fsum(surv[: j + 1]) for j in range(surv.size)]))


# ---------------------------------------------------------------------------
# n-step probabilities


@dataclass(frozen=True)
class NStep:
    """``p^(n)(start, y)`` on the cube ``start + [-n, n]^d``.  ``log_probs``
    is always filled; ``probs`` is its exponential."""

    start: tuple
    n: int
    hold: float
    log_probs: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(self.log_probs)

    def _idx(self, y):
        off = np.asarray(y, dtype=np.int64) - np.asarray(self.start, dtype=np.int64) + self.n
        if (off < 0).any() or (off > 2 * self.n).any():
            return None
        return tuple(off)

    def log_prob(self, y) -> float:
        i = self._idx(y)
        return float("-inf") if i is None else float(self.log_probs[i])

    def prob(self, y) -> float:
        return math.exp(self.log_prob(y))

    def total_mass(self) -> float:
        return float(math.fsum(self.probs.ravel()))

    def sites(self) -> np.ndarray:
        d = self.log_probs.ndim
        axes = [np.arange(-self.n, self.n + 1)] * d
        g = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
        return g + np.asarray(self.start, dtype=np.int64)


def _cube_kernels(env: Environment, start, n: int) -> np.ndarray:
    d = env.dim
    axes = [np.arange(-n, n + 1)] * d
    g = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    ks = env.kernels_at(g + np.asarray(start, dtype=np.int64))
    return ks.reshape((2 * n + 1,) * d + (2 * d,))


def check_cell_cap(n: int, dim: int, cap: int = DEFAULT_CELL_CAP) -> None:
    cells = (2 * n + 1) ** dim
    if cells > cap:
        feasible = int((cap ** (1.0 / dim) - 1) // 2)
        raise ResourceError(f"(2n+1)^d = {cells} cells exceeds the cap {cap}; "
                            f"largest feasible n is {feasible}")


def _shift(a: np.ndarray, axis: int, s: int, fill: float) -> np.ndarray:
    """``out[i] = a[i - s]`` along ``axis`` with ``fill`` shifted in."""
    out = np.full_like(a, fill)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if s > 0:
        src[axis] = slice(0, -s)
        dst[axis] = slice(s, None)
    else:
        src[axis] = slice(-s, None)
        dst[axis] = slice(0, s)
    out[tuple(dst)] = a[tuple(src)]
    return out


def nstep_probabilities(env: Environment, start, n: int, hold: float = 0.0,
                        kernels: np.ndarray | None = None, cap: int = DEFAULT_CELL_CAP,
                        log_domain: bool = True) -> NStep:
    """Exact ``n``-step law of the walk from ``start`` by forward recursion.

    ``hold > 0`` is the holding-time walk with kernel
    ``(1 - hold) omega + hold delta_0``.  Computation runs in log space by
    default (``log_domain=False`` uses plain sums, adequate for small ``n``).
    """
    if n < 0:
        raise ConfigError("n must be non-negative")
    d = env.dim
    check_cell_cap(n, d, cap)
    if kernels is None:
        kernels = _cube_kernels(env, start, n)
    with np.errstate(divide="ignore"):
        logk = np.log(kernels * (1.0 - hold))
        logh = math.log(hold) if hold > 0 else float("-inf")
    shape = (2 * n + 1,) * d
    centre = (n,) * d
    if log_domain:
        lp = np.full(shape, -np.inf)
        lp[centre] = 0.0
        for _ in range(n):
            terms = [lp + logh] if hold > 0 else []
            for e in range(2 * d):
                axis, sgn = e // 2, (1 if e % 2 == 0 else -1)
                terms.append(_shift(lp + logk[..., e], axis, sgn, -np.inf))
            with np.errstate(invalid="ignore"):
                lp = logsumexp(np.stack(terms), axis=0)
        return NStep(tuple(int(v) for v in np.ravel(start)), n, hold, lp)
    p = np.zeros(shape)
    p[centre] = 1.0
    kk = kernels * (1.0 - hold)
    for _ in range(n):
        new = hold * p if hold > 0 else np.zeros(shape)
        for e in range(2 * d):
            axis, sgn = e // 2, (1 if e % 2 == 0 else -1)
            new += _shift(p * kk[..., e], axis, sgn, 0.0)
        p = new
    with np.errstate(divide="ignore"):
        return NStep(tuple(int(v) for v in np.ravel(start)), n, hold, np.log(p))


def nstep_mass_trace(env: Environment, start, n: int, hold: float = 0.0) -> np.ndarray:
    """Total mass after each of ``n`` plain-domain steps (conservation check)."""
    d = env.dim
    check_cell_cap(n, d)
    kernels = _cube_kernels(env, start, n) * (1.0 - hold)
    shape = (2 * n + 1,) * d
    p = np.zeros(shape)
    p[(n,) * d] = 1.0
    out = np.empty(n + 1)
    out[0] = 1.0
    for t in range(n):
        new = hold * p if hold > 0 else np.zeros(shape)
        for e in range(2 * d):
            new += _shift(p * kernels[..., e], e // 2, 1 if e % 2 == 0 else -1, 0.0)
        p = new
        out[t + 1] = math.fsum(p.ravel())
    return out


# ---------------------------------------------------------------------------
# torus invariant measure


@dataclass(frozen=True)
class TorusMeasure:
    """Stationary weights on the torus ``(Z / (2N+1))^d`` normalized to sum
    ``(2N+1)^d``.  ``lp_norm`` is the ``L^{d/(d-1)}`` norm with respect to the
    normalized counting measure."""

    N: int
    phi: np.ndarray
    report: SolveReport
    normalization_error: float
    lp_norm: float

    def as_dict(self) -> dict:
        return {"N": self.N, "residual": self.report.residual_inf_norm,
                "normalization_error": self.normalization_error, "lp_norm": self.lp_norm,
                "min": float(self.phi.min()), "max": float(self.phi.max())}


def torus_kernels(env: Environment, N: int) -> np.ndarray:
    """Kernels on the central box ``[-N, N]^d``, the fundamental domain of the
    periodized environment."""
    return _cube_kernels(env, np.zeros(env.dim, dtype=np.int64), N)


def _torus_matrix(kernels: np.ndarray) -> sp.csr_matrix:
    d = kernels.ndim - 1
    side = kernels.shape[0]
    m = side ** d
    idx = np.arange(m).reshape((side,) * d)
    rows, cols, vals = [], [], []
    for e in range(2 * d):
        axis, sgn = e // 2, (1 if e % 2 == 0 else -1)
        dest = np.roll(idx, -sgn, axis=axis)  # dest[x] = index of x + sgn e_axis
        rows.append(idx.ravel())
        cols.append(dest.ravel())
        vals.append(kernels[..., e].ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(m, m))


def torus_invariant_measure(env_or_kernels, N: int | None = None, tol: float = 1e-10,
                            require_balanced: bool = True) -> TorusMeasure:
    """Stationary weights of the walk on the torus obtained by repeating the
    central box periodically.  Solved as the linear system
    ``phi (I - P) = 0`` with one equation replaced by the normalization."""
    if isinstance(env_or_kernels, Environment):
        if N is None:
            raise ConfigError("N is required with an environment")
        ks = torus_kernels(env_or_kernels, N)
    else:
        ks = np.asarray(env_or_kernels, dtype=float)
        N = (ks.shape[0] - 1) // 2
    d = ks.ndim - 1
    if require_balanced:
        for j in range(d):
            if not np.array_equal(ks[..., 2 * j], ks[..., 2 * j + 1]):
                raise ConfigError("torus measure is defined here for balanced fields")
    P = _torus_matrix(ks)
    m = P.shape[0]
    A = (sp.identity(m, format="csr") - P).T.tolil()
    A[m - 1, :] = np.ones(m)
    rhs = np.zeros(m)
    rhs[m - 1] = float(m)
    phi = spla.spsolve(A.tocsc(), rhs)
    for _ in range(3):
        r = rhs - A @ phi
        if np.abs(r).max() <= 1e-13 * m:
            break
        phi = phi + spla.spsolve(A.tocsc(), r)
    res = float(np.abs(phi - P.T @ phi).max())
    if not np.isfinite(phi).all() or res > tol:
        raise NumericalError("stationary solve failed", res)
    norm_err = abs(math.fsum(phi) - m)
    p = d / (d - 1) if d > 1 else float("inf")
    if math.isfinite(p):
        lp = (math.fsum(np.abs(phi) ** p) / m) ** (1.0 / p)
    else:
        lp = float(np.abs(phi).max())
    return TorusMeasure(N, phi.reshape((2 * N + 1,) * d), SolveReport(phi, res, 1, "sparse-lu"),
                        norm_err, lp)
