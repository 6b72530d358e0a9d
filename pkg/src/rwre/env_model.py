"""Transition kernels, environment laws and keyed environments.

Jumps are ordered ``+e_1, -e_1, +e_2, -e_2, ...`` with the optional hold
move last.  An :class:`Environment` never stores kernels: ``kernel_at`` hashes
``(seed, site)`` into uniforms and turns them into a kernel, so the field is
an "infinite" i.i.d. (or product) environment with O(1) memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numba as nb
import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import ConfigError
from .keyed_rng import (TAG_ENV, TAG_SAMPLE, as_u64, derive_seeds, draw_uniform, site_hash,
                         site_key)
from .stats import StabilizationReport, stabilization

MAX_DIM = 3
SIMPLEX_TOL = 1e-12

KIND_HOMOGENEOUS = 0
KIND_DISCRETE = 1
KIND_DIRICHLET = 2
KIND_BALANCED = 3
KIND_TRAP = 4
KIND_ANISOTROPIC = 5


# ---------------------------------------------------------------------------
# jumps and kernels


@dataclass(frozen=True)
class JumpSet:
    dim: int
    include_hold: bool = False

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise ConfigError(f"dimension must be between 1 and {MAX_DIM}, got {self.dim}")

    @property
    def size(self) -> int:
        return 2 * self.dim + (1 if self.include_hold else 0)

    @property
    def moves(self) -> np.ndarray:
        return jump_vectors(self.dim, self.include_hold)

    def index(self, move: Sequence[int]) -> int:
        m = np.asarray(move, dtype=np.int64)
        hits = np.nonzero((self.moves == m).all(axis=1))[0]
        if hits.size == 0:
            raise KeyError(f"{tuple(move)} is not a jump of {self}")
        return int(hits[0])

    def opposite(self, k: int) -> int:
        """Index of the reversed move (the hold move is its own opposite)."""
        if k == 2 * self.dim:
            return k
        return k ^ 1


def jump_vectors(dim: int, include_hold: bool = False) -> np.ndarray:
    k = 2 * dim + (1 if include_hold else 0)
    out = np.zeros((k, dim), dtype=np.int64)
    for j in range(dim):
        out[2 * j, j] = 1
        out[2 * j + 1, j] = -1
    return out


@dataclass(frozen=True)
class TransitionKernel:
    """Jump probabilities at one site, aligned with ``jumps.moves``."""

    probs: np.ndarray
    jumps: JumpSet

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (self.jumps.size,):
            raise ConfigError(f"kernel has {p.size} entries, jump set needs {self.jumps.size}")
        if (p < 0).any():
            raise ConfigError("kernel entries must be non-negative")
        if abs(math.fsum(p) - 1.0) > SIMPLEX_TOL:
            raise ConfigError(f"kernel entries sum to {math.fsum(p)!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __getitem__(self, move) -> float:
        return float(self.probs[self.jumps.index(move)])

    def drift(self) -> np.ndarray:
        return local_drift(self.probs, self.jumps.dim)

    def min_jump_prob(self) -> float:
        return float(self.probs[: 2 * self.jumps.dim].min())

    def is_balanced(self) -> bool:
        d = self.jumps.dim
        return all(self.probs[2 * j] == self.probs[2 * j + 1] for j in range(d))

    def with_hold(self, h: float) -> "TransitionKernel":
        """Mix with the hold move: ``(1-h) * kernel + h * hold``."""
        if self.jumps.include_hold:
            raise ConfigError("kernel already has a hold move")
        return TransitionKernel(np.append((1 - h) * self.probs, h),
                                JumpSet(self.jumps.dim, True))

    def __eq__(self, other):
        return (isinstance(other, TransitionKernel) and self.jumps == other.jumps
                and np.array_equal(self.probs, other.probs))

    def __hash__(self):
        return hash((self.jumps, self.probs.tobytes()))


def local_drift(probs: np.ndarray, dim: int) -> np.ndarray:
    """Sum over moves of probability times move (hold contributes nothing).

    For balanced kernels the two opposite entries are identical floats, so the
    difference is exactly zero.
    """
    p = np.asarray(probs, dtype=float)
    return np.array([p[..., 2 * j] - p[..., 2 * j + 1] for j in range(dim)]).T \
        if p.ndim > 1 else np.array([p[2 * j] - p[2 * j + 1] for j in range(dim)])


# ---------------------------------------------------------------------------
# keyed site kernels (numba)


@nb.njit(cache=True, _nrt=False)
def _std_normal(sh, j):
    u1 = draw_uniform(sh, j)
    u2 = draw_uniform(sh, j + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(cache=True, _nrt=False)
def _log_gamma_variate(alpha, sh, j0):
    """Log of a Gamma(alpha, 1) variate (Marsaglia-Tsang) built from the
    uniforms of the hashed site ``sh`` starting at draw ``j0``.
    Returns (value, next draw index)."""
    j = j0
    boost = 0.0
    a = alpha
    if a < 1.0:
        boost = math.log(draw_uniform(sh, j)) / alpha
        j += 1
        a = alpha + 1.0
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        g = _std_normal(sh, j)
        j += 2
        v = 1.0 + c * g
        if v <= 0.0:
            continue
        v = v * v * v
        u = draw_uniform(sh, j)
        j += 1
        if math.log(u) < 0.5 * g * g + d - d * v + d * math.log(v):
            return math.log(d * v) + boost, j


@nb.njit(cache=True, _nrt=False)
def _pick(cum, u):
    m = cum.shape[0]
    r = 0
    while r < m - 1 and u >= cum[r]:
        r += 1
    return r


@nb.njit(cache=True, _nrt=False)
def site_kernel(kind, params, table, dim, seed, x, y, z, out):
    """Write the kernel at site ``(x, y, z)`` of the environment ``seed`` into
    ``out`` (length ``2*dim``)."""
    k = 2 * dim
    if kind == KIND_HOMOGENEOUS:
        for i in range(k):
            out[i] = table[0, i]
        return
    key = site_key(seed, TAG_ENV)
    if kind == KIND_ANISOTROPIC:  # keyed by the first coordinate only
        sh = site_hash(key, x, 0, 0)
        r = _pick(params, draw_uniform(sh, 0))
        out[0] = table[r, 0]
        out[1] = table[r, 1]
        for i in range(2, k):
            out[i] = 0.25
        return
    sh = site_hash(key, x, y, z)
    if kind == KIND_DISCRETE:
        r = _pick(params, draw_uniform(sh, 0))
        for i in range(k):
            out[i] = table[r, i]
    elif kind == KIND_DIRICHLET:
        j = 0
        top = -np.inf
        for i in range(k):
            v, j = _log_gamma_variate(params[i], sh, j)
            out[i] = v
            if v > top:
                top = v
        s = 0.0
        for i in range(k):
            out[i] = math.exp(out[i] - top)
            s += out[i]
        for i in range(k):
            out[i] = out[i] / s
    elif kind == KIND_BALANCED:
        lo = params[0]
        span = 0.5 - dim * lo
        s = 0.0
        for i in range(dim):
            out[2 * i] = -math.log(draw_uniform(sh, i))
            s += out[2 * i]
        for i in range(dim):
            wi = lo + span * (out[2 * i] / s)
            out[2 * i] = wi
            out[2 * i + 1] = wi
    else:  # trap law
        u = draw_uniform(sh, 0)
        if params[0] == 0.0:
            phi = params[1] * u * u
        else:
            phi = params[2] + (params[3] - params[2]) * u
        out[0] = 2.0 * phi
        out[1] = phi
        if draw_uniform(sh, 1) < 0.5:
            out[2] = 1.0 - 4.0 * phi
            out[3] = phi
        else:
            out[2] = phi
            out[3] = 1.0 - 4.0 * phi


@nb.njit(cache=True)
def kernels_at_sites(kind, params, table, dim, seed, sites):
    n = sites.shape[0]
    out = np.empty((n, 2 * dim))
    buf = np.empty(2 * dim)
    for i in range(n):
        x = sites[i, 0]
        y = sites[i, 1] if dim > 1 else 0
        z = sites[i, 2] if dim > 2 else 0
        site_kernel(kind, params, table, dim, seed, x, y, z, buf)
        for e in range(2 * dim):
            out[i, e] = buf[e]
    return out


@nb.njit(cache=True)
def origin_kernels(kind, params, table, dim, seeds):
    """Kernel at the origin for each environment seed (i.i.d. marginal draws)."""
    n = seeds.shape[0]
    out = np.empty((n, 2 * dim))
    buf = np.empty(2 * dim)
    for i in range(n):
        site_kernel(kind, params, table, dim, seeds[i], 0, 0, 0, buf)
        for e in range(2 * dim):
            out[i, e] = buf[e]
    return out


@nb.njit(cache=True)
def _edge_products(kind, params, table, dim, seeds, e_idx):
    """omega(0, e) * omega(e, -e) and omega(0, e) * omega(0, -e) per seed."""
    n = seeds.shape[0]
    two = np.empty(n)
    same = np.empty(n)
    a = np.empty(2 * dim)
    b = np.empty(2 * dim)
    axis = e_idx // 2
    sign = 1 if e_idx % 2 == 0 else -1
    opp = e_idx ^ 1
    for i in range(n):
        site_kernel(kind, params, table, dim, seeds[i], 0, 0, 0, a)
        x = sign if axis == 0 else 0
        y = sign if axis == 1 else 0
        z = sign if axis == 2 else 0
        site_kernel(kind, params, table, dim, seeds[i], x, y, z, b)
        two[i] = a[e_idx] * b[opp]
        same[i] = a[e_idx] * a[opp]
    return two, same


# ---------------------------------------------------------------------------
# laws


@dataclass(frozen=True)
class EnvironmentLaw:
    """Base class.  Subclasses fill in the packed numba representation."""

    dim: int

    kind = -1

    @property
    def jumps(self) -> JumpSet:
        return JumpSet(self.dim)

    @property
    def declared_kappa(self) -> float | None:
        return None

    def packed(self) -> tuple[int, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def support_kernels(self) -> np.ndarray | None:
        """Finite support of the kernel marginal (rows) with ``support_weights``,
        or ``None`` for continuous laws."""
        return None

    def support_weights(self) -> np.ndarray | None:
        return None

    @property
    def is_balanced(self) -> bool:
        return False

    @property
    def is_deterministic(self) -> bool:
        sk = self.support_kernels()
        return sk is not None and np.unique(sk, axis=0).shape[0] == 1

    def describe(self) -> dict:
        raise NotImplementedError


def _check_kernel_rows(rows: np.ndarray, dim: int, what: str) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != 2 * dim:
        raise ConfigError(f"{what}: kernels need {2 * dim} entries, got {rows.shape[1]}")
    if (rows < 0).any():
        raise ConfigError(f"{what}: negative kernel entry")
    sums = rows.sum(axis=1)
    if np.abs(sums - 1.0).max() > SIMPLEX_TOL:
        raise ConfigError(f"{what}: kernel rows must sum to 1 (got {sums})")
    return rows


def _check_weights(w, m: int, what: str) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (m,) or (w <= 0).any():
        raise ConfigError(f"{what}: need {m} positive weights")
    return w / w.sum()


@dataclass(frozen=True)
class Homogeneous(EnvironmentLaw):
    kernel: tuple = ()
    kind = KIND_HOMOGENEOUS

    def __post_init__(self):
        JumpSet(self.dim)
        _check_kernel_rows(np.array(self.kernel), self.dim, "homogeneous law")

    @classmethod
    def one_dim(cls, p_right: float) -> "Homogeneous":
        if not 0.0 <= p_right <= 1.0:
            raise ConfigError("p_right must lie in [0, 1]")
        return cls(1, (float(p_right), 1.0 - float(p_right)))

    @classmethod
    def symmetric(cls, dim: int) -> "Homogeneous":
        return cls(dim, tuple([1.0 / (2 * dim)] * (2 * dim)))

    @property
    def declared_kappa(self):
        return float(min(self.kernel))

    @property
    def is_balanced(self):
        k = self.kernel
        return all(k[2 * j] == k[2 * j + 1] for j in range(self.dim))

    def packed(self):
        return KIND_HOMOGENEOUS, np.zeros(1), np.array([self.kernel], dtype=float)

    def support_kernels(self):
        return np.array([self.kernel], dtype=float)

    def support_weights(self):
        return np.ones(1)

    def mirror(self) -> "Homogeneous":
        k = list(self.kernel)
        k[0], k[1] = k[1], k[0]
        return Homogeneous(self.dim, tuple(k))

    def describe(self):
        return {"law": "homogeneous", "dim": self.dim, "kernel": list(self.kernel)}


@dataclass(frozen=True)
class DiscreteLaw(EnvironmentLaw):
    """Finitely many kernels drawn i.i.d. with the given weights.

    ``DiscreteLaw.one_dim([(p1, w1), (p2, w2), ...])`` is the one-dimensional
    law with ``omega(x, +1) = p_i`` with probability ``w_i``.
    """

    kernels: tuple = ()
    weights: tuple = ()
    kappa: float | None = None

    kind = KIND_DISCRETE

    def __post_init__(self):
        JumpSet(self.dim)
        rows = _check_kernel_rows(np.array(self.kernels), self.dim, "discrete law")
        _check_weights(self.weights, rows.shape[0], "discrete law")
        if self.kappa is not None and rows.min() < self.kappa - 1e-15:
            raise ConfigError("declared ellipticity constant exceeds the smallest kernel entry")

    @classmethod
    def one_dim(cls, pairs: Sequence[tuple[float, float]]) -> "DiscreteLaw":
        ks, ws = [], []
        for p, w in pairs:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"p_right {p} outside [0, 1]")
            ks.append((float(p), 1.0 - float(p)))
            ws.append(float(w))
        return cls(1, tuple(ks), tuple(ws))

    @classmethod
    def two_point(cls, p1: float, p2: float) -> "DiscreteLaw":
        return cls.one_dim([(p1, 0.5), (p2, 0.5)])

    @property
    def declared_kappa(self):
        if self.kappa is not None:
            return self.kappa
        return float(np.min(self.kernels))

    @property
    def is_balanced(self):
        rows = np.array(self.kernels)
        return all((rows[:, 2 * j] == rows[:, 2 * j + 1]).all() for j in range(self.dim))

    def packed(self):
        w = _check_weights(self.weights, len(self.kernels), "discrete law")
        cum = np.cumsum(w)
        cum[-1] = 1.0
        return KIND_DISCRETE, cum, np.array(self.kernels, dtype=float)

    def support_kernels(self):
        return np.array(self.kernels, dtype=float)

    def support_weights(self):
        return _check_weights(self.weights, len(self.kernels), "discrete law")

    def mirror(self) -> "DiscreteLaw":
        rows = np.array(self.kernels, dtype=float)
        rows[:, [0, 1]] = rows[:, [1, 0]]
        return DiscreteLaw(self.dim, tuple(map(tuple, rows)), self.weights, self.kappa)

    def describe(self):
        return {"law": "discrete", "dim": self.dim,
                "kernels": [list(k) for k in self.kernels], "weights": list(self.weights)}


@dataclass(frozen=True)
class DirichletIID(EnvironmentLaw):
    alpha: tuple = ()
    kind = KIND_DIRICHLET

    def __post_init__(self):
        JumpSet(self.dim)
        a = np.asarray(self.alpha, dtype=float)
        if a.shape != (2 * self.dim,):
            raise ConfigError(f"Dirichlet law needs {2 * self.dim} parameters")
        if (a <= 0).any() or not np.isfinite(a).all():
            raise ConfigError("Dirichlet parameters must be positive")

    def packed(self):
        return KIND_DIRICHLET, np.asarray(self.alpha, dtype=float), np.zeros((1, 1))

    def describe(self):
        return {"law": "dirichlet", "dim": self.dim, "alpha": list(self.alpha)}


@dataclass(frozen=True)
class BalancedIID(EnvironmentLaw):
    """Balanced kernels ``omega(e_j) = omega(-e_j) = w_j`` with
    ``w = min_weight + (1/2 - d*min_weight) * U`` and ``U`` uniform on the
    simplex.  Each ``w_j`` then lies in ``[min_weight, 1/2 - (d-1)*min_weight]``."""

    min_weight: float = 0.1
    kind = KIND_BALANCED

    def __post_init__(self):
        JumpSet(self.dim)
        if not 0.0 <= self.min_weight <= 0.5 / self.dim:
            raise ConfigError(f"min_weight must lie in [0, {0.5 / self.dim}]")

    @property
    def declared_kappa(self):
        return self.min_weight if self.min_weight > 0 else None

    @property
    def is_balanced(self):
        return True

    def packed(self):
        return KIND_BALANCED, np.array([self.min_weight]), np.zeros((1, 1))

    def describe(self):
        return {"law": "balanced", "dim": self.dim, "min_weight": self.min_weight}


@dataclass(frozen=True)
class TrapLaw(EnvironmentLaw):
    """Two-dimensional edge-trap law.

    ``phi`` is ``scale * V**2`` with ``V`` uniform (default), or uniform on
    ``[phi_min, phi_max]`` when ``phi_min > 0``.  A fair coin ``Z`` chooses
    which vertical direction receives the large weight ``1 - 4 phi``.
    """

    dim: int = 2
    scale: float = 0.2
    phi_min: float = 0.0
    phi_max: float = 0.0

    kind = KIND_TRAP

    def __post_init__(self):
        if self.dim != 2:
            raise ConfigError("the trap law is two-dimensional")
        if self.phi_min > 0:
            if not 0 < self.phi_min <= self.phi_max < 0.25:
                raise ConfigError("need 0 < phi_min <= phi_max < 1/4")
        elif not 0 < self.scale < 0.25:
            raise ConfigError("trap scale must lie in (0, 1/4)")

    @property
    def bounded_below(self) -> bool:
        return self.phi_min > 0

    @property
    def declared_kappa(self):
        return self.phi_min if self.bounded_below else None

    def packed(self):
        mode = 1.0 if self.bounded_below else 0.0
        return KIND_TRAP, np.array([mode, self.scale, self.phi_min, self.phi_max]), np.zeros((1, 1))

    def describe(self):
        if self.bounded_below:
            return {"law": "trap", "dim": 2, "phi_min": self.phi_min, "phi_max": self.phi_max}
        return {"law": "trap", "dim": 2, "scale": self.scale}


@dataclass(frozen=True)
class AnisotropicProduct(EnvironmentLaw):
    """Two-dimensional law, i.i.d. along ``e_1`` and constant along ``e_2``.

    At a column with ratio ``r`` (drawn from ``ratios`` with ``weights``) the
    kernel is ``omega(+e_1) = 1/(2(1+r))``, ``omega(-e_1) = r/(2(1+r))`` and
    ``1/4`` for each vertical move.  The default ratios ``{1/3, 5/3}`` with
    equal weights have mean exactly 1 and negative mean logarithm.
    """

    dim: int = 2
    ratios: tuple = (1.0 / 3.0, 5.0 / 3.0)
    weights: tuple = (0.5, 0.5)

    kind = KIND_ANISOTROPIC

    def __post_init__(self):
        if self.dim != 2:
            raise ConfigError("the anisotropic product law is two-dimensional")
        r = np.asarray(self.ratios, dtype=float)
        if (r <= 0).any():
            raise ConfigError("ratios must be positive")
        _check_weights(self.weights, r.size, "anisotropic law")

    def _rows(self) -> np.ndarray:
        r = np.asarray(self.ratios, dtype=float)
        q = 0.5 / (1.0 + r)
        p = 0.5 - q
        return np.column_stack([q, p])

    @property
    def declared_kappa(self):
        return float(min(self._rows().min(), 0.25))

    def packed(self):
        w = _check_weights(self.weights, len(self.ratios), "anisotropic law")
        cum = np.cumsum(w)
        cum[-1] = 1.0
        return KIND_ANISOTROPIC, cum, self._rows()

    def support_kernels(self):
        rows = self._rows()
        return np.column_stack([rows, np.full((rows.shape[0], 2), 0.25)])

    def support_weights(self):
        return _check_weights(self.weights, len(self.ratios), "anisotropic law")

    def ratio_moments(self) -> dict:
        w = self.support_weights()
        r = np.asarray(self.ratios, dtype=float)
        return {"E_ratio": float(w @ r), "E_log_ratio": float(w @ np.log(r))}

    def describe(self):
        return {"law": "anisotropic", "dim": 2, "ratios": list(self.ratios),
                "weights": list(self.weights)}


# ---------------------------------------------------------------------------
# environments


@dataclass(frozen=True)
class Environment:
    law: EnvironmentLaw
    master_seed: int

    def __post_init__(self):
        kind, params, table = self.law.packed()
        object.__setattr__(self, "_packed", (kind, params, table))
        object.__setattr__(self, "_seed", as_u64(self.master_seed))

    @property
    def packed(self):
        return self._packed

    @property
    def seed_u64(self) -> np.uint64:
        return self._seed

    @property
    def dim(self) -> int:
        return self.law.dim

    def kernels_at(self, sites) -> np.ndarray:
        """Kernel rows for an ``(n, d)`` array of sites."""
        s = np.ascontiguousarray(np.atleast_2d(np.asarray(sites, dtype=np.int64)))
        if s.shape[1] != self.dim:
            raise ConfigError(f"sites must have {self.dim} coordinates")
        kind, params, table = self._packed
        return kernels_at_sites(kind, params, table, self.dim, self._seed, s)

    def kernel_at(self, site) -> TransitionKernel:
        row = self.kernels_at(np.asarray(site, dtype=np.int64).reshape(1, -1))[0]
        return TransitionKernel(row, self.law.jumps)


def sample_kernel(law: EnvironmentLaw, stream: np.random.Generator) -> TransitionKernel:
    """Draw one kernel from the marginal of ``law`` using a fresh key from ``stream``."""
    return TransitionKernel(sample_kernels(law, 1, stream)[0], law.jumps)


def sample_kernels(law: EnvironmentLaw, n: int, stream: np.random.Generator | int) -> np.ndarray:
    """``n`` i.i.d. kernels from the marginal, as an ``(n, 2d)`` array."""
    if isinstance(stream, (int, np.integer)):
        seeds = derive_seeds(int(stream), TAG_SAMPLE, 0, n)
    else:
        seeds = stream.integers(0, np.iinfo(np.uint64).max, size=n, dtype=np.uint64,
                                endpoint=True)
    kind, params, table = law.packed()
    return origin_kernels(kind, params, table, law.dim, seeds)


# ---------------------------------------------------------------------------
# diagnostics


def _sample_block(law: EnvironmentLaw, n_samples: int, seed: int) -> np.ndarray:
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    return sample_kernels(law, n_samples, seed)


def ellipticity_report(law: EnvironmentLaw, n_samples: int, alpha: float = 1.0,
                       seed: int = 0, ratio: float = 0.10) -> dict:
    """Smallest sampled jump probability and the inverse moment
    ``sup_e E[omega(0,e)^(-alpha)]`` with a divergence diagnostic."""
    ks = _sample_block(law, n_samples, seed)
    min_entry = float(ks.min())
    per_move = []
    best: StabilizationReport | None = None
    any_div = False
    with np.errstate(divide="ignore", over="ignore"):
        for e in range(ks.shape[1]):
            rep = stabilization(ks[:, e] ** (-alpha), ratio=ratio, seeds=(seed,))
            per_move.append(rep)
            any_div = any_div or rep.divergent
            if best is None or rep.estimate.value > best.estimate.value:
                best = rep
    return {
        "min_entry_estimate": min_entry,
        "kappa_hat": min_entry,
        "declared_kappa": law.declared_kappa,
        "alpha": alpha,
        "inverse_moment": best.estimate,
        "inverse_moment_divergent": any_div,
        "per_move": per_move,
    }


def dirichlet_moment(alpha: Sequence[float], betas: Sequence[float]) -> float:
    """Closed form of ``E[prod_e omega_e^(-beta_e)]`` for a Dirichlet vector;
    ``inf`` when some ``alpha_e <= beta_e``."""
    from scipy.special import gammaln

    a = np.asarray(alpha, dtype=float)
    b = np.asarray(betas, dtype=float)
    if (a <= b).any():
        return float("inf")
    lv = (gammaln(a - b) - gammaln(a)).sum() + gammaln(a.sum()) - gammaln(a.sum() - b.sum())
    return float(np.exp(lv))


def combinatorial_quantity(betas: Sequence[float], dim: int) -> float:
    """``2 sum_e beta_e - max_e (beta_e + beta_{-e})``."""
    b = np.asarray(betas, dtype=float)
    if b.shape != (2 * dim,):
        raise ConfigError(f"need {2 * dim} exponents")
    pair = max(b[2 * j] + b[2 * j + 1] for j in range(dim))
    return float(2.0 * b.sum() - pair)


def check_E_beta(law: EnvironmentLaw, betas: Sequence[float], target: float = 1.0,
                 n_samples: int = 100_000, seed: int = 0, ratio: float = 0.10) -> dict:
    b = np.asarray(betas, dtype=float)
    if (b <= 0).any():
        raise ConfigError("exponents must be positive")
    quantity = combinatorial_quantity(b, law.dim)
    margin = quantity - target
    ks = _sample_block(law, n_samples, seed)
    with np.errstate(divide="ignore", over="ignore"):
        vals = np.exp(-(np.log(ks) * b).sum(axis=1))
    rep = stabilization(vals, ratio=ratio, seeds=(seed,))
    return {
        "combinatorial_quantity": quantity,
        "combinatorial_margin": margin,
        "moment_estimate": rep.estimate,
        "moment_divergent": rep.divergent,
        "stabilization": rep,
        "satisfied": bool(margin > 0 and not rep.divergent),
    }


def trap_criterion(law: EnvironmentLaw, n_samples: int, seed: int = 0,
                   ratio: float = 0.10) -> dict:
    """Estimate ``E[1 / (1 - omega(0,e) omega(e,-e))]`` for every move ``e``.

    The product uses the kernel at ``0`` and at the neighbour ``e``: it is
    the probability of one round trip across the edge ``{0, e}``.  The
    single-site product ``omega(0,e) omega(0,-e)`` is reported alongside.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    kind, params, table = law.packed()
    seeds = derive_seeds(seed, TAG_SAMPLE, 1, n_samples)
    out = {}
    for e in range(2 * law.dim):
        two, same = _edge_products(kind, params, table, law.dim, seeds, e)
        with np.errstate(divide="ignore"):
            integrand = 1.0 / (1.0 - two)
        rep = stabilization(integrand, ratio=ratio, seeds=(seed,))
        out[e] = {
            "estimate": rep.estimate,
            "divergent": rep.divergent,
            "stabilization": rep,
            "max_edge_product": float(two.max()),
            "same_site_estimate": float(np.mean(1.0 / (1.0 - same))),
        }
    return out


def trap_support_bound(law: TrapLaw) -> float:
    """Upper bound ``1/(1 - (1-4 phi_min)^2)`` on the edge integrand when
    ``phi >= phi_min``."""
    if not law.bounded_below:
        return float("inf")
    top = 1.0 - 4.0 * law.phi_min
    return 1.0 / (1.0 - top * top)


class NestlingClass(str, Enum):
    NON_NESTLING = "NonNestling"
    MARGINALLY_NESTLING = "MarginallyNestling"
    PLAIN_NESTLING = "PlainNestling"


def _classify_origin(points: np.ndarray, tol: float) -> tuple[NestlingClass, bool]:
    """Position of 0 relative to the convex hull of ``points``.  Returns the
    class and whether the hull degenerated to a single point."""
    pts = np.unique(np.round(points, 15), axis=0)
    if pts.shape[0] == 1:
        is_zero = float(np.abs(pts[0]).max()) <= tol
        return (NestlingClass.MARGINALLY_NESTLING if is_zero else NestlingClass.NON_NESTLING), True
    centre = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - centre)
    rank = int((s > 1e-12 * max(1.0, s[0])).sum())
    basis = vt[:rank]
    o = -centre
    residual = o - basis.T @ (basis @ o)
    if np.abs(residual).max() > tol:
        return NestlingClass.NON_NESTLING, False
    full = rank == pts.shape[1]
    coords = (pts - centre) @ basis.T
    oc = basis @ o
    if rank == 1:
        lo, hi = coords[:, 0].min(), coords[:, 0].max()
        x = oc[0]
        dist = min(x - lo, hi - x)
    else:
        try:
            hull = ConvexHull(coords)
        except QhullError:
            return NestlingClass.MARGINALLY_NESTLING, False
        dist = float(-(hull.equations[:, :-1] @ oc + hull.equations[:, -1]).max())
    if dist < -tol:
        return NestlingClass.NON_NESTLING, False
    if dist <= tol or not full:
        return NestlingClass.MARGINALLY_NESTLING, False
    return NestlingClass.PLAIN_NESTLING, False


def nestling_class(law: EnvironmentLaw, n_samples: int = 2000, seed: int = 0,
                   tol: float = 1e-9) -> dict:
    """Classify by the position of 0 relative to the hull of local drifts.

    Finite-support laws use their exact support; continuous laws use
    ``n_samples`` sampled drifts.
    """
    if n_samples < 2:
        raise ConfigError("n_samples must be at least 2")
    sk = law.support_kernels()
    source = "support"
    if sk is None:
        sk = sample_kernels(law, n_samples, seed)
        source = "samples"
    drifts = np.atleast_2d(local_drift(sk, law.dim))
    if law.dim == 1:
        drifts = drifts.reshape(-1, 1)
    cls, point = _classify_origin(drifts, tol)
    return {"class": cls, "point_hull": point, "source": source,
            "n_points": int(drifts.shape[0])}
