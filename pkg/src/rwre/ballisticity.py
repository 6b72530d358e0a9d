"""Finite-box estimators for ballisticity conditions.

Every check here is a finite-scale probe of an asymptotic statement, so
reports carry the parameters they were computed with and say whether each
constant is the theoretical value or an override chosen for desk scale.

Geometry conventions: ``l`` is normalized to a unit vector and completed to
an orthonormal frame ``(l, l_2, ..., l_d)``.  Slabs have a front piece
``x.l >= L`` and a back piece ``x.l <= -bL``.  Boxes additionally bound the
lateral coordinates and route every other exit to a ``side`` piece.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats as _sps

from .env_model import Environment, EnvironmentLaw
from .errors import ConfigError, DomainError, InsufficientDataError, ResourceError
from .exact_quenched import FiniteDomain, QuenchedField, exit_probabilities
from .renewal import transience_probe
from .stats import EstimateWithCI, censored_band, mean_ci, proportion
from .walk_sim import (RULE_HORIZON, DirectionalLevel, StoppingSpec, Walker, replica_seeds,
                       run_many)

__all__ = [
    "Param", "ConditionReport", "SlabSpec", "SlabResult", "GammaFit", "PBoxSpec",
    "ECBoxSpec", "DecompositionReport", "AtypicalRow", "DLExit", "unit_direction",
    "orthonormal_frame", "cone_directions", "box_domain", "slab_exit_probability",
    "slab_report", "fit_T_gamma", "c3_threshold", "check_P_M", "criterion_prefactor",
    "effective_criterion", "decomposition_parameters", "decomposition_diagnostic",
    "atypical_exit_bound", "atypical_quenched_exit", "dl_geometry", "dl_domain",
    "dl_reference", "dL_exit_estimate", "transience_probe",
]

DEFAULT_CELL_CAP = 20_000_000
MIN_DECAY = 0.01  # relative drop across the L grid required before fitting a decay
LEVEL_EPS = 1e-9  # turns the closed condition x.l >= u into the strict x.l > u - eps


# ---------------------------------------------------------------------------
# provenance and reports


@dataclass(frozen=True)
class Param:
    """A constant used by a check.  ``source`` is ``theoretical`` when the
    value is the one the condition is stated with and ``override`` when it
    was replaced for tractability."""

    name: str
    value: float
    source: str
    theoretical: float | str | None = None
    note: str = ""

    def __post_init__(self):
        if self.source not in ("theoretical", "override"):
            raise ConfigError(f"unknown provenance {self.source!r}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConditionReport:
    """Per-scale estimates plus a verdict that always lists its parameters."""

    condition: str
    direction: tuple
    rows: tuple
    verdict: str
    holds: bool | None
    provenance: tuple
    fit: dict | None = None
    notes: tuple = ()

    @property
    def overridden(self) -> tuple:
        return tuple(p.name for p in self.provenance if p.source == "override")

    def as_dict(self) -> dict:
        return {"condition": self.condition, "direction": [float(c) for c in self.direction],
                "rows": [dict(r) for r in self.rows], "verdict": self.verdict,
                "holds": self.holds, "provenance": [p.as_dict() for p in self.provenance],
                "overridden": list(self.overridden), "fit": self.fit, "notes": list(self.notes)}


# ---------------------------------------------------------------------------
# geometry


def unit_direction(l, dim: int | None = None) -> np.ndarray:
    v = np.asarray(l, dtype=float).ravel()
    if dim is not None and v.size != dim:
        raise ConfigError(f"direction needs {dim} components")
    n = float(np.linalg.norm(v))
    if n == 0 or not np.isfinite(n):
        raise ConfigError("direction must be a non-zero finite vector")
    return v / n


def orthonormal_frame(l) -> np.ndarray:
    """Rows ``l, l_2, ..., l_d`` of an orthonormal basis with first row ``l``.
    Lattice directions get the remaining coordinate axes in order."""
    u = unit_direction(l)
    d = u.size
    nz = np.flatnonzero(u)
    if nz.size == 1:
        rest = [np.eye(d)[k] for k in range(d) if k != nz[0]]
        return np.vstack([u] + rest) if rest else u.reshape(1, d)
    q, _ = np.linalg.qr(np.column_stack([u, np.eye(d)]))
    frame = q[:, :d].T
    if frame[0] @ u < 0:
        frame = -frame
    frame[0] = u
    return frame


def cone_directions(l, angle: float = 0.1) -> np.ndarray:
    """``l`` followed by its tilts by ``angle`` towards each ``+-l_k``."""
    frame = orthonormal_frame(l)
    out = [frame[0]]
    for k in range(1, frame.shape[0]):
        for s in (1.0, -1.0):
            out.append(math.cos(angle) * frame[0] + s * math.sin(angle) * frame[k])
    return np.vstack(out)


def _lateral(sites: np.ndarray, frame: np.ndarray, mode: str) -> np.ndarray:
    if frame.shape[0] == 1:
        return np.zeros(sites.shape[0])
    if mode == "frame":
        return np.abs(sites @ frame[1:].T).max(axis=1)
    if mode == "projection":
        l = frame[0]
        perp = sites - np.outer(sites @ l, l)
        return np.abs(perp).max(axis=1)
    raise ConfigError(f"unknown lateral norm {mode!r}")


def box_domain(l, back: float, front: float, lateral: float | None = None,
               lateral_mode: str = "frame", closed: bool = False,
               front_needs_lateral: bool = True, cap: int = DEFAULT_CELL_CAP
               ) -> FiniteDomain:
    """Box ``-back < x.l < front`` with lateral size below ``lateral``.

    With ``closed=True`` the bounds become ``-back <= x.l <= front`` and
    lateral size at most ``lateral``.  Exits are split into ``front``
    (beyond the front bound, and within the lateral bound when
    ``front_needs_lateral``), ``back`` (beyond the back bound) and ``side``.
    ``lateral_mode`` chooses between the frame coordinates
    ``max_k |x.l_k|`` and the sup-norm of the projection orthogonal to ``l``.
    """
    frame = orthonormal_frame(l)
    d = frame.shape[0]
    u = frame[0]
    if back <= 0 or front <= 0:
        raise ConfigError("box depths must be positive")
    if d > 1 and (lateral is None or lateral <= 0):
        raise ConfigError("multi-dimensional boxes need a positive lateral bound")
    lat = 0.0 if d == 1 else float(lateral)
    nz = np.flatnonzero(u)
    if nz.size == 1:
        axis = int(nz[0])
        sgn = 1 if u[axis] > 0 else -1
        ranges = []
        for k in range(d):
            if k == axis:
                lo, hi = -back - 2, front + 2
                r = np.arange(math.floor(lo), math.ceil(hi) + 1) * sgn
            else:
                r = np.arange(-math.ceil(lat) - 1, math.ceil(lat) + 2)
            ranges.append(r)
    else:
        reach = math.ceil(max(back, front) + lat * math.sqrt(d)) + 2
        ranges = [np.arange(-reach, reach + 1)] * d
    count = math.prod(len(r) for r in ranges)
    if count > cap:
        raise ResourceError(f"box needs {count} candidate cells, above the cap {cap}; "
                            "reduce the lateral size (override)")
    cand = np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, d)
    h = cand @ u
    side = _lateral(cand, frame, lateral_mode)
    if closed:
        keep = (h >= -back - 1e-12) & (h <= front + 1e-12)
        if d > 1:
            keep &= side <= lat + 1e-12
    else:
        keep = (h > -back + 1e-12) & (h < front - 1e-12)
        if d > 1:
            keep &= side < lat - 1e-12
    inner = cand[keep]
    if inner.shape[0] == 0:
        raise ConfigError("box has no interior sites")

    def classify(s):
        hs = s @ u
        ls = _lateral(s, frame, lateral_mode)
        out = np.full(s.shape[0], 2, dtype=np.int64)
        beyond = hs > front + 1e-12 if closed else hs >= front - 1e-12
        if front_needs_lateral and d > 1:
            beyond &= (ls <= lat + 1e-12) if closed else (ls < lat - 1e-12)
        out[beyond] = 0
        below = hs < -back - 1e-12 if closed else hs <= -back + 1e-12
        out[below & ~beyond] = 1
        return out

    return FiniteDomain.from_sites(inner, classify, ("front", "back", "side"))


def _env_seeds(master_seed: int, stream_id: int, replicas: int) -> np.ndarray:
    return replica_seeds(master_seed, stream_id, replicas)[0]


def _front_other(law: EnvironmentLaw, dom: FiniteDomain, seed: int, start=None
                 ) -> tuple[float, float, bool, np.ndarray, np.ndarray]:
    """Front and non-front exit probabilities in one environment (at ``start``
    and for all interior sites) plus whether the field is elliptic."""
    field_ = QuenchedField.from_env(dom, Environment(law, int(seed)))
    pf_all = exit_probabilities(field_, "front").values
    others = tuple(p for p in dom.pieces if p != "front")
    po_all = exit_probabilities(field_, others).values
    if start is None:
        start = np.zeros(dom.dim, dtype=np.int64)
    i = dom.index_of(start)
    return float(pf_all[i]), float(po_all[i]), field_.elliptic, pf_all, po_all


def _rho_power(pf: np.ndarray, po: np.ndarray, a: float) -> np.ndarray:
    """``(po / pf)^a`` with ``0^0 = 1`` and log-space evaluation."""
    pf = np.asarray(pf, dtype=float)
    po = np.asarray(po, dtype=float)
    if a == 0:
        return np.ones_like(pf)
    out = np.zeros_like(pf)
    pos = po > 0
    with np.errstate(divide="ignore"):
        out[pos] = np.exp(a * (np.log(po[pos]) - np.log(pf[pos])))
    return out


def _require_kappa(law: EnvironmentLaw) -> float:
    k = law.declared_kappa
    if k is None or not (0.0 < k < 1.0):
        raise DomainError("this check needs a declared ellipticity constant kappa in (0, 1)")
    return float(k)


# ---------------------------------------------------------------------------
# slab exits


@dataclass(frozen=True)
class SlabSpec:
    """Slab ``-bL < x.l' < L`` around the start; ``lateral_bound`` truncates
    the slab sideways (``None`` means no truncation, walk simulation only)."""

    l_prime: tuple
    b: float
    L: float
    lateral_bound: int | None = None

    def __post_init__(self):
        if not (self.b > 0 and self.L > 0):
            raise ConfigError("slab needs b > 0 and L > 0")
        if self.lateral_bound is not None and self.lateral_bound <= 0:
            raise ConfigError("lateral bound must be positive")
        unit_direction(self.l_prime)

    @property
    def direction(self) -> np.ndarray:
        return unit_direction(self.l_prime)


@dataclass(frozen=True)
class SlabResult:
    spec: SlabSpec
    method: str
    estimate: EstimateWithCI
    inconclusive: bool
    lateral_bound: int | None = None
    lateral_delta: float | None = None
    side_mass: float | None = None
    lateral_trace: tuple = ()

    def as_dict(self) -> dict:
        return {"b": self.spec.b, "L": self.spec.L,
                "direction": [float(c) for c in self.spec.direction], "method": self.method,
                "estimate": self.estimate.as_dict(), "inconclusive": self.inconclusive,
                "lateral_bound": self.lateral_bound, "lateral_delta": self.lateral_delta,
                "side_mass": self.side_mass, "lateral_trace": [list(t) for t in self.lateral_trace]}


def _default_slab_horizon(spec: SlabSpec) -> int:
    span = (1.0 + spec.b) * spec.L
    return int(max(10_000, 20 * span * span))


def _slab_walk(law, spec, replicas, horizon, master_seed, stream_id, level) -> SlabResult:
    frame = orthonormal_frame(spec.direction)
    u = frame[0]
    levels = [DirectionalLevel(tuple(u), spec.L - LEVEL_EPS),
              DirectionalLevel(tuple(-u), spec.b * spec.L - LEVEL_EPS)]
    if spec.lateral_bound is not None:
        for k in range(1, frame.shape[0]):
            for s in (1.0, -1.0):
                levels.append(DirectionalLevel(tuple(s * frame[k]), spec.lateral_bound - LEVEL_EPS))
    horizon = _default_slab_horizon(spec) if horizon is None else int(horizon)
    env_seeds, walk_seeds = replica_seeds(master_seed, stream_id, replicas)
    walker = Walker(Environment(law, 0))
    b = run_many(walker, env_seeds, walk_seeds, np.zeros(law.dim, dtype=np.int64),
                 StoppingSpec(horizon, levels=tuple(levels), track=tuple(u)))
    back = int(np.sum(b.codes == 2))
    cens = int(np.sum(b.codes == RULE_HORIZON))
    if cens == 0:
        est = proportion(back, replicas, level, "slab-walk-mc", 0, (master_seed, stream_id))
    else:
        est = censored_band(back, cens, replicas, level, "slab-walk-mc-band",
                            (master_seed, stream_id))
    side = float(np.mean(b.codes >= 3)) if spec.lateral_bound is not None else None
    return SlabResult(spec, "walk_mc", est, est.width > 0.5, spec.lateral_bound, None, side)


def _slab_exact_once(law, spec, lateral, seeds) -> tuple[np.ndarray, np.ndarray]:
    dom = FiniteDomain.slab(spec.direction, spec.b * spec.L, spec.L, lateral)
    back = np.empty(len(seeds))
    side = np.zeros(len(seeds))
    for r, s in enumerate(seeds):
        f = QuenchedField.from_env(dom, Environment(law, int(s)))
        back[r] = exit_probabilities(f, "back").values[dom.index_of(np.zeros(law.dim))]
        if "side" in dom.pieces and dom.boundary["side"].shape[0]:
            side[r] = exit_probabilities(f, "side").values[dom.index_of(np.zeros(law.dim))]
    return back, side


def _slab_exact(law, spec, replicas, master_seed, stream_id, level, max_doublings,
                rel_change) -> SlabResult:
    reps = 1 if law.is_deterministic else replicas
    seeds = _env_seeds(master_seed, stream_id, reps)
    if law.dim == 1:
        back, _ = _slab_exact_once(law, spec, None, seeds)
        est = _mean_or_point(back, level, "slab-exact-env-mc", (master_seed, stream_id))
        return SlabResult(spec, "exact_env_mc", est, False, None, 0.0, 0.0)
    lateral = int(spec.lateral_bound or math.ceil(4 * spec.L))
    trace = []
    back, side = _slab_exact_once(law, spec, lateral, seeds)
    prev = float(np.mean(back))
    trace.append((lateral, prev, float(np.mean(side))))
    delta = float("inf")
    for _ in range(max_doublings):
        lateral *= 2
        back, side = _slab_exact_once(law, spec, lateral, seeds)
        cur = float(np.mean(back))
        trace.append((lateral, cur, float(np.mean(side))))
        delta = abs(cur - prev)
        prev = cur
        if delta <= rel_change * max(abs(cur), 1e-300):
            break
    est = _mean_or_point(back, level, "slab-exact-env-mc", (master_seed, stream_id))
    return SlabResult(spec, "exact_env_mc", est, False, lateral, delta, float(np.mean(side)),
                      tuple(trace))


def _mean_or_point(x: np.ndarray, level: float, method: str, seeds: tuple) -> EstimateWithCI:
    if x.size == 1:
        v = float(x[0])
        return EstimateWithCI(v, v, v, 1, level, method, 0.0, seeds, 0.0)
    return mean_ci(x, level, method, 0.0, seeds)


def slab_exit_probability(law: EnvironmentLaw, spec: SlabSpec, method: str = "walk_mc",
                          replicas: int = 2000, horizon: int | None = None,
                          master_seed: int = 0, stream_id: int = 10, level: float = 0.95,
                          max_doublings: int = 3, rel_change: float = 0.01) -> SlabResult:
    """Probability of leaving the slab through the back before the front.

    ``walk_mc`` simulates annealed walks until a slab side or the horizon
    and reports a censored band.  ``exact_env_mc`` averages exact quenched
    solves over environment replicas; in dimension two and higher the slab
    is truncated laterally, starting at ``4L`` (or ``spec.lateral_bound``)
    and doubled until the estimate moves by less than ``rel_change``.  The
    last change is reported as ``lateral_delta``.
    """
    if len(spec.l_prime) != law.dim:
        raise ConfigError(f"direction needs {law.dim} components")
    if method == "walk_mc":
        return _slab_walk(law, spec, replicas, horizon, master_seed, stream_id, level)
    if method == "exact_env_mc":
        return _slab_exact(law, spec, replicas, master_seed, stream_id, level,
                           max_doublings, rel_change)
    raise ConfigError(f"unknown slab method {method!r}")


@dataclass(frozen=True)
class GammaFit:
    gamma_hat: float
    std_error: float
    intercept: float
    r_value: float
    used_L: tuple
    excluded_L: tuple
    rejected: bool
    reason: str

    def as_dict(self) -> dict:
        return asdict(self)


def fit_T_gamma(points: Sequence[tuple[float, float]] | ConditionReport) -> GammaFit:
    """Regress ``log(-log p)`` on ``log L``.

    ``points`` are ``(L, p)`` pairs or a slab report.  Points with ``p = 0``
    (Monte Carlo floor) or ``p >= 1`` are excluded and listed.  The fit is
    rejected when ``p`` drops by less than ``MIN_DECAY`` (relative) across
    the grid or the slope is not positive at two standard errors.
    """
    if isinstance(points, ConditionReport):
        points = [(r["L"], r["value"]) for r in points.rows]
    pts = sorted((float(L), float(p)) for L, p in points)
    used = [(L, p) for L, p in pts if 0.0 < p < 1.0]
    excluded = tuple(L for L, p in pts if not 0.0 < p < 1.0)
    if len(used) < 4:
        raise InsufficientDataError(f"need at least 4 usable L values, have {len(used)}; "
                                    f"excluded {list(excluded)}")
    x = np.log([L for L, _ in used])
    y = np.log(-np.log([p for _, p in used]))
    res = _sps.linregress(x, y)
    ps = np.array([p for _, p in used])
    decreasing = bool(ps[-1] < (1.0 - MIN_DECAY) * ps[0])
    rejected = False
    reason = "decay consistent with a stretched-exponential profile"
    if not decreasing:
        rejected, reason = True, "no decay in L"
    elif not res.slope - 2 * res.stderr > 0:
        rejected, reason = True, "slope not positive at two standard errors"
    return GammaFit(float(res.slope), float(res.stderr), float(res.intercept),
                    float(res.rvalue), tuple(L for L, _ in used), excluded, rejected, reason)


def slab_report(law: EnvironmentLaw, l, b: float, L_grid: Sequence[float],
                method: str = "exact_env_mc", replicas: int = 200, horizon: int | None = None,
                master_seed: int = 0, stream_id: int = 10, level: float = 0.95,
                lateral_bound: int | None = None) -> ConditionReport:
    """Slab back-exit estimates over an ``L`` grid, with a decay-exponent fit
    when at least four points are usable."""
    u = unit_direction(l, law.dim)
    rows = []
    for i, L in enumerate(L_grid):
        spec = SlabSpec(tuple(u), b, float(L), lateral_bound)
        res = slab_exit_probability(law, spec, method, replicas, horizon, master_seed,
                                    stream_id + 1000 * i, level)
        e = res.estimate
        rows.append({"L": float(L), "b": float(b), "value": e.value, "lower": e.lower,
                     "upper": e.upper, "replicas": e.replicas,
                     "censored_fraction": e.censored_fraction,
                     "inconclusive": res.inconclusive, "lateral_bound": res.lateral_bound,
                     "lateral_delta": res.lateral_delta})
    fit = None
    verdict, holds = "insufficient points for a decay fit", None
    try:
        g = fit_T_gamma([(r["L"], r["value"]) for r in rows])
        fit = g.as_dict()
        holds = not g.rejected
        verdict = (f"consistent with slab decay exponent {g.gamma_hat:.3f}" if holds
                   else f"decay fit rejected: {g.reason}")
    except InsufficientDataError as exc:
        verdict = str(exc)
    prov = (Param("b", float(b), "theoretical", "any b > 0"),)
    if lateral_bound is not None and law.dim > 1:
        prov += (Param("lateral_bound", float(lateral_bound), "override", "infinite",
                       "slab truncated sideways"),)
    return ConditionReport("slab-exit", tuple(float(c) for c in u), tuple(rows), verdict,
                           holds, prov, fit)


# ---------------------------------------------------------------------------
# (P)_M box check


def c3_threshold(dim: int, kappa: float) -> float:
    """``exp(100 + 4 d (ln kappa)^2)``; ``inf`` when it overflows."""
    try:
        return math.exp(100.0 + 4.0 * dim * math.log(kappa) ** 2)
    except OverflowError:
        return float("inf")


@dataclass(frozen=True)
class PBoxSpec:
    """Box ``-N0/2 < y.l < N0`` around the origin and its frontal part
    ``N0 - N_{-1} <= y.l < N0`` with ``N_{-1} = 2N0/3``.

    The lateral sup-norm sizes are ``25 N0^3`` (box) and ``N0^3`` (frontal
    part); ``reduced_lateral = w`` replaces them by ``25 w`` and ``w``.
    """

    N0: int
    l: tuple
    reduced_lateral: int | None = None

    def __post_init__(self):
        if self.N0 <= 0 or self.N0 % 2:
            raise ConfigError("N0 must be a positive even integer")
        unit_direction(self.l)
        if self.reduced_lateral is not None and self.reduced_lateral < 1:
            raise ConfigError("reduced lateral size must be at least 1")

    @property
    def N_minus1(self) -> float:
        return 2.0 * self.N0 / 3.0

    @property
    def dim(self) -> int:
        return len(self.l)

    @property
    def tilde_lateral(self) -> float:
        return float(self.N0 ** 3 if self.reduced_lateral is None else self.reduced_lateral)

    @property
    def box_lateral(self) -> float:
        return 25.0 * self.tilde_lateral

    def domain(self, cap: int = DEFAULT_CELL_CAP) -> FiniteDomain:
        return box_domain(self.l, self.N0 / 2.0, float(self.N0), self.box_lateral,
                          lateral_mode="projection", front_needs_lateral=False, cap=cap)

    def frontal_mask(self, dom: FiniteDomain) -> np.ndarray:
        u = unit_direction(self.l)
        h = dom.interior @ u
        frame = orthonormal_frame(u)
        lat = _lateral(dom.interior.astype(float), frame, "projection")
        mask = (h >= self.N0 - self.N_minus1 - 1e-12) & (h < self.N0 - 1e-12)
        if self.dim > 1:
            mask &= lat < self.tilde_lateral - 1e-12
        return mask

    def centre(self) -> np.ndarray:
        """Lattice site closest to the middle of the frontal part."""
        u = unit_direction(self.l)
        return np.rint(u * (self.N0 - self.N_minus1 / 2.0)).astype(np.int64)


def _start_sample(dom: FiniteDomain, mask: np.ndarray, centre: np.ndarray, k: int,
                  seed: int) -> np.ndarray:
    idx = np.flatnonzero(mask)
    rng = np.random.default_rng(seed)
    pick = rng.choice(idx, size=min(k, idx.size), replace=False) if idx.size else idx
    c = dom.code(centre)[0]
    if c >= 0 and mask[c]:
        pick = np.concatenate([[c], pick[pick != c]])
    return np.sort(pick)


def check_P_M(law: EnvironmentLaw, N0: int, M: float | Sequence[float], env_budget: int = 20,
              start_sample: int = 50, l=None, reduced_lateral: int | None = None,
              master_seed: int = 0, stream_id: int = 20, cap: int = DEFAULT_CELL_CAP
              ) -> ConditionReport:
    """Largest (over sampled frontal starts) averaged probability of leaving
    the box other than through its front, against ``N0^{-M}``.

    Environment averages are taken per start before the maximum.  The full
    lateral size ``25 N0^3`` is used unless ``reduced_lateral`` is given;
    a geometry above ``cap`` cells raises a resource error asking for it.
    The maximum over a subsample is a lower bound on the supremum.
    """
    kappa = _require_kappa(law)
    u = unit_direction(l if l is not None else np.eye(law.dim)[0], law.dim)
    spec = PBoxSpec(int(N0), tuple(u), reduced_lateral)
    if law.dim > 1 and reduced_lateral is None:
        cells = (1.5 * N0 + 4) * (2 * spec.box_lateral + 4) ** (law.dim - 1)
        if cells > cap:
            raise ResourceError(f"full box of lateral size {spec.box_lateral:.3g} needs about "
                                f"{cells:.3g} cells; pass reduced_lateral to override")
    dom = spec.domain(cap)
    mask = spec.frontal_mask(dom)
    starts = _start_sample(dom, mask, spec.centre(), start_sample,
                           int(_env_seeds(master_seed, stream_id + 1, 1)[0] % (2 ** 32)))
    reps = 1 if law.is_deterministic else env_budget
    seeds = _env_seeds(master_seed, stream_id, reps)
    acc = np.zeros((reps, starts.size))
    for r, s in enumerate(seeds):
        _, _, _, _, po_all = _front_other(law, dom, s, dom.interior[starts[0]])
        acc[r] = po_all[starts]
    avg = acc.mean(axis=0)
    j = int(np.argmax(avg))
    worst = float(avg[j])
    se = float(acc[:, j].std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    Ms = [float(M)] if np.isscalar(M) else [float(m) for m in M]
    c3 = c3_threshold(law.dim, kappa)
    prov = [Param("N0", float(N0), "theoretical" if N0 >= c3 else "override",
                  c3, "N0 must be at least c3 = exp(100 + 4 d (ln kappa)^2)"),
            Param("start_sample", float(starts.size), "override", "sup over the frontal part",
                  "maximum over a subsample plus the centre; a lower bound on the sup")]
    if law.dim > 1 and reduced_lateral is not None:
        prov.append(Param("lateral", float(spec.box_lateral), "override",
                          float(25 * N0 ** 3), "box lateral size reduced"))
    rows = []
    for m in Ms:
        thr = float(N0) ** (-m)
        rows.append({"N0": int(N0), "M": m, "threshold": thr, "max_exit": worst,
                     "max_exit_se": se, "worst_start": [int(c) for c in dom.interior[starts[j]]],
                     "starts": int(starts.size), "env_replicas": reps, "holds": worst < thr})
    all_hold = all(r["holds"] for r in rows)
    none_hold = not any(r["holds"] for r in rows)
    if all_hold:
        verdict, holds = "holds for every tested M on the sampled starts", True
    elif none_hold:
        verdict, holds = "fails for every tested M", False
    else:
        verdict, holds = "holds for some tested M only", None
    tag = " (with overridden constants)" if any(p.source == "override" for p in prov) else ""
    return ConditionReport("P_M", tuple(float(c) for c in u), tuple(rows), verdict + tag,
                           holds, tuple(prov))


# ---------------------------------------------------------------------------
# effective criterion


@dataclass(frozen=True)
class ECBoxSpec:
    """Box ``x.l in (-(L-2), L+2)`` and ``|x.l_k| < L_tilde`` in a frame with
    first vector ``l``; its frontal boundary needs ``x.l >= L+2`` with the
    lateral bound still in force."""

    l: tuple
    L: float
    L_tilde: float

    def __post_init__(self):
        d = len(self.l)
        unit_direction(self.l)
        if self.L <= 2:
            raise ConfigError("L must exceed 2")
        if not (3 * math.sqrt(d) <= self.L_tilde < self.L ** 3):
            raise ConfigError(f"L_tilde must lie in [3 sqrt(d), L^3) = "
                              f"[{3 * math.sqrt(d):.4g}, {self.L ** 3:.4g})")

    def domain(self, cap: int = DEFAULT_CELL_CAP) -> FiniteDomain:
        return box_domain(self.l, self.L - 2, self.L + 2, self.L_tilde, "frame", cap=cap)


def criterion_prefactor(dim: int, kappa: float, L: float, L_tilde: float,
                        c2: float = 1.0) -> float:
    """``c2 (ln 1/kappa)^{3(d-1)} L_tilde^{d-1} L^{3(d-1)+1}``."""
    return (c2 * math.log(1.0 / kappa) ** (3 * (dim - 1)) * L_tilde ** (dim - 1)
            * L ** (3 * (dim - 1) + 1))


def _box_samples(law, dom, reps, master_seed, stream_id):
    seeds = _env_seeds(master_seed, stream_id, reps)
    pf = np.empty(reps)
    po = np.empty(reps)
    ell = np.empty(reps, dtype=bool)
    for r, s in enumerate(seeds):
        pf[r], po[r], ell[r], _, _ = _front_other(law, dom, s)
    return pf, po, ell


def effective_criterion(law: EnvironmentLaw, L: float, L_tilde: float,
                        a_grid: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
                        env_budget: int = 50, c2_override: float | None = None,
                        c1_override: float | None = None, l=None, master_seed: int = 0,
                        stream_id: int = 30, level: float = 0.95,
                        cap: int = DEFAULT_CELL_CAP) -> ConditionReport:
    """Monte Carlo value of the effective criterion for each ``a``.

    ``rho_B`` is the quenched ratio of non-front to front exit probabilities
    from the origin, solved exactly per environment replica; all ``a`` share
    the same replicas.  The constants ``c1`` and ``c2`` are not fixed by the
    theory; both default to 1 and are always listed as overrides.
    """
    kappa = _require_kappa(law)
    c1 = 1.0 if c1_override is None else float(c1_override)
    c2 = 1.0 if c2_override is None else float(c2_override)
    if not L > c1:
        raise DomainError(f"L = {L} must exceed c1 = {c1}")
    if any(not 0.0 <= a <= 1.0 for a in a_grid):
        raise ConfigError("exponents a must lie in [0, 1]")
    u = unit_direction(l if l is not None else np.eye(law.dim)[0], law.dim)
    spec = ECBoxSpec(tuple(u), float(L), float(L_tilde))
    dom = spec.domain(cap)
    reps = 1 if law.is_deterministic else env_budget
    pf, po, _ = _box_samples(law, dom, reps, master_seed, stream_id)
    pref = criterion_prefactor(law.dim, kappa, L, L_tilde, c2)
    rows = []
    for a in a_grid:
        e = _mean_or_point(_rho_power(pf, po, float(a)), level, "rho-moment",
                           (master_seed, stream_id))
        rows.append({"a": float(a), "E_rho_a": e.value, "lower": e.lower, "upper": e.upper,
                     "prefactor": pref, "value": pref * e.value,
                     "value_upper": pref * e.upper, "replicas": e.replicas})
    best = min(rows, key=lambda r: r["value"])
    holds = best["value"] < 1.0
    prov = (Param("c1", c1, "override", "dimension dependent, unspecified"),
            Param("c2", c2, "override", "dimension dependent, unspecified"),
            Param("kappa", kappa, "theoretical", None, "declared ellipticity constant"))
    verdict = (f"criterion value {best['value']:.4g} at a = {best['a']:g} "
               f"{'<' if holds else '>='} 1 (c1, c2 overridden)")
    return ConditionReport("effective-criterion", tuple(float(c) for c in u), tuple(rows),
                           verdict, holds, prov,
                           notes=(f"L = {L}, L_tilde = {L_tilde}, env replicas = {reps}",))


# ---------------------------------------------------------------------------
# decomposition of E[rho^a]


def decomposition_parameters(L: float, dim: int, kappa: float) -> dict:
    """Scale-dependent exponents of the split of ``E[rho^a]``."""
    if not L > math.e ** math.e:
        raise DomainError("L must exceed e^e so that ln ln L > 1")
    g = math.log(2.0) / math.log(math.log(L))
    n = math.ceil(4.0 * (1.0 - g / 2.0) / g) + 1
    beta1 = g / 2.0
    betas = [beta1 + (j - 1) * g / 4.0 for j in range(1, n + 1)]
    c4 = -2.0 * dim * math.log(kappa)
    thresholds = [0.5 * math.exp(-c4 * L ** b) for b in betas]
    return {"gamma_L": g, "beta": betas, "a": L ** (-g / 3.0), "n": n, "c4": c4,
            "thresholds": thresholds}


@dataclass(frozen=True)
class DecompositionReport:
    L: float
    L_tilde: float
    params: dict
    E: tuple
    counts: tuple
    total: float
    expectation: float
    residual: float
    elliptic_replicas: int
    E_n_zero_on_elliptic: bool
    min_front_probability: float
    front_floor: float
    provenance: tuple

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "provenance"}
        d["E"] = list(self.E)
        d["counts"] = list(self.counts)
        d["provenance"] = [p.as_dict() for p in self.provenance]
        return d


def _bin_index(pf: np.ndarray, thresholds: Sequence[float]) -> np.ndarray:
    """Bin 0: ``p > t_1``; bin ``j``: ``t_{j+1} < p <= t_j``; bin ``n``: ``p <= t_n``."""
    t = np.asarray(thresholds)
    # number of thresholds that p is at or below (thresholds are decreasing)
    return (pf[:, None] <= t[None, :]).sum(axis=1)


def decomposition_diagnostic(law: EnvironmentLaw, L: float, env_budget: int = 50, l=None,
                             L_tilde: float | None = None, master_seed: int = 0,
                             stream_id: int = 40, cap: int = DEFAULT_CELL_CAP
                             ) -> DecompositionReport:
    """Split ``E[rho^a]`` by the size of the quenched front-exit probability.

    Replicas are binned against ``1/2 exp(-c4 L^{beta_j})``; the pieces and
    the full expectation are summed from the same replicas.  The box uses
    ``L_tilde = L^3 - 1`` unless a smaller lateral size is passed, which is
    recorded as an override.
    """
    kappa = _require_kappa(law)
    par = decomposition_parameters(L, law.dim, kappa)
    u = unit_direction(l if l is not None else np.eye(law.dim)[0], law.dim)
    lt_theory = L ** 3 - 1
    lt = lt_theory if L_tilde is None else float(L_tilde)
    dom = ECBoxSpec(tuple(u), float(L), lt).domain(cap)
    pf, po, ell = _box_samples(law, dom, env_budget, master_seed, stream_id)
    vals = _rho_power(pf, po, par["a"])
    bins = _bin_index(pf, par["thresholds"])
    n = par["n"]
    R = vals.size
    E = tuple(math.fsum(vals[bins == j]) / R for j in range(n + 1))
    counts = tuple(int(np.sum(bins == j)) for j in range(n + 1))
    expectation = math.fsum(vals) / R
    total = math.fsum(E)
    floor = math.exp(-par["c4"] * L)
    en_zero = bool(np.all(bins[ell] != n))
    prov = (Param("L_tilde", lt, "theoretical" if L_tilde is None else "override", lt_theory),
            Param("c4", par["c4"], "theoretical", "-2 d ln kappa"))
    return DecompositionReport(float(L), lt, par, E, counts, total, expectation,
                               total - expectation, int(ell.sum()), en_zero,
                               float(pf.min()), floor, prov)


# ---------------------------------------------------------------------------
# atypical quenched exits


def atypical_exit_bound(L: float, beta: float, dim: int) -> float:
    """``5^d e / ceil(L^{beta - eps(L)} / 5^d)!`` with ``eps(L) = (ln ln L)^{-2}``."""
    eps = 1.0 / math.log(math.log(L)) ** 2
    k = math.ceil(L ** (beta - eps) / 5 ** dim)
    k = max(k, 0)
    return math.exp(dim * math.log(5.0) + 1.0 - math.lgamma(k + 1))


@dataclass(frozen=True)
class AtypicalRow:
    beta: float
    threshold: float
    estimate: EstimateWithCI
    bound: float

    def as_dict(self) -> dict:
        return {"beta": self.beta, "threshold": self.threshold,
                "estimate": self.estimate.as_dict(), "bound": self.bound}


def atypical_quenched_exit(law: EnvironmentLaw, L: float, beta: float | Sequence[float],
                           env_budget: int = 200, l=None, L_tilde: float | None = None,
                           master_seed: int = 0, stream_id: int = 50, level: float = 0.95,
                           cap: int = DEFAULT_CELL_CAP) -> tuple:
    """Fraction of environments whose quenched front-exit probability is at
    most ``1/2 exp(-c4 L^beta)``, for each ``beta`` on shared replicas."""
    kappa = _require_kappa(law)
    if not L > math.e ** math.e:
        raise DomainError("L must exceed e^e")
    c4 = -2.0 * law.dim * math.log(kappa)
    u = unit_direction(l if l is not None else np.eye(law.dim)[0], law.dim)
    lt = L ** 3 - 1 if L_tilde is None else float(L_tilde)
    dom = ECBoxSpec(tuple(u), float(L), lt).domain(cap)
    reps = 1 if law.is_deterministic else env_budget
    pf, _, _ = _box_samples(law, dom, reps, master_seed, stream_id)
    betas = [float(beta)] if np.isscalar(beta) else [float(b) for b in beta]
    rows = []
    for b in betas:
        thr = 0.5 * math.exp(-c4 * L ** b)
        hits = int(np.sum(pf <= thr))
        rows.append(AtypicalRow(b, thr, proportion(hits, reps, level, "atypical-exit", 0,
                                                   (master_seed, stream_id)),
                                atypical_exit_bound(L, b, law.dim)))
    return tuple(rows)


# ---------------------------------------------------------------------------
# the domains D_L


def dl_geometry(L: float) -> dict:
    """Depths and lateral size of ``D_L``: ``-L <= x.l <= 10L`` and
    ``|x.l_k| <= L^3 ln ln L / ln L``."""
    if L < 20:
        raise DomainError("D_L needs L >= 20")
    return {"back": float(L), "front": 10.0 * L,
            "lateral": L ** 3 * math.log(math.log(L)) / math.log(L)}


def dl_domain(l, L: float, lateral: float | None = None, cap: int = DEFAULT_CELL_CAP
              ) -> FiniteDomain:
    """Lattice version of ``D_L`` (closed bounds); ``lateral`` may shrink the
    lateral size for exact solves."""
    g = dl_geometry(L)
    return box_domain(l, g["back"], g["front"], g["lateral"] if lateral is None else lateral,
                      "frame", closed=True, cap=cap)


def dl_reference(L: float) -> float:
    """``exp(-L^{ln 2 / ln ln L})``."""
    return math.exp(-L ** (math.log(2.0) / math.log(math.log(L))))


@dataclass(frozen=True)
class DLExit:
    L: float
    lateral: float
    estimate: EstimateWithCI
    reference: float
    below_reference: bool
    horizon: int

    def as_dict(self) -> dict:
        return {"L": self.L, "lateral": self.lateral, "estimate": self.estimate.as_dict(),
                "reference": self.reference, "below_reference": self.below_reference,
                "horizon": self.horizon}


def dL_exit_estimate(law: EnvironmentLaw, L: float, budget: int = 2000, l=None,
                     horizon: int | None = None, master_seed: int = 0, stream_id: int = 60,
                     level: float = 0.95) -> DLExit:
    """Band for ``P_0[walk leaves D_L other than through its frontal part]``.

    Walks run until ``x.l > 10L``, ``x.l < -L``, a lateral coordinate
    exceeds the lateral size, or the horizon (default ``2200 L`` steps)."""
    g = dl_geometry(L)
    frame = orthonormal_frame(l if l is not None else np.eye(law.dim)[0])
    if frame.shape[0] != law.dim:
        raise ConfigError(f"direction needs {law.dim} components")
    levels = [DirectionalLevel(tuple(frame[0]), g["front"]),
              DirectionalLevel(tuple(-frame[0]), g["back"])]
    for k in range(1, law.dim):
        for s in (1.0, -1.0):
            levels.append(DirectionalLevel(tuple(s * frame[k]), g["lateral"]))
    horizon = int(2200 * L) if horizon is None else int(horizon)
    env_seeds, walk_seeds = replica_seeds(master_seed, stream_id, budget)
    b = run_many(Walker(Environment(law, 0)), env_seeds, walk_seeds,
                 np.zeros(law.dim, dtype=np.int64),
                 StoppingSpec(horizon, levels=tuple(levels), track=tuple(frame[0])))
    bad = int(np.sum(b.codes >= 2))
    cens = int(np.sum(b.codes == RULE_HORIZON))
    est = (proportion(bad, budget, level, "dl-exit", 0, (master_seed, stream_id)) if cens == 0
           else censored_band(bad, cens, budget, level, "dl-exit-band", (master_seed, stream_id)))
    ref = dl_reference(L)
    return DLExit(float(L), g["lateral"], est, ref, est.value < ref, horizon)
