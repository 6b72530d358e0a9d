"""Experiment drivers behind the command-line subcommands.

Every driver takes a validated :class:`ExperimentConfig` and returns an
:class:`ExperimentResult`: a CSV table with a fixed header and a nested
dictionary of estimates for the JSON summary.  Random streams are derived
from ``(master seed, experiment id, estimator slot)`` so that no two
estimators of one run share a stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ballisticity import (atypical_quenched_exit, check_P_M, cone_directions,
                           dL_exit_estimate, decomposition_diagnostic, effective_criterion,
                           fit_T_gamma, slab_report, unit_direction)
from .config import EXPERIMENTS, ExperimentConfig
from .env_model import (Environment, EnvironmentLaw, Homogeneous, TrapLaw,
                        check_E_beta, ellipticity_report, local_drift,
                        nestling_class, sample_kernels, trap_criterion, trap_support_bound)
from .errors import ConfigError, DomainError, InsufficientDataError, ResourceError
from .exact_quenched import edge_trap, torus_invariant_measure
from .ldp_rate import (conservation_error, conservation_tolerance, default_hold,
                       fuzz_superadditivity, legendre_rate, rate_curve, symmetry_check_1d)
from .oned import (classify, direct_velocity, kks_exponent, potential, series_velocity,
                   sinai_diagnostic, solomon_velocity, velocity, check_invariance)
from .renewal import (check_iid, estimate_velocity, renewal_radius_moments, simulate_records,
                      transience_probe)
from .stats import EstimateWithCI, agreement_matrix, mean_ci, proportion
from .walk_sim import kernel_entry, positions_at, replica_seeds

EXPERIMENT_IDS = {name: i + 1 for i, name in enumerate(EXPERIMENTS)}


@dataclass
class ExperimentResult:
    header: tuple
    rows: list
    estimates: dict
    extra_params: dict = field(default_factory=dict)


def stream(cfg: ExperimentConfig, slot: int) -> int:
    """Stream identifier of estimator ``slot`` within this experiment."""
    return 100 * EXPERIMENT_IDS[cfg.experiment] + slot


def _direction(cfg: ExperimentConfig, law: EnvironmentLaw, key: str = "direction"):
    d = cfg.params.get(key)
    if d is None:
        return tuple([1] + [0] * (law.dim - 1))
    if len(d) != law.dim:
        raise ConfigError(f"{key} needs {law.dim} components", cfg.lines.get(key))
    return tuple(d)


def _opt_int(v):
    return None if not v else int(v)


def _est_row(name: str, e) -> list:
    return [name, e.value, e.lower, e.upper, e.replicas, e.std_error, e.censored_fraction]


EST_HEADER = ("estimator", "value", "lower", "upper", "replicas", "std_error",
              "censored_fraction")


# ---------------------------------------------------------------------------
# environment and one-dimensional experiments


def run_env_report(cfg, law) -> ExperimentResult:
    p = cfg.params
    rep = ellipticity_report(law, p["samples"], p["alpha_moment"], cfg.master_seed)
    nest = nestling_class(law, seed=cfg.master_seed)
    inv = rep["inverse_moment"]
    rows = [["min_entry", rep["min_entry_estimate"], "", "", ""],
            ["declared_kappa", law.declared_kappa if law.declared_kappa is not None else "",
             "", "", ""],
            ["inverse_moment", inv.value, inv.lower, inv.upper,
             "divergent" if rep["inverse_moment_divergent"] else "stable"],
            ["nestling_class", nest["class"].value, "", "", nest["source"]]]
    est = {"law": law.describe(), "ellipticity": rep, "nestling": nest}
    if p["betas"] is not None:
        if len(p["betas"]) != 2 * law.dim:
            raise ConfigError(f"betas needs {2 * law.dim} entries", cfg.lines.get("betas"))
        eb = check_E_beta(law, p["betas"], n_samples=p["samples"], seed=cfg.master_seed)
        m = eb["moment_estimate"]
        rows.append(["E_beta_moment", m.value, m.lower, m.upper,
                     "satisfied" if eb["satisfied"] else "not satisfied"])
        est["E_beta"] = eb
    return ExperimentResult(("quantity", "value", "lower", "upper", "flag"), rows, est)


def run_classify1d(cfg, law) -> ExperimentResult:
    p = cfg.params
    rc = classify(law, p["budget"], cfg.master_seed)
    est = {"verdict": rc.regime.value, "classification": rc.as_dict()}
    frac = None
    if p["n"] > 0:
        env_seeds, walk_seeds = replica_seeds(cfg.master_seed, stream(cfg, 1), p["replicas"])
        kind, params, table = law.packed()
        pos = positions_at(kind, params, table, 1, env_seeds, walk_seeds, 0.0,
                           np.zeros(1, dtype=np.int64), np.array([p["n"]], dtype=np.int64))
        frac = proportion(int(np.sum(pos[:, 0, 0] > 0)), p["replicas"], cfg.level,
                          "fraction-positive", 0, (cfg.master_seed, stream(cfg, 1)))
        est["fraction_positive"] = frac
    row = [rc.regime.value, rc.margin, rc.E_log_rho, rc.var_log_rho, rc.undecided, p["n"],
           p["replicas"] if frac else 0, frac.value if frac else "",
           frac.lower if frac else "", frac.upper if frac else ""]
    return ExperimentResult(("regime", "margin", "E_log_rho", "var_log_rho", "undecided", "n",
                             "replicas", "fraction_positive", "lower", "upper"), [row], est)


def run_velocity1d(cfg, law) -> ExperimentResult:
    p = cfg.params
    rows, est, comparable = [], {}, {}
    for slot, m in enumerate(p["methods"], start=1):
        if m == "paper_formula":
            try:
                sv = series_velocity(law, p["terms"], seed=cfg.master_seed)
            except DomainError as exc:
                est[m] = {"applicable": False, "reason": str(exc)}
                continue
            e = velocity(law, m, p["terms"], master_seed=cfg.master_seed, level=cfg.level)
            oracle = solomon_velocity(law, seed=cfg.master_seed)
            est[m] = {"estimate": e, "series": sv.as_dict(), "discrepancy_vs_oracle":
                      e.value - oracle}
        else:
            e = velocity(law, m, p["terms"], p["n"], p["replicas"], cfg.master_seed,
                         stream(cfg, slot), cfg.level)
            est[m] = e
            comparable[m] = e
        rows.append(_est_row(m, e))
    if len(comparable) > 1:
        est["agreement"] = agreement_matrix(comparable, p["joint_level"])
    return ExperimentResult(EST_HEADER, rows, est)


def run_invariant_density(cfg, law) -> ExperimentResult:
    p = cfg.params
    if not 0 <= p["move"] < 2 * law.dim:
        raise ConfigError("move index out of range", cfg.lines.get("move"))
    chk = check_invariance(law, kernel_entry(p["move"]), p["terms"], p["replicas"],
                           cfg.master_seed)
    d = chk.as_dict()
    header = ("integral_g", "integral_Rg", "discrepancy", "std_error", "truncation_bound",
              "tolerance", "consistent", "replicas", "terms")
    return ExperimentResult(header, [[d[k] for k in header]], {"invariance": d})


def run_kks(cfg, law) -> ExperimentResult:
    r = kks_exponent(law, cfg.params["samples"], cfg.master_seed)
    row = [r.kks_kappa, r.bracket[0], r.bracket[1], r.residual, r.sub_ballistic]
    return ExperimentResult(("kks_kappa", "bracket_lo", "bracket_hi", "residual",
                             "sub_ballistic"), [row], {"kks": r.as_dict()})


def run_sinai(cfg, law) -> ExperimentResult:
    p = cfg.params
    t = sinai_diagnostic(law, p["n_grid"], p["replicas"], cfg.master_seed, stream(cfg, 1),
                         p["bound"])
    rows = [[r.n, r.median_abs, r.normalized] for r in t.rows]
    return ExperimentResult(("n", "median_abs", "normalized"), rows, {"sinai": t.as_dict()})


def run_potential(cfg, law) -> ExperimentResult:
    p = cfg.params
    seed = cfg.master_seed if p["env_seed"] is None else p["env_seed"]
    t = potential(Environment(law, seed), p["lo"], p["hi"])
    rows = [[x, v] for x, v in t.as_rows()]
    est = {"harmonicity_residual": t.harmonicity_residual(),
           "martingale_residual": t.martingale_residual(), "log_domain": t.log_domain,
           "env_seed": seed}
    return ExperimentResult(("site", "value"), rows, est)


# ---------------------------------------------------------------------------
# renewal and law of large numbers


def run_renewal(cfg, law) -> ExperimentResult:
    p = cfg.params
    lv = _direction(cfg, law)
    rs = simulate_records(law, lv, p["horizon"], p["replicas"], cfg.master_seed,
                          stream(cfg, 1), _opt_int(p["window"]))
    est: dict = {"window": rs.window, "horizon": rs.horizon}
    try:
        est["velocity"] = estimate_velocity(rs, cfg.level)
    except InsufficientDataError as exc:
        est["velocity"] = {"available": False, "reason": str(exc)}
    tau1, _, _ = rs.first_blocks()
    try:
        est["iid"] = check_iid(rs.increments(), tau1).as_dict()
    except InsufficientDataError as exc:
        est["iid"] = {"available": False, "reason": str(exc)}
    mom = renewal_radius_moments(rs, p["gammas"], p["Cs"])
    est["radius_moments"] = [m.__dict__ for m in mom] if mom else []
    rows = [[i, r.confirmed, r.tau1 if r.tau1 is not None else "", r.final_height, r.pending]
            for i, r in enumerate(rs)]
    return ExperimentResult(("replica", "renewals", "tau1", "final_height", "pending"), rows,
                            est)


def run_lln(cfg, law) -> ExperimentResult:
    """Direct, renewal and (in one dimension) closed-form speeds along one
    direction, with a joint-interval agreement matrix and a transience probe."""
    p = cfg.params
    lv = _direction(cfg, law)
    u = unit_direction(lv, law.dim)
    est: dict = {}
    comparable = {}
    comparable["direct_mc"] = direct_velocity(law, p["n"], p["replicas"], cfg.master_seed,
                                              stream(cfg, 1), cfg.level, direction=u)
    try:
        rs = simulate_records(law, lv, p["n"], p["replicas"], cfg.master_seed, stream(cfg, 2))
        comparable["renewal_mc"] = estimate_velocity(rs, cfg.level)
    except InsufficientDataError as exc:
        est["renewal_mc"] = {"available": False, "reason": str(exc)}
    if law.dim == 1:
        v = solomon_velocity(law, seed=cfg.master_seed) * float(u[0])
        comparable["solomon_oracle"] = EstimateWithCI(v, v, v, 0, cfg.level, "solomon-oracle",
                                                      seeds=(cfg.master_seed,))
        try:
            sv = series_velocity(law, p["terms"], seed=cfg.master_seed)
            est["paper_formula"] = {"raw": sv.raw, "normalized": sv.normalized,
                                    "discrepancy_vs_oracle": sv.raw - v, "note": sv.note}
        except DomainError as exc:
            est["paper_formula"] = {"applicable": False, "reason": str(exc)}
    probe = transience_probe(law, lv, p["n"], p["replicas"], cfg.master_seed, stream(cfg, 3),
                             cfg.level)
    est.update(comparable)
    est["transience_probe"] = probe
    est["agreement"] = agreement_matrix(comparable, p["joint_level"])
    rows = [_est_row(k, e) for k, e in comparable.items()]
    rows.append(_est_row("transience_probe", probe))
    return ExperimentResult(EST_HEADER, rows, est)


# ---------------------------------------------------------------------------
# ballisticity conditions


SLAB_HEADER = ("direction", "L", "b", "value", "lower", "upper", "replicas",
               "censored_fraction", "inconclusive", "lateral_bound", "lateral_delta")


def _slab_rows(report, direction) -> list:
    return [[list(direction)] + [r[k] for k in SLAB_HEADER[1:]] for r in report.rows]


def run_slab(cfg, law) -> ExperimentResult:
    p = cfg.params
    l = _direction(cfg, law)
    dirs = [unit_direction(l, law.dim)]
    if p["cone_angle"] > 0 and law.dim > 1:
        dirs += list(cone_directions(l, p["cone_angle"]))
    rows, reports = [], []
    for k, u in enumerate(dirs):
        rep = slab_report(law, u, p["b"], p["L_grid"], p["method"], p["replicas"],
                          _opt_int(p["horizon"]), cfg.master_seed, stream(cfg, 1 + 10 * k),
                          cfg.level, _opt_int(p["lateral"]))
        rows += _slab_rows(rep, rep.direction)
        reports.append(rep.as_dict())
    return ExperimentResult(SLAB_HEADER, rows, {"reports": reports})


def run_t_gamma_fit(cfg, law) -> ExperimentResult:
    p = cfg.params
    rep = slab_report(law, _direction(cfg, law), p["b"], p["L_grid"], p["method"],
                      p["replicas"], _opt_int(p["horizon"]), cfg.master_seed, stream(cfg, 1),
                      cfg.level, _opt_int(p["lateral"]))
    fit = fit_T_gamma(rep)
    rows = _slab_rows(rep, rep.direction)
    return ExperimentResult(SLAB_HEADER, rows, {"fit": fit.as_dict(), "report": rep.as_dict()})


def _report_result(rep, header=None) -> ExperimentResult:
    header = tuple(header or rep.rows[0].keys())
    rows = [[r[k] for k in header] for r in rep.rows]
    return ExperimentResult(header, rows, {"report": rep.as_dict()})


def run_p_condition(cfg, law) -> ExperimentResult:
    p = cfg.params
    rep = check_P_M(law, p["N0"], p["M"], p["env_budget"], p["start_sample"],
                    _direction(cfg, law), _opt_int(p["reduced_lateral"]), cfg.master_seed,
                    stream(cfg, 1))
    return _report_result(rep, ("N0", "M", "threshold", "max_exit", "max_exit_se",
                                "worst_start", "starts", "env_replicas", "holds"))


def run_effective_criterion(cfg, law) -> ExperimentResult:
    p = cfg.params
    rep = effective_criterion(law, p["L"], p["L_tilde"], p["a_grid"], p["env_budget"],
                              p["c2"], p["c1"], _direction(cfg, law), cfg.master_seed,
                              stream(cfg, 1), cfg.level)
    return _report_result(rep, ("a", "E_rho_a", "lower", "upper", "prefactor", "value",
                                "value_upper", "replicas"))


def run_decomposition(cfg, law) -> ExperimentResult:
    p = cfg.params
    rep = decomposition_diagnostic(law, p["L"], p["env_budget"], _direction(cfg, law),
                                   p["L_tilde"], cfg.master_seed, stream(cfg, 1))
    thr = rep.params["thresholds"]
    rows = [[j, thr[j - 1] if j >= 1 else "", rep.counts[j], rep.E[j]]
            for j in range(len(rep.E))]
    return ExperimentResult(("bin", "upper_threshold", "count", "E_j"), rows,
                            {"decomposition": rep.as_dict()})


def run_atypical_exit(cfg, law) -> ExperimentResult:
    p = cfg.params
    res = atypical_quenched_exit(law, p["L"], p["betas"], p["env_budget"],
                                 _direction(cfg, law), p["L_tilde"], cfg.master_seed,
                                 stream(cfg, 1), cfg.level)
    rows = [[r.beta, r.threshold, r.estimate.value, r.estimate.lower, r.estimate.upper,
             r.bound] for r in res]
    return ExperimentResult(("beta", "threshold", "value", "lower", "upper", "bound"), rows,
                            {"rows": [r.as_dict() for r in res]})


def run_dl_exit(cfg, law) -> ExperimentResult:
    p = cfg.params
    l = _direction(cfg, law)
    out = []
    for i, L in enumerate(p["L_grid"]):
        out.append(dL_exit_estimate(law, L, p["budget"], l, _opt_int(p["horizon"]),
                                    cfg.master_seed, stream(cfg, 1 + i), cfg.level))
    rows = [[r.L, r.estimate.value, r.estimate.lower, r.estimate.upper,
             r.estimate.censored_fraction, r.reference, r.below_reference, r.horizon]
            for r in out]
    return ExperimentResult(("L", "value", "lower", "upper", "censored_fraction", "reference",
                             "below_reference", "horizon"), rows,
                            {"rows": [r.as_dict() for r in out]})


# ---------------------------------------------------------------------------
# rate function


def _default_x_grid(dim: int) -> list:
    if dim == 1:
        return [(0.0,), (0.2,), (0.4,), (-0.2,), (-0.4,), (1.0,), (1.2,)]
    return [(0.0, 0.0), (0.2, 0.0), (0.4, 0.0), (0.2, 0.2), (0.0, 0.4), (0.8, 0.4)]


def run_rate_function(cfg, law) -> ExperimentResult:
    p = cfg.params
    env = Environment(law, cfg.master_seed if p["env_seed"] is None else p["env_seed"])
    hold = default_hold(law) if p["hold"] is None else p["hold"]
    xs = _default_x_grid(law.dim) if p["x_grid"] is None else list(p["x_grid"])
    for x in xs:
        if len(x) != law.dim:
            raise ConfigError(f"x_grid points need {law.dim} coordinates",
                              cfg.lines.get("x_grid"))
    curve = rate_curve(env, p["n_grid"], xs, hold)
    homog = isinstance(law, Homogeneous)
    rows = []
    for r in curve.rows:
        oracle = legendre_rate(law.kernel, r["x"], hold) if homog else ""
        rows.append([list(r["x"]), r["n"], r["I_hat"], r["infinite"], r["boundary_approach"],
                     oracle])
    cn = p["conservation_n"]
    cerr = conservation_error(env, cn, hold)
    est = {"hold": hold, "curve": curve.as_dict(),
           "conservation": {"n": cn, "error": cerr, "tolerance": conservation_tolerance(cn),
                            "ok": cerr <= conservation_tolerance(cn)}}
    if law.dim == 1:
        est["symmetry"] = [s.as_dict() for s in symmetry_check_1d(
            env, [abs(x[0]) for x in xs if 0 < abs(x[0]) < 1], max(p["n_grid"]), hold)]
    if p["fuzz_cases"] > 0:
        est["superadditivity"] = fuzz_superadditivity(law, p["fuzz_cases"], cfg.master_seed,
                                                      hold=hold)
    return ExperimentResult(("x", "n", "I_hat", "infinite", "boundary_approach", "oracle"),
                            rows, est)


# ---------------------------------------------------------------------------
# balanced walks and traps


def balanced_kernel_check(law: EnvironmentLaw, samples: int = 10_000, seed: int = 0) -> dict:
    """Exact zero-drift check on the kernels of a balanced law: the finite
    support when there is one, otherwise a sample of site kernels."""
    if not law.is_balanced:
        raise DomainError("the balanced experiment needs a balanced law")
    ks = law.support_kernels()
    source = "support"
    if ks is None:
        ks = sample_kernels(law, samples, seed)
        source = "samples"
    drift = np.atleast_2d(local_drift(ks, law.dim))
    mx = float(np.abs(drift).max())
    return {"max_abs_drift": mx, "exact_zero": mx == 0.0, "kernels": int(ks.shape[0]),
            "source": source}


def balanced_clt_experiment(cfg, law) -> ExperimentResult:
    """Zero drift per kernel, covariance of ``X_n / sqrt(n)`` with z-scores of
    the off-diagonal entries, and stationary torus weights."""
    p = cfg.params
    est: dict = {"kernel_drift": balanced_kernel_check(law, seed=cfg.master_seed)}
    n, R, d = p["n"], p["replicas"], law.dim
    env_seeds, walk_seeds = replica_seeds(cfg.master_seed, stream(cfg, 1), R)
    kind, params, table = law.packed()
    pos = positions_at(kind, params, table, d, env_seeds, walk_seeds, 0.0,
                       np.zeros(d, dtype=np.int64), np.array([n], dtype=np.int64))
    y = pos[:, 0, :].astype(float) / math.sqrt(n)
    mean = [mean_ci(y[:, j], cfg.level, "mean") for j in range(d)]
    rows = []
    cov = {}
    for i in range(d):
        for j in range(i, d):
            # centred at the true mean 0 (martingale), so the product mean is the covariance
            e = mean_ci(y[:, i] * y[:, j], cfg.level, "second-moment",
                        seeds=(cfg.master_seed, stream(cfg, 1)))
            z = (e.value / e.std_error if e.std_error > 0 else 0.0) if i != j else ""
            analytic = ""
            if isinstance(law, Homogeneous):
                analytic = 2.0 * law.kernel[2 * i] if i == j else 0.0
            cov[f"{i},{j}"] = {"estimate": e, "z": z, "analytic": analytic}
            rows.append([i, j, e.value, e.lower, e.upper, e.std_error, z, analytic])
    est["mean"] = mean
    est["covariance"] = cov
    est["off_diagonal_within_3se"] = all(abs(v["z"]) <= 3.0 for k, v in cov.items()
                                         if k.split(",")[0] != k.split(",")[1])
    env = Environment(law, cfg.master_seed)
    tor = []
    for N in p["torus_N"]:
        tm = torus_invariant_measure(env, int(N))
        tor.append(tm.as_dict())
    est["torus"] = tor
    return ExperimentResult(("i", "j", "cov", "lower", "upper", "std_error", "z", "analytic"),
                            rows, est)


def run_trap(cfg, law) -> ExperimentResult:
    p = cfg.params
    env_seeds, _ = replica_seeds(cfg.master_seed, stream(cfg, 1), p["environments"])
    origin = np.zeros(law.dim, dtype=np.int64)
    rows = []
    worst_s = worst_p = 0.0
    for r, s in enumerate(env_seeds):
        env = Environment(law, int(s))
        for move in range(2 * law.dim):
            et = edge_trap(env, origin, move, p["k_max"])
            es, ep = et.max_survival_error(), et.max_partial_sum_error()
            worst_s, worst_p = max(worst_s, es), max(worst_p, ep)
            rows.append([r, move, et.product, es, ep, float(et.partial_sums[-1]),
                         1.0 / (1.0 - et.product)])
    crit = trap_criterion(law, p["samples"], cfg.master_seed)
    est = {"max_survival_error": worst_s, "max_partial_sum_error": worst_p,
           "criterion": {str(k): v for k, v in crit.items()}}
    if isinstance(law, TrapLaw):
        est["support_bound"] = trap_support_bound(law)
    return ExperimentResult(("environment", "move", "product", "survival_error",
                             "partial_sum_error", "partial_sum", "limit"), rows, est)


# ---------------------------------------------------------------------------
# dispatch and cost model


RUNNERS: dict[str, Callable] = {
    "env-report": run_env_report, "classify1d": run_classify1d,
    "velocity1d": run_velocity1d, "invariant-density": run_invariant_density,
    "kks": run_kks, "sinai": run_sinai, "potential": run_potential,
    "renewal": run_renewal, "lln": run_lln, "slab": run_slab,
    "t-gamma-fit": run_t_gamma_fit, "p-condition": run_p_condition,
    "effective-criterion": run_effective_criterion, "decomposition": run_decomposition,
    "atypical-exit": run_atypical_exit, "dl-exit": run_dl_exit,
    "rate-function": run_rate_function, "balanced-clt": balanced_clt_experiment,
    "trap": run_trap,
}

ONE_DIM_ONLY = {"classify1d", "velocity1d", "invariant-density", "kks", "sinai", "potential"}


def _box_cells(law, back: float, front: float, lateral: float) -> float:
    return (back + front + 1.0) * (2.0 * lateral + 1.0) ** (law.dim - 1)


def estimate_ops(cfg: ExperimentConfig, law: EnvironmentLaw) -> float:
    """Rough count of elementary operations (walk steps, DP cell updates,
    sparse-solve unknowns times a fill factor) the experiment will perform."""
    p, d, name = cfg.params, law.dim, cfg.experiment
    solve = 20.0  # per-unknown cost of a sparse direct solve
    if name == "env-report":
        return 4.0 * d * p["samples"]
    if name == "classify1d":
        return p["budget"] + p["n"] * p["replicas"]
    if name == "velocity1d":
        mc = sum(1 for m in p["methods"] if m.endswith("_mc"))
        return mc * p["n"] * p["replicas"] + p["terms"] * 200_000
    if name == "invariant-density":
        return 4.0 * p["terms"] * p["replicas"]
    if name == "kks":
        return 50.0 * p["samples"]
    if name == "sinai":
        return float(max(p["n_grid"])) * p["replicas"]
    if name == "potential":
        return float(p["hi"] - p["lo"])
    if name == "renewal":
        return 2.0 * p["horizon"] * p["replicas"]
    if name == "lln":
        return 3.0 * p["n"] * p["replicas"]
    if name in ("slab", "t-gamma-fit"):
        total = 0.0
        for L in p["L_grid"]:
            if p["method"] == "walk_mc":
                h = p["horizon"] or 200.0 * ((1 + p["b"]) * L) ** 2
                total += p["replicas"] * h
            else:
                lat = p["lateral"] or 4.0 * L
                total += p["replicas"] * solve * 15.0 * _box_cells(law, p["b"] * L, L, lat)
        return total * (1 + (2 * (d - 1) if p.get("cone_angle", 0) > 0 and d > 1 else 0))
    if name == "p-condition":
        N0 = p["N0"]
        lat = 25.0 * (p["reduced_lateral"] or N0 ** 3)
        return p["env_budget"] * solve * _box_cells(law, N0 / 2.0, N0, lat)
    if name in ("effective-criterion", "decomposition", "atypical-exit"):
        L = p["L"]
        lt = p["L_tilde"] if p["L_tilde"] is not None else L ** 3 - 1
        return p["env_budget"] * solve * _box_cells(law, L, L, lt)
    if name == "dl-exit":
        return float(sum(p["budget"] * (p["horizon"] or 2200 * L) for L in p["L_grid"]))
    if name == "rate-function":
        dp = sum((2 * d + 1) * n * (2 * n + 1) ** d for n in p["n_grid"])
        return dp * 4.0 + p["fuzz_cases"] * 3 * 13 ** (d + 1) * 10
    if name == "balanced-clt":
        return p["n"] * p["replicas"] + sum(solve * (2 * N + 1) ** d for N in p["torus_N"])
    if name == "trap":
        return p["environments"] * 2 * d * p["k_max"] * 10 + 10.0 * p["samples"]
    raise ConfigError(f"no cost model for {name!r}")


def run_experiment(cfg: ExperimentConfig, force: bool = False) -> tuple[ExperimentResult, float]:
    law = cfg.law()
    if cfg.experiment in ONE_DIM_ONLY and law.dim != 1:
        raise DomainError(f"{cfg.experiment} needs a one-dimensional law")
    ops = estimate_ops(cfg, law)
    if ops > cfg.op_cap and not force:
        raise ResourceError(f"estimated {ops:.3g} operations exceed op_cap = {cfg.op_cap:.3g}; "
                            "lower the budget or pass --force")
    return RUNNERS[cfg.experiment](cfg, law), ops
