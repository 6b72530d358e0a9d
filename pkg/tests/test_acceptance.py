"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line
that is printed in the terminal summary."""

import math
import time

import numpy as np
import pytest

from rwre import cli
from rwre.ballisticity import (SlabSpec, check_P_M, decomposition_diagnostic,
                               effective_criterion, slab_exit_probability, slab_report)
from rwre.config import parse_config
from rwre.env_model import BalancedIID, DiscreteLaw, Environment, Homogeneous, TrapLaw
from rwre.exact_quenched import FiniteDomain, QuenchedField, edge_trap, exit_probability
from rwre.experiments import run_experiment
from rwre.ldp_rate import (GaugeNorm, conservation_error, empirical_rate, fuzz_superadditivity,
                           legendre_rate)
from rwre.oned import kks_exponent
from rwre.walk_sim import estimate_no_backtrack

# two-dimensional laws: mean drift 0.1 along e1, and a strongly drifted one
DRIFT_2D = ("law = discrete\ndim = 2\nkernels = 0.35,0.15,0.25,0.25; 0.3,0.2,0.25,0.25\n"
            "weights = 0.5,0.5\n")
STRONG_2D = ("law = discrete\ndim = 2\nkernels = 0.85,0.05,0.05,0.05; 0.8,0.06,0.07,0.07\n"
             "weights = 0.5,0.5\n")


def record(log, n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    log.append(line)
    print(line)
    assert ok, line


def run_cfg(text, experiment):
    t0 = time.perf_counter()
    result, _ = run_experiment(parse_config(f"experiment = {experiment}\n" + text))
    return result, time.perf_counter() - t0


@pytest.fixture(scope="module")
def compiled():
    """Trigger the one-time numba compilation (cached on disk afterwards) on
    an unrelated input, so runtime limits measure the computation itself."""
    dom = FiniteDomain.interval(-1, 1)
    exit_probability(QuenchedField.from_env(dom, Environment(Homogeneous.one_dim(0.6), 1)),
                     "right", (0,))


def test_criterion_01_exact_ruin(acceptance_log, compiled):
    t0 = time.perf_counter()
    dom = FiniteDomain.interval(-2, 2)
    field = QuenchedField.from_env(dom, Environment(Homogeneous.one_dim(0.75), 0))
    p, rep = exit_probability(field, "right", (0,))
    dt = time.perf_counter() - t0
    err = abs(p - 0.9)
    record(acceptance_log, 1, err <= 1e-10 and dt < 1.0,
           f"exit-right {p!r}, |error| {err:.2e} (<= 1e-10), {dt:.3f} s (< 1 s)")


def test_criterion_02_edge_trap(acceptance_log):
    t0 = time.perf_counter()
    res, _ = run_cfg("law = trap\nenvironments = 20\nk_max = 20\nsamples = 2000\n", "trap")
    dt = time.perf_counter() - t0
    es = res.estimates["max_survival_error"]
    ep = res.estimates["max_partial_sum_error"]
    record(acceptance_log, 2, es <= 1e-12 and ep <= 1e-12 and len(res.rows) == 80 and dt < 10,
           f"20 environments x 4 edges, max survival error {es:.2e}, max partial-sum error "
           f"{ep:.2e} (<= 1e-12), {dt:.2f} s (< 10 s)")


def test_criterion_02_trap_identity_direct(acceptance_log):
    # the same identity checked without the experiment layer, on the default law
    law = TrapLaw()
    worst = 0.0
    for s in range(20):
        env = Environment(law, s)
        for move in range(4):
            et = edge_trap(env, (0, 0), move, 20)
            worst = max(worst, et.max_survival_error(), et.max_partial_sum_error())
    assert worst <= 1e-12


def test_criterion_03_solomon_classification(acceptance_log):
    res, dt = run_cfg("law = two_point\np_values = 0.3, 0.9\nn = 100000\nreplicas = 200\n",
                      "classify1d")
    verdict = res.estimates["verdict"]
    frac = res.estimates["fraction_positive"].value
    record(acceptance_log, 3, verdict == "TransientRight" and frac >= 0.99 and dt < 60,
           f"verdict {verdict}, fraction with X_n > 0 = {frac:.4f} (>= 0.99), {dt:.1f} s (< 60 s)")


@pytest.mark.slow
def test_criterion_04_velocity_triangulation(acceptance_log):
    res, dt = run_cfg("law = two_point\np_values = 0.8, 0.4\nn = 100000\nreplicas = 500\n",
                      "velocity1d")
    est = res.estimates
    agree = est["agreement"]
    pf = est["paper_formula"]
    iv = agree["intervals"]
    parts = ", ".join(f"{k} {est[k].value:.5f} [{iv[k][0]:.5f}, {iv[k][1]:.5f}]"
                      for k in ("direct_mc", "renewal_mc", "solomon_oracle"))
    oracle_ok = abs(est["solomon_oracle"].value - 1 / 15) <= 1e-12
    ok = agree["all_agree"] and oracle_ok and dt < 120
    record(acceptance_log, 4, ok,
           f"joint {agree['level']:.2f} intervals {parts}; all agree = {agree['all_agree']}; "
           f"series formula value {pf['estimate'].value:.5f} "
           f"(discrepancy vs 1/15: {pf['discrepancy_vs_oracle']:+.5f}); {dt:.1f} s (< 120 s)")


def test_criterion_05_no_backtrack_band(acceptance_log):
    t0 = time.perf_counter()
    e = estimate_no_backtrack(Homogeneous.one_dim(0.75), (1,), 100_000, 12_000, 5, 1)
    dt = time.perf_counter() - t0
    ok = e.lower <= 2 / 3 <= e.upper and e.width < 0.02 and dt < 60
    record(acceptance_log, 5, ok,
           f"band [{e.lower:.4f}, {e.upper:.4f}] contains 2/3, width {e.width:.4f} (< 0.02), "
           f"censored {e.censored_fraction:.3f}, {dt:.1f} s (< 60 s)")


def test_criterion_06_kks_exponent(acceptance_log):
    t0 = time.perf_counter()
    # rho = (1 - p) / p in {2, 1/4}
    r = kks_exponent(DiscreteLaw.two_point(1 / 3, 0.8))
    dt = time.perf_counter() - t0
    direct = abs(0.5 * (2.0 ** r.kks_kappa + 0.25 ** r.kks_kappa) - 1.0)
    ok = 0.68 <= r.kks_kappa <= 0.71 and r.residual <= 1e-10 and direct <= 1e-10 and dt < 1
    record(acceptance_log, 6, ok,
           f"root {r.kks_kappa:.6f} in [0.68, 0.71], |E[rho^k] - 1| {direct:.1e} (<= 1e-10), "
           f"{dt:.3f} s (< 1 s)")


@pytest.mark.slow
def test_criterion_07_sinai_scaling(acceptance_log):
    res, dt = run_cfg("law = two_point\np_values = 0.3, 0.7\n"
                      "n_grid = 1000, 10000, 100000, 1000000\nreplicas = 500\n", "sinai")
    t = res.estimates["sinai"]
    ok = t["ratio"] <= 5 and dt < 300
    meds = ", ".join(f"{r['n']}: {r['normalized']:.3f}" for r in t["rows"])
    record(acceptance_log, 7, ok,
           f"median |X_n|/(log n)^2 {meds}; max/min {t['ratio']:.3f} (<= 5), {dt:.1f} s (< 300 s)")


@pytest.mark.slow
def test_criterion_08_invariance(acceptance_log):
    res, dt = run_cfg("law = two_point\np_values = 0.8, 0.4\nterms = 60\nreplicas = 1000000\n"
                      "move = 0\n", "invariant-density")
    c = res.estimates["invariance"]
    ok = abs(c["discrepancy"]) <= c["tolerance"] and dt < 120
    record(acceptance_log, 8, ok,
           f"|int Rg - int g| = {abs(c['discrepancy']):.2e} <= 3 s.e. + truncation "
           f"= {c['tolerance']:.2e}, {dt:.1f} s (< 120 s)")


def test_criterion_09_slab_exits(acceptance_log):
    t0 = time.perf_counter()
    sym = slab_exit_probability(Homogeneous.one_dim(0.5), SlabSpec((1.0,), 1.0, 10.0),
                                "walk_mc", replicas=40_000, master_seed=9)
    rho, L = 1 / 3, 10
    closed = (rho ** L - rho ** (2 * L)) / (1 - rho ** (2 * L))
    ex = slab_exit_probability(Homogeneous.one_dim(0.75), SlabSpec((1.0,), 1.0, float(L)),
                               "exact_env_mc")
    rel = abs(ex.estimate.value - closed) / closed
    rep = slab_report(Homogeneous.one_dim(0.75), (1.0,), 1.0, (5, 10, 20, 40))
    g = rep.fit["gamma_hat"]
    dt = time.perf_counter() - t0
    ok = abs(sym.estimate.value - 0.5) <= 0.01 and rel <= 1e-10 and abs(g - 1) <= 0.1 and dt < 120
    record(acceptance_log, 9, ok,
           f"symmetric back exit {sym.estimate.value:.4f} (0.500 +- 0.01); exact vs closed form "
           f"relative {rel:.1e} (<= 1e-10); gamma_hat {g:.4f} (1 +- 0.1); {dt:.1f} s (< 120 s)")


@pytest.mark.slow
def test_criterion_10_P_M_smoke(acceptance_log):
    t0 = time.perf_counter()
    drift = parse_config("experiment = p-condition\n" + DRIFT_2D).law()
    rep = check_P_M(drift, 30, 1.0, env_budget=20, start_sample=50, reduced_lateral=5)
    sym = check_P_M(Homogeneous.symmetric(2), 30, (0.5, 1.0, 2.0), start_sample=50,
                    reduced_lateral=5)
    dt = time.perf_counter() - t0
    prov = {p.name: p.source for p in rep.provenance}
    ok = (rep.holds is True and sym.holds is False and prov.get("N0") == "override"
          and prov.get("lateral") == "override" and "overridden" in rep.verdict and dt < 300)
    record(acceptance_log, 10, ok,
           f"drift law max exit {rep.rows[0]['max_exit']:.2e} vs 30^-1 -> holds = {rep.holds}; "
           f"symmetric max exit {sym.rows[0]['max_exit']:.3f} -> holds = {sym.holds} for "
           f"M in (0.5, 1, 2); overrides {list(rep.overridden)}; {dt:.1f} s (< 300 s)")


@pytest.mark.slow
def test_criterion_11_effective_criterion(acceptance_log):
    t0 = time.perf_counter()
    strong = parse_config("experiment = decomposition\n" + STRONG_2D).law()
    dec = decomposition_diagnostic(strong, 16, env_budget=20, L_tilde=30)
    drift = parse_config("experiment = decomposition\n" + DRIFT_2D).law()
    dec2 = decomposition_diagnostic(drift, 16, env_budget=20, L_tilde=30)
    ec = effective_criterion(strong, 10, 15, env_budget=50, c2_override=1.0)
    dt = time.perf_counter() - t0
    best = min(r["value"] for r in ec.rows)
    part = max(abs(dec.residual), abs(dec2.residual))
    ok = (part <= 1e-12 and dec.E_n_zero_on_elliptic and dec2.E_n_zero_on_elliptic
          and dec.E[-1] == 0.0 and best < 1 and dt < 600)
    record(acceptance_log, 11, ok,
           f"partition residual {part:.1e}; E_n = 0 on all elliptic replicas "
           f"({dec.elliptic_replicas}+{dec2.elliptic_replicas}); min criterion value "
           f"{best:.3g} (< 1, c2 = 1); {dt:.1f} s (< 600 s)")


@pytest.mark.slow
def test_criterion_12_rate_function(acceptance_log):
    t0 = time.perf_counter()
    cons = max(conservation_error(Environment(law, 3), 200) for law in
               (Homogeneous.one_dim(0.6), DiscreteLaw.two_point(0.3, 0.9),
                BalancedIID(2, 0.1)))
    sym = empirical_rate(Environment(Homogeneous.one_dim(0.5), 0), [0.0], 1000).I_hat
    env = Environment(Homogeneous.one_dim(0.6), 0)
    gaps = []
    for x in (0.0, 0.2, 0.4):
        I = empirical_rate(env, [x], 2000).I_hat
        gaps.append(abs(I - legendre_rate((0.6, 0.4), [x])))
    out = empirical_rate(env, [1.1], 100)
    out2 = empirical_rate(Environment(BalancedIID(2, 0.1), 0), [0.7, -0.4], 50)
    ball = GaugeNorm.nearest_neighbour(2).in_ball([0.7, -0.4])
    fuzz = fuzz_superadditivity(DiscreteLaw(2, ((0.4, 0.1, 0.3, 0.2), (0.2, 0.3, 0.1, 0.4)),
                                            (0.5, 0.5)), 1000, seed=12)
    dt = time.perf_counter() - t0
    ok = (cons <= 1e-12 and sym <= 0.01 and max(gaps) <= 0.05 and out.infinite
          and out.I_hat == math.inf and out2.infinite and not ball
          and fuzz["violations"] == 0 and dt < 300)
    record(acceptance_log, 12, ok,
           f"conservation {cons:.1e} (<= 1e-12); I(0) symmetric {sym:.4f} (<= 0.01); Legendre "
           f"gaps {[round(g, 4) for g in gaps]} (<= 0.05); outside ball infinite; "
           f"{fuzz['violations']} violations in {fuzz['cases']} fuzz cases; {dt:.1f} s (< 300 s)")


@pytest.mark.slow
def test_criterion_13_balanced_suite(acceptance_log):
    res, dt = run_cfg("law = balanced\ndim = 2\nmin_weight = 0.1\nn = 10000\nreplicas = 1000\n"
                      "torus_N = 5, 10\n", "balanced-clt")
    est = res.estimates
    kd = est["kernel_drift"]
    tor = est["torus"]
    off = est["covariance"]["0,1"]
    ok = (kd["exact_zero"] and all(t["residual"] <= 1e-10 and t["normalization_error"] <= 1e-8
                                   for t in tor)
          and est["off_diagonal_within_3se"] and dt < 300)
    record(acceptance_log, 13, ok,
           f"kernel drift {kd['max_abs_drift']!r}; torus residuals "
           f"{[format(t['residual'], '.1e') for t in tor]}, normalization errors "
           f"{[format(t['normalization_error'], '.1e') for t in tor]}; "
           f"off-diagonal z {off['z']:+.2f} "
           f"(|z| <= 3); {dt:.1f} s (< 300 s)")


SMALL_CONFIGS = {
    "env-report": "law = dirichlet\nalpha = 1,1,1,1\nsamples = 2000\n",
    "classify1d": "law = two_point\np_values = 0.3, 0.9\nn = 1000\nreplicas = 20\n",
    "velocity1d": "law = two_point\np_values = 0.8, 0.4\nn = 2000\nreplicas = 20\n",
    "invariant-density": "law = two_point\np_values = 0.8, 0.4\nreplicas = 5000\n",
    "kks": "law = two_point\np_values = 0.3333333333333333, 0.8\n",
    "sinai": "law = two_point\np_values = 0.3, 0.7\nn_grid = 100, 1000\nreplicas = 20\n",
    "potential": "law = two_point\np_values = 0.3, 0.7\nlo = -5\nhi = 5\n",
    "renewal": "law = homogeneous\np_right = 0.75\nhorizon = 2000\nreplicas = 10\n",
    "lln": "law = homogeneous\np_right = 0.75\nn = 2000\nreplicas = 20\n",
    "slab": "law = homogeneous\np_right = 0.75\nL_grid = 5, 10\nreplicas = 5\n",
    "t-gamma-fit": "law = homogeneous\np_right = 0.75\nL_grid = 5, 10, 20, 40\n",
    "p-condition": DRIFT_2D + "N0 = 12\nreduced_lateral = 3\nenv_budget = 3\nstart_sample = 5\n",
    "effective-criterion": STRONG_2D + "env_budget = 3\n",
    "decomposition": STRONG_2D + "env_budget = 3\nL_tilde = 20\n",
    "atypical-exit": STRONG_2D + "env_budget = 3\nL_tilde = 20\n",
    "dl-exit": "law = homogeneous\ndim = 2\nkernel = 0.4,0.1,0.25,0.25\nL_grid = 20\n"
               "budget = 20\n",
    "rate-function": "law = homogeneous\np_right = 0.6\nn_grid = 50, 100\nfuzz_cases = 10\n",
    "balanced-clt": "law = balanced\ndim = 2\nn = 500\nreplicas = 50\ntorus_N = 3\n",
    "trap": "law = trap\nenvironments = 3\nk_max = 5\nsamples = 500\n",
}


@pytest.mark.slow
def test_criterion_14_reproducibility(acceptance_log, tmp_path):
    differing = []
    for name, body in SMALL_CONFIGS.items():
        cfg = tmp_path / f"{name}.cfg"
        cfg.write_text(f"experiment = {name}\nseed = 17\n" + body)
        outs = []
        for k in range(2):
            d = tmp_path / f"{name}-{k}"
            assert cli.main([name, "--config", str(cfg), "--out", str(d)]) == 0
            outs.append(((d / f"{name}.csv").read_bytes(), (d / f"{name}.json").read_bytes()))
        if outs[0] != outs[1]:
            differing.append(name)
    record(acceptance_log, 14, not differing,
           f"{len(SMALL_CONFIGS)} experiments rerun through the CLI; byte-identical CSV and "
           f"JSON for all except {differing}" if differing else
           f"{len(SMALL_CONFIGS)} experiments rerun through the CLI; CSV and JSON byte-identical")


def test_fixed_oracle_values():
    # closed forms behind criteria 4, 5 and 9, recomputed independently
    p, q = np.array([0.8, 0.4]), np.array([0.2, 0.6])
    e_rho = float(np.mean(q / p))
    assert (1 - e_rho) / (1 + e_rho) == pytest.approx(1 / 15, rel=1e-14)
    assert 1 - 0.25 / 0.75 == pytest.approx(2 / 3)
