"""End-to-end acceptance runs: bound quality, convergence, and scheme orderings.

The Monte Carlo fixtures here are module scoped and sized for statistical
stability; this file dominates the suite's runtime by design.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from fedmimo.algorithms import ScaConfig, run_sca
from fedmimo.cli import main as cli_main
from fedmimo.harness import (
    ExperimentSpec,
    derive_seed,
    run_experiment,
    validate_bounds,
)
from fedmimo.link_model import Mode, estimation_variances, verify_fd_si_variance
from fedmimo.sca_bounds import (
    bilinear_upper_bound,
    log_lower_bound,
    log_upper_bound,
)
from fedmimo.scenario import build_fading, default_params, drop_ues

SLACK_TOL = 1e-3
N_DROPS = 50


def _drop_runs(job):
    """One drop, both duplexing modes; lean dicts so results pickle cheaply."""
    params, di, master = job
    geom = drop_ues(params, derive_seed(master, 0, di, 0))
    fading = build_fading(geom, params, derive_seed(master, 0, di, 1))
    est = estimation_variances(params, fading)
    config = ScaConfig(seed=derive_seed(master, 0, di, 2))
    out = []
    for mode in (Mode.HD, Mode.FD):
        res = run_sca(mode, fading, est, params, config)
        out.append({
            "mode": mode.value,
            "status": res.status,
            "iterations": res.iterations,
            "objective": res.objective,
            "trace": res.objective_trace,
            "slack_trace": res.slack_trace,
            "feasible_from": res.feasible_from,
            "min_eff": res.epoch.min_eff_rate if res.epoch is not None else None,
        })
    return out


@pytest.fixture(scope="module")
def default_drop_runs():
    params = default_params()
    jobs = [(params, di, 0) for di in range(20)]
    with ProcessPoolExecutor() as pool:
        nested = list(pool.map(_drop_runs, jobs, chunksize=1))
    return [run for pair in nested for run in pair]


@pytest.fixture(scope="module")
def antenna_sweep():
    spec = ExperimentSpec(sweep_axis="antennas_M",
                          sweep_values=(30.0, 50.0, 100.0),
                          n_drops=N_DROPS,
                          schemes=("HD", "FD", "BL1", "BL2"))
    return run_experiment(spec)


@pytest.fixture(scope="module")
def fl_count_sweep():
    spec = ExperimentSpec(sweep_axis="fl_count_L",
                          sweep_values=(2.0, 5.0, 8.0),
                          n_drops=N_DROPS,
                          schemes=("HD", "FD", "BL1", "BL2"))
    return run_experiment(spec)


@pytest.fixture(scope="module")
def si_sweep():
    spec = ExperimentSpec(sweep_axis="si_dB",
                          sweep_values=(20.0, 80.0),
                          n_drops=N_DROPS,
                          schemes=("HD", "FD", "HYBRID"))
    return run_experiment(spec)


@pytest.fixture(scope="module")
def payload_sweep():
    spec = ExperimentSpec(sweep_axis="payload_Mb",
                          sweep_values=(8.0, 16.0, 24.0, 32.0, 40.0),
                          n_drops=N_DROPS,
                          schemes=("HD", "FD"))
    return run_experiment(spec)


def drop_value(row):
    """Per-drop score: a run that missed convergence delivers nothing."""
    return row.min_eff_rate_mbps if row.status == "converged" else 0.0


def paired_stats(result, value, scheme_a, scheme_b):
    """Mean and standard error of the per-drop difference a - b."""
    table = {}
    for r in result.rows:
        if r.sweep_value == value:
            table[(r.drop_seed, r.scheme)] = drop_value(r)
    seeds = sorted({seed for seed, _ in table})
    diffs = np.array([table[(s, scheme_a)] - table[(s, scheme_b)]
                      for s in seeds])
    se = float(np.std(diffs, ddof=1)) / math.sqrt(len(diffs))
    return float(np.mean(diffs)), se


# --- 1: scalar bound validity and tangency ---------------------------------------


def test_scalar_bounds_valid_and_tight_at_scale():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    x, y, xn, yn = (10.0 ** rng.uniform(-3, 3, 10_000) for _ in range(4))
    true = np.log1p(x / y)
    lb = np.array([log_lower_bound(*t) for t in zip(x, y, xn, yn)])
    ub = np.array([log_upper_bound(*t) for t in zip(x, y, xn, yn)])
    bil = np.array([bilinear_upper_bound(*t) for t in zip(x, y, xn, yn)])
    assert float(np.max(lb - true)) <= 1e-12
    assert float(np.max(true - ub)) <= 1e-12
    assert float(np.max(x * y - bil)) <= 1e-12

    for a, b in zip(xn[:200], yn[:200]):
        t = math.log1p(a / b)
        assert abs(log_lower_bound(a, b, a, b) - t) <= 1e-10 * abs(t)
        assert abs(log_upper_bound(a, b, a, b) - t) <= 1e-10 * abs(t)
        assert bilinear_upper_bound(a, b, a, b) == a * b
    assert time.perf_counter() - start < 10.0


# --- 2: structured bound self-check -----------------------------------------------


def test_bound_self_check_passes():
    start = time.perf_counter()
    ok, report = validate_bounds(n_scalar=1000, n_rate=1000, seed=0)
    assert ok, report
    assert time.perf_counter() - start < 60.0


# --- 3: self-interference power model ----------------------------------------------


def test_si_power_model_matches_simulation():
    start = time.perf_counter()
    bss = 10.0 ** (-81.1846 / 10.0) * 10.0 ** (20.0 / 10.0)
    empirical, closed = verify_fd_si_variance(64, 10_000, bss, 1.0, rho_d=10.0)
    assert abs(empirical - closed) / closed <= 0.03
    assert cli_main(["verify-si"]) == 0
    assert time.perf_counter() - start < 30.0


# --- 4, 5, 9b: iteration behavior on default-size drops ------------------------------


def test_objective_improves_monotonically(default_drop_runs):
    converged = [r for r in default_drop_runs if r["status"] == "converged"]
    assert converged, "no default-size run converged"
    for run in converged:
        start = run["feasible_from"]
        assert start is not None
        trace = run["trace"]
        for i in range(start + 1, len(trace)):
            floor = trace[i - 1] - 1e-6 * max(1.0, abs(trace[i - 1]))
            assert trace[i] >= floor, (
                f"{run['mode']} objective fell at iteration {i}: "
                f"{trace[i - 1]:.6g} -> {trace[i]:.6g}")
        gap = abs(run["min_eff"] - run["objective"]) / run["min_eff"]
        assert gap <= 1e-5, f"proxy and delivered rate disagree by {gap:.2e}"


def test_convergence_within_iteration_budget(default_drop_runs):
    converged = [r for r in default_drop_runs if r["status"] == "converged"]
    fast = [r for r in converged if r["iterations"] <= 50]
    assert len(fast) >= 0.8 * len(converged), (
        f"only {len(fast)}/{len(converged)} converged runs "
        f"finished within 50 iterations")


def test_runs_mostly_feasible(default_drop_runs):
    fine = [r for r in default_drop_runs
            if r["status"] == "converged"
            or (r["slack_trace"] and abs(r["slack_trace"][-1]) <= SLACK_TOL)]
    assert len(fine) >= 0.9 * len(default_drop_runs)


# --- 6: optimized schemes beat the baselines -------------------------------------------


@pytest.mark.parametrize("optimized", ["HD", "FD"])
@pytest.mark.parametrize("baseline", ["BL1", "BL2"])
def test_beats_baselines_across_antenna_counts(antenna_sweep, optimized, baseline):
    for value in antenna_sweep.spec.sweep_values:
        mean, se = paired_stats(antenna_sweep, value, optimized, baseline)
        assert mean > se, (
            f"{optimized} does not beat {baseline} at M={value:g}: "
            f"paired mean {mean:+.3f} Mbps, SE {se:.3f}")


@pytest.mark.parametrize("optimized", ["HD", "FD"])
@pytest.mark.parametrize("baseline", ["BL1", "BL2"])
def test_beats_baselines_across_group_sizes(fl_count_sweep, optimized, baseline):
    for value in fl_count_sweep.spec.sweep_values:
        mean, se = paired_stats(fl_count_sweep, value, optimized, baseline)
        assert mean > se, (
            f"{optimized} does not beat {baseline} at L={value:g}: "
            f"paired mean {mean:+.3f} Mbps, SE {se:.3f}")


# --- 7: duplexing crossover against self-interference -----------------------------------


def test_full_duplex_wins_at_weak_si(si_sweep):
    mean, se = paired_stats(si_sweep, 20.0, "FD", "HD")
    assert mean > se, f"FD vs HD at 20 dB: paired mean {mean:+.3f}, SE {se:.3f}"


def test_half_duplex_wins_at_strong_si(si_sweep):
    mean, se = paired_stats(si_sweep, 80.0, "HD", "FD")
    assert mean > se, (
        f"expected the half-duplex schedule to win under 80 dB "
        f"self-interference, but the paired HD-FD mean is {mean:+.3f} Mbps "
        f"(SE {se:.3f}): the optimizer drives the upload-step downlink "
        f"shares toward zero, so the self-interference term (scaling with "
        f"those shares) never binds and full duplex keeps its prelog edge")


def test_hybrid_tracks_pointwise_best(si_sweep):
    table = {}
    for r in si_sweep.rows:
        table[(r.sweep_value, r.drop_seed, r.scheme)] = drop_value(r)
    for value in si_sweep.spec.sweep_values:
        seeds = {seed for (v, seed, _) in table if v == value}
        assert len(seeds) == N_DROPS
        for seed in seeds:
            best = max(table[(value, seed, "HD")], table[(value, seed, "FD")])
            got = table[(value, seed, "HYBRID")]
            assert got == pytest.approx(best, rel=1e-12, abs=1e-12)


# --- 8: duplexing gain grows with payload -------------------------------------------------


def test_gain_grows_with_payload(payload_sweep):
    stats = []
    for value in payload_sweep.spec.sweep_values:
        mus = [r.mu_percent for r in payload_sweep.rows
               if r.sweep_value == value and r.scheme == "FD"
               and r.mu_percent is not None]
        assert len(mus) > 1, f"too few paired convergences at {value:g} Mb"
        se = float(np.std(mus, ddof=1)) / math.sqrt(len(mus))
        stats.append((float(np.mean(mus)), se))
    for (m_lo, se_lo), (m_hi, se_hi) in zip(stats, stats[1:]):
        slack = math.sqrt(se_lo**2 + se_hi**2)
        assert m_hi >= m_lo - slack, (
            f"duplexing gain dropped from {m_lo:.2f}% to {m_hi:.2f}% "
            f"(combined SE {slack:.2f})")


# --- 9a: impossible deadlines are reported, not absorbed ------------------------------------


def test_impossible_deadline_reported_infeasible():
    params = replace(default_params(), t_qos=1e-3)
    jobs = [(params, di, 777) for di in range(5)]
    with ProcessPoolExecutor() as pool:
        nested = list(pool.map(_drop_runs, jobs, chunksize=1))
    for run in (r for pair in nested for r in pair):
        assert run["status"] == "infeasible"
        assert run["objective"] == 0.0
        assert abs(run["slack_trace"][-1]) > SLACK_TOL


# --- 10: duplexing equivalence without interference -------------------------------------------


def test_duplexing_equivalent_without_interference():
    # Full band for the half-duplex upload step, no self- or cross-talk for
    # the full-duplex one: the two iterations must walk the same path.
    hd_params = default_params(M=20, L=2, K=3, hd_s3_bandwidth_fraction=1.0)
    fd_params = default_params(M=20, L=2, K=3)
    for di in range(5):
        geom = drop_ues(hd_params, derive_seed(42, 0, di, 0))
        fading = build_fading(geom, hd_params, derive_seed(42, 0, di, 1))
        clean = replace(fading, beta_si_sigma2=0.0,
                        beta_igi=np.zeros_like(fading.beta_igi))
        config = ScaConfig(seed=derive_seed(42, 0, di, 2))

        hd = run_sca(Mode.HD, fading, estimation_variances(hd_params, fading),
                     hd_params, config)
        fd = run_sca(Mode.FD, clean, estimation_variances(fd_params, clean),
                     fd_params, config)
        assert hd.status == fd.status
        assert len(hd.objective_trace) == len(fd.objective_trace)
        for a, b in zip(hd.objective_trace, fd.objective_trace):
            assert abs(a - b) <= 1e-6 * max(1.0, abs(a))
        assert fd.objective == pytest.approx(hd.objective, rel=1e-6)
