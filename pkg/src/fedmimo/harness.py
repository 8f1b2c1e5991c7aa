"""Monte Carlo sweeps over drops and system parameters, with CSV output.

An experiment fixes a sweep axis (antenna count, FL group size, SI
strength, payload size, or nothing), runs every requested scheme on
n_drops independent drops per sweep value, and collects one row per
(sweep value, drop, scheme). Seeds derive from a stable hash of
(master seed, sweep index, drop index), so results are reproducible
across runs, platforms, and worker counts.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .algorithms import (
    RunResult,
    ScaConfig,
    gain_mu,
    run_hybrid,
    run_scheme,
)
from .link_model import InfeasibleRateError
from .scenario import FadingModel, SystemParams, build_fading, default_params, drop_ues

SWEEP_AXES = ("antennas_M", "fl_count_L", "si_dB", "payload_Mb", "none")
SCHEMES = ("HD", "FD", "BL1", "BL2", "HYBRID")
CSV_HEADER = ("sweep_axis,sweep_value,drop_seed,scheme,min_eff_rate_mbps,"
              "iterations,status,total_time_s,mu_percent")

WORKERS_ENV = "FEDMIMO_WORKERS"


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one sweep."""

    sweep_axis: str = "none"
    sweep_values: tuple = (0.0,)
    n_drops: int = 50
    schemes: tuple = ("HD", "FD", "BL1", "BL2")
    params: SystemParams = field(default_factory=default_params)
    fading: FadingModel = field(default_factory=FadingModel)
    sca: ScaConfig = field(default_factory=ScaConfig)
    master_seed: int = 0
    output_path: str | None = None
    collect_traces: bool = False

    def __post_init__(self) -> None:
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.sweep_axis!r}")
        for scheme in self.schemes:
            if scheme.upper() not in SCHEMES:
                raise ValueError(f"unknown scheme {scheme!r}")
        if self.n_drops < 1:
            raise ValueError("n_drops must be positive")


@dataclass
class Row:
    """One CSV row."""

    sweep_axis: str
    sweep_value: float
    drop_seed: int
    scheme: str
    min_eff_rate_mbps: float
    iterations: int
    status: str
    total_time_s: float
    mu_percent: float | None


@dataclass
class TraceRow:
    sweep_value: float
    drop_seed: int
    scheme: str
    iteration: int
    objective_mbps: float
    slack_s: float


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[Row]
    traces: list[TraceRow] = field(default_factory=list)

    def aggregates(self) -> list[tuple]:
        """(sweep_value, scheme, mean_mbps, se_mbps, n_converged, n_total)
        over converged rows, in sweep order."""
        out = []
        for value in self.spec.sweep_values:
            for scheme in self.spec.schemes:
                got = [r for r in self.rows
                       if r.sweep_value == value and r.scheme == scheme]
                conv = [r.min_eff_rate_mbps for r in got if r.status == "converged"]
                if conv:
                    mean = float(np.mean(conv))
                    se = (float(np.std(conv, ddof=1)) / math.sqrt(len(conv))
                          if len(conv) > 1 else 0.0)
                else:
                    mean, se = 0.0, 0.0
                out.append((value, scheme, mean, se, len(conv), len(got)))
        return out


def derive_seed(master_seed: int, *parts: int) -> int:
    """Stable 63-bit seed from a master seed and index parts."""
    text = ":".join(str(p) for p in (master_seed, *parts))
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def apply_sweep(params: SystemParams, axis: str, value) -> SystemParams:
    """New SystemParams with one swept field changed."""
    if axis == "none":
        return params
    if axis == "antennas_M":
        return dataclasses.replace(params, M=int(value))
    if axis == "fl_count_L":
        L = int(value)
        pilot = max(20, L + params.K)
        return dataclasses.replace(
            params, L=L, tau_dp=pilot, tau_1p=pilot, tau_2p=pilot,
            tau_3p=pilot, tau_up=pilot,
        )
    if axis == "si_dB":
        return dataclasses.replace(params, si_over_noise_dB=float(value))
    if axis == "payload_Mb":
        bits = float(value) * 1e6
        return dataclasses.replace(params, S_d=bits, S_u=bits)
    raise ValueError(f"unknown sweep axis {axis!r}")


def _run_drop(job) -> tuple[list[Row], list[TraceRow]]:
    """All schemes for one (sweep value, drop). Top level so it pickles."""
    (axis, value, params, fading_model, sca, schemes,
     seed_geom, seed_fading, seed_init, collect_traces) = job
    geom = drop_ues(params, seed_geom)
    fading = build_fading(geom, params, seed_fading, fading_model)
    sca = dataclasses.replace(sca, seed=seed_init)

    wanted = [s.upper() for s in schemes]
    to_run = set(wanted)
    if "HYBRID" in to_run:
        to_run |= {"HD", "FD"}
    to_run.discard("HYBRID")

    results: dict[str, RunResult] = {}
    for scheme in sorted(to_run):
        try:
            results[scheme] = run_scheme(scheme, fading, params, sca)
        except InfeasibleRateError:
            results[scheme] = RunResult(
                scheme=scheme, status="infeasible", objective=0.0, iterations=0,
            )
    if "HYBRID" in wanted:
        results["HYBRID"] = run_hybrid(fading, params, sca,
                                       hd=results["HD"], fd=results["FD"])

    mu: float | None = None
    hd, fd = results.get("HD"), results.get("FD")
    if (hd is not None and fd is not None
            and hd.status == "converged" and fd.status == "converged"):
        mu = gain_mu(fd.objective, hd.objective)

    rows: list[Row] = []
    traces: list[TraceRow] = []
    for scheme in wanted:
        res = results[scheme]
        rows.append(Row(
            sweep_axis=axis,
            sweep_value=float(value),
            drop_seed=seed_geom,
            scheme=scheme,
            min_eff_rate_mbps=res.objective / 1e6,
            iterations=res.iterations,
            status=res.status,
            total_time_s=res.epoch.total_time if res.epoch is not None else 0.0,
            mu_percent=mu if scheme == "FD" else None,
        ))
        if collect_traces:
            for i, obj in enumerate(res.objective_trace):
                slack = res.slack_trace[i] if i < len(res.slack_trace) else 0.0
                traces.append(TraceRow(
                    sweep_value=float(value), drop_seed=seed_geom,
                    scheme=scheme, iteration=i, objective_mbps=obj / 1e6,
                    slack_s=slack,
                ))
    return rows, traces


def _worker_count(requested: int | None) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> ExperimentResult:
    """Run the sweep; row order is deterministic regardless of workers."""
    jobs = []
    for si, value in enumerate(spec.sweep_values):
        params = apply_sweep(spec.params, spec.sweep_axis, value)
        for di in range(spec.n_drops):
            jobs.append((
                spec.sweep_axis, value, params, spec.fading, spec.sca,
                tuple(spec.schemes),
                derive_seed(spec.master_seed, si, di, 0),
                derive_seed(spec.master_seed, si, di, 1),
                derive_seed(spec.master_seed, si, di, 2),
                spec.collect_traces,
            ))

    n_workers = _worker_count(workers)
    if n_workers <= 1 or len(jobs) <= 1:
        outputs = [_run_drop(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            outputs = list(pool.map(_run_drop, jobs, chunksize=1))

    rows: list[Row] = []
    traces: list[TraceRow] = []
    for job_rows, job_traces in outputs:
        rows.extend(job_rows)
        traces.extend(job_traces)
    return ExperimentResult(spec=spec, rows=rows, traces=traces)


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def write_csv(result: ExperimentResult, path) -> None:
    """Rows with 6 significant digits; byte-stable for identical results."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER.split(","))
        for r in result.rows:
            writer.writerow([
                r.sweep_axis,
                _fmt(r.sweep_value),
                r.drop_seed,
                r.scheme,
                _fmt(r.min_eff_rate_mbps),
                r.iterations,
                r.status,
                _fmt(r.total_time_s),
                _fmt(r.mu_percent) if r.mu_percent is not None else "",
            ])


def write_trace_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sweep_value", "drop_seed", "scheme", "iteration",
                         "objective_mbps", "slack_s"])
        for t in result.traces:
            writer.writerow([_fmt(t.sweep_value), t.drop_seed, t.scheme,
                             t.iteration, _fmt(t.objective_mbps), _fmt(t.slack_s)])


def read_csv(path) -> list[Row]:
    """Parse a results CSV back into rows."""
    rows: list[Row] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER.split(","):
            raise ValueError(f"unexpected CSV header in {path}")
        for rec in reader:
            rows.append(Row(
                sweep_axis=rec["sweep_axis"],
                sweep_value=float(rec["sweep_value"]),
                drop_seed=int(rec["drop_seed"]),
                scheme=rec["scheme"],
                min_eff_rate_mbps=float(rec["min_eff_rate_mbps"]),
                iterations=int(rec["iterations"]),
                status=rec["status"],
                total_time_s=float(rec["total_time_s"]),
                mu_percent=(float(rec["mu_percent"])
                            if rec["mu_percent"] else None),
            ))
    return rows


# --- figure presets -------------------------------------------------------


def figure_spec(name: str, n_drops: int | None = None,
                master_seed: int = 0) -> ExperimentSpec:
    """Canned sweeps reproducing the headline experiment trends."""
    presets = {
        "fig2": dict(sweep_axis="none", sweep_values=(0.0,), n_drops=3,
                     schemes=("HD", "FD"), collect_traces=True),
        "fig3": dict(sweep_axis="antennas_M",
                     sweep_values=(20.0, 30.0, 50.0, 70.0, 100.0),
                     n_drops=50, schemes=("HD", "FD", "BL1", "BL2")),
        "fig4": dict(sweep_axis="fl_count_L", sweep_values=(2.0, 5.0, 8.0),
                     n_drops=50, schemes=("HD", "FD", "BL1", "BL2")),
        "fig5": dict(sweep_axis="si_dB",
                     sweep_values=(20.0, 40.0, 60.0, 80.0),
                     n_drops=50, schemes=("HD", "FD", "HYBRID")),
        "fig6": dict(sweep_axis="payload_Mb",
                     sweep_values=(8.0, 16.0, 24.0, 32.0, 40.0),
                     n_drops=50, schemes=("HD", "FD")),
    }
    if name not in presets:
        raise ValueError(f"unknown figure {name!r}; have {sorted(presets)}")
    kwargs = dict(presets[name])
    if n_drops is not None:
        kwargs["n_drops"] = n_drops
    return ExperimentSpec(master_seed=master_seed, **kwargs)


# --- bound self-check (shared by the CLI and the test suite) ----------------


def validate_bounds(n_scalar: int = 10000, n_rate: int = 1000,
                    seed: int = 0) -> tuple[bool, str]:
    """Sample-check validity and tangency of every approximation bound.

    Scalar bounds get n_scalar random (x, y, x_n, y_n) tuples spread over
    six orders of magnitude; structured rate bounds get n_rate random
    small scenarios. Returns (ok, human-readable report).
    """
    from .link_model import Allocation, estimation_variances
    from .sca_bounds import (
        ExpansionPoint, UB_FAMILIES, bilinear_upper_bound,
        build_rate_lb, build_rate_ub, family_sinr, family_prelog,
        log_lower_bound, log_upper_bound,
    )
    from .scenario import build_fading as _build_fading, drop_ues as _drop

    rng = np.random.default_rng(seed)
    report = []
    ok = True

    def sample_pos(n):
        return 10.0 ** rng.uniform(-3, 3, n)

    x, y, xn, yn = (sample_pos(n_scalar) for _ in range(4))
    true_log = np.log1p(x / y)
    lb = np.array([log_lower_bound(*t) for t in zip(x, y, xn, yn)])
    ub = np.array([log_upper_bound(*t) for t in zip(x, y, xn, yn)])
    bil = np.array([bilinear_upper_bound(*t) for t in zip(x, y, xn, yn)])
    v_lb = float(np.max(lb - true_log))
    v_ub = float(np.max(true_log - ub))
    v_bil = float(np.max(x * y - bil))
    tan_lb = max(abs(log_lower_bound(a, b, a, b) - math.log1p(a / b))
                 for a, b in zip(xn[:200], yn[:200]))
    tan_ub = max(abs(log_upper_bound(a, b, a, b) - math.log1p(a / b))
                 for a, b in zip(xn[:200], yn[:200]))
    tan_bil = max(abs(bilinear_upper_bound(a, b, a, b) - a * b)
                  for a, b in zip(xn[:200], yn[:200]))
    scalar_ok = (v_lb <= 1e-9 and v_ub <= 1e-9 and v_bil <= 1e-9
                 and tan_lb <= 1e-10 and tan_ub <= 1e-10 and tan_bil <= 1e-9)
    ok &= scalar_ok
    report.append(
        f"scalar bounds over {n_scalar} tuples: worst lb excess {v_lb:.2e}, "
        f"ub deficit {v_ub:.2e}, bilinear deficit {v_bil:.2e}; tangency "
        f"{max(tan_lb, tan_ub):.2e} -> {'ok' if scalar_ok else 'FAIL'}")

    worst_sandwich = 0.0
    worst_tangent = 0.0
    for trial in range(n_rate):
        L = int(rng.integers(1, 4))
        K = int(rng.integers(1, 4))
        params = default_params(
            M=int(rng.integers(L + K + 2, 33)), L=L, K=K,
            si_over_noise_dB=float(rng.uniform(20, 80)),
        )
        geom = _drop(params, seed + trial)
        fading = _build_fading(geom, params, seed + trial + 1)
        fdma = bool(rng.integers(0, 2))
        est = estimation_variances(params, fading, fdma_s3=fdma)

        def rand_alloc():
            e_d = rng.uniform(0.05, 1, L)
            z_1 = rng.uniform(0.05, 1, K)
            scale = rng.uniform(0.3, 1.0) / (e_d.sum() + z_1.sum())
            z_2 = rng.uniform(0.05, 1, K)
            z_3 = rng.uniform(0.05, 1, K)
            e_u = rng.uniform(0.05, 1, L)
            return Allocation(
                eta_d=e_d * scale, zeta_1=z_1 * scale,
                zeta_2=z_2 * rng.uniform(0.3, 1.0) / z_2.sum(),
                zeta_3=z_3 * rng.uniform(0.3, 1.0) / z_3.sum(),
                eta_u=e_u / max(1.0, e_u.max()),
                f=float(rng.uniform(1e8, params.f_max)),
            )

        centre = rand_alloc()
        probe = rand_alloc()
        point = ExpansionPoint.from_allocation(centre)
        probe_point = ExpansionPoint.from_allocation(probe)
        if fdma:
            families = ["d", "1", "2", "3_fdma", "u_fdma"]
        else:
            families = ["d", "1", "2", "3_hd", "3_fd", "u_hd", "u_fd"]
        for fam in families:
            count = L if fam.startswith(("d", "u")) else K
            idx = int(rng.integers(0, count))
            lb_e = build_rate_lb(fam, idx, point, fading, est, params)
            true_at = (family_prelog(fam, params) / math.log(2)
                       * math.log1p(family_sinr(fam, probe, fading, est, params, idx)))
            true_ctr = (family_prelog(fam, params) / math.log(2)
                        * math.log1p(family_sinr(fam, centre, fading, est, params, idx)))
            rel = max(1.0, abs(true_at))
            worst_sandwich = max(worst_sandwich, (lb_e.value(probe_point) - true_at) / rel)
            worst_tangent = max(worst_tangent,
                                abs(lb_e.value(point) - true_ctr) / max(1.0, abs(true_ctr)))
            if fam in UB_FAMILIES:
                ub_e = build_rate_ub(fam, idx, point, fading, est, params)
                worst_sandwich = max(worst_sandwich, (true_at - ub_e.value(probe_point)) / rel)
                worst_tangent = max(worst_tangent,
                                    abs(ub_e.value(point) - true_ctr) / max(1.0, abs(true_ctr)))
    rate_ok = worst_sandwich <= 1e-9 and worst_tangent <= 1e-9
    ok &= rate_ok
    report.append(
        f"rate bounds over {n_rate} scenarios: worst sandwich violation "
        f"{worst_sandwich:.2e}, worst tangency error {worst_tangent:.2e} "
        f"-> {'ok' if rate_ok else 'FAIL'}")
    return bool(ok), "\n".join(report)
