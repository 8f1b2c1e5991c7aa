"""Outer optimization loops: successive approximation and baselines.

run_sca drives the convexified subproblem to a stationary point of the
max-min effective-rate objective. Between solves, every schedule
variable is re-seeded from the binding values of the freshly solved
power allocation, which keeps each expansion point feasible for the
next subproblem and makes the solved objective non-decreasing. The
objective proxy z always under-estimates the true minimum effective
rate, so a run only reports converged once the two agree tightly.

A latency budget that the initial point cannot meet switches the loop
to a slack-relaxed subproblem; if the slack cannot be driven to zero
the run reports infeasible together with the final violation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .link_model import (
    Allocation,
    EpochSummary,
    EstimationVariances,
    InfeasibleRateError,
    Mode,
    effective_rates,
    estimation_variances,
    rates,
)
from .scenario import LargeScaleFading, SystemParams
from .subproblem import ScaIterate, build_subproblem, extract_iterate, solve

_POWER_FLOOR = 1e-8


@dataclass(frozen=True)
class ScaConfig:
    """Loop controls for run_sca."""

    max_iters: int = 100
    rel_tol: float = 1e-4          # stop when the objective moves less than this
    slack_tol: float = 1e-3        # max |s| (seconds) accepted as budget-feasible
    consistency_tol: float = 5e-6  # required agreement of proxy and true rate
    alpha: float | None = None     # slack weight, bps per second (None: 10 * B)
    seed: int = 0                  # initial-allocation randomness
    backend: str = "clarabel"


@dataclass
class RunResult:
    """Outcome of one scheme on one drop."""

    scheme: str
    status: str                    # "converged" | "infeasible" | "iter_capped"
    objective: float               # final objective proxy, bps (0 if infeasible)
    iterations: int
    objective_trace: list[float] = field(default_factory=list)
    slack_trace: list[float] = field(default_factory=list)
    feasible_from: int | None = None  # trace index where |s| <= slack_tol began
    final_iterate: ScaIterate | None = None
    epoch: EpochSummary | None = None
    wall_time_s: float = 0.0
    picked: str | None = None      # source scheme when scheme == "HYBRID"


def _binding_iterate(
    alloc: Allocation,
    fading: LargeScaleFading,
    est: EstimationVariances,
    params: SystemParams,
    mode: Mode,
) -> ScaIterate:
    """Schedule variables at their binding values for a given allocation.

    Tangency of every bound makes this point feasible for the subproblem
    expanded around it, and its z equals the pessimistic effective rate
    the proxy chain can certify for this allocation.
    """
    sr = rates(alloc, fading, est, params, mode)
    r_d = float(np.min(sr.r_d))
    r_td = float(np.max(sr.r_d))
    r_u = float(np.min(sr.r_u))
    r_tu = float(np.max(sr.r_u))
    if min(r_d, r_u) <= 0.0:
        raise InfeasibleRateError("allocation gives a zero FL rate")
    load = params.Nc * params.D_max * params.c_max
    a1 = float(np.min(sr.r_1)) / r_td
    a2 = float(np.min(sr.r_2)) / alloc.f
    a3 = float(np.min(sr.r_3)) / r_tu
    t_q = params.S_d / r_d + load / alloc.f + params.S_u / r_u
    t = a1 * params.S_d + a2 * load + a3 * params.S_u
    return ScaIterate(
        alloc=alloc,
        r_d=r_d, r_u=r_u, r_td=r_td, r_tu=r_tu,
        a1=a1, a2=a2, a3=a3,
        r1=sr.r_1.copy(), r2=sr.r_2.copy(), r3=sr.r_3.copy(),
        t=t, t_q=t_q, z=t / t_q,
        s=min(0.0, params.t_qos - t_q),
    )


def _sanitize(alloc: Allocation, params: SystemParams) -> Allocation:
    """Clip solver leakage and keep every power strictly positive."""
    def lift(arr: np.ndarray) -> np.ndarray:
        return np.maximum(np.asarray(arr, dtype=float), _POWER_FLOOR)

    eta_d = lift(alloc.eta_d)
    zeta_1 = lift(alloc.zeta_1)
    joint = np.sum(eta_d) + np.sum(zeta_1)
    if joint > 1.0:
        eta_d = eta_d / joint
        zeta_1 = zeta_1 / joint
    zeta_2 = lift(alloc.zeta_2)
    if np.sum(zeta_2) > 1.0:
        zeta_2 = zeta_2 / np.sum(zeta_2)
    zeta_3 = lift(alloc.zeta_3)
    if np.sum(zeta_3) > 1.0:
        zeta_3 = zeta_3 / np.sum(zeta_3)
    eta_u = np.clip(np.asarray(alloc.eta_u, dtype=float), _POWER_FLOOR, 1.0)
    eta_d = np.minimum(eta_d, 1.0)
    f = float(np.clip(alloc.f, max(params.f_min, 1.0), params.f_max))
    return Allocation(eta_d=eta_d, zeta_1=zeta_1, zeta_2=zeta_2,
                      zeta_3=zeta_3, eta_u=eta_u, f=f)


def init_feasible(
    mode: Mode,
    fading: LargeScaleFading,
    est: EstimationVariances,
    params: SystemParams,
    seed: int = 0,
) -> ScaIterate:
    """Random power draw scaled inside every budget, CPU paced to the deadline.

    Starting the clock speed at the value that makes the latency budget
    tight (instead of f_max) removes the slow epoch-stretching phase the
    loop would otherwise crawl through one tangent step at a time.
    """
    rng = np.random.default_rng(seed)
    L, K = params.L, params.K
    eta_d = rng.uniform(0.2, 1.0, L)
    zeta_1 = rng.uniform(0.2, 1.0, K)
    joint = 0.9 / (np.sum(eta_d) + np.sum(zeta_1))
    zeta_2 = rng.uniform(0.2, 1.0, K)
    zeta_3 = rng.uniform(0.2, 1.0, K)
    eta_u = rng.uniform(0.2, 1.0, L)
    alloc = Allocation(
        eta_d=eta_d * joint,
        zeta_1=zeta_1 * joint,
        zeta_2=zeta_2 * (0.9 / np.sum(zeta_2)),
        zeta_3=zeta_3 * (0.9 / np.sum(zeta_3)),
        eta_u=eta_u * (0.9 / np.max(eta_u)),
        f=params.f_max,
    )
    fast = _binding_iterate(alloc, fading, est, params, mode)
    load = params.Nc * params.D_max * params.c_max
    air_time = fast.t_q - load / alloc.f
    budget = params.t_qos - air_time
    if budget > 0.0:
        f = float(np.clip(load / budget, max(params.f_min, 1.0), params.f_max))
        if f != alloc.f:
            alloc = replace(alloc, f=f)
            return _binding_iterate(alloc, fading, est, params, mode)
    return fast


def run_sca(
    mode: Mode,
    fading: LargeScaleFading,
    est: EstimationVariances,
    params: SystemParams,
    config: ScaConfig = ScaConfig(),
) -> RunResult:
    """Drive the approximation loop for one scheme on one drop.

    For Mode.FDMA, est must come from estimation_variances(...,
    fdma_s3=True); run_scheme takes care of that.
    """
    start = time.perf_counter()
    scheme = {"hd": "HD", "fd": "FD", "fdma": "BL1"}[mode.value]
    it = init_feasible(mode, fading, est, params, config.seed)
    relaxed = it.s < 0.0
    alpha0 = config.alpha if config.alpha is not None else 10.0 * params.B
    alpha = alpha0

    trace: list[float] = []
    slack_trace: list[float] = []
    feasible_from: int | None = 0 if not relaxed else None
    status = "iter_capped"
    prev_obj: float | None = None
    prev_slack: float | None = None
    final_alloc = it.alloc
    final_z = it.z
    final_slack = it.s

    n = 0
    while n < config.max_iters:
        prog = build_subproblem(mode, it, fading, est, params, relaxed, alpha)
        sol = solve(prog, backend=config.backend)
        if sol.status == "infeasible" and not relaxed:
            # numerical edge: fall back to the slack formulation
            relaxed = True
            feasible_from = None
            continue
        if sol.status != "optimal":
            # keep the progress made so far instead of discarding the run
            status = "numerical_failure"
            break
        n += 1

        solved = extract_iterate(prog, sol, params)
        alloc = _sanitize(solved.alloc, params)
        seeded = _binding_iterate(alloc, fading, est, params, mode)
        final_alloc, final_z, final_slack = alloc, seeded.z, seeded.s

        # report the exact schedule value of the returned allocation, not
        # the solver's inner approximation of it
        obj = seeded.z + (alpha * seeded.s if relaxed else 0.0)
        trace.append(obj)
        slack_trace.append(seeded.s if relaxed else 0.0)
        if feasible_from is None and abs(seeded.s) <= config.slack_tol:
            feasible_from = len(trace) - 1

        if relaxed:
            stalled = (abs(seeded.s) > config.slack_tol
                       and prev_slack is not None
                       and abs(seeded.s) > 0.99 * abs(prev_slack))
            if stalled and alpha < 1024 * alpha0:
                alpha *= 2.0
                prev_obj = None  # objective scale changed; restart the stop test
            if abs(seeded.s) <= 0.1 * config.slack_tol and seeded.t_q <= params.t_qos:
                relaxed = False
                prev_obj = None
        prev_slack = seeded.s

        if prev_obj is not None:
            rel_change = abs(obj - prev_obj) / max(abs(obj), 1e-12)
            if rel_change < config.rel_tol:
                if relaxed and abs(seeded.s) > config.slack_tol:
                    status = "infeasible"
                    break
                summary = effective_rates(alloc, fading, est, params, mode)
                gap = abs(summary.min_eff_rate - seeded.z) / max(
                    summary.min_eff_rate, 1e-12)
                if gap <= config.consistency_tol:
                    status = "converged"
                    break
                # schedule minima not aligned yet: keep polishing
        prev_obj = obj

        it = seeded

    epoch: EpochSummary | None
    try:
        epoch = effective_rates(final_alloc, fading, est, params, mode)
    except InfeasibleRateError:
        epoch = None
    # a schedule that misses the latency budget delivers no valid epoch
    usable = status != "infeasible" and abs(final_slack) <= config.slack_tol
    return RunResult(
        scheme=scheme,
        status=status,
        objective=final_z if usable else 0.0,
        iterations=len(trace),
        objective_trace=trace,
        slack_trace=slack_trace,
        feasible_from=feasible_from,
        final_iterate=it,
        epoch=epoch,
        wall_time_s=time.perf_counter() - start,
    )


def eval_bl2(
    fading: LargeScaleFading,
    est: EstimationVariances,
    params: SystemParams,
    uplink_mode: Mode = Mode.HD,
) -> RunResult:
    """Equal-power heuristic: uniform shares, CPU paced to fill the budget."""
    start = time.perf_counter()
    L, K = params.L, params.K
    share = 1.0 / (L + K)
    alloc = Allocation(
        eta_d=np.full(L, share),
        zeta_1=np.full(K, share),
        zeta_2=np.full(K, 1.0 / K),
        zeta_3=np.full(K, 1.0 / K),
        eta_u=np.ones(L),
        f=params.f_max,
    )
    sr = rates(alloc, fading, est, params, uplink_mode)
    t_d = params.S_d / float(np.min(sr.r_d))
    t_u = params.S_u / float(np.min(sr.r_u))
    budget = params.t_qos - t_d - t_u
    load = params.Nc * params.D_max * params.c_max
    if budget <= 0.0:
        return RunResult(
            scheme="BL2", status="infeasible", objective=0.0, iterations=0,
            wall_time_s=time.perf_counter() - start,
        )
    f = float(np.clip(load / budget, params.f_min, params.f_max))
    if load / f > budget * (1.0 + 1e-12):
        # even the fastest CPU cannot finish inside the budget
        return RunResult(
            scheme="BL2", status="infeasible", objective=0.0, iterations=0,
            wall_time_s=time.perf_counter() - start,
        )
    alloc = replace(alloc, f=f)
    epoch = effective_rates(alloc, fading, est, params, uplink_mode)
    return RunResult(
        scheme="BL2",
        status="converged",
        objective=epoch.min_eff_rate,
        iterations=0,
        epoch=epoch,
        wall_time_s=time.perf_counter() - start,
    )


def gain_mu(rate_fd: float, rate_hd: float) -> float:
    """Relative gain of FD over HD, percent."""
    if rate_hd <= 0.0:
        raise ValueError("reference rate must be positive")
    return (rate_fd - rate_hd) / rate_hd * 100.0


def run_scheme(
    scheme: str,
    fading: LargeScaleFading,
    params: SystemParams,
    config: ScaConfig = ScaConfig(),
) -> RunResult:
    """Dispatch one scheme, handling each one's estimation variances."""
    scheme = scheme.upper()
    if scheme == "HD":
        est = estimation_variances(params, fading)
        return run_sca(Mode.HD, fading, est, params, config)
    if scheme == "FD":
        est = estimation_variances(params, fading)
        return run_sca(Mode.FD, fading, est, params, config)
    if scheme == "BL1":
        est = estimation_variances(params, fading, fdma_s3=True)
        return run_sca(Mode.FDMA, fading, est, params, config)
    if scheme == "BL2":
        est = estimation_variances(params, fading)
        return eval_bl2(fading, est, params)
    if scheme == "HYBRID":
        return run_hybrid(fading, params, config)
    raise ValueError(f"unknown scheme {scheme!r}")


def run_hybrid(
    fading: LargeScaleFading,
    params: SystemParams,
    config: ScaConfig = ScaConfig(),
    hd: RunResult | None = None,
    fd: RunResult | None = None,
) -> RunResult:
    """Run HD and FD and keep the better outcome (ties go to FD).

    Precomputed HD/FD results can be passed in to avoid re-running.
    """
    if hd is None:
        hd = run_scheme("HD", fading, params, config)
    if fd is None:
        fd = run_scheme("FD", fading, params, config)

    def key(r: RunResult) -> tuple:
        return (r.status == "converged", r.objective)

    best = fd if key(fd) >= key(hd) else hd
    return replace(best, scheme="HYBRID", picked=best.scheme)
