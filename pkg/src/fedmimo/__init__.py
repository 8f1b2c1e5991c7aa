"""Joint power/frequency allocation for massive MIMO cells that serve
federated-learning uplink users and regular downlink users at once.

The package models one FL iteration (global download, local compute,
model upload) overlapped with continuous downlink traffic, and maximizes
the minimum effective data rate of the downlink users subject to a
latency budget on the FL side. Solvers cover half-duplex, full-duplex,
and FDMA / equal-power baselines via successive convex approximation.
"""

from .scenario import (
    SystemParams,
    FadingModel,
    Geometry,
    LargeScaleFading,
    default_params,
    drop_ues,
    pathloss_db,
    build_fading,
    normalize_snr,
    noise_power_watts,
)
from .link_model import (
    Mode,
    Allocation,
    EstimationVariances,
    SchemeRates,
    EpochSummary,
    estimation_variances,
    mmse_variance,
    rates,
    times,
    data_volumes,
    effective_rates,
    verify_fd_si_variance,
)
from .algorithms import (
    ScaConfig,
    RunResult,
    run_sca,
    run_scheme,
    eval_bl2,
    run_hybrid,
    gain_mu,
)
from .harness import ExperimentSpec, run_experiment, write_csv

__all__ = [
    "SystemParams",
    "FadingModel",
    "Geometry",
    "LargeScaleFading",
    "default_params",
    "drop_ues",
    "pathloss_db",
    "build_fading",
    "normalize_snr",
    "noise_power_watts",
    "Mode",
    "Allocation",
    "EstimationVariances",
    "SchemeRates",
    "EpochSummary",
    "estimation_variances",
    "mmse_variance",
    "rates",
    "times",
    "data_volumes",
    "effective_rates",
    "verify_fd_si_variance",
    "ScaConfig",
    "RunResult",
    "run_sca",
    "run_scheme",
    "eval_bl2",
    "run_hybrid",
    "gain_mu",
    "ExperimentSpec",
    "run_experiment",
    "write_csv",
]
