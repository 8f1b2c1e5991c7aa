"""Rates, times, and data volumes of one FL iteration.

The iteration has three billed steps: global-model download (the BS
serves FL and non-FL UEs together), local compute (the BS keeps serving
non-FL UEs), and model upload. During upload the cell either time-splits
the band between FL uplink and non-FL downlink (half duplex), runs both
at once on the full band (full duplex, paying self-interference at the
BS and FL-to-non-FL cross interference), or parks every UE on its own
FDMA subband (the first baseline).

All SINR expressions assume zero-forcing processing with MMSE channel
estimates and take noise-normalized channel gains (see scenario).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .scenario import LargeScaleFading, SystemParams


class Mode(enum.Enum):
    """How the upload step shares the band."""

    HD = "hd"
    FD = "fd"
    FDMA = "fdma"


class InfeasibleRateError(RuntimeError):
    """A required link has (numerically) zero rate, so no finite schedule exists."""


@dataclass(frozen=True)
class EstimationVariances:
    """MMSE estimate variances per training phase (noise-normalized)."""

    sigma2_d: np.ndarray   # (L,) FL downlink, download step
    sigma2_1: np.ndarray   # (K,) non-FL downlink, download step
    sigma2_2: np.ndarray   # (K,) non-FL downlink, compute step
    sigma2_3: np.ndarray   # (K,) non-FL downlink, upload step
    sigma2_u: np.ndarray   # (L,) FL uplink, upload step


@dataclass
class Allocation:
    """Power coefficients and the local CPU frequency."""

    eta_d: np.ndarray    # (L,) BS power shares, FL downlink
    zeta_1: np.ndarray   # (K,) BS power shares, non-FL during download
    zeta_2: np.ndarray   # (K,) BS power shares, non-FL during compute
    zeta_3: np.ndarray   # (K,) BS power shares, non-FL during upload
    eta_u: np.ndarray    # (L,) UE power fractions, FL uplink
    f: float             # CPU frequency, Hz

    def validate(self, params: SystemParams, tol: float = 1e-9) -> None:
        arrays = (self.eta_d, self.zeta_1, self.zeta_2, self.zeta_3, self.eta_u)
        if any(np.any(a < -tol) for a in arrays):
            raise ValueError("negative power coefficient")
        if np.sum(self.eta_d) + np.sum(self.zeta_1) > 1 + tol:
            raise ValueError("download-step BS power budget exceeded")
        if np.sum(self.zeta_2) > 1 + tol:
            raise ValueError("compute-step BS power budget exceeded")
        if np.sum(self.zeta_3) > 1 + tol:
            raise ValueError("upload-step BS power budget exceeded")
        if np.any(self.eta_u > 1 + tol) or np.any(self.eta_d > 1 + tol):
            raise ValueError("per-UE power fraction exceeds 1")
        if not (params.f_min - tol <= self.f <= params.f_max + tol):
            raise ValueError("CPU frequency outside [f_min, f_max]")


@dataclass(frozen=True)
class SchemeRates:
    """Per-link achievable rates (bps) for one allocation."""

    mode: Mode
    r_d: np.ndarray    # (L,) FL downlink rates, download step
    r_1: np.ndarray    # (K,) non-FL rates, download step
    r_2: np.ndarray    # (K,) non-FL rates, compute step
    r_3: np.ndarray    # (K,) non-FL rates, upload step
    r_u: np.ndarray    # (L,) FL uplink rates, upload step


@dataclass(frozen=True)
class EpochSummary:
    """Times, per-UE data volumes, and effective rates of one iteration."""

    mode: Mode
    t_d: float            # download time, s
    t_c: float            # compute time, s
    t_u: float            # upload time, s
    d_1: np.ndarray       # (K,) bits received during download
    d_2: np.ndarray       # (K,) bits received during compute
    d_3: np.ndarray       # (K,) bits received during upload
    eff_rates: np.ndarray  # (K,) effective rates, bps
    min_eff_rate: float   # bps

    @property
    def total_time(self) -> float:
        return self.t_d + self.t_c + self.t_u


def mmse_variance(rho_p, tau_p, beta):
    """Variance of the MMSE channel estimate; always in (0, beta)."""
    beta = np.asarray(beta, dtype=float)
    num = rho_p * tau_p * beta**2
    return num / (rho_p * tau_p * beta + 1.0)


def estimation_variances(
    params: SystemParams, fading: LargeScaleFading, fdma_s3: bool = False
) -> EstimationVariances:
    """Estimate variances for every training phase.

    fdma_s3 models the FDMA baseline's upload step, where each UE trains
    alone on its subband with a single pilot symbol.
    """
    tau_3 = 1 if fdma_s3 else params.tau_3p
    tau_u = 1 if fdma_s3 else params.tau_up
    return EstimationVariances(
        sigma2_d=mmse_variance(params.rho_p, params.tau_dp, fading.beta_fl),
        sigma2_1=mmse_variance(params.rho_p, params.tau_1p, fading.beta_nfl),
        sigma2_2=mmse_variance(params.rho_p, params.tau_2p, fading.beta_nfl),
        sigma2_3=mmse_variance(params.rho_p, tau_3, fading.beta_nfl),
        sigma2_u=mmse_variance(params.rho_p, tau_u, fading.beta_fl),
    )


def _pick(values: np.ndarray, idx):
    return values if idx is None else float(values[idx])


# --- SINRs -----------------------------------------------------------------


def sinr_s1_fl(alloc, fading, est, params, ell=None):
    """Download-step SINR of FL UEs under joint zero-forcing."""
    gain = params.rho_d * (params.M - params.L - params.K)
    num = gain * est.sigma2_d * alloc.eta_d
    power = np.sum(alloc.eta_d) + np.sum(alloc.zeta_1)
    if params.s1_full_gain_interference:
        den = (1.0
               + params.rho_d * (fading.beta_fl - est.sigma2_d) * np.sum(alloc.eta_d)
               + params.rho_d * fading.beta_fl * np.sum(alloc.zeta_1))
    else:
        den = 1.0 + params.rho_d * (fading.beta_fl - est.sigma2_d) * power
    return _pick(num / den, ell)


def sinr_s1_nfl(alloc, fading, est, params, k=None):
    """Download-step SINR of non-FL UEs served alongside the model push."""
    gain = params.rho_d * (params.M - params.L - params.K)
    num = gain * est.sigma2_1 * alloc.zeta_1
    power = np.sum(alloc.eta_d) + np.sum(alloc.zeta_1)
    if params.s1_full_gain_interference:
        den = (1.0
               + params.rho_d * (fading.beta_nfl - est.sigma2_1) * np.sum(alloc.zeta_1)
               + params.rho_d * fading.beta_nfl * np.sum(alloc.eta_d))
    else:
        den = 1.0 + params.rho_d * (fading.beta_nfl - est.sigma2_1) * power
    return _pick(num / den, k)


def sinr_s2_nfl(alloc, fading, est, params, k=None):
    """Compute-step SINR of non-FL UEs (only K streams on the air)."""
    num = params.rho_d * (params.M - params.K) * est.sigma2_2 * alloc.zeta_2
    den = 1.0 + params.rho_d * (fading.beta_nfl - est.sigma2_2) * np.sum(alloc.zeta_2)
    return _pick(num / den, k)


def sinr_s3_hd_nfl(alloc, fading, est, params, k=None):
    """Upload-step downlink SINR of non-FL UEs in the half-duplex slot."""
    num = params.rho_d * (params.M - params.K) * est.sigma2_3 * alloc.zeta_3
    den = 1.0 + params.rho_d * (fading.beta_nfl - est.sigma2_3) * np.sum(alloc.zeta_3)
    return _pick(num / den, k)


def sinr_s3_fd_nfl(alloc, fading, est, params, k=None):
    """Like sinr_s3_hd_nfl plus cross interference from uploading FL UEs."""
    num = params.rho_d * (params.M - params.K) * est.sigma2_3 * alloc.zeta_3
    den = (1.0
           + params.rho_d * (fading.beta_nfl - est.sigma2_3) * np.sum(alloc.zeta_3)
           + params.rho_u * (fading.beta_igi @ alloc.eta_u))
    return _pick(num / den, k)


def sinr_uplink_hd(alloc, fading, est, params, ell=None):
    """FL upload SINR with zero-forcing reception in the half-duplex slot."""
    num = params.rho_u * (params.M - params.L) * est.sigma2_u * alloc.eta_u
    den = 1.0 + params.rho_u * np.sum((fading.beta_fl - est.sigma2_u) * alloc.eta_u)
    return _pick(num / den, ell)


def sinr_uplink_fd(alloc, fading, est, params, ell=None):
    """Like sinr_uplink_hd plus residual self-interference at the BS.

    The SI term uses the isotropic average of the SI channel Gram matrix,
    M * beta_si_sigma2 per unit downlink power (verify_fd_si_variance
    checks that average against Monte Carlo samples).
    """
    num = params.rho_u * (params.M - params.L) * est.sigma2_u * alloc.eta_u
    den = (1.0
           + params.rho_u * np.sum((fading.beta_fl - est.sigma2_u) * alloc.eta_u)
           + params.rho_d * params.M * fading.beta_si_sigma2 * np.sum(alloc.zeta_3))
    return _pick(num / den, ell)


def sinr_uplink_fdma(alloc, fading, est, params, ell=None):
    """FL upload SINR on a private subband (est must be the fdma_s3 variant)."""
    num = params.rho_u * params.M * est.sigma2_u * alloc.eta_u
    den = 1.0 + params.rho_u * fading.beta_fl * alloc.eta_u
    return _pick(num / den, ell)


def sinr_s3_fdma_nfl(alloc, fading, est, params, k=None):
    """Upload-step downlink SINR on a private subband."""
    num = params.rho_d * params.M * est.sigma2_3 * alloc.zeta_3
    den = 1.0 + params.rho_d * fading.beta_nfl * alloc.zeta_3
    return _pick(num / den, k)


# --- rates ------------------------------------------------------------------


def prelog_bps(step: str, params: SystemParams, mode: Mode = Mode.HD) -> float:
    """Bandwidth times pilot-overhead factor for one step's rate, bps/[log2]."""
    tc = params.tau_c
    if step == "d":
        return (tc - params.tau_dp) / tc * params.B
    if step == "1":
        return (tc - params.tau_1p) / tc * params.B
    if step == "2":
        return (tc - params.tau_2p) / tc * params.B
    if step == "3":
        if mode is Mode.HD:
            return (tc - params.tau_3p) / tc * params.B * params.hd_s3_bandwidth_fraction
        if mode is Mode.FD:
            return (tc - params.tau_3p) / tc * params.B
        return (tc - 1) / tc * params.B / (params.L + params.K)
    if step == "u":
        if mode is Mode.HD:
            return (tc - params.tau_up) / tc * params.B * params.hd_s3_bandwidth_fraction
        if mode is Mode.FD:
            return (tc - params.tau_up) / tc * params.B
        return (tc - 1) / tc * params.B / (params.L + params.K)
    raise ValueError(f"unknown step {step!r}")


def rates(alloc, fading, est, params, mode: Mode) -> SchemeRates:
    """Achievable rates of every link for one allocation.

    For Mode.FDMA the est argument must come from
    estimation_variances(..., fdma_s3=True).
    """
    r_d = prelog_bps("d", params) * np.log2(1.0 + sinr_s1_fl(alloc, fading, est, params))
    r_1 = prelog_bps("1", params) * np.log2(1.0 + sinr_s1_nfl(alloc, fading, est, params))
    r_2 = prelog_bps("2", params) * np.log2(1.0 + sinr_s2_nfl(alloc, fading, est, params))
    if mode is Mode.HD:
        s3 = sinr_s3_hd_nfl(alloc, fading, est, params)
        up = sinr_uplink_hd(alloc, fading, est, params)
    elif mode is Mode.FD:
        s3 = sinr_s3_fd_nfl(alloc, fading, est, params)
        up = sinr_uplink_fd(alloc, fading, est, params)
    else:
        s3 = sinr_s3_fdma_nfl(alloc, fading, est, params)
        up = sinr_uplink_fdma(alloc, fading, est, params)
    r_3 = prelog_bps("3", params, mode) * np.log2(1.0 + s3)
    r_u = prelog_bps("u", params, mode) * np.log2(1.0 + up)
    return SchemeRates(mode=mode, r_d=r_d, r_1=r_1, r_2=r_2, r_3=r_3, r_u=r_u)


_MIN_RATE_BPS = 1e-6


def times(scheme_rates: SchemeRates, alloc, params) -> tuple[float, float, float]:
    """(download, compute, upload) durations in seconds.

    Raises InfeasibleRateError when a payload-carrying link has no rate;
    that is a structural failure, not an overflow.
    """
    r_d_min = float(np.min(scheme_rates.r_d))
    r_u_min = float(np.min(scheme_rates.r_u))
    if r_d_min < _MIN_RATE_BPS or r_u_min < _MIN_RATE_BPS:
        raise InfeasibleRateError("an FL payload link has zero rate")
    if alloc.f <= 0:
        raise InfeasibleRateError("CPU frequency is zero")
    t_d = params.S_d / r_d_min
    t_c = params.Nc * params.D_max * params.c_max / alloc.f
    t_u = params.S_u / r_u_min
    return t_d, t_c, t_u


def data_volumes(scheme_rates: SchemeRates, step_times) -> tuple[np.ndarray, ...]:
    """Bits each non-FL UE collects in each step."""
    t_d, t_c, t_u = step_times
    return (scheme_rates.r_1 * t_d, scheme_rates.r_2 * t_c, scheme_rates.r_3 * t_u)


def effective_rates(alloc, fading, est, params, mode: Mode) -> EpochSummary:
    """Per-UE effective rate: total bits over the full iteration time."""
    sr = rates(alloc, fading, est, params, mode)
    step_times = times(sr, alloc, params)
    d_1, d_2, d_3 = data_volumes(sr, step_times)
    total = sum(step_times)
    eff = (d_1 + d_2 + d_3) / total
    return EpochSummary(
        mode=mode,
        t_d=step_times[0],
        t_c=step_times[1],
        t_u=step_times[2],
        d_1=d_1,
        d_2=d_2,
        d_3=d_3,
        eff_rates=eff,
        min_eff_rate=float(np.min(eff)),
    )


def verify_fd_si_variance(
    M: int,
    n_samples: int,
    beta_si_sigma2: float,
    zeta_sum: float,
    rho_d: float = 1.0,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte Carlo check of the closed-form self-interference power.

    The rate model replaces the SI channel Gram matrix G G^H by its
    isotropic average M * beta_si_sigma2 * I. Here we draw G with i.i.d.
    complex Gaussian entries and a unit-norm combining direction u, and
    average rho_d * zeta_sum * ||G^H u||^2 over samples. Returns
    (empirical, closed_form).
    """
    rng = np.random.default_rng(seed)
    scale = np.sqrt(beta_si_sigma2 / 2.0)
    total = 0.0
    remaining = n_samples
    while remaining > 0:
        batch = min(remaining, 256)
        g = scale * (rng.standard_normal((batch, M, M))
                     + 1j * rng.standard_normal((batch, M, M)))
        u = rng.standard_normal((batch, M)) + 1j * rng.standard_normal((batch, M))
        u = u / np.linalg.norm(u, axis=1, keepdims=True)
        h = np.einsum("bmn,bm->bn", np.conj(g), u)
        total += float(np.sum(np.abs(h) ** 2))
        remaining -= batch
    empirical = rho_d * zeta_sum * total / n_samples
    closed_form = rho_d * M * beta_si_sigma2 * zeta_sum
    return empirical, closed_form
