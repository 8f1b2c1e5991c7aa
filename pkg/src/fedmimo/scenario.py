"""Cell geometry, large-scale fading, and system parameters.

A scenario is a square service area with the base station at the centre,
L federated-learning (FL) UEs and K regular downlink (non-FL) UEs dropped
uniformly outside a minimum-distance disc. Large-scale gains follow a
log-distance pathloss with lognormal shadowing and are, by default,
normalized by the noise power so that SINR expressions take transmit
powers in watts directly.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# UEs may not be dropped closer to the base station than this.
MIN_BS_DISTANCE_M = 35.0


@dataclass(frozen=True)
class SystemParams:
    """Static system parameters for one cell.

    Power fields are transmit powers in watts; SINR expressions combine
    them with noise-normalized channel gains (see build_fading).
    """

    M: int = 50            # base station antennas
    L: int = 5             # FL UEs
    K: int = 5             # non-FL (downlink) UEs
    B: float = 20e6        # bandwidth, Hz
    tau_c: int = 200       # coherence interval, samples
    tau_dp: int = 20       # pilot length, FL downlink training (global model step)
    tau_1p: int = 20       # pilot length, non-FL downlink training (same step)
    tau_2p: int = 20       # pilot length, non-FL training during local compute
    tau_3p: int = 20       # pilot length, non-FL training during FL upload
    tau_up: int = 20       # pilot length, FL uplink training
    rho_d: float = 10.0    # BS transmit power, W
    rho_u: float = 0.2     # UE transmit power, W
    rho_p: float = 0.2     # pilot power, W
    N0_dBm: float = -92.0  # noise power over B, dBm
    Nc: int = 20           # local optimizer epochs per FL iteration
    D_max: float = 1.6e5   # local dataset size, samples
    c_max: float = 20.0    # processor cycles per sample
    f_min: float = 0.0     # CPU frequency lower limit, Hz
    f_max: float = 5e9     # CPU frequency upper limit, Hz
    S_d: float = 16e6      # global model download size, bits
    S_u: float = 16e6      # local update upload size, bits
    t_qos: float = 3.0     # latency budget for one FL iteration, s
    area_side_D: float = 250.0      # service area side, m
    pl_si_dB: float = -81.1846      # residual self-interference pathloss, dB
    si_over_noise_dB: float = 20.0  # residual SI strength over noise, dB
    # Fraction of B each direction gets while FL upload and downlink
    # traffic share the band by time division (1.0 = no split).
    hd_s3_bandwidth_fraction: float = 0.5
    # Alternate bookkeeping of the download-step cross-group interference
    # that charges the full channel gain instead of the estimation error.
    s1_full_gain_interference: bool = False

    def __post_init__(self) -> None:
        if self.L < 1 or self.K < 1:
            raise ValueError("need at least one UE per group")
        if self.M < self.L + self.K:
            raise ValueError("zero-forcing needs M >= L + K")
        pilots = {
            "tau_dp": (self.tau_dp, self.L + self.K),
            "tau_1p": (self.tau_1p, self.L + self.K),
            "tau_2p": (self.tau_2p, self.K),
            "tau_3p": (self.tau_3p, self.K),
            "tau_up": (self.tau_up, self.L),
        }
        for name, (tau, need) in pilots.items():
            if tau < need:
                raise ValueError(f"{name}={tau} shorter than the {need} UEs it trains")
            if tau >= self.tau_c:
                raise ValueError(f"{name}={tau} does not fit in tau_c={self.tau_c}")
        if not (0 <= self.f_min < self.f_max):
            raise ValueError("need 0 <= f_min < f_max")
        for name in ("B", "rho_d", "rho_u", "rho_p", "S_d", "S_u", "t_qos",
                     "D_max", "c_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.hd_s3_bandwidth_fraction <= 1:
            raise ValueError("hd_s3_bandwidth_fraction must be in (0, 1]")


@dataclass(frozen=True)
class FadingModel:
    """Knobs of the large-scale fading draw."""

    shadow_std_db: float = 7.0        # lognormal shadowing std, dB
    igi_distance_floor_m: float = 10.0  # min UE-UE distance used for gains
    normalize_by_noise: bool = True   # divide gains by the noise power


@dataclass(frozen=True)
class Geometry:
    """One placement of UEs around the base station."""

    bs_xy: np.ndarray        # (2,) base station position, m
    fl_xy: np.ndarray        # (L, 2) FL UE positions, m
    nfl_xy: np.ndarray       # (K, 2) non-FL UE positions, m
    seed: int

    def fl_distances(self) -> np.ndarray:
        return np.linalg.norm(self.fl_xy - self.bs_xy, axis=1)

    def nfl_distances(self) -> np.ndarray:
        return np.linalg.norm(self.nfl_xy - self.bs_xy, axis=1)

    def cross_distances(self) -> np.ndarray:
        """(K, L) distances from each FL UE to each non-FL UE."""
        diff = self.nfl_xy[:, None, :] - self.fl_xy[None, :, :]
        return np.linalg.norm(diff, axis=2)


@dataclass(frozen=True)
class LargeScaleFading:
    """Channel gains of one drop (noise-normalized unless configured off)."""

    beta_fl: np.ndarray       # (L,) BS <-> FL UE gains
    beta_nfl: np.ndarray      # (K,) BS <-> non-FL UE gains
    beta_igi: np.ndarray      # (K, L) FL-UE -> non-FL-UE gains
    beta_si_sigma2: float     # residual self-interference strength


def default_params(**overrides) -> SystemParams:
    """SystemParams with the reference setup, pilots grown to fit the UEs.

    Pilot lengths default to max(20, L + K) unless given explicitly.
    """
    L = int(overrides.get("L", 5))
    K = int(overrides.get("K", 5))
    pilot = max(20, L + K)
    for name in ("tau_dp", "tau_1p", "tau_2p", "tau_3p", "tau_up"):
        overrides.setdefault(name, pilot)
    return SystemParams(**overrides)


def noise_power_watts(params: SystemParams) -> float:
    """Noise power over the system bandwidth, W."""
    return 10.0 ** ((params.N0_dBm - 30.0) / 10.0)


def normalize_snr(power_watts: float, params: SystemParams) -> float:
    """Transmit power divided by the noise power (a raw SNR)."""
    return power_watts / noise_power_watts(params)


def pathloss_db(distance_m, shadow_db=0.0):
    """Log-distance pathloss in dB with an additive shadowing term."""
    distance_m = np.asarray(distance_m, dtype=float)
    return -148.1 - 37.6 * np.log10(distance_m / 1000.0) + shadow_db


def drop_ues(params: SystemParams, seed: int) -> Geometry:
    """Place L + K UEs uniformly in the square, outside the 35 m disc.

    Rejection sampling keeps the accepted points uniform on the
    admissible region. The first L accepted points are the FL UEs.
    """
    side = params.area_side_D
    if side <= 2 * MIN_BS_DISTANCE_M:
        raise ValueError(
            f"area_side_D={side} leaves no admissible region beyond "
            f"{MIN_BS_DISTANCE_M} m; need side > {2 * MIN_BS_DISTANCE_M}"
        )
    rng = np.random.default_rng(seed)
    need = params.L + params.K
    accepted = np.empty((0, 2))
    while accepted.shape[0] < need:
        batch = rng.uniform(-side / 2, side / 2, size=(4 * need, 2))
        ok = np.linalg.norm(batch, axis=1) >= MIN_BS_DISTANCE_M
        accepted = np.vstack([accepted, batch[ok]])
    pts = accepted[:need]
    return Geometry(
        bs_xy=np.zeros(2),
        fl_xy=pts[: params.L].copy(),
        nfl_xy=pts[params.L:].copy(),
        seed=seed,
    )


def build_fading(
    geom: Geometry,
    params: SystemParams,
    seed: int,
    model: FadingModel = FadingModel(),
) -> LargeScaleFading:
    """Draw shadowing and turn distances into linear channel gains.

    Draw order is fixed (FL links, non-FL links, cross links) so a seed
    pins the whole drop. Gains are divided by the noise power when
    model.normalize_by_noise is set, which is what the SINR expressions
    in link_model expect.
    """
    rng = np.random.default_rng(seed)
    sh_fl = rng.normal(0.0, model.shadow_std_db, size=params.L)
    sh_nfl = rng.normal(0.0, model.shadow_std_db, size=params.K)
    sh_igi = rng.normal(0.0, model.shadow_std_db, size=(params.K, params.L))

    beta_fl = 10.0 ** (pathloss_db(geom.fl_distances(), sh_fl) / 10.0)
    beta_nfl = 10.0 ** (pathloss_db(geom.nfl_distances(), sh_nfl) / 10.0)
    cross = np.maximum(geom.cross_distances(), model.igi_distance_floor_m)
    beta_igi = 10.0 ** (pathloss_db(cross, sh_igi) / 10.0)

    if model.normalize_by_noise:
        n0 = noise_power_watts(params)
        beta_fl = beta_fl / n0
        beta_nfl = beta_nfl / n0
        beta_igi = beta_igi / n0

    # Residual SI pathloss times SI-over-noise strength; noise-relative
    # by construction, independent of the normalize flag.
    bss = 10.0 ** (params.pl_si_dB / 10.0) * 10.0 ** (params.si_over_noise_dB / 10.0)
    return LargeScaleFading(
        beta_fl=beta_fl,
        beta_nfl=beta_nfl,
        beta_igi=beta_igi,
        beta_si_sigma2=bss,
    )


# --- config file round trip ----------------------------------------------

_INT_FIELDS = {"M", "L", "K", "tau_c", "tau_dp", "tau_1p", "tau_2p",
               "tau_3p", "tau_up", "Nc"}
_BOOL_FIELDS = {"s1_full_gain_interference"}
PARAM_FIELDS = tuple(f.name for f in dataclasses.fields(SystemParams))


def _coerce(name: str, raw: str):
    if name in _BOOL_FIELDS:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: cannot parse boolean from {raw!r}")
    if name in _INT_FIELDS:
        return int(raw)
    return float(raw)


def params_from_mapping(mapping: dict) -> SystemParams:
    """Build SystemParams from string key/value pairs; unknown keys raise."""
    kwargs = {}
    for key, raw in mapping.items():
        if key not in PARAM_FIELDS:
            raise KeyError(f"unknown system parameter {key!r}")
        kwargs[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    return default_params(**kwargs)


def save_params(params: SystemParams, path) -> None:
    """Write params as flat 'key = value' lines."""
    lines = [f"{f.name} = {getattr(params, f.name)}"
             for f in dataclasses.fields(SystemParams)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> SystemParams:
    """Read a flat 'key = value' file written by save_params."""
    mapping = {}
    for raw_line in Path(path).read_text().splitlines():
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"cannot parse config line: {raw_line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        mapping[key] = val
    return params_from_mapping(mapping)


def export_drop_csv(geom: Geometry, fading: LargeScaleFading, path) -> None:
    """Dump one drop (positions, distances, gains) for inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "i", "j", "x_m", "y_m", "distance_m", "beta"])
        d_fl = geom.fl_distances()
        for i, (xy, d, b) in enumerate(zip(geom.fl_xy, d_fl, fading.beta_fl)):
            writer.writerow(["fl", i, "", f"{xy[0]:.3f}", f"{xy[1]:.3f}",
                             f"{d:.3f}", f"{b:.6g}"])
        d_nfl = geom.nfl_distances()
        for k, (xy, d, b) in enumerate(zip(geom.nfl_xy, d_nfl, fading.beta_nfl)):
            writer.writerow(["nfl", k, "", f"{xy[0]:.3f}", f"{xy[1]:.3f}",
                             f"{d:.3f}", f"{b:.6g}"])
        cross = geom.cross_distances()
        for k in range(cross.shape[0]):
            for ell in range(cross.shape[1]):
                writer.writerow(["igi", k, ell, "", "",
                                 f"{cross[k, ell]:.3f}",
                                 f"{fading.beta_igi[k, ell]:.6g}"])
