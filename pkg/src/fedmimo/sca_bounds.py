"""Convexifying bounds used by the successive approximation loop.

Every rate is B' * log(1 + psi(x)/theta(x)) with psi, theta affine and
positive in the power variables. Around an expansion point we sandwich
the log term with a concave lower bound (affine minus a positive
multiple of 1/psi) and a convex upper bound (affine plus a positive
quadratic-over-linear term). Both are tangent at the expansion point,
which is what makes the outer loop monotone.

Products of two decision variables (schedule couplings like a * r) use
the quadratic upper bound x*y <= ((x+y)^2 - 2(x_n-y_n)(x-y) + (x_n-y_n)^2)/4,
also tangent at (x_n, y_n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .link_model import (
    EstimationVariances,
    Mode,
    prelog_bps,
    sinr_s1_fl,
    sinr_s1_nfl,
    sinr_s2_nfl,
    sinr_s3_fd_nfl,
    sinr_s3_fdma_nfl,
    sinr_s3_hd_nfl,
    sinr_uplink_fd,
    sinr_uplink_fdma,
    sinr_uplink_hd,
)
from .scenario import LargeScaleFading, SystemParams

LN2 = math.log(2.0)

# Variable ids are (group, index) pairs; scalars use index 0.
VarId = tuple[str, int]


@dataclass
class AffineForm:
    """constant + sum(coeff * variable), plain dict representation."""

    constant: float = 0.0
    coeffs: dict[VarId, float] = field(default_factory=dict)

    def value(self, point: "ExpansionPoint | dict") -> float:
        get = point.get if isinstance(point, dict) else point.value_of
        return self.constant + sum(c * get(v) for v, c in self.coeffs.items())

    def scaled(self, factor: float) -> "AffineForm":
        return AffineForm(
            constant=self.constant * factor,
            coeffs={v: c * factor for v, c in self.coeffs.items()},
        )

    def plus(self, other: "AffineForm") -> "AffineForm":
        coeffs = dict(self.coeffs)
        for v, c in other.coeffs.items():
            coeffs[v] = coeffs.get(v, 0.0) + c
        return AffineForm(self.constant + other.constant, coeffs)

    @staticmethod
    def variable(group: str, idx: int = 0, coeff: float = 1.0) -> "AffineForm":
        return AffineForm(0.0, {(group, idx): coeff})


@dataclass(frozen=True)
class ExpansionPoint:
    """Flat variable assignment the bounds are expanded around."""

    values: dict[VarId, float]

    def value_of(self, var: VarId) -> float:
        return self.values[var]

    @staticmethod
    def from_allocation(alloc) -> "ExpansionPoint":
        values: dict[VarId, float] = {}
        for group, arr in (("eta_d", alloc.eta_d), ("zeta_1", alloc.zeta_1),
                           ("zeta_2", alloc.zeta_2), ("zeta_3", alloc.zeta_3),
                           ("eta_u", alloc.eta_u)):
            for i, v in enumerate(np.asarray(arr, dtype=float)):
                values[(group, i)] = float(v)
        values[("f", 0)] = float(alloc.f)
        return ExpansionPoint(values)


# --- scalar reference bounds -------------------------------------------------


def log_lower_bound(x: float, y: float, x_n: float, y_n: float) -> float:
    """Concave-in-(x restricted) minorant of log(1 + x/y), nats.

    Valid for x, y, x_n, y_n > 0 and tangent at (x_n, y_n).
    """
    s = x_n + y_n
    return (math.log1p(x_n / y_n) + 2.0 * x_n / s
            - x_n**2 / (s * x) - x_n * y / (s * y_n))


def log_upper_bound(x: float, y: float, x_n: float, y_n: float) -> float:
    """Convex majorant of log(1 + x/y), nats; tangent at (x_n, y_n)."""
    s = x_n + y_n
    return (math.log1p(x_n / y_n)
            + y_n / s * ((x**2 + x_n**2) / (2.0 * x_n * y) - x_n / y_n))


def bilinear_upper_bound(x: float, y: float, x_n: float, y_n: float) -> float:
    """Convex majorant of the product x*y, tangent at (x_n, y_n).

    Computed as x*y + ((x-y) - (x_n-y_n))^2 / 4, the cancellation-free
    rearrangement of ((x+y)^2 - 2(x_n-y_n)(x-y) + (x_n-y_n)^2) / 4, so
    validity and tangency hold to the last bit.
    """
    gap = (x - y) - (x_n - y_n)
    return x * y + 0.25 * gap * gap


# --- structured rate bounds ---------------------------------------------------


@dataclass
class QuadOverLin:
    """scale * (numerator(x)^2 + num_const_sq) / denominator(x)."""

    numerator: AffineForm
    num_const_sq: float
    denominator: AffineForm
    scale: float

    def value(self, point) -> float:
        num = self.numerator.value(point)
        return self.scale * (num * num + self.num_const_sq) / self.denominator.value(point)


@dataclass
class BoundExpr:
    """One rate bound in solver-ready shape.

    concave_lb: value = constant + linear(x) - inv_coeff / inv_arg(x)
    convex_ub:  value = constant + linear(x) + quad.value(x)

    prelog is the bps-per-nat scale already folded into every term; psi
    and theta are kept for reference (psi/theta evaluates to the SINR).
    """

    kind: str                      # "concave_lb" | "convex_ub"
    prelog: float
    constant: float
    linear: AffineForm
    inv_coeff: float | None = None
    inv_arg: AffineForm | None = None
    quad: QuadOverLin | None = None
    psi: AffineForm | None = None
    theta: AffineForm | None = None
    psi_n: float = 0.0             # psi at the expansion point
    theta_n: float = 0.0           # theta at the expansion point

    def value(self, point) -> float:
        out = self.constant + self.linear.value(point)
        if self.inv_coeff is not None:
            out -= self.inv_coeff / self.inv_arg.value(point)
        if self.quad is not None:
            out += self.quad.value(point)
        return out


LB_FAMILIES = ("d", "1", "2", "3_hd", "3_fd", "u_hd", "u_fd", "3_fdma", "u_fdma")
UB_FAMILIES = ("d", "u_hd", "u_fd", "u_fdma")

_FAMILY_SINR = {
    "d": sinr_s1_fl,
    "1": sinr_s1_nfl,
    "2": sinr_s2_nfl,
    "3_hd": sinr_s3_hd_nfl,
    "3_fd": sinr_s3_fd_nfl,
    "3_fdma": sinr_s3_fdma_nfl,
    "u_hd": sinr_uplink_hd,
    "u_fd": sinr_uplink_fd,
    "u_fdma": sinr_uplink_fdma,
}


def family_sinr(family: str, alloc, fading, est, params, idx=None):
    """The exact SINR the family's psi/theta pair linearizes."""
    return _FAMILY_SINR[family](alloc, fading, est, params, idx)


def family_prelog(family: str, params: SystemParams) -> float:
    step = family[0] if family[0] in ("d", "1", "2", "u") else "3"
    if family in ("d", "1", "2"):
        return prelog_bps(family, params)
    mode = {"hd": Mode.HD, "fd": Mode.FD, "fdma": Mode.FDMA}[family.split("_")[1]]
    return prelog_bps(step, params, mode)


def psi_theta(
    family: str,
    idx: int,
    fading: LargeScaleFading,
    est: EstimationVariances,
    params: SystemParams,
) -> tuple[AffineForm, AffineForm]:
    """Affine numerator/denominator of the family's SINR in the powers."""
    rd, ru, M, L, K = params.rho_d, params.rho_u, params.M, params.L, params.K
    var = AffineForm.variable

    def span(group: str, n: int, weights) -> AffineForm:
        w = np.broadcast_to(np.asarray(weights, dtype=float), (n,))
        return AffineForm(0.0, {(group, i): float(w[i]) for i in range(n)})

    if family == "d":
        psi = var("eta_d", idx, rd * (M - L - K) * float(est.sigma2_d[idx]))
        gap = rd * float(fading.beta_fl[idx] - est.sigma2_d[idx])
        if params.s1_full_gain_interference:
            cross = rd * float(fading.beta_fl[idx])
            theta = AffineForm(1.0).plus(span("eta_d", L, gap)).plus(span("zeta_1", K, cross))
        else:
            theta = AffineForm(1.0).plus(span("eta_d", L, gap)).plus(span("zeta_1", K, gap))
    elif family == "1":
        psi = var("zeta_1", idx, rd * (M - L - K) * float(est.sigma2_1[idx]))
        gap = rd * float(fading.beta_nfl[idx] - est.sigma2_1[idx])
        if params.s1_full_gain_interference:
            cross = rd * float(fading.beta_nfl[idx])
            theta = AffineForm(1.0).plus(span("zeta_1", K, gap)).plus(span("eta_d", L, cross))
        else:
            theta = AffineForm(1.0).plus(span("zeta_1", K, gap)).plus(span("eta_d", L, gap))
    elif family == "2":
        psi = var("zeta_2", idx, rd * (M - K) * float(est.sigma2_2[idx]))
        gap = rd * float(fading.beta_nfl[idx] - est.sigma2_2[idx])
        theta = AffineForm(1.0).plus(span("zeta_2", K, gap))
    elif family in ("3_hd", "3_fd"):
        psi = var("zeta_3", idx, rd * (M - K) * float(est.sigma2_3[idx]))
        gap = rd * float(fading.beta_nfl[idx] - est.sigma2_3[idx])
        theta = AffineForm(1.0).plus(span("zeta_3", K, gap))
        if family == "3_fd":
            theta = theta.plus(span("eta_u", L, ru * fading.beta_igi[idx]))
    elif family == "3_fdma":
        psi = var("zeta_3", idx, rd * M * float(est.sigma2_3[idx]))
        theta = AffineForm(1.0).plus(var("zeta_3", idx, rd * float(fading.beta_nfl[idx])))
    elif family in ("u_hd", "u_fd"):
        psi = var("eta_u", idx, ru * (M - L) * float(est.sigma2_u[idx]))
        theta = AffineForm(1.0).plus(span("eta_u", L, ru * (fading.beta_fl - est.sigma2_u)))
        if family == "u_fd":
            theta = theta.plus(span("zeta_3", K, rd * M * fading.beta_si_sigma2))
    elif family == "u_fdma":
        psi = var("eta_u", idx, ru * M * float(est.sigma2_u[idx]))
        theta = AffineForm(1.0).plus(var("eta_u", idx, ru * float(fading.beta_fl[idx])))
    else:
        raise ValueError(f"unknown rate family {family!r}")
    return psi, theta


def build_rate_lb(
    family: str,
    idx: int,
    point: ExpansionPoint,
    fading: LargeScaleFading,
    est: EstimationVariances,
    params: SystemParams,
) -> BoundExpr:
    """Concave lower bound on the family's rate around point, in bps."""
    if family not in LB_FAMILIES:
        raise ValueError(f"no lower bound family {family!r}")
    psi, theta = psi_theta(family, idx, fading, est, params)
    psi_n = psi.value(point)
    theta_n = theta.value(point)
    if psi_n <= 0.0:
        raise ValueError(f"expansion point gives zero signal power for {family}[{idx}]")
    prelog = family_prelog(family, params) / LN2  # bps per nat
    s = psi_n + theta_n
    constant = prelog * (math.log1p(psi_n / theta_n) + 2.0 * psi_n / s)
    linear = theta.scaled(-prelog * psi_n / (s * theta_n))
    return BoundExpr(
        kind="concave_lb",
        prelog=prelog,
        constant=constant,
        linear=linear,
        inv_coeff=prelog * psi_n**2 / s,
        inv_arg=psi,
        psi=psi,
        theta=theta,
        psi_n=psi_n,
        theta_n=theta_n,
    )


def build_rate_ub(
    family: str,
    idx: int,
    point: ExpansionPoint,
    fading: LargeScaleFading,
    est: EstimationVariances,
    params: SystemParams,
) -> BoundExpr:
    """Convex upper bound on the family's rate around point, in bps."""
    if family not in UB_FAMILIES:
        raise ValueError(f"no upper bound family {family!r}")
    psi, theta = psi_theta(family, idx, fading, est, params)
    psi_n = psi.value(point)
    theta_n = theta.value(point)
    if psi_n <= 0.0:
        raise ValueError(f"expansion point gives zero signal power for {family}[{idx}]")
    prelog = family_prelog(family, params) / LN2
    s = psi_n + theta_n
    constant = prelog * (math.log1p(psi_n / theta_n) - psi_n / s)
    quad = QuadOverLin(
        numerator=psi,
        num_const_sq=psi_n**2,
        denominator=theta,
        scale=prelog * theta_n / (2.0 * psi_n * s),
    )
    return BoundExpr(
        kind="convex_ub",
        prelog=prelog,
        constant=constant,
        linear=AffineForm(),
        quad=quad,
        psi=psi,
        theta=theta,
        psi_n=psi_n,
        theta_n=theta_n,
    )
