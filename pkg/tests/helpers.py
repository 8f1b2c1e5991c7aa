"""Hand-built inputs shared by the test files."""

import numpy as np

from fedmimo.link_model import Allocation, EstimationVariances
from fedmimo.scenario import LargeScaleFading


def flat_fading(L, K, beta_fl=0.5, beta_nfl=0.5, igi=0.0, bss=0.0):
    """Fading with the same gain on every link of a group."""
    return LargeScaleFading(
        beta_fl=np.full(L, float(beta_fl)),
        beta_nfl=np.full(K, float(beta_nfl)),
        beta_igi=np.full((K, L), float(igi)),
        beta_si_sigma2=float(bss),
    )


def flat_est(L, K, value=0.4):
    """Estimation variances sharing one value across all phases."""
    v = float(value)
    return EstimationVariances(
        sigma2_d=np.full(L, v),
        sigma2_1=np.full(K, v),
        sigma2_2=np.full(K, v),
        sigma2_3=np.full(K, v),
        sigma2_u=np.full(L, v),
    )


def uniform_alloc(L, K, eta_d=0.5, zeta_1=0.5, zeta_2=1.0, zeta_3=1.0,
                  eta_u=1.0, f=5e9):
    """Allocation with equal coefficients inside each group."""
    return Allocation(
        eta_d=np.full(L, float(eta_d)),
        zeta_1=np.full(K, float(zeta_1)),
        zeta_2=np.full(K, float(zeta_2)),
        zeta_3=np.full(K, float(zeta_3)),
        eta_u=np.full(L, float(eta_u)),
        f=float(f),
    )


def random_alloc(rng, L, K, f_min=1e8, f_max=5e9):
    """Random allocation strictly inside every power and frequency budget."""
    eta_d = rng.uniform(0.05, 1.0, L)
    zeta_1 = rng.uniform(0.05, 1.0, K)
    joint = rng.uniform(0.3, 0.95) / (eta_d.sum() + zeta_1.sum())
    zeta_2 = rng.uniform(0.05, 1.0, K)
    zeta_3 = rng.uniform(0.05, 1.0, K)
    return Allocation(
        eta_d=eta_d * joint,
        zeta_1=zeta_1 * joint,
        zeta_2=zeta_2 * rng.uniform(0.3, 0.95) / zeta_2.sum(),
        zeta_3=zeta_3 * rng.uniform(0.3, 0.95) / zeta_3.sum(),
        eta_u=rng.uniform(0.05, 1.0, L),
        f=float(rng.uniform(f_min, f_max)),
    )
