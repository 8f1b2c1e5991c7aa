"""Drops, pathloss, fading, and parameter plumbing."""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fedmimo.scenario import (
    MIN_BS_DISTANCE_M,
    FadingModel,
    Geometry,
    SystemParams,
    build_fading,
    default_params,
    drop_ues,
    export_drop_csv,
    load_params,
    noise_power_watts,
    normalize_snr,
    params_from_mapping,
    pathloss_db,
    save_params,
)

NO_SHADOW = FadingModel(shadow_std_db=0.0)
RAW_GAINS = FadingModel(shadow_std_db=0.0, normalize_by_noise=False)


def geometry_at(distances_fl, distances_nfl):
    """UEs placed on the x/y axes at the given distances from the BS."""
    fl = np.array([[d, 0.0] for d in distances_fl])
    nfl = np.array([[0.0, d] for d in distances_nfl])
    return Geometry(bs_xy=np.zeros(2), fl_xy=fl, nfl_xy=nfl, seed=0)


# --- pathloss ---------------------------------------------------------------


def test_pathloss_at_one_km():
    assert pathloss_db(1000.0) == pytest.approx(-148.1, rel=1e-12)


def test_pathloss_at_100m():
    assert pathloss_db(100.0) == pytest.approx(-110.5, rel=1e-12)


def test_pathloss_shadowing_is_additive():
    assert pathloss_db(100.0, 7.0) == pytest.approx(-103.5, rel=1e-12)
    base = pathloss_db(173.0)
    assert pathloss_db(173.0, -4.2) == pytest.approx(base - 4.2, rel=1e-12)


def test_pathloss_vectorizes():
    out = pathloss_db(np.array([100.0, 1000.0]))
    assert out.shape == (2,)
    assert out[1] == pytest.approx(-148.1, rel=1e-12)


@given(st.floats(min_value=-250.0, max_value=50.0))
def test_db_linear_db_round_trip(db):
    linear = 10.0 ** (db / 10.0)
    back = 10.0 * math.log10(linear)
    assert back == pytest.approx(db, rel=1e-12, abs=1e-12)


# --- UE placement -----------------------------------------------------------


def test_drop_respects_bounds():
    params = default_params(area_side_D=250.0)
    geom = drop_ues(params, seed=1)
    dists = np.concatenate([geom.fl_distances(), geom.nfl_distances()])
    assert dists.shape == (10,)
    assert np.all(dists >= MIN_BS_DISTANCE_M)
    assert np.all(dists <= 125.0 * math.sqrt(2.0) + 1e-9)
    for xy in (geom.fl_xy, geom.nfl_xy):
        assert np.all(np.abs(xy) <= 125.0)


def test_drop_is_deterministic():
    params = default_params()
    a = drop_ues(params, seed=7)
    b = drop_ues(params, seed=7)
    assert np.array_equal(a.fl_xy, b.fl_xy)
    assert np.array_equal(a.nfl_xy, b.nfl_xy)
    c = drop_ues(params, seed=8)
    assert not np.array_equal(a.fl_xy, c.fl_xy)


def test_drop_rejects_tiny_area():
    with pytest.raises(ValueError):
        drop_ues(default_params(area_side_D=60.0), seed=0)
    with pytest.raises(ValueError):
        drop_ues(default_params(area_side_D=70.0), seed=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_drop_always_outside_exclusion_disc(seed):
    params = default_params(L=2, K=2, area_side_D=120.0)
    geom = drop_ues(params, seed)
    assert np.all(geom.fl_distances() >= MIN_BS_DISTANCE_M)
    assert np.all(geom.nfl_distances() >= MIN_BS_DISTANCE_M)
    assert np.all(np.abs(np.vstack([geom.fl_xy, geom.nfl_xy])) <= 60.0)


def test_drop_uniform_on_admissible_region():
    # Bin 10^4 accepted points into quadrant x inner-ring cells of equal
    # probability; rejection sampling must not distort the distribution.
    params = default_params(area_side_D=250.0)
    points = []
    for seed in range(1000):
        geom = drop_ues(params, seed)
        points.append(np.vstack([geom.fl_xy, geom.nfl_xy]))
    xy = np.vstack(points)
    assert xy.shape == (10_000, 2)

    side = params.area_side_D
    hole = math.pi * MIN_BS_DISTANCE_M**2
    admissible = side**2 - hole
    r_half = math.sqrt((admissible / 2.0 + hole) / math.pi)
    assert r_half < side / 2.0  # the equal-area ring fits inside the square

    r = np.linalg.norm(xy, axis=1)
    quadrant = (xy[:, 0] > 0).astype(int) * 2 + (xy[:, 1] > 0).astype(int)
    cell = quadrant * 2 + (r <= r_half).astype(int)
    counts = np.bincount(cell, minlength=8)
    result = stats.chisquare(counts)
    assert result.pvalue > 0.01


# --- fading -----------------------------------------------------------------


def test_beta_at_one_km_without_normalization():
    geom = geometry_at([1000.0], [1000.0])
    params = default_params(L=1, K=1)
    fading = build_fading(geom, params, seed=0, model=RAW_GAINS)
    assert fading.beta_fl[0] == pytest.approx(10.0**-14.81, rel=1e-12)
    assert fading.beta_nfl[0] == pytest.approx(10.0**-14.81, rel=1e-12)


def test_beta_decreases_with_distance():
    dists = [35.0, 50.0, 90.0, 170.0, 400.0]
    geom = geometry_at(dists, [40.0])
    params = default_params(L=5, K=1)
    fading = build_fading(geom, params, seed=3, model=NO_SHADOW)
    assert np.all(np.diff(fading.beta_fl) < 0)


def test_noise_normalization_scales_gains():
    geom = geometry_at([100.0, 250.0], [60.0])
    params = default_params(L=2, K=1)
    raw = build_fading(geom, params, seed=5, model=RAW_GAINS)
    norm = build_fading(geom, params, seed=5, model=NO_SHADOW)
    n0 = noise_power_watts(params)
    assert norm.beta_fl == pytest.approx(raw.beta_fl / n0, rel=1e-12)
    assert norm.beta_igi == pytest.approx(raw.beta_igi / n0, rel=1e-12)


def test_si_strength_composition():
    geom = geometry_at([100.0], [100.0])
    params = default_params(L=1, K=1)  # pl_si -81.1846 dB, SI 20 dB over noise
    fading = build_fading(geom, params, seed=0)
    assert fading.beta_si_sigma2 == pytest.approx(10.0 ** (-8.11846 + 2.0),
                                                  rel=1e-12)
    raw = build_fading(geom, params, seed=0, model=RAW_GAINS)
    assert raw.beta_si_sigma2 == fading.beta_si_sigma2  # already noise-relative


def test_fading_is_deterministic():
    params = default_params(L=3, K=2)
    geom = drop_ues(params, seed=11)
    a = build_fading(geom, params, seed=4)
    b = build_fading(geom, params, seed=4)
    assert np.array_equal(a.beta_fl, b.beta_fl)
    assert np.array_equal(a.beta_igi, b.beta_igi)
    c = build_fading(geom, params, seed=5)
    assert not np.array_equal(c.beta_fl, a.beta_fl)


def test_igi_distance_floor():
    # Two co-located UEs: the cross gain must be capped at the floor distance.
    geom = Geometry(bs_xy=np.zeros(2),
                    fl_xy=np.array([[50.0, 0.0]]),
                    nfl_xy=np.array([[50.0, 1.0]]),
                    seed=0)
    params = default_params(L=1, K=1)
    fading = build_fading(geom, params, seed=0, model=RAW_GAINS)
    floored = 10.0 ** (pathloss_db(10.0) / 10.0)
    assert fading.beta_igi[0, 0] == pytest.approx(floored, rel=1e-12)


def test_all_gains_positive_and_finite():
    params = default_params()
    geom = drop_ues(params, seed=2)
    fading = build_fading(geom, params, seed=2)
    for arr in (fading.beta_fl, fading.beta_nfl, fading.beta_igi):
        assert np.all(arr > 0) and np.all(np.isfinite(arr))
    assert fading.beta_si_sigma2 > 0


# --- SNR normalization ------------------------------------------------------


def test_normalize_snr_reference_values():
    params = default_params()  # N0 = -92 dBm
    assert normalize_snr(10.0, params) == pytest.approx(10.0**13.2, rel=1e-12)
    assert normalize_snr(0.2, params) == pytest.approx(0.02 * 10.0**13.2,
                                                       rel=1e-12)
    assert normalize_snr(noise_power_watts(params), params) == pytest.approx(
        1.0, rel=1e-12)


# --- parameter validation and config round trip ------------------------------


def test_params_reject_bad_setups():
    with pytest.raises(ValueError):
        default_params(M=9, L=5, K=5)       # fewer antennas than UEs
    with pytest.raises(ValueError):
        default_params(tau_dp=3, L=2, K=2)  # pilot shorter than the UE count
    with pytest.raises(ValueError):
        default_params(tau_up=200)          # pilot does not fit in tau_c
    with pytest.raises(ValueError):
        default_params(f_min=5e9, f_max=5e9)
    with pytest.raises(ValueError):
        default_params(t_qos=0.0)
    with pytest.raises(ValueError):
        default_params(hd_s3_bandwidth_fraction=0.0)


def test_default_params_grow_pilots_with_ues():
    params = default_params(L=20, K=10)
    assert params.tau_dp == 30
    assert params.tau_up == 30
    small = default_params(L=2, K=2)
    assert small.tau_dp == 20


def test_params_mapping_rejects_unknown_keys():
    with pytest.raises(KeyError):
        params_from_mapping({"M": "50", "bogus_knob": "1"})


def test_params_mapping_coerces_types():
    params = params_from_mapping({"M": "64", "rho_d": "2.5",
                                  "s1_full_gain_interference": "yes"})
    assert params.M == 64 and isinstance(params.M, int)
    assert params.rho_d == 2.5
    assert params.s1_full_gain_interference is True


def test_params_config_round_trip(tmp_path):
    params = default_params(M=32, L=3, K=4, t_qos=1.5, si_over_noise_dB=42.0)
    path = tmp_path / "params.cfg"
    save_params(params, path)
    assert load_params(path) == params


def test_load_params_skips_comments(tmp_path):
    path = tmp_path / "p.cfg"
    path.write_text("# a comment\nM = 24\n\nL = 2  # trailing\nK = 2\n")
    params = load_params(path)
    assert (params.M, params.L, params.K) == (24, 2, 2)


def test_params_are_immutable():
    params = default_params()
    with pytest.raises(dataclasses.FrozenInstanceError):
        params.M = 10


# --- drop export ------------------------------------------------------------


def test_export_drop_csv(tmp_path):
    params = default_params(L=2, K=3)
    geom = drop_ues(params, seed=1)
    fading = build_fading(geom, params, seed=1)
    path = tmp_path / "drop.csv"
    export_drop_csv(geom, fading, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "kind,i,j,x_m,y_m,distance_m,beta"
    assert len(lines) == 1 + 2 + 3 + 2 * 3
    kinds = {line.split(",")[0] for line in lines[1:]}
    assert kinds == {"fl", "nfl", "igi"}
