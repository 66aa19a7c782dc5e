import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canyonnav.frames import EcefPosition, GeodeticPosition
from canyonnav.measmodel import (
    SPEED_OF_LIGHT,
    AtmosphereContext,
    BelowMask,
    DegenerateElevation,
    SatelliteObservation,
    WeightParams,
    apply_corrections,
    ionospheric_delay,
    observation_weight,
    tropospheric_delay,
    variance_factor,
)
from canyonnav.nlos import CNLOS, FNLOS, LOS, VisibilityVerdict

WP = WeightParams()


def test_variance_at_threshold_zenith():
    assert variance_factor(math.pi / 2, 50.0, WP) == pytest.approx(1.0)


def test_variance_at_threshold_30deg():
    assert variance_factor(math.radians(30.0), 50.0, WP) == pytest.approx(4.0)


def test_variance_at_floor():
    # direct numeric evaluation of the piecewise expression at the floor
    t, f, a, amp = 50.0, 20.0, 30.0, 30.0
    snr_term = 10.0 ** (-(f - t) / a) * (
        (amp / 10.0 ** (-(f - t) / a) - 1.0) * (f - t) / (f - t) + 1.0
    )
    expected = snr_term / math.sin(math.radians(30.0)) ** 2
    assert expected == pytest.approx(120.0)
    assert variance_factor(math.radians(30.0), 20.0, WP) == pytest.approx(120.0)
    # below the floor the SNR clamps
    assert variance_factor(math.radians(30.0), 5.0, WP) == pytest.approx(120.0)


def test_variance_continuous_at_threshold():
    eps = 1e-9
    lo = variance_factor(0.9, 50.0 - eps, WP)
    hi = variance_factor(0.9, 50.0, WP)
    assert lo == pytest.approx(hi, rel=1e-6)


@settings(max_examples=200, deadline=None)
@given(snr=st.floats(20.0, 50.0), el=st.floats(0.02, math.pi / 2))
def test_variance_at_least_one(snr, el):
    assert variance_factor(el, snr, WP) >= 1.0 - 1e-12


def test_variance_monotone_in_snr_and_elevation():
    snrs = np.linspace(20.0, 50.0, 40)
    vals = [variance_factor(0.7, s, WP) for s in snrs]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    els = np.linspace(0.05, math.pi / 2, 40)
    vals = [variance_factor(e, 35.0, WP) for e in els]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_variance_rejects_horizon():
    with pytest.raises(DegenerateElevation):
        variance_factor(0.0, 45.0, WP)


def test_weight_trivial_cases():
    assert observation_weight(LOS, math.pi / 2, 50.0, WP) == pytest.approx(1.0)
    wp4 = WeightParams(nlos_scale=4.0)
    assert observation_weight(FNLOS, math.pi / 2, 50.0, wp4) == pytest.approx(0.25)


def test_cnlos_weight_equals_los_weight():
    for el, snr in [(0.3, 33.0), (0.9, 41.0), (1.2, 48.0)]:
        assert observation_weight(CNLOS, el, snr, WP) == observation_weight(
            LOS, el, snr, WP
        )


@settings(max_examples=100, deadline=None)
@given(el=st.floats(math.radians(1.0), math.pi / 2), snr=st.floats(0.0, 60.0))
def test_fnlos_weight_is_scaled_los_weight(el, snr):
    w_los = observation_weight(LOS, el, snr, WP)
    w_f = observation_weight(FNLOS, el, snr, WP)
    assert w_f == pytest.approx(w_los / WP.nlos_scale, rel=1e-12)
    assert 0.0 < w_f < float("inf")


SEA_LEVEL = AtmosphereContext((0,) * 4, (0,) * 4, GeodeticPosition(0.0, 0.0, 0.0), 43200.0)


def test_tropo_zenith_band():
    delay = tropospheric_delay(SEA_LEVEL, math.pi / 2)
    assert 2.0 < delay < 2.6
    # frozen value of the closed form at the standard atmosphere
    assert delay == pytest.approx(2.43353457, abs=1e-6)


def test_tropo_monotone_in_elevation():
    assert tropospheric_delay(SEA_LEVEL, math.radians(15.0)) > tropospheric_delay(
        SEA_LEVEL, math.radians(60.0)
    )


def test_tropo_decreases_with_height():
    high = AtmosphereContext((0,) * 4, (0,) * 4, GeodeticPosition(0.0, 0.0, 5000.0), 0.0)
    for el in (math.radians(15.0), math.radians(60.0), math.pi / 2):
        assert tropospheric_delay(high, el) < tropospheric_delay(SEA_LEVEL, el)


def test_tropo_mask():
    with pytest.raises(BelowMask):
        tropospheric_delay(SEA_LEVEL, math.radians(0.5))


def test_iono_zero_coefficients_floor():
    delay = ionospheric_delay(SEA_LEVEL, math.pi / 2, 0.0)
    assert delay == pytest.approx(SPEED_OF_LIGHT * 5e-9, abs=0.01)


def test_iono_obliquity():
    zen = ionospheric_delay(SEA_LEVEL, math.pi / 2, 0.0)
    slant = ionospheric_delay(SEA_LEVEL, math.radians(10.0), 0.0)
    assert slant > zen


def _reference_klobuchar(alpha, beta, lat_sc, lon_sc, el_sc, az_rad, gps_sod):
    """Independent transcription of the broadcast ionosphere algorithm,
    everything in semicircles; returns the L1 delay in seconds."""
    psi = 0.0137 / (el_sc + 0.11) - 0.022
    phi_i = lat_sc + psi * math.cos(az_rad)
    phi_i = max(min(phi_i, 0.416), -0.416)
    lam_i = lon_sc + psi * math.sin(az_rad) / math.cos(phi_i * math.pi)
    phi_m = phi_i + 0.064 * math.cos((lam_i - 1.617) * math.pi)
    t = 4.32e4 * lam_i + gps_sod
    while t >= 86400.0:
        t -= 86400.0
    while t < 0.0:
        t += 86400.0
    f = 1.0 + 16.0 * (0.53 - el_sc) ** 3
    amp = alpha[0] + alpha[1] * phi_m + alpha[2] * phi_m**2 + alpha[3] * phi_m**3
    per = beta[0] + beta[1] * phi_m + beta[2] * phi_m**2 + beta[3] * phi_m**3
    amp = max(amp, 0.0)
    per = max(per, 72000.0)
    x = 2.0 * math.pi * (t - 50400.0) / per
    if abs(x) < 1.57:
        return f * (5e-9 + amp * (1.0 - x**2 / 2.0 + x**4 / 24.0))
    return f * 5e-9


def test_iono_against_reference_implementation():
    alpha = (1.118e-8, 2.98e-8, -1.79e-7, 0.0)
    beta = (1.167e5, 1.638e5, -3.28e5, -4.59e5)
    rng = np.random.default_rng(5)
    for _ in range(50):
        lat = rng.uniform(-1.2, 1.2)
        lon = rng.uniform(-math.pi, math.pi)
        el = rng.uniform(math.radians(5.0), math.pi / 2)
        az = rng.uniform(0.0, 2 * math.pi)
        sod = rng.uniform(0.0, 86400.0)
        ctx = AtmosphereContext(alpha, beta, GeodeticPosition(lat, lon, 0.0), sod)
        ours = ionospheric_delay(ctx, el, az)
        ref = SPEED_OF_LIGHT * _reference_klobuchar(
            alpha, beta, lat / math.pi, lon / math.pi, el / math.pi, az, sod
        )
        assert ours == pytest.approx(ref, abs=0.01)


def _obs(rho=2.2e7 + 1234.5, clock=321.0):
    return SatelliteObservation(
        0.0, "G01", "GPS", rho, 44.0, EcefPosition(2.6e7, 0.0, 0.0), clock
    )


def test_corrections_trivial():
    obs = _obs(rho=2.2e7, clock=0.0)
    assert apply_corrections(obs, VisibilityVerdict("G01", LOS), 0.0, 0.0) == 2.2e7


def test_corrections_subtract_delay_for_cnlos_only():
    obs = _obs()
    v_c = VisibilityVerdict(
        "G01", CNLOS, reflecting_point_enu=np.array([0.0, 5.0, 1.0]), nlos_delay_m=10.08
    )
    v_f = VisibilityVerdict("G01", FNLOS)
    base = obs.pseudorange_m + obs.sat_clock_bias_m
    assert apply_corrections(obs, v_c, 0.0, 0.0) == pytest.approx(base - 10.08)
    assert apply_corrections(obs, v_f, 0.0, 0.0) == pytest.approx(base)


def test_corrections_affine_in_delays():
    obs = _obs()
    v = VisibilityVerdict("G01", LOS)
    base = apply_corrections(obs, v, 0.0, 0.0)
    for probe in (0.5, 1.0, 7.25):
        assert apply_corrections(obs, v, probe, 0.0) == pytest.approx(base - probe)
        assert apply_corrections(obs, v, 0.0, probe) == pytest.approx(base - probe)
        assert apply_corrections(obs, v, probe, probe) == pytest.approx(base - 2 * probe)
