"""Pseudorange measurement modeling: variances, weights and corrections.

The variance model grows as 1/sin^2(elevation) and, below an SNR
threshold, by an exponential SNR term; weighted least squares consumes the
inverse of that variance. Blocked satellites whose reflector could not be
found keep their measurement but get their variance inflated by a scale
factor. Atmospheric delays use the standard Saastamoinen (troposphere) and
broadcast-coefficient Klobuchar (ionosphere, L1) closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .frames import EcefPosition, GeodeticPosition
from .nlos import CNLOS, FNLOS, LOS, VisibilityVerdict

SPEED_OF_LIGHT = 299792458.0  # [m/s]

CONSTELLATIONS = ("GPS", "GLONASS", "BeiDou", "Other")


class DegenerateElevation(ValueError):
    """Elevation at or below the horizon where a variance is undefined."""


class BelowMask(ValueError):
    """Elevation below the model's validity mask."""


@dataclass(frozen=True)
class SatelliteObservation:
    """One satellite's raw measurement at one epoch.

    ``sat_pos_ecef`` is the satellite ECEF position; ``sat_clock_bias_m``
    is the broadcast satellite clock bias already scaled to meters.
    """

    epoch_s: float
    sat_id: str
    constellation: str
    pseudorange_m: float
    snr_dbhz: float
    sat_pos_ecef: EcefPosition
    sat_clock_bias_m: float


@dataclass(frozen=True)
class WeightParams:
    """SNR/elevation variance model settings.

    ``snr_threshold_dbhz`` (T) is where the SNR factor reaches 1,
    ``snr_floor_dbhz`` (F) where it reaches ``amplitude`` (A); ``decay``
    (a) sets the exponential slope between them. ``nlos_scale`` inflates
    the variance of de-weighted blocked satellites and must be >= 1.
    """

    snr_threshold_dbhz: float = 50.0
    snr_floor_dbhz: float = 20.0
    amplitude: float = 30.0
    decay: float = 30.0
    nlos_scale: float = 16.0

    def __post_init__(self):
        if self.snr_floor_dbhz >= self.snr_threshold_dbhz:
            raise ValueError("snr_floor_dbhz must be below snr_threshold_dbhz")
        if self.amplitude <= 0 or self.decay <= 0:
            raise ValueError("amplitude and decay must be positive")
        if self.nlos_scale < 1.0:
            raise ValueError("nlos_scale must be >= 1 (variance inflation)")


@dataclass(frozen=True)
class AtmosphereContext:
    """Inputs shared by the atmospheric delay models."""

    klobuchar_alpha: tuple
    klobuchar_beta: tuple
    rx_geodetic: GeodeticPosition
    epoch_s: float

    def __post_init__(self):
        if len(self.klobuchar_alpha) != 4 or len(self.klobuchar_beta) != 4:
            raise ValueError("klobuchar coefficient arrays must have length 4")


def variance_factor(elevation_rad: float, snr_dbhz: float, params: WeightParams) -> float:
    """Relative pseudorange variance from elevation and SNR.

    For SNR at or above the threshold the factor is 1/sin^2(elevation).
    Below the threshold it is multiplied by

        10^(-(snr - T)/a) * ((A / 10^(-(F - T)/a) - 1) * (snr - T)/(F - T) + 1)

    which is 1 at ``snr = T`` and ``A`` at ``snr = F``. SNR below the floor
    is clamped to the floor.

    Raises
    ------
    DegenerateElevation
        If ``elevation_rad`` <= 0.
    """
    if elevation_rad <= 0.0:
        raise DegenerateElevation("elevation must be positive")
    geometry = 1.0 / math.sin(elevation_rad) ** 2
    t, f, a = params.snr_threshold_dbhz, params.snr_floor_dbhz, params.decay
    snr = max(snr_dbhz, f)
    if snr >= t:
        return geometry
    snr_term = 10.0 ** (-(snr - t) / a) * (
        (params.amplitude / 10.0 ** (-(f - t) / a) - 1.0) * (snr - t) / (f - t) + 1.0
    )
    return geometry * snr_term


def observation_weight(
    verdict_class: str, elevation_rad: float, snr_dbhz: float, params: WeightParams
) -> float:
    """Weight (inverse variance) for one measurement.

    LOS and corrected-NLOS measurements share the same rule; a blocked
    satellite with no reflector found gets its variance inflated by
    ``nlos_scale``, so its weight shrinks by the same factor.
    """
    var = variance_factor(elevation_rad, snr_dbhz, params)
    if verdict_class == FNLOS:
        var *= params.nlos_scale
    elif verdict_class not in (LOS, CNLOS):
        raise ValueError(f"bad visibility class {verdict_class!r}")
    return 1.0 / var


def tropospheric_delay(ctx: AtmosphereContext, elevation_rad: float) -> float:
    """Tropospheric slant delay [m] from the Saastamoinen zenith model.

    Standard-atmosphere pressure/temperature/humidity at the receiver
    height, zenith hydrostatic plus wet delay, mapped with 1/sin(elevation).

    Raises
    ------
    BelowMask
        If elevation is at or below 1 degree.
    """
    if elevation_rad <= math.radians(1.0):
        raise BelowMask("elevation below the 1 degree troposphere mask")
    g = ctx.rx_geodetic
    h = min(max(g.height_m, 0.0), 11000.0)
    pressure = 1013.25 * (1.0 - 2.2557e-5 * h) ** 5.2568
    temperature = 15.0 - 6.5e-3 * h + 273.15
    humidity = 0.7
    vapor = 6.108 * humidity * math.exp(
        (17.15 * temperature - 4684.0) / (temperature - 38.45)
    )
    zenith_dry = (
        0.0022768
        * pressure
        / (1.0 - 0.00266 * math.cos(2.0 * g.latitude_rad) - 0.00028 * h / 1e3)
    )
    zenith_wet = 0.002277 * (1255.0 / temperature + 0.05) * vapor
    return (zenith_dry + zenith_wet) / math.sin(elevation_rad)


def ionospheric_delay(
    ctx: AtmosphereContext, elevation_rad: float, azimuth_rad: float
) -> float:
    """Ionospheric slant delay [m] on L1 from the broadcast Klobuchar model."""
    g = ctx.rx_geodetic
    # semicircles throughout, per the broadcast model definition
    el_sc = elevation_rad / math.pi
    psi = 0.0137 / (el_sc + 0.11) - 0.022
    lat_i = g.latitude_rad / math.pi + psi * math.cos(azimuth_rad)
    lat_i = min(max(lat_i, -0.416), 0.416)
    lon_i = g.longitude_rad / math.pi + psi * math.sin(azimuth_rad) / math.cos(
        lat_i * math.pi
    )
    lat_m = lat_i + 0.064 * math.cos((lon_i - 1.617) * math.pi)
    t = (4.32e4 * lon_i + ctx.epoch_s) % 86400.0
    slant = 1.0 + 16.0 * (0.53 - el_sc) ** 3
    a = ctx.klobuchar_alpha
    b = ctx.klobuchar_beta
    amplitude = max(a[0] + lat_m * (a[1] + lat_m * (a[2] + lat_m * a[3])), 0.0)
    period = max(b[0] + lat_m * (b[1] + lat_m * (b[2] + lat_m * b[3])), 72000.0)
    x = 2.0 * math.pi * (t - 50400.0) / period
    if abs(x) < 1.57:
        delay_s = slant * (5e-9 + amplitude * (1.0 - x * x / 2.0 + x**4 / 24.0))
    else:
        delay_s = slant * 5e-9
    return SPEED_OF_LIGHT * delay_s


def apply_corrections(
    obs: SatelliteObservation,
    verdict: VisibilityVerdict,
    tropo_m: float,
    iono_m: float,
) -> float:
    """Corrected pseudorange ready for the position solver.

    Adds the satellite clock bias back, removes modeled atmospheric delays,
    and subtracts the reflection delay when the verdict carries one.
    """
    corrected = obs.pseudorange_m + obs.sat_clock_bias_m - iono_m - tropo_m
    if verdict.visibility == CNLOS:
        corrected -= verdict.nlos_delay_m
    return corrected
