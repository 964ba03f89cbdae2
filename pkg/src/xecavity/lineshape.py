"""Line broadening and Voigt profiles.

All widths are full widths at half maximum in MHz; profiles are densities
per MHz. The Voigt profile is evaluated through the Faddeeva function
``w(z)``::

    V(x; sigma, gamma) = Re w((x + i*gamma) / (sigma*sqrt(2))) / (sigma*sqrt(2*pi))

with sigma the Gaussian standard deviation and gamma the Lorentzian
half width.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants as const
from scipy.special import wofz

from .errors import ValidationError

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_SQRTPI = math.sqrt(math.pi)


@dataclass(frozen=True)
class ThermalConditions:
    temperature: float = 300.0  # K
    helium_pressure: float = 0.9  # torr
    xenon_pressure: float = 0.1  # torr

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValidationError("must be > 0", "conditions.temperature")
        if self.helium_pressure < 0 or self.xenon_pressure < 0:
            raise ValidationError("pressures must be >= 0", "conditions")


@dataclass(frozen=True)
class BroadeningParams:
    # calibrated default, see xecavity.calibration
    natural_fwhm: float = 334.39  # MHz
    pressure_coeff: float = 20.0  # MHz/torr of helium
    pressure_shift: float = 0.0  # MHz/torr of helium, off by default

    def __post_init__(self):
        if self.natural_fwhm < 0 or self.pressure_coeff < 0:
            raise ValidationError("broadening parameters must be >= 0", "broadening")


@dataclass(frozen=True)
class LineshapeQuery:
    detuning: float  # MHz from line center
    gaussian_fwhm: float
    lorentzian_fwhm: float


def doppler_fwhm(center_frequency, mass, temperature):
    """Doppler FWHM in MHz for a line at ``center_frequency`` THz.

    ``mass`` is in atomic mass units, ``temperature`` in kelvin.
    """
    nu = np.asarray(center_frequency, dtype=float)
    m = np.asarray(mass, dtype=float)
    t = np.asarray(temperature, dtype=float)
    if np.any(nu <= 0) or np.any(m <= 0) or np.any(t <= 0):
        raise ValidationError("frequency, mass and temperature must be > 0",
                              "doppler_fwhm")
    ratio = 8.0 * math.log(2.0) * const.k * t / (m * const.atomic_mass * const.c**2)
    out = nu * 1e6 * np.sqrt(ratio)
    return float(out) if out.ndim == 0 else out


def homogeneous_fwhm(params: BroadeningParams, conditions: ThermalConditions) -> float:
    return params.natural_fwhm + params.pressure_coeff * conditions.helium_pressure


def _check_widths(g, l):
    if np.any(g < 0) or np.any(l < 0):
        raise ValidationError("widths must be >= 0", "voigt")
    if np.any((g == 0) & (l == 0)):
        raise ValidationError("gaussian and lorentzian widths are both zero", "voigt")


def voigt(detuning, gaussian_fwhm, lorentzian_fwhm):
    """Area-normalised Voigt profile (per MHz).

    Accepts scalars or broadcastable arrays. Either width may be zero (the
    closed-form Gaussian or Lorentzian is returned), but not both.
    """
    x = np.asarray(detuning, dtype=float)
    g = np.asarray(gaussian_fwhm, dtype=float)
    l = np.asarray(lorentzian_fwhm, dtype=float)
    _check_widths(g, l)
    x, g, l = np.broadcast_arrays(x, g, l)
    out = np.empty(x.shape)

    gauss = l == 0
    lor = (g == 0) & ~gauss
    mixed = ~(gauss | lor)
    if gauss.any():
        s = g[gauss] * FWHM_TO_SIGMA
        out[gauss] = np.exp(-0.5 * (x[gauss] / s) ** 2) / (s * _SQRT2PI)
    if lor.any():
        hw = 0.5 * l[lor]
        out[lor] = hw / (math.pi * (x[lor] ** 2 + hw**2))
    if mixed.any():
        s = g[mixed] * FWHM_TO_SIGMA
        z = (x[mixed] + 0.5j * l[mixed]) / (s * _SQRT2)
        out[mixed] = wofz(z).real / (s * _SQRT2PI)
    return float(out) if out.ndim == 0 else out


def voigt_query(query: LineshapeQuery):
    return voigt(query.detuning, query.gaussian_fwhm, query.lorentzian_fwhm)


def voigt_peak(gaussian_fwhm, lorentzian_fwhm):
    return voigt(0.0, gaussian_fwhm, lorentzian_fwhm)


def unit_voigt(detuning, gaussian_fwhm, lorentzian_fwhm, derivatives=False):
    """Voigt profile scaled to 1 at zero detuning.

    With ``derivatives=True`` also returns the partial derivatives with
    respect to detuning, gaussian FWHM and lorentzian FWHM, computed from
    w'(z) = -2 z w(z) + 2i/sqrt(pi). Both widths must be positive here.
    """
    x = np.asarray(detuning, dtype=float)
    g = float(gaussian_fwhm)
    l = float(lorentzian_fwhm)
    if g <= 0 or l <= 0:
        raise ValidationError("unit_voigt needs positive widths", "unit_voigt")
    s = g * FWHM_TO_SIGMA
    a = s * _SQRT2
    z = (x + 0.5j * l) / a
    z0 = 0.5j * l / a
    w = wofz(z)
    w0 = wofz(z0)
    val = w.real / w0.real
    if not derivatives:
        return val

    def dw(zz, ww):
        return -2.0 * zz * ww + 2j / _SQRTPI

    dwz = dw(z, w)
    dwz0 = dw(z0, w0)
    # z = (x + i l/2) / a ;  a = g * FWHM_TO_SIGMA * sqrt(2)
    dz_dx = 1.0 / a
    dz_dl = 0.5j / a
    dz_dg = -z / g
    dz0_dl = 0.5j / a
    dz0_dg = -z0 / g

    def quotient(dnum, dden):
        return (dnum * w0.real - w.real * dden) / w0.real**2

    d_dx = (dwz * dz_dx).real / w0.real
    d_dg = quotient((dwz * dz_dg).real, (dwz0 * dz0_dg).real)
    d_dl = quotient((dwz * dz_dl).real, (dwz0 * dz0_dl).real)
    return val, d_dx, d_dg, d_dl


def resonant_cross_section(wavelength_nm):
    """Peak cross section 3 lambda^2 / (2 pi) of a closed two-level line, cm^2."""
    if not wavelength_nm > 0:
        raise ValidationError("wavelength must be > 0", "wavelength")
    lam = wavelength_nm * 1e-7
    return 3.0 * lam**2 / (2.0 * math.pi)


def integrated_cross_section(relative_strength, natural_fwhm, wavelength_nm):
    """Frequency-integrated cross section, cm^2 * MHz.

    A purely naturally broadened line with unit strength peaks at sigma_0.
    """
    return resonant_cross_section(wavelength_nm) * 0.5 * math.pi * natural_fwhm * relative_strength


def line_widths(catalog, conditions: ThermalConditions, broadening: BroadeningParams):
    """(gaussian_fwhm, lorentzian_fwhm, centers_mhz) arrays over the catalog lines.

    Centers are MHz offsets from the catalog reference, including any
    pressure shift.
    """
    centers = catalog.offsets + broadening.pressure_shift * conditions.helium_pressure
    nu = catalog.reference_frequency + centers * 1e-6
    g = doppler_fwhm(nu, catalog.masses, conditions.temperature)
    l = np.full(len(catalog), homogeneous_fwhm(broadening, conditions))
    return np.atleast_1d(g), l, centers


def cross_section(line, catalog, conditions: ThermalConditions,
                  broadening: BroadeningParams, frequency):
    """Absorption cross section (cm^2) of one line at absolute ``frequency`` (THz).

    Abundance weighting is not applied here.
    """
    if line not in catalog.lines:
        from .errors import CatalogError
        raise CatalogError(f"line {line.label} is not in the catalog")
    catalog.check_coverage(frequency)
    center = line.offset + broadening.pressure_shift * conditions.helium_pressure
    nu0 = catalog.reference_frequency + center * 1e-6
    g = doppler_fwhm(nu0, line.isotope, conditions.temperature)
    l = homogeneous_fwhm(broadening, conditions)
    det = (np.asarray(frequency, dtype=float) - catalog.reference_frequency) * 1e6 - center
    s = integrated_cross_section(line.relative_strength, broadening.natural_fwhm,
                                 catalog.wavelength)
    return s * voigt(det, g, l)
