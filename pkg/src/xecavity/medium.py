"""Saturable absorption coefficient of the metastable xenon gas.

``alpha(frequency, intensity, medium, catalog)`` sums over catalog lines.
Three saturation models are available:

homogeneous
    Every atom is saturated as if at rest by the standing-wave field:
    per line the Lorentzian component is power broadened to
    ``gamma * sqrt(1 + I/I_sw)`` and scaled by ``1/sqrt(1 + I/I_sw)``, with
    ``I_sw = I_sat / 2`` because both running components of the standing
    wave drive the same atoms. With ``power_broadening=False`` this reduces
    to ``alpha_0 / (1 + I/I_sw)``.
inhomogeneous
    ``alpha_0 / sqrt(1 + I/I_sat)`` per line.
velocity_selective
    Explicit Maxwell-Boltzmann velocity integral with standing-wave hole
    burning, ``s(v) = (I/I_sat) [L(d - kv) + L(d + kv)] / L(0)``.

``linear`` (no saturation) is kept for cross-checks of the cavity solver.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as const

from .errors import QuadratureError, ValidationError
from .lineshape import (FWHM_TO_SIGMA, BroadeningParams, ThermalConditions,
                        integrated_cross_section, line_widths, voigt)


class SaturationKind(str, enum.Enum):
    HOMOGENEOUS = "homogeneous"
    INHOMOGENEOUS = "inhomogeneous"
    VELOCITY_SELECTIVE = "velocity_selective"
    LINEAR = "linear"


@dataclass(frozen=True)
class SaturationModel:
    kind: SaturationKind = SaturationKind.VELOCITY_SELECTIVE
    tolerance: float = 1e-4
    power_broadening: bool = True
    span_sigmas: float = 5.0
    verify: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", SaturationKind(self.kind))
        if not 0 < self.tolerance <= 1e-2:
            raise ValidationError("must be in (0, 1e-2]", "model.tolerance")
        if not self.span_sigmas > 0:
            raise ValidationError("must be > 0", "model.span_sigmas")


@dataclass(frozen=True)
class MediumParams:
    # calibrated default, see xecavity.calibration
    metastable_density: float = 1.8347e6  # cm^-3
    path_length: float = 2.4983  # cm
    conditions: ThermalConditions = field(default_factory=ThermalConditions)
    broadening: BroadeningParams = field(default_factory=BroadeningParams)
    model: SaturationModel = field(default_factory=SaturationModel)
    pump_scale: tuple | None = None  # one factor per catalog line

    def __post_init__(self):
        if self.metastable_density < 0:
            raise ValidationError("must be >= 0", "medium.metastable_density")
        if not self.path_length > 0:
            raise ValidationError("must be > 0", "medium.path_length")
        if self.pump_scale is not None:
            ps = tuple(float(p) for p in self.pump_scale)
            if any(not 0.0 <= p <= 1.0 for p in ps):
                raise ValidationError("entries must lie in [0, 1]", "medium.pump_scale")
            object.__setattr__(self, "pump_scale", ps)

    def pump_factors(self, catalog):
        if self.pump_scale is None:
            return np.ones(len(catalog))
        if len(self.pump_scale) != len(catalog):
            raise ValidationError(
                f"{len(self.pump_scale)} factors for {len(catalog)} lines",
                "medium.pump_scale")
        return np.asarray(self.pump_scale)


@dataclass(frozen=True)
class AbsorptionSample:
    frequency: float  # THz
    intensity: float  # W/cm^2
    alpha: float  # cm^-1
    single_pass_od: float


def saturation_intensity(natural_fwhm, wavelength):
    """Two-level saturation intensity pi h c Gamma / (3 lambda^3) in W/cm^2.

    ``natural_fwhm`` in MHz (Gamma = 2 pi * natural_fwhm), ``wavelength`` in nm.
    """
    if not natural_fwhm > 0 or not wavelength > 0:
        raise ValidationError("linewidth and wavelength must be > 0",
                              "saturation_intensity")
    gamma = 2.0 * math.pi * natural_fwhm * 1e6
    lam = wavelength * 1e-9
    return math.pi * const.h * const.c * gamma / (3.0 * lam**3) * 1e-4


class _LineTable:
    """Per-line arrays shared by every alpha evaluation."""

    def __init__(self, medium: MediumParams, catalog):
        g, l, centers = line_widths(catalog, medium.conditions, medium.broadening)
        ab = np.array([catalog._abundance[ln.isotope] for ln in catalog.lines])
        strengths = np.array([ln.relative_strength for ln in catalog.lines])
        s_int = integrated_cross_section(strengths, medium.broadening.natural_fwhm,
                                         catalog.wavelength)
        self.gaussian = g
        self.lorentzian = l
        self.centers = centers
        self.amplitude = (medium.metastable_density * ab * s_int
                          * medium.pump_factors(catalog))
        self.reference = catalog.reference_frequency
        nat = medium.broadening.natural_fwhm
        self.i_sat = saturation_intensity(nat, catalog.wavelength) if nat > 0 else math.inf

    def detuning(self, frequency):
        f = np.asarray(frequency, dtype=float)
        return (f[..., None] - self.reference) * 1e6 - self.centers

    def per_line_unsaturated(self, det):
        return self.amplitude * voigt(det, self.gaussian, self.lorentzian)


def unsaturated_alpha(frequency, medium: MediumParams, catalog):
    """Small-signal absorption coefficient (cm^-1) at absolute ``frequency`` (THz)."""
    catalog.check_coverage(frequency)
    tab = _LineTable(medium, catalog)
    out = tab.per_line_unsaturated(tab.detuning(frequency)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def alpha(frequency, intensity, medium: MediumParams, catalog):
    """Saturated absorption coefficient (cm^-1).

    ``frequency`` (THz) and ``intensity`` (W/cm^2, standing-wave peak) may be
    broadcastable arrays.
    """
    catalog.check_coverage(frequency)
    f, i = np.broadcast_arrays(np.asarray(frequency, dtype=float),
                               np.asarray(intensity, dtype=float))
    if np.any(i < 0):
        raise ValidationError("intensity must be >= 0", "alpha")
    tab = _LineTable(medium, catalog)
    out = _alpha(tab, medium.model, f.ravel(), i.ravel()).reshape(f.shape)
    return float(out) if out.ndim == 0 else out


def single_pass_od(frequency, intensity, medium: MediumParams, catalog):
    return alpha(frequency, intensity, medium, catalog) * medium.path_length


def absorption_sample(frequency, intensity, medium, catalog) -> AbsorptionSample:
    a = alpha(float(frequency), float(intensity), medium, catalog)
    return AbsorptionSample(float(frequency), float(intensity), a,
                            a * medium.path_length)


def _alpha(tab: _LineTable, model: SaturationModel, f, i):
    det = tab.detuning(f)
    a0 = tab.per_line_unsaturated(det)
    if model.kind is SaturationKind.LINEAR:
        return a0.sum(axis=-1)
    x = (i / tab.i_sat)[:, None]
    if model.kind is SaturationKind.INHOMOGENEOUS:
        return (a0 / np.sqrt(1.0 + x)).sum(axis=-1)
    if model.kind is SaturationKind.HOMOGENEOUS:
        x_sw = 2.0 * x
        if not model.power_broadening:
            return (a0 / (1.0 + x_sw)).sum(axis=-1)
        root = np.sqrt(1.0 + x_sw)
        sat = tab.amplitude * voigt(det, tab.gaussian, tab.lorentzian * root) / root
        return np.where(x_sw == 0, a0, sat).sum(axis=-1)
    return (a0 * _velocity_factor(tab, model, det, x)).sum(axis=-1)


def _velocity_factor(tab: _LineTable, model: SaturationModel, det, x):
    """Ratio of saturated to unsaturated velocity integrals, per point and line."""
    s = np.broadcast_to(x, det.shape)
    out = np.ones(det.shape)
    live = s > 0
    if not live.any():
        return out
    sigma = np.broadcast_to(tab.gaussian * FWHM_TO_SIGMA, det.shape)[live]
    hw = np.broadcast_to(0.5 * tab.lorentzian, det.shape)[live]
    out[live] = _velocity_ratio(det[live], s[live], sigma, hw, model)
    return out


def _trapz_ratio(det, s, sigma, hw, half_width, n_int):
    t = np.linspace(-1.0, 1.0, n_int + 1) * half_width[:, None]
    w = np.exp(-0.5 * t * t)
    w[:, 0] *= 0.5
    w[:, -1] *= 0.5
    u = sigma[:, None] * t
    d = det[:, None]
    hw2 = (hw * hw)[:, None]
    lm = hw2 / ((d - u) ** 2 + hw2)
    lp = hw2 / ((d + u) ** 2 + hw2)
    den = lm * w
    num = den / (1.0 + s[:, None] * (lm + lp))
    return num.sum(axis=-1) / den.sum(axis=-1)


# A resonance within this many sigmas beyond the window edge still carries
# weight above ~1e-12 of the integral; the window is stretched to cover it.
EDGE_MARGIN = 2.5


def _window(det, sigma, span):
    """Half width of the velocity window, in Doppler sigmas, per pair."""
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.abs(det) / sigma
    x = np.where(np.isfinite(x), x, np.inf)
    near = x <= span + EDGE_MARGIN
    return np.where(near, np.maximum(span, x + EDGE_MARGIN), span)


def _intervals(det, sigma, hw, half_width, tol):
    """Trapezoid intervals for each pair's velocity window.

    The integrand has Lorentzian poles a distance ``hw`` (or farther, for a
    resonance outside the window) from the real axis; the trapezoid error
    then falls off as exp(-2 pi d / h), which fixes h for the requested
    tolerance. The grid never depends on intensity, so alpha stays smooth
    in I.
    """
    gap = np.maximum(np.abs(det) - half_width * sigma, 0.0)
    width = hw + 0.5 * gap
    with np.errstate(divide="ignore", invalid="ignore"):
        h = 2.0 * math.pi * width / (sigma * math.log(100.0 / tol))
        n = 2.0 * half_width / h
    n = np.where(np.isfinite(n), n, 16.0)
    n = np.maximum(n, 16.0)
    # half-octave buckets keep the number of distinct grids small
    k = np.ceil(2.0 * np.log2(n / 16.0))
    return (8 * np.round(2.0 * 2.0 ** (k / 2.0))).astype(np.int64)


MAX_INTERVALS = 1 << 16


def _velocity_ratio(det, s, sigma, hw, model, chunk=1 << 18):
    half = _window(det, sigma, model.span_sigmas)
    n_all = _intervals(det, sigma, hw, half, model.tolerance)
    if n_all.max() > MAX_INTERVALS:
        worst = int(np.argmax(n_all))
        h = 2.0 * half[worst] / MAX_INTERVALS * sigma[worst]
        achieved = 100.0 * math.exp(-2.0 * math.pi * hw[worst] / h)
        raise QuadratureError("velocity grid exceeds the interval limit",
                              residual=achieved, context=f"requested {model.tolerance:g}")
    out = np.empty(det.shape)
    for n in np.unique(n_all):
        rows = np.nonzero(n_all == n)[0]
        step = max(1, chunk // int(n))
        for k in range(0, rows.size, step):
            idx = rows[k:k + step]
            args = (det[idx], s[idx], sigma[idx], hw[idx], half[idx])
            val = _trapz_ratio(*args, int(n))
            if model.verify:
                check = _trapz_ratio(*args, 2 * int(n))
                err = np.abs(check - val) / np.maximum(check, 1e-300)
                if np.any(err > model.tolerance):
                    raise QuadratureError(
                        "velocity quadrature did not reach tolerance",
                        residual=float(err.max()),
                        context=f"requested {model.tolerance:g}")
            out[idx] = val
    return out
