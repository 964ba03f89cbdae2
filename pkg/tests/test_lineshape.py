import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from xecavity.errors import CatalogError, ValidationError
from xecavity.lineshape import (BroadeningParams, LineshapeQuery, ThermalConditions,
                                cross_section, doppler_fwhm, homogeneous_fwhm,
                                integrated_cross_section, resonant_cross_section,
                                unit_voigt, voigt, voigt_query)

# CODATA 2018, typed in rather than taken from scipy
KB = 1.380649e-23
AMU = 1.66053906660e-27
C = 299792458.0

widths = st.floats(1.0, 2000.0)


def convolution(x, g, l):
    """Gaussian (x) Lorentzian by adaptive quadrature over the Gaussian variable."""
    s = g / (2 * math.sqrt(2 * math.log(2)))
    hw = l / 2

    def f(t):
        gauss = math.exp(-0.5 * (t / s) ** 2) / (s * math.sqrt(2 * math.pi))
        return gauss * hw / (math.pi * ((x - t) ** 2 + hw * hw))

    pts = sorted({-8 * s, x, 8 * s})
    pts = [p for p in pts if -8 * s <= p <= 8 * s]
    val, _ = integrate.quad(f, -8 * s, 8 * s, points=pts[1:-1] or None,
                            epsabs=0, epsrel=1e-12, limit=500)
    return val


def test_doppler_closed_form():
    nu = 364.25e12
    expect = nu * math.sqrt(8 * math.log(2) * KB * 300 / (131 * AMU * C * C)) * 1e-6
    assert doppler_fwhm(364.25, 131, 300) == pytest.approx(expect, rel=1e-7)
    assert doppler_fwhm(364.25, 131, 300) == pytest.approx(394, abs=1)


def test_doppler_matches_velocity_histogram():
    rng = np.random.default_rng(3)
    v = rng.normal(0.0, math.sqrt(KB * 300 / (131 * AMU)), 2_000_000)
    shifts = 364.25e6 * v / C  # MHz
    hist, edges = np.histogram(shifts, bins=400, range=(-600, 600), density=True)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = hist.max() / 2
    k = np.nonzero(hist >= half)[0]
    i, j = k[0], k[-1]
    left = np.interp(half, hist[i - 1:i + 1], mid[i - 1:i + 1])
    right = np.interp(half, hist[j:j + 2][::-1], mid[j:j + 2][::-1])
    fwhm_hist = right - left
    assert fwhm_hist == pytest.approx(doppler_fwhm(364.25, 131, 300), rel=0.01)
    fwhm_std = shifts.std() * 2 * math.sqrt(2 * math.log(2))
    assert fwhm_std == pytest.approx(doppler_fwhm(364.25, 131, 300), rel=2e-3)


def test_doppler_scaling_and_limits():
    assert doppler_fwhm(364.0, 132, 1200) == pytest.approx(2 * doppler_fwhm(364.0, 132, 300))
    assert doppler_fwhm(364.0, 132, 1e-12) < 1e-3
    with pytest.raises(ValidationError):
        doppler_fwhm(364.0, 132, 0)
    with pytest.raises(ValidationError):
        doppler_fwhm(364.0, -1, 300)


def test_homogeneous_width():
    cond = ThermalConditions(300, 0.9, 0.1)
    assert homogeneous_fwhm(BroadeningParams(5, 20), cond) == pytest.approx(23)
    assert homogeneous_fwhm(BroadeningParams(5, 20), ThermalConditions(300, 0, 0.1)) == 5
    assert homogeneous_fwhm(BroadeningParams(5, 0), ThermalConditions(300, 50, 0.1)) == 5


def test_parameter_validation():
    with pytest.raises(ValidationError):
        ThermalConditions(temperature=0)
    with pytest.raises(ValidationError):
        ThermalConditions(helium_pressure=-1)
    with pytest.raises(ValidationError):
        BroadeningParams(natural_fwhm=-1)


def test_voigt_limits():
    g = 394.0
    assert voigt(0, g, 0) == pytest.approx(2 * math.sqrt(math.log(2) / math.pi) / g, rel=1e-14)
    assert voigt(0, 0, 23.0) == pytest.approx(2 / (math.pi * 23.0), rel=1e-14)
    # a vanishing gaussian through the wofz path approaches the lorentzian
    assert voigt(0, 1e-6, 23.0) == pytest.approx(2 / (math.pi * 23.0), rel=1e-6)
    with pytest.raises(ValidationError):
        voigt(0, 0, 0)
    with pytest.raises(ValidationError):
        voigt(0, -1, 5)


def test_voigt_against_quadrature():
    assert voigt(100, 394, 23) == pytest.approx(convolution(100, 394, 23), rel=1e-6)
    assert voigt_query(LineshapeQuery(100, 394, 23)) == voigt(100, 394, 23)


def test_voigt_area_random_pairs():
    rng = np.random.default_rng(12)
    for g, l in rng.uniform(1, 1000, size=(100, 2)):
        w = max(g, l)
        area = sum(integrate.quad(voigt, a, b, args=(g, l), epsabs=0, epsrel=1e-10,
                                  limit=400)[0]
                   for a, b in [(-np.inf, -50 * w), (-50 * w, 0), (0, 50 * w),
                                (50 * w, np.inf)])
        assert area == pytest.approx(1, abs=1e-6)


@given(widths, widths, st.floats(0, 5000))
def test_voigt_even_positive_unimodal(g, l, x):
    v = voigt(x, g, l)
    assert v > 0
    assert voigt(-x, g, l) == pytest.approx(v, rel=1e-12)
    assert v <= voigt(0, g, l) * (1 + 1e-12)
    assert voigt(x * 1.1 + 1e-3, g, l) <= v * (1 + 1e-12)


@given(widths, widths)
def test_voigt_quadrature_property(g, l):
    x = 0.7 * max(g, l)
    assert voigt(x, g, l) == pytest.approx(convolution(x, g, l), rel=1e-6)


@given(widths, widths, st.floats(-3000, 3000))
def test_unit_voigt_derivatives(g, l, x):
    v, dx, dg, dl = unit_voigt(x, g, l, derivatives=True)
    assert v == pytest.approx(voigt(x, g, l) / voigt(0, g, l), rel=1e-12)
    for val, fn, h in [(dx, lambda e: unit_voigt(x + e, g, l), 1e-4 * max(g, l)),
                       (dg, lambda e: unit_voigt(x, g + e, l), 1e-5 * g),
                       (dl, lambda e: unit_voigt(x, g, l + e), 1e-5 * l)]:
        fd = (fn(h) - fn(-h)) / (2 * h)
        assert val == pytest.approx(fd, rel=1e-4, abs=1e-7 / min(g, l))


def test_unit_voigt_needs_positive_widths():
    with pytest.raises(ValidationError):
        unit_voigt(0.0, 0.0, 10.0)


def test_resonant_cross_section():
    lam = 823e-7
    assert resonant_cross_section(823) == pytest.approx(3 * lam * lam / (2 * math.pi))
    assert resonant_cross_section(823) == pytest.approx(3.234e-9, rel=1e-3)
    with pytest.raises(ValidationError):
        resonant_cross_section(0)


def _anchor(catalog):
    return catalog.find_line(129, Fraction(5, 2), Fraction(5, 2))


def test_cross_section_area_independent_of_doppler(catalog):
    line = _anchor(catalog)
    br = BroadeningParams(natural_fwhm=5.0, pressure_coeff=0.0)
    nu = catalog.reference_frequency + np.linspace(-19000, 19000, 380001) * 1e-6
    areas = []
    for temp in (100.0, 300.0, 900.0):
        sig = cross_section(line, catalog, ThermalConditions(temp, 0.0, 0.1), br, nu)
        areas.append(integrate.trapezoid(sig, nu * 1e6))
    expect = integrated_cross_section(line.relative_strength, 5.0, catalog.wavelength)
    assert areas == pytest.approx([expect] * 3, rel=1e-3)


def test_doppler_dominated_peak(catalog):
    line = _anchor(catalog)
    cond = ThermalConditions(300.0, 0.0, 0.1)
    br = BroadeningParams(natural_fwhm=1.0, pressure_coeff=0.0)
    g = doppler_fwhm(catalog.line_frequency(line), 129, 300.0)
    peak = cross_section(line, catalog, cond, br, catalog.line_frequency(line))
    approx = (resonant_cross_section(823) * math.sqrt(math.pi * math.log(2)) * 1.0 / g
              * line.relative_strength)
    assert peak == pytest.approx(approx, rel=5e-3)


def test_peak_falls_with_doppler_width(catalog):
    line = _anchor(catalog)
    br = BroadeningParams()
    f0 = catalog.line_frequency(line)
    peaks = [cross_section(line, catalog, ThermalConditions(t), br, f0)
             for t in (50, 150, 300, 600, 1200)]
    assert all(a > b for a, b in zip(peaks, peaks[1:]))


def test_cross_section_errors(catalog):
    line = _anchor(catalog)
    with pytest.raises(CatalogError):
        cross_section(line, catalog, ThermalConditions(), BroadeningParams(), 360.0)
    sub = catalog.restrict(lambda ln: ln.isotope == 132)
    with pytest.raises(CatalogError):
        cross_section(line, sub, ThermalConditions(), BroadeningParams(), 364.097)
