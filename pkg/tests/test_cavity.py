import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from xecavity.cavity import (CavitySpec, airy_transmission, circulating_power, figures,
                             solve_steady_state, standing_wave_intensity)
from xecavity.errors import ConvergenceError, ValidationError
from xecavity.lineshape import BroadeningParams
from xecavity.medium import MediumParams, SaturationModel, alpha, unsaturated_alpha

C = 299792458.0
ANCHOR = 364.097
SPEC = CavitySpec()


def pi_finesse_spec():
    return CavitySpec(length=2.4983, mirror_transmission=math.pi / 4000 - 3.5e-5,
                      mirror_loss=3.5e-5)


def test_spec_validation():
    with pytest.raises(ValidationError):
        CavitySpec(length=0)
    with pytest.raises(ValidationError):
        CavitySpec(mirror_transmission=0)
    with pytest.raises(ValidationError):
        CavitySpec(mirror_transmission=0.009, mirror_loss=0.002)


def test_figures():
    spec = pi_finesse_spec()
    fig = figures(spec, 364.1)
    assert fig.fsr == pytest.approx(C / (2 * 2.4983e-2) * 1e-9, rel=1e-12)
    assert fig.fsr == pytest.approx(6.000, abs=5e-4)
    assert fig.finesse == pytest.approx(4000, rel=1e-12)
    assert fig.linewidth == pytest.approx(1.500, abs=5e-4)
    assert fig.linewidth == pytest.approx(fig.fsr * 1e3 / fig.finesse, rel=1e-12)
    assert fig.quality_factor == pytest.approx(364.1e6 / fig.linewidth, rel=1e-12)
    assert fig.quality_factor == pytest.approx(2.43e8, rel=5e-3)


def test_buildup_default():
    b = figures(SPEC, ANCHOR).buildup
    assert b == pytest.approx(7.5e-4 / (7.85e-4) ** 2, rel=1e-9)
    assert b == pytest.approx(1.2e3, rel=0.02)
    assert circulating_power(1.0, 0.0, SPEC) == pytest.approx(b, rel=1e-9)


def test_airy_on_resonance():
    assert airy_transmission(0.0, SPEC) == pytest.approx((7.5e-4 / 7.85e-4) ** 2, rel=1e-12)
    assert airy_transmission(0.0, SPEC) == pytest.approx(0.913, abs=5e-4)


def test_airy_shape():
    fsr = SPEC.fsr_mhz
    lw = figures(SPEC, ANCHOR).linewidth
    d = np.linspace(-fsr / 2, fsr / 2, 20001)
    t = airy_transmission(d, SPEC)
    assert np.argmin(np.abs(d)) == np.argmax(t)
    assert airy_transmission(fsr / 2, SPEC) == pytest.approx(t.min(), rel=1e-9)
    np.testing.assert_allclose(t, t[::-1], rtol=1e-12)
    assert airy_transmission(lw / 2, SPEC) == pytest.approx(0.5 * t.max(), rel=0.01)
    with pytest.raises(ValidationError):
        airy_transmission(0.0, SPEC, -0.1)


def test_circulating_power_edges():
    assert circulating_power(0.0, 3.0, SPEC, 0.01) == 0.0
    with pytest.raises(ValidationError):
        circulating_power(-1.0, 0.0, SPEC)


@given(st.floats(0, 0.05), st.floats(1e-6, 0.05), st.floats(-5, 5))
def test_buildup_falls_with_absorption(a, extra, det):
    assert circulating_power(1.0, det, SPEC, a + extra) < circulating_power(1.0, det, SPEC, a)


@given(a=st.floats(0, 0.2), det=st.floats(-3000, 3000))
def test_energy_balance(a, det):
    """Field model of the two-mirror cavity: output + reflection + losses = input."""
    tm, lm = SPEC.mirror_transmission, SPEC.mirror_loss
    r, t = math.sqrt(1 - tm - lm), math.sqrt(tm)
    half = math.exp(-a / 4)  # single-pass field attenuation
    phase = np.exp(2j * math.pi * det / SPEC.fsr_mhz)
    inside = t / (1 - r * r * half * half * phase)  # forward field after the input mirror
    out = abs(t * half * inside) ** 2
    refl = abs(-r + t * r * half * half * phase * inside) ** 2
    p_fwd = abs(inside) ** 2
    p_back = p_fwd * half ** 2 * r * r
    lost = (p_fwd * (1 - half ** 2) + p_back * (1 - half ** 2)  # absorber, both passes
            + lm * (1 + p_fwd * half ** 2 + p_back * half ** 2))  # mirror scatter
    assert airy_transmission(det, SPEC, a) == pytest.approx(out, rel=1e-9)
    assert circulating_power(1.0, det, SPEC, a) == pytest.approx(p_fwd, rel=1e-9)
    assert out + refl + lost == pytest.approx(1.0, abs=1e-9)
    assert out <= 1


def test_standing_wave_intensity():
    w = 58e-4
    assert standing_wave_intensity(1.0, SPEC) == pytest.approx(2 / (math.pi * w * w / 2))


def first_root(p_in, nu, res, med, cat, n=4000):
    """Lowest fixed point by a ln I scan and brentq on the first sign change."""
    det = (nu - res) * 1e6

    def level(a):
        return standing_wave_intensity(
            circulating_power(p_in, det, SPEC, 2 * a * med.path_length), SPEC)

    def g(x):
        return x - np.log(level(alpha(np.full(np.shape(x), nu), np.exp(x), med, cat)))

    lo, hi = math.log(level(unsaturated_alpha(nu, med, cat))), math.log(level(0.0))
    xs = np.linspace(lo, hi, n)
    gs = g(xs)
    j = int(np.argmax(gs >= 0))
    if j == 0:
        return math.exp(xs[0])
    root = optimize.brentq(lambda x: float(g(x)), xs[j - 1], xs[j], xtol=1e-14, rtol=1e-14)
    return math.exp(root)


@pytest.mark.parametrize("kind", ["inhomogeneous", "homogeneous"])
@given(p=st.floats(-11, -6), off=st.floats(-3000, 3000), det=st.floats(-3, 3),
       dens=st.floats(5, 8))
def test_solver_matches_scan(catalog, kind, p, off, det, dens):
    cat = catalog.restrict(lambda ln: ln.isotope in (129, 132))
    med = MediumParams(metastable_density=10 ** dens, model=SaturationModel(kind=kind))
    nu = ANCHOR + off * 1e-6
    res = nu - det * 1e-6
    state = solve_steady_state(10 ** p, nu, res, SPEC, med, cat)
    assert state.intensity == pytest.approx(first_root(10 ** p, nu, res, med, cat), rel=1e-6)
    assert state.residual <= 1e-8


def test_velocity_selective_matches_scan(catalog):
    cat = catalog.restrict(lambda ln: ln.isotope == 129)
    med = MediumParams(metastable_density=3e7)
    for p in (1e-10, 3e-9, 1e-7):
        state = solve_steady_state(p, ANCHOR, ANCHOR, SPEC, med, cat)
        assert state.intensity == pytest.approx(first_root(p, ANCHOR, ANCHOR, med, cat, 800),
                                                rel=1e-6)


def test_linear_medium_is_airy(catalog):
    med = MediumParams(model=SaturationModel(kind="linear"))
    nu = ANCHOR + np.linspace(-6000, 2500, 50) * 1e-6
    res = nu + np.linspace(-2, 2, 50) * 1e-6
    state = solve_steady_state(2e-9, nu, res, SPEC, med, catalog)
    a_rt = 2 * unsaturated_alpha(nu, med, catalog) * med.path_length
    np.testing.assert_allclose(state.absolute_transmission,
                               airy_transmission((nu - res) * 1e6, SPEC, a_rt), rtol=1e-14)
    assert np.all(state.transmission_ratio <= 1 + 1e-9)


def test_no_atoms_full_transmission(catalog):
    med = MediumParams(metastable_density=0.0)
    state = solve_steady_state(1e-9, ANCHOR, ANCHOR, SPEC, med, catalog)
    assert state.transmission_ratio == 1.0
    dark = solve_steady_state(0.0, ANCHOR, ANCHOR, SPEC, MediumParams(), catalog)
    assert dark.circulating_power == 0.0


def test_high_power_is_flat(catalog):
    nu = ANCHOR + np.linspace(-6500, 2700, 40) * 1e-6
    for p in (20e-6, 50e-6):
        state = solve_steady_state(p, nu, nu, SPEC, MediumParams(), catalog)
        assert state.transmission_ratio.min() >= 0.98


@pytest.mark.parametrize("kind", ["inhomogeneous", "homogeneous", "velocity_selective"])
def test_ratio_monotone_in_power(catalog, kind):
    med = MediumParams(model=SaturationModel(kind=kind))
    powers = np.geomspace(1e-12, 1.0, 40)
    r = solve_steady_state(powers, ANCHOR, ANCHOR, SPEC, med, catalog).transmission_ratio
    assert np.all(np.diff(r) >= -1e-12)
    assert r[-1] == pytest.approx(1.0, abs=1e-3)
    assert r[0] < 0.2


def test_ratio_tends_to_one_with_density(catalog):
    r = [solve_steady_state(1e-9, ANCHOR, ANCHOR, SPEC, MediumParams(metastable_density=n),
                            catalog).transmission_ratio for n in (1e6, 1e4, 1e2, 1.0)]
    assert all(a < b for a, b in zip(r, r[1:]))
    assert r[-1] == pytest.approx(1.0, abs=1e-5)


def test_broadcasting(catalog):
    powers = np.array([[1e-10], [1e-9]])
    nu = ANCHOR + np.array([0.0, 1e-4, 2e-4])
    state = solve_steady_state(powers, nu, nu, SPEC, MediumParams(), catalog)
    assert state.transmission_ratio.shape == (2, 3)
    single = solve_steady_state(1e-9, nu[1], nu[1], SPEC, MediumParams(), catalog)
    assert state.transmission_ratio[1, 1] == pytest.approx(single.transmission_ratio, rel=1e-12)


def test_bad_inputs(catalog):
    with pytest.raises(ValidationError):
        solve_steady_state(-1.0, ANCHOR, ANCHOR, SPEC, MediumParams(), catalog)
    with pytest.raises(ValidationError):
        solve_steady_state(np.nan, ANCHOR, ANCHOR, SPEC, MediumParams(), catalog)


def test_non_convergence_reported(catalog):
    med = MediumParams(broadening=BroadeningParams(natural_fwhm=50.0))
    with pytest.raises(ConvergenceError) as info:
        solve_steady_state(2e-9, ANCHOR, ANCHOR, SPEC, med, catalog, max_iter=17)
    assert info.value.residual > 1e-8
