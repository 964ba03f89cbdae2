import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xecavity import protocol
from xecavity.acceptance import even_isotope_center
from xecavity.cavity import CavitySpec, airy_transmission, figures
from xecavity.errors import ConvergenceError, ValidationError
from xecavity.medium import MediumParams, unsaturated_alpha
from xecavity.protocol import (DetectorNoise, ScanError, ScanPlan, SpectrumTrace,
                               apparent_dip_width, block_temperature, config_hash,
                               lock_and_probe, lock_offset, run_scan, synthesize_trace,
                               temp_to_resonance)

SPEC = CavitySpec()
MED = MediumParams()
NOISY = DetectorNoise(relative_intensity_noise=0.01, readout_noise=1e-12, enabled=True)


def small_plan(**kw):
    base = dict(resonance_start=364.0960, resonance_stop=364.0982, step=20.0,
                probe_powers=(0.5e-9, 19e-9))
    base.update(kw)
    return ScanPlan(**base)


def test_plan_validation():
    with pytest.raises(ValidationError):
        ScanPlan(resonance_start=364.1, resonance_stop=364.0)
    with pytest.raises(ValidationError):
        ScanPlan(step=0)
    with pytest.raises(ValidationError):
        ScanPlan(probe_powers=())
    with pytest.raises(ValidationError):
        ScanPlan(probe_powers=(1e-9, -1e-9))
    with pytest.raises(ValidationError):
        ScanPlan(lock_points=4)
    with pytest.raises(ValidationError):
        ScanPlan(seed=-1)
    with pytest.raises(ValidationError):
        DetectorNoise(readout_noise=-1)


def test_resonance_grid():
    r = ScanPlan().resonances()
    assert r[0] == 364.0904
    assert r.size == 921
    assert np.allclose(np.diff(r) * 1e6, 10.0)


def test_temperature_mapping():
    plan = ScanPlan()
    assert temp_to_resonance(plan.base_temperature, plan) == plan.base
    shift = temp_to_resonance(plan.base_temperature + 0.3, plan, wrap=False) - plan.base
    assert shift * 1e6 == pytest.approx(6000.0, rel=1e-9)
    # 6 GHz is one free spectral range, so the folded mode is back near the base
    folded = temp_to_resonance(plan.base_temperature + 0.3, plan, SPEC) - plan.base
    assert abs(folded * 1e6) < 0.1
    temps = plan.base_temperature + np.linspace(-0.1, 0.1, 11)
    steps = np.diff(temp_to_resonance(temps, plan))
    np.testing.assert_allclose(steps, steps[0], rtol=1e-9)
    res = temp_to_resonance(temps, plan)
    np.testing.assert_allclose(block_temperature(res, plan), temps, rtol=0, atol=1e-9)
    with pytest.raises(ValidationError):
        temp_to_resonance(math.nan, plan)


@given(st.floats(-0.45, 0.45))
def test_peak_finding_unbiased(start):
    lw = figures(SPEC, 364.097).linewidth
    assert abs(lock_offset(ScanPlan(), SPEC, start * lw)) <= 0.01 * lw


def test_no_atoms_gives_unit_ratio(catalog):
    med = replace(MED, metastable_density=0.0)
    for trace in run_scan(small_plan(), SPEC, med, catalog):
        assert np.all(trace.ratio == 1.0)
        assert np.all(trace.optical_depth == 0.0)


def test_probe_at_lock_power(catalog):
    plan = small_plan(probe_powers=(20e-6,))
    trace = run_scan(plan, SPEC, MED, catalog)[0]
    np.testing.assert_allclose(trace.ratio, 1.0, rtol=0, atol=1e-12)


def test_calibrated_anchor_ratios(catalog):
    plan = ScanPlan()
    samples = lock_and_probe(364.097, plan, SPEC, MED, catalog)
    ratios = [s.ratio for s in samples]
    assert ratios[0] == pytest.approx(0.10, abs=5e-4)
    assert ratios[2] == pytest.approx(0.50, abs=5e-4)


def test_below_all_lines_is_flat(catalog):
    lo = catalog.coverage()[0]
    plan = small_plan(resonance_start=lo + 1e-3, resonance_stop=lo + 2e-3)
    for trace in run_scan(plan, SPEC, MED, catalog):
        # only far Lorentzian wings of the natural width reach this far
        np.testing.assert_allclose(trace.ratio, 1.0, atol=2e-3)
        assert np.ptp(trace.ratio) < 5e-4


def test_ratio_grows_with_power(catalog):
    low, high = run_scan(ScanPlan(probe_powers=(0.5e-9, 19e-9), step=40.0), SPEC, MED,
                         catalog)
    assert np.all(high.ratio >= low.ratio - 1e-9)


def test_lowest_power_approaches_unsaturated_od(catalog):
    plan = small_plan(probe_powers=(1e-16,))
    trace = run_scan(plan, SPEC, MED, catalog)[0]
    det = lock_offset(plan, SPEC)
    nu = trace.resonance + det * 1e-6
    t0 = airy_transmission(det, SPEC, 2 * unsaturated_alpha(nu, MED, catalog) * MED.path_length)
    np.testing.assert_allclose(trace.optical_depth, -np.log(t0 / trace.t_high), rtol=1e-6)
    np.testing.assert_allclose(trace.optical_depth,
                               -np.log(t0 / airy_transmission(det, SPEC)), rtol=1e-2)


def test_intensity_noise_cancels(catalog):
    plan = small_plan()
    rin = replace(plan, noise=DetectorNoise(relative_intensity_noise=0.05, enabled=True),
                  seed=3)
    clean = run_scan(plan, SPEC, MED, catalog)
    noisy = run_scan(rin, SPEC, MED, catalog)
    for a, b in zip(clean, noisy):
        np.testing.assert_allclose(b.ratio, a.ratio, rtol=1e-14)


def test_readout_noise_changes_ratio(catalog):
    plan = small_plan(noise=NOISY, seed=1)
    clean = run_scan(replace(plan, noise=DetectorNoise()), SPEC, MED, catalog)[0]
    noisy = run_scan(plan, SPEC, MED, catalog)[0]
    assert not np.array_equal(clean.ratio, noisy.ratio)
    assert np.max(np.abs(clean.ratio - noisy.ratio)) < 0.1


def test_determinism_across_workers_and_order(catalog):
    plan = small_plan(resonance_stop=364.0990, step=10.0, noise=NOISY, seed=9,
                      laser_jitter=0.05)
    assert plan.resonances().size > 2 * protocol.CHUNK_SIZE
    serial = run_scan(plan, SPEC, MED, catalog)
    parallel = run_scan(plan, SPEC, MED, catalog, workers=4)
    for a, b in zip(serial, parallel):
        assert a.samples == b.samples
        assert a.metadata == b.metadata
    # any single point, evaluated alone and out of order, agrees bit for bit
    for i in (150, 3, 77):
        alone = lock_and_probe(plan.resonances()[i], plan, SPEC, MED, catalog, point_index=i)
        assert [s.ratio for s in alone] == [t.samples[i].ratio for t in serial]


def test_seed_changes_noise(catalog):
    a = run_scan(small_plan(noise=NOISY, seed=1), SPEC, MED, catalog)[0]
    b = run_scan(small_plan(noise=NOISY, seed=2), SPEC, MED, catalog)[0]
    assert not np.array_equal(a.ratio, b.ratio)


def test_config_hash(catalog):
    h = config_hash(ScanPlan(), SPEC, MED, catalog)
    assert h == config_hash(ScanPlan(), SPEC, MED, catalog)
    assert h != config_hash(ScanPlan(seed=1), SPEC, MED, catalog)
    assert len(h) == 64


def test_failing_points_are_isolated(catalog, monkeypatch):
    plan = small_plan()
    bad = plan.resonances()[4]
    real = protocol.solve_steady_state

    def flaky(p, laser, res, *args, **kw):
        if np.any(np.asarray(res) == bad):
            raise ConvergenceError("forced", residual=1.0)
        return real(p, laser, res, *args, **kw)

    monkeypatch.setattr(protocol, "solve_steady_state", flaky)
    with pytest.raises(ScanError) as info:
        run_scan(plan, SPEC, MED, catalog)
    assert [f[0] for f in info.value.failures] == [4]
    assert "indices 4" in str(info.value)


def test_trace_validation():
    s = protocol.ScanSample(364.1, 25.0, 0.9, 0.45, 0.5, math.log(2), 1e-9)
    t = protocol.ScanSample(364.0, 25.0, 0.9, 0.45, 0.5, math.log(2), 1e-9)
    with pytest.raises(ValidationError, match="increasing"):
        SpectrumTrace(1e-9, [s, t])
    with pytest.raises(ValidationError, match="probe power"):
        SpectrumTrace(2e-9, [t, s])


def lorentzian_dip(step, width, depth=0.8, center=364.097):
    x = np.arange(-4000.0, 4000.0 + step / 2, step)
    hw = width / 2
    ratio = 1 - depth * hw * hw / (x * x + hw * hw)
    return synthesize_trace(center + x * 1e-6, ratio, 1e-9)


@pytest.mark.parametrize("step", [5.0, 10.0, 37.0])
def test_dip_width_of_known_dip(step):
    trace = lorentzian_dip(step, 600.0)
    assert apparent_dip_width(trace, 364.097) == pytest.approx(600.0, abs=step)
    # a start away from the minimum walks down to it
    assert apparent_dip_width(trace, 364.097 + 2e-4) == pytest.approx(600.0, abs=step)


def test_dip_width_errors():
    flat = synthesize_trace(364.0 + np.arange(50) * 1e-5, 1.0, 1e-9)
    with pytest.raises(ValidationError, match="no dip"):
        apparent_dip_width(flat, 364.0002)
    x = np.arange(-500.0, 500.0, 10.0)
    edge = synthesize_trace(364.0 + x * 1e-6, 1 - 0.9 * np.exp(-((x + 500) / 300) ** 2), 1e-9)
    with pytest.raises(ValidationError, match="not closed"):
        apparent_dip_width(edge, 364.0)


def test_even_isotope_dip_narrows(catalog):
    plan = ScanPlan(step=20.0, probe_powers=(0.5e-9, 19e-9))
    low, high = run_scan(plan, SPEC, MED, catalog)
    center = even_isotope_center(catalog)
    assert apparent_dip_width(high, center) < apparent_dip_width(low, center)


def test_synthesized_trace_reproducible():
    res = 364.0 + np.arange(20) * 1e-5
    a = synthesize_trace(res, 0.7, 1e-9, noise=NOISY, seed=4)
    b = synthesize_trace(res, 0.7, 1e-9, noise=NOISY, seed=4)
    assert a == b
    clean = synthesize_trace(res, 0.7, 1e-9)
    np.testing.assert_allclose(clean.ratio, 0.7, rtol=1e-15)
