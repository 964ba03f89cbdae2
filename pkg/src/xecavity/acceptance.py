"""Acceptance checks, shared by the test suite and ``xecavity selfcheck``.

Each ``criterion_N()`` returns a ``CriterionResult``; ``run_all`` runs them
in order. Oracles used here (quadrature Voigt, brute-force residual scan)
are deliberately independent of the code paths they check.
"""
from __future__ import annotations

import dataclasses
import functools
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

from . import cavity, lineshape, medium, protocol
from .catalog import allowed_transitions, default_catalog
from .fitting import Dip, FitModel, fit_global
from .lineshape import BroadeningParams, FWHM_TO_SIGMA

ANCHOR = 364.097  # THz, 129Xe F=5/2 -> 5/2
SCAN_POWERS = (0.5e-9, 2e-9, 19e-9)


@dataclass(frozen=True)
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.title}: {self.detail}"


# ---------------------------------------------------------------- oracles

def voigt_quadrature(x, gaussian_fwhm, lorentzian_fwhm):
    """Voigt value by direct adaptive quadrature of the convolution integral."""
    s = gaussian_fwhm * FWHM_TO_SIGMA
    hw = 0.5 * lorentzian_fwhm

    def f(t):
        return (math.exp(-0.5 * (t / s) ** 2) / (s * math.sqrt(2 * math.pi))
                * hw / (math.pi * ((x - t) ** 2 + hw * hw)))

    lo, hi = -12.0 * s, 12.0 * s
    pts = [p for p in (x - hw, x, x + hw) if lo < p < hi]
    val, _ = integrate.quad(f, lo, hi, points=pts or None, epsabs=0.0, epsrel=1e-12,
                            limit=1000)
    return val


def brute_force_intensity(p_in, nu, res, spec, med, catalog, n=10**6, chunk=10**5):
    """Lowest fixed point of I = I_circ(alpha(I)) from an n-point scan of ln I.

    Uses the public alpha / circulating_power / standing_wave_intensity
    functions, scans the bracket [I(alpha0), I(0)] on a uniform grid in ln I,
    takes the first sign change of the residual and interpolates linearly.
    """
    det = (nu - res) * 1e6
    L = med.path_length

    def intensity(a):
        pc = cavity.circulating_power(p_in, det, spec, 2.0 * a * L)
        return cavity.standing_wave_intensity(pc, spec)

    a0 = medium.alpha(nu, 0.0, med, catalog)
    i_lo, i_hi = float(intensity(a0)), float(intensity(0.0))
    if not (i_lo > 0 and i_hi > i_lo):
        return i_lo
    x = np.linspace(math.log(i_lo), math.log(i_hi), n)
    prev = None
    for k in range(0, n, chunk):
        xs = x[k:k + chunk]
        a = medium.alpha(np.full(xs.shape, nu), np.exp(xs), med, catalog)
        g = xs - np.log(intensity(a))
        hit = np.nonzero(g >= 0)[0]
        if hit.size:
            j = hit[0]
            if j == 0:
                if prev is None:
                    return math.exp(xs[0])
                x0, g0 = prev
            else:
                x0, g0 = xs[j - 1], g[j - 1]
            x1, g1 = xs[j], g[j]
            return math.exp(x0 - g0 * (x1 - x0) / (g1 - g0))
        prev = (xs[-1], g[-1])
    return i_hi


# ----------------------------------------------------------- shared runs

@functools.lru_cache(maxsize=None)
def _setup():
    return default_catalog(), cavity.CavitySpec(), medium.MediumParams()


@functools.lru_cache(maxsize=None)
def default_scan(powers=SCAN_POWERS, density=None, natural_fwhm=None):
    cat, spec, med = _setup()
    if density is not None:
        med = dataclasses.replace(
            med, metastable_density=density,
            broadening=dataclasses.replace(med.broadening, natural_fwhm=natural_fwhm))
    plan = protocol.ScanPlan(probe_powers=powers)
    return tuple(protocol.run_scan(plan, spec, med, cat))


def even_isotope_center(catalog):
    ev = [ln for ln in catalog.lines if ln.isotope % 2 == 0]
    w = np.array([catalog._abundance[ln.isotope] for ln in ev])
    off = np.array([ln.offset for ln in ev])
    return catalog.reference_frequency + float(w @ off / w.sum()) * 1e-6


# ---------------------------------------------------------------- criteria

def criterion_1():
    spec = cavity.CavitySpec(length=2.4983, mirror_transmission=7.5e-4,
                             mirror_loss=math.pi / 4000 - 7.5e-4)
    f = cavity.figures(spec, 364.1)
    checks = [abs(f.fsr - 6.000) <= 0.001, abs(f.finesse - 4000) <= 1,
              abs(f.linewidth - 1.500) <= 0.002, abs(f.quality_factor - 2.4e8) <= 0.1e8]
    return CriterionResult(1, "cavity figures of merit", all(checks),
                           f"FSR {f.fsr:.5f} GHz, finesse {f.finesse:.3f}, "
                           f"linewidth {f.linewidth:.5f} MHz, Q {f.quality_factor:.4g}")


def criterion_2():
    cat = _setup()[0]
    counts = {}
    for ln in cat.lines:
        key = ln.isotope if ln.isotope in (129, 131) else "even"
        counts[key] = counts.get(key, 0) + 1
    # brute force: every half-integer F pair, filtered by the rules directly
    brute_total = 0
    for sp in cat.species:
        i2 = int(2 * sp.nuclear_spin)
        fs = [f2 / 2 for f2 in range(0, 20) if abs(4 - i2) <= f2 <= 4 + i2 and (f2 - i2) % 2 == 0]
        pairs = [(a, b) for a in fs for b in fs if abs(a - b) <= 1 and not (a == 0 and b == 0)]
        if len(pairs) != len(allowed_transitions(sp.nuclear_spin)):
            brute_total = -1
            break
        brute_total += len(pairs)
    ok = (len(cat) == 21 and counts == {129: 4, 131: 10, "even": 7} and brute_total == 21)
    return CriterionResult(2, "catalog multiplicity", ok,
                           f"{len(cat)} lines: 129Xe {counts.get(129)}, 131Xe {counts.get(131)}, "
                           f"even {counts.get('even')}; brute force {brute_total}")


def criterion_3():
    cat, spec, med = _setup()
    plan = protocol.ScanPlan(probe_powers=SCAN_POWERS)
    r = [s.ratio for s in protocol.lock_and_probe(ANCHOR, plan, spec, med, cat)]
    ok_cal = abs(r[0] - 0.10) <= 0.05 and abs(r[2] - 0.50) <= 0.10 and r[0] < r[1] < r[2]
    worst = math.inf
    for args in ((), (5e6, 100.0)):
        traces = default_scan(SCAN_POWERS, *args)
        q = np.array([t.ratio for t in traces])
        worst = min(worst, float(np.min(np.diff(q, axis=0))))
    ok = ok_cal and worst >= -1e-9
    return CriterionResult(3, "saturation trend at 364.097 THz", ok,
                           f"ratio {r[0]:.4f} / {r[1]:.4f} / {r[2]:.4f} at 0.5 / 2 / 19 nW; "
                           f"min pointwise increase with power {worst:.2e}")


def criterion_4():
    cat, spec, med = _setup()
    plan = protocol.ScanPlan()
    res = plan.resonances()
    st = cavity.solve_steady_state(plan.lock_power, res, res, spec, med, cat)
    lo = float(np.min(st.transmission_ratio))
    return CriterionResult(4, "high-power flatness", lo >= 0.98,
                           f"min transmission_ratio {lo:.5f} at {plan.lock_power * 1e6:g} uW")


def criterion_5():
    traces = default_scan((0.005e-9, 0.05e-9, 2e-9))
    od = np.array([t.optical_depth for t in traces])
    live = od[0] > 1e-9
    lin = float(np.max(np.abs(od[1, live] / od[0, live] - 1.0)))
    sat = float(np.max(np.abs(od[2, live] / od[0, live] - 1.0)))
    ok = lin < 0.01 and sat > 0.05
    return CriterionResult(5, "linear regime", ok,
                           f"max |OD(0.05 nW)/OD(0.005 nW) - 1| = {lin:.4f} (limit 0.01); "
                           f"at 2 nW {sat:.3f} (need > 0.05)")


def criterion_6():
    cat = _setup()[0]
    center = even_isotope_center(cat)
    widths, mins = [], []
    for t in default_scan(SCAN_POWERS):
        widths.append(protocol.apparent_dip_width(t, center))
        near = np.abs(t.resonance - center) <= 200e-6
        mins.append(float(np.min(t.ratio[near])))
    ok = widths[0] > widths[1] > widths[2] and max(mins) < 0.05
    return CriterionResult(6, "even-isotope dip narrowing", ok,
                           "widths " + " > ".join(f"{w:.1f}" for w in widths)
                           + " MHz; minima " + ", ".join(f"{m:.4f}" for m in mins))


def criterion_7(n=100, seed=7):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        g, l = np.exp(rng.uniform(np.log(0.01), np.log(1000.0), 2))
        x = rng.uniform(-5, 5) * (g + l)
        ref = voigt_quadrature(x, g, l)
        worst = max(worst, abs(lineshape.voigt(x, g, l) / ref - 1.0))
    lim = 0.0
    xs = np.linspace(-50, 50, 101)
    for g in (0.3, 7.0, 300.0):
        s = g * FWHM_TO_SIGMA
        gauss = np.exp(-0.5 * (xs / s) ** 2) / (s * math.sqrt(2 * math.pi))
        keep = gauss > 1e-300
        lim = max(lim, float(np.max(np.abs(lineshape.voigt(xs, g, 0.0)[keep] / gauss[keep] - 1))))
        hw = 0.5 * g
        lor = hw / (math.pi * (xs ** 2 + hw ** 2))
        lim = max(lim, float(np.max(np.abs(lineshape.voigt(xs, 0.0, g) / lor - 1))))
        # nearly pure limits through the Faddeeva branch
        lim = max(lim, float(np.max(np.abs(lineshape.voigt(xs, 1e-7 * g, g) / lor - 1))))
    ok = worst <= 1e-6 and lim <= 1e-9
    return CriterionResult(7, "Voigt oracle", ok,
                           f"{n} random triples max rel err {worst:.2e}; limits {lim:.2e}")


def solver_instances(n=100, seed=11):
    """Randomised (kind, power, laser, resonance, medium, catalog) solver cases.

    Most cases use a random 1-3 line sub-catalog so the brute-force oracle
    stays affordable; a few use the full catalog.
    """
    cat = _setup()[0]
    rng = np.random.default_rng(seed)
    kinds = (["inhomogeneous"] * 34 + ["homogeneous_nopb"] * 30
             + ["homogeneous"] * 30 + ["velocity_selective"] * 6)
    full = {0, 1, 34, 35}
    out = []
    for k, kind in enumerate(kinds[:n]):
        if k in full:
            c = cat
            nu = cat.reference_frequency + rng.uniform(-6500, 2700) * 1e-6
        else:
            pick = rng.choice(len(cat), size=int(rng.integers(1, 4)), replace=False)
            keep = [cat.lines[i] for i in pick]
            c = cat.restrict(lambda ln, keep=keep: ln in keep)
            center = c.line_frequency(c.lines[0])
            nu = center + rng.uniform(-1500, 1500) * 1e-6
        heavy = kind == "velocity_selective"
        nat = math.exp(rng.uniform(math.log(100 if heavy else 10), math.log(1000)))
        model = medium.SaturationModel(
            kind="homogeneous" if kind.startswith("homogeneous") else kind,
            power_broadening=kind != "homogeneous_nopb")
        med = medium.MediumParams(
            metastable_density=math.exp(rng.uniform(math.log(1e5), math.log(1e8))),
            broadening=BroadeningParams(natural_fwhm=nat), model=model)
        p_in = math.exp(rng.uniform(math.log(1e-11), math.log(1e-6)))
        res = nu - rng.uniform(-3.0, 3.0) * 1e-6
        out.append((kind, p_in, nu, res, med, c))
    return out


def criterion_8(n=100):
    spec = _setup()[1]
    worst = 0.0
    for kind, p_in, nu, res, med, c in solver_instances(n):
        st = cavity.solve_steady_state(p_in, nu, res, spec, med, c)
        ref = brute_force_intensity(p_in, nu, res, spec, med, c)
        worst = max(worst, abs(st.intensity / ref - 1.0))
    # linear medium: transmission is the Airy function of the unsaturated loss
    cat = _setup()[0]
    lin = medium.MediumParams(model=medium.SaturationModel(kind="linear"))
    nu = cat.reference_frequency + np.linspace(-6500, 2700, 200) * 1e-6
    res = nu - np.linspace(-3, 3, 200) * 1e-6
    st = cavity.solve_steady_state(1e-9, nu, res, spec, lin, cat)
    a0 = medium.unsaturated_alpha(nu, lin, cat)
    airy = cavity.airy_transmission((nu - res) * 1e6, spec, 2.0 * a0 * lin.path_length)
    lin_err = float(np.max(np.abs(st.absolute_transmission / airy - 1.0)))
    ok = worst <= 1e-6 and lin_err <= 1e-8
    return CriterionResult(8, "steady-state solver oracle", ok,
                           f"{n} instances max rel err {worst:.2e} vs 1e6-point scan; "
                           f"linear medium vs Airy {lin_err:.1e}")


def fit_round_trip(noise_fraction, seed=5):
    """Simulate reduced-model traces at the three scan powers and fit them jointly.

    Returns (max center error MHz, max relative P_sat error).
    """
    spec = _setup()[1]
    c = ANCHOR
    nu = c + np.arange(-2500.0, 2500.0 + 1e-9, 2.5) * 1e-6
    truth = [Dip(c - 750e-6, 380.0, 350.0, 0.8, 3e-9), Dip(c + 750e-6, 380.0, 350.0, 0.5, 3e-9)]
    traces = []
    for p in SCAN_POWERS:
        noise = protocol.DetectorNoise(readout_noise=noise_fraction * p * spec.empty_transmission,
                                       enabled=noise_fraction > 0)
        ratio = FitModel(0.98, truth, p)(nu)
        traces.append(protocol.synthesize_trace(nu, ratio, p, noise=noise, seed=seed))
    init = FitModel(0.95, [Dip(c - 700e-6, 450.0, 300.0, 0.6, 5e-9),
                           Dip(c + 800e-6, 300.0, 420.0, 0.4, 2e-9)], SCAN_POWERS[0])
    fit = fit_global(traces, init)
    dc = max(abs(d.center - t.center) * 1e6 for d, t in zip(fit.model.dips, truth))
    dp = max(abs(d.saturation_power / t.saturation_power - 1.0)
             for d, t in zip(fit.model.dips, truth))
    return dc, dp


def criterion_9():
    dc0, dp0 = fit_round_trip(0.0)
    dc1, dp1 = fit_round_trip(0.01)
    ok = dc0 <= 1.0 and dp0 <= 0.10 and dc1 <= 5.0 and dp1 <= 0.25
    return CriterionResult(9, "fit round trips", ok,
                           f"noiseless: center {dc0:.2e} MHz, P_sat {dp0:.1e}; "
                           f"1% noise: center {dc1:.2f} MHz, P_sat {dp1:.3f}")


def criterion_10():
    from .cli import main

    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for k, workers in enumerate((1, 1, 4)):
            out = Path(tmp) / f"run{k}"
            code = main(["scan", "--set", "plan.seed=1234",
                         "--set", "plan.noise={\"relative_intensity_noise\": 0.01, "
                         "\"readout_noise\": 1e-12, \"enabled\": true}",
                         "--output-dir", str(out), "--workers", str(workers), "--quiet"])
            if code != 0:
                return CriterionResult(10, "determinism", False, f"scan exited {code}")
            files = sorted(out.glob("*.csv"))
            digests.append([(f.name, f.read_bytes()) for f in files])
    same = digests[0] == digests[1] == digests[2] and len(digests[0]) == len(SCAN_POWERS)
    return CriterionResult(10, "determinism", same,
                           f"{len(digests[0])} CSV files identical across serial, serial "
                           f"and 4-worker runs" if same else "CSV output differs between runs")


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10)


def run_all(echo=None):
    results = []
    for fn in CRITERIA:
        t0 = time.perf_counter()
        r = fn()
        results.append(r)
        if echo:
            echo(f"{r.line()} ({time.perf_counter() - t0:.1f} s)")
    return results
