"""Simulated lock-and-probe acquisition.

Each scan point is one cavity resonance position (set by the block
temperature). At every point the laser is swept across the cavity peak at
the lock power, parked at the refined peak, and the transmission is read at
the lock power (``t_high``) and then at each probe power (``t_low``). Four
detectors are modelled: D1/D2 monitor the input beam at high/low power,
D3/D4 read the transmitted beam. Signals are normalised by their monitor.

Noise draws come from a counter-based generator keyed by
(seed, point index, measurement index), so any subset of points can be
evaluated in any order, or in parallel, with identical results.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .cavity import CavitySpec, airy_transmission, figures, solve_steady_state
from .catalog import catalog_to_dict
from .errors import ConvergenceError, ValidationError

# Points per vectorised solve. Fixed so that results never depend on the
# number of workers.
CHUNK_SIZE = 64


@dataclass(frozen=True)
class DetectorNoise:
    relative_intensity_noise: float = 0.0  # fractional rms, common to monitor and signal
    readout_noise: float = 0.0  # W rms, independent per detector
    enabled: bool = False

    def __post_init__(self):
        if self.relative_intensity_noise < 0 or self.readout_noise < 0:
            raise ValidationError("noise levels must be >= 0", "noise")


@dataclass(frozen=True)
class ScanPlan:
    resonance_start: float = 364.0904  # THz
    resonance_stop: float = 364.0996  # THz
    step: float = 10.0  # MHz
    probe_powers: tuple = (0.5e-9, 2e-9, 19e-9)  # W
    lock_power: float = 20e-6  # W
    settle_time: float = 1.0  # ms
    temp_coefficient: float = 20.0  # GHz per degC
    noise: DetectorNoise = field(default_factory=DetectorNoise)
    seed: int = 0
    base_temperature: float = 25.0  # degC at base_resonance
    base_resonance: float | None = None  # THz, defaults to the scan midpoint
    lock_points: int = 9
    lock_span: float = 2.0  # cavity linewidths either side
    laser_jitter: float = 0.0  # MHz rms, zero = ideal laser

    def __post_init__(self):
        object.__setattr__(self, "probe_powers",
                           tuple(float(p) for p in self.probe_powers))
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", DetectorNoise(**self.noise))
        if not self.resonance_start < self.resonance_stop:
            raise ValidationError("resonance_start must be < resonance_stop", "plan")
        if not self.step > 0:
            raise ValidationError("must be > 0", "plan.step")
        if not self.probe_powers:
            raise ValidationError("at least one probe power is required", "plan.probe_powers")
        if any(not p > 0 for p in self.probe_powers) or not self.lock_power > 0:
            raise ValidationError("all powers must be > 0", "plan")
        if self.settle_time < 0 or self.laser_jitter < 0:
            raise ValidationError("settle_time and laser_jitter must be >= 0", "plan")
        if not self.temp_coefficient != 0:
            raise ValidationError("must be nonzero", "plan.temp_coefficient")
        if self.lock_points < 3 or self.lock_points % 2 == 0:
            raise ValidationError("must be odd and >= 3", "plan.lock_points")
        if not self.lock_span > 0:
            raise ValidationError("must be > 0", "plan.lock_span")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError("must be a non-negative integer", "plan.seed")

    @property
    def base(self) -> float:
        if self.base_resonance is not None:
            return self.base_resonance
        return 0.5 * (self.resonance_start + self.resonance_stop)

    def resonances(self) -> np.ndarray:
        """Scan points in THz, start to stop inclusive on the step grid."""
        n = int(math.floor((self.resonance_stop - self.resonance_start) * 1e6 / self.step
                           + 1e-9)) + 1
        return self.resonance_start + np.arange(n) * self.step * 1e-6


@dataclass(frozen=True)
class ScanSample:
    cavity_resonance: float  # THz
    block_temperature: float  # degC
    t_high: float
    t_low: float
    ratio: float
    optical_depth: float
    probe_power: float  # W


@dataclass(frozen=True)
class SpectrumTrace:
    probe_power: float
    samples: tuple
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        r = self.resonance
        if r.size > 1 and not np.all(np.diff(r) > 0):
            k = int(np.argmin(np.diff(r))) + 1
            raise ValidationError("cavity_resonance must be strictly increasing",
                                  f"sample {k}")
        for k, s in enumerate(self.samples):
            if s.probe_power != self.probe_power:
                raise ValidationError("probe power differs from the trace's",
                                      f"sample {k}")

    def __len__(self):
        return len(self.samples)

    def _column(self, name):
        return np.array([getattr(s, name) for s in self.samples], dtype=float)

    @property
    def resonance(self):
        return self._column("cavity_resonance")

    @property
    def ratio(self):
        return self._column("ratio")

    @property
    def optical_depth(self):
        return self._column("optical_depth")

    @property
    def t_high(self):
        return self._column("t_high")

    @property
    def t_low(self):
        return self._column("t_low")

    @property
    def block_temperature(self):
        return self._column("block_temperature")


class ScanError(ConvergenceError):
    """One or more scan points failed; ``failures`` lists (index, THz, message)."""

    def __init__(self, failures):
        self.failures = failures
        idx = ", ".join(str(f[0]) for f in failures[:10])
        more = "" if len(failures) <= 10 else f" (+{len(failures) - 10} more)"
        super().__init__(f"{len(failures)} scan point(s) failed",
                         context=f"indices {idx}{more}")


def temp_to_resonance(temperature, plan: ScanPlan, spec: CavitySpec | None = None,
                      wrap=True):
    """Cavity resonance (THz) near the laser for a block temperature in degC.

    The resonance moves linearly with temperature. With ``wrap`` the result
    is folded into [base - FSR/2, base + FSR/2), since the mode one FSR away
    is indistinguishable to a fixed-frequency laser.
    """
    t = np.asarray(temperature, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValidationError("temperature must be finite", "temperature")
    shift = plan.temp_coefficient * (t - plan.base_temperature) * 1e3  # MHz
    if wrap:
        fsr = (spec or CavitySpec()).fsr_mhz
        shift = np.mod(shift + 0.5 * fsr, fsr) - 0.5 * fsr
    out = plan.base + shift * 1e-6
    return float(out) if out.ndim == 0 else out


def block_temperature(resonance, plan: ScanPlan):
    """Unwrapped inverse of ``temp_to_resonance``."""
    r = np.asarray(resonance, dtype=float)
    return plan.base_temperature + (r - plan.base) * 1e6 / (plan.temp_coefficient * 1e3)


def refine_peak(offsets, values):
    """Vertex of the parabola through the largest sample and its neighbours.

    ``values`` are transmissions; the parabola is fitted to 1/T, which is
    exactly quadratic in detuning near an Airy peak.
    """
    v = np.asarray(values, dtype=float)
    x = np.asarray(offsets, dtype=float)
    k = int(np.clip(np.argmax(v), 1, v.size - 2))
    y0, y1, y2 = 1.0 / v[k - 1], 1.0 / v[k], 1.0 / v[k + 1]
    curv = y0 - 2.0 * y1 + y2
    if not curv > 0:
        return float(x[k])
    h = x[k + 1] - x[k]
    return float(x[k] + 0.5 * h * (y0 - y2) / curv)


def lock_offset(plan: ScanPlan, spec: CavitySpec, start_offset=0.0):
    """Locked laser detuning (MHz) from the cavity resonance.

    The sweep covers +-lock_span linewidths around ``start_offset`` on the
    saturated (empty) cavity peak.
    """
    lw = figures(spec, 1.0).linewidth
    sweep = start_offset + np.linspace(-plan.lock_span, plan.lock_span,
                                       plan.lock_points) * lw
    return refine_peak(sweep, airy_transmission(sweep, spec, 0.0))


def _rng(seed, point, measurement):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(point), int(measurement)))
    return np.random.Generator(np.random.Philox(ss))


def _read(power, transmission, noise: DetectorNoise, rng):
    """(monitor, signal) readings; intensity noise is common to both."""
    if not noise.enabled:
        return power, power * transmission
    rin, n_mon, n_sig = rng.standard_normal(3)
    src = power * (1.0 + noise.relative_intensity_noise * rin)
    mon = src + noise.readout_noise * n_mon
    sig = src * transmission + noise.readout_noise * n_sig
    return mon, sig


def _optical_depth(ratio):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ratio > 0, -np.log(np.where(ratio > 0, ratio, 1.0)), np.inf)


def _acquire(resonance, index, plan: ScanPlan, spec, medium, catalog):
    """Arrays (t_high, t_low[:, j], ratio[:, j]) for a block of scan points."""
    res = np.asarray(resonance, dtype=float)
    det = np.full(res.shape, lock_offset(plan, spec))
    if plan.laser_jitter > 0:
        det = det + plan.laser_jitter * np.array(
            [_rng(plan.seed, i, 0).standard_normal(4)[3] for i in index])
    laser = res + det * 1e-6
    powers = np.array((plan.lock_power,) + plan.probe_powers)
    state = solve_steady_state(powers[None, :], laser[:, None], res[:, None],
                               spec, medium, catalog)
    t_abs = np.asarray(state.absolute_transmission)
    t_true_high = t_abs[:, 0]
    t_true_low = t_abs[:, 1:]
    if not plan.noise.enabled:
        t_high = t_true_high.copy()
        t_low = t_true_low.copy()
    else:
        t_high = np.empty(res.shape)
        t_low = np.empty(t_true_low.shape)
        for row, i in enumerate(index):
            d1, d3 = _read(plan.lock_power, t_true_high[row], plan.noise,
                           _rng(plan.seed, i, 0))
            t_high[row] = d3 / d1
            for j, p in enumerate(plan.probe_powers):
                d2, d4 = _read(p, t_true_low[row, j], plan.noise,
                               _rng(plan.seed, i, j + 1))
                t_low[row, j] = d4 / d2
    ratio = t_low / t_high[:, None]
    return t_high, t_low, ratio


def lock_and_probe(resonance, plan: ScanPlan, spec: CavitySpec, medium, catalog,
                   point_index=0):
    """One lock-and-probe cycle; returns a ScanSample per probe power.

    ``point_index`` selects the noise stream, so a point reproduces the
    corresponding sample of ``run_scan``.
    """
    res = float(resonance)
    try:
        t_high, t_low, ratio = _acquire(np.array([res]), [point_index], plan, spec,
                                        medium, catalog)
    except ConvergenceError as exc:
        raise ScanError([(point_index, res, str(exc))]) from exc
    od = _optical_depth(ratio)
    temp = float(block_temperature(res, plan))
    return [ScanSample(res, temp, float(t_high[0]), float(t_low[0, j]),
                       float(ratio[0, j]), float(od[0, j]), p)
            for j, p in enumerate(plan.probe_powers)]


def config_hash(plan: ScanPlan, spec: CavitySpec, medium, catalog) -> str:
    blob = {"plan": asdict(plan), "cavity": asdict(spec), "medium": asdict(medium),
            "catalog": catalog_to_dict(catalog)}
    text = json.dumps(blob, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _run_chunk(args):
    res, idx, plan, spec, medium, catalog = args
    try:
        return _acquire(res, idx, plan, spec, medium, catalog), []
    except ConvergenceError:
        pass
    # isolate the failing points
    failures = []
    for r, i in zip(res, idx):
        try:
            _acquire(np.array([r]), [i], plan, spec, medium, catalog)
        except ConvergenceError as exc:
            failures.append((int(i), float(r), str(exc)))
    return None, failures


def run_scan(plan: ScanPlan, spec: CavitySpec, medium, catalog, workers=1):
    """Full scan; one SpectrumTrace per probe power, in plan order.

    Points are evaluated in fixed-size chunks, optionally on a thread pool;
    the output is bit-identical for any ``workers``.
    """
    res = plan.resonances()
    catalog.check_coverage(res)
    idx = np.arange(res.size)
    jobs = [(res[k:k + CHUNK_SIZE], idx[k:k + CHUNK_SIZE], plan, spec, medium, catalog)
            for k in range(0, res.size, CHUNK_SIZE)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]

    failures = [f for _, fl in results for f in fl]
    if failures:
        raise ScanError(sorted(failures))
    t_high = np.concatenate([r[0][0] for r in results])
    t_low = np.concatenate([r[0][1] for r in results])
    ratio = np.concatenate([r[0][2] for r in results])
    od = _optical_depth(ratio)
    temps = block_temperature(res, plan)
    meta = {"plan": asdict(plan), "config_hash": config_hash(plan, spec, medium, catalog)}
    traces = []
    for j, p in enumerate(plan.probe_powers):
        samples = [ScanSample(float(res[k]), float(temps[k]), float(t_high[k]),
                              float(t_low[k, j]), float(ratio[k, j]), float(od[k, j]), p)
                   for k in range(res.size)]
        traces.append(SpectrumTrace(p, samples, dict(meta)))
    return traces


def apparent_dip_width(trace: SpectrumTrace, center) -> float:
    """Full width (MHz) of the dip containing ``center`` at half its depth.

    Starting from the sample nearest ``center`` the trace is followed
    downhill to the local minimum; the width is measured where the ratio
    crosses (1 + min_ratio)/2, interpolating linearly between samples.
    """
    x = (trace.resonance - float(center)) * 1e6
    y = trace.ratio
    if x.size < 3:
        raise ValidationError("trace too short", "apparent_dip_width")
    k = int(np.argmin(np.abs(x)))
    while True:
        nbr = [j for j in (k - 1, k + 1) if 0 <= j < y.size and y[j] < y[k]]
        if not nbr:
            break
        k = min(nbr, key=lambda j: y[j])
    level = 0.5 * (1.0 + y[k])
    if not y[k] < level:
        raise ValidationError("no dip found: no sample below half depth",
                              "apparent_dip_width")

    def crossing(direction):
        j = k
        while 0 <= j + direction < y.size:
            nxt = j + direction
            if y[nxt] >= level:
                frac = (level - y[j]) / (y[nxt] - y[j])
                return x[j] + frac * (x[nxt] - x[j])
            j = nxt
        raise ValidationError("dip is not closed within the trace", "apparent_dip_width")

    return float(crossing(1) - crossing(-1))


def synthesize_trace(resonance, ratio, probe_power, noise: DetectorNoise | None = None,
                     seed=0, t_high=None, spec: CavitySpec | None = None, metadata=None):
    """Trace from a prescribed noise-free ratio curve, through the detector model.

    ``t_high`` defaults to the empty-cavity transmission of ``spec``. Used to
    feed reduced-model spectra to the fitting code.
    """
    res = np.asarray(resonance, dtype=float)
    r = np.broadcast_to(np.asarray(ratio, dtype=float), res.shape)
    if t_high is None:
        t_high = (spec or CavitySpec()).empty_transmission
    th = np.broadcast_to(np.asarray(t_high, dtype=float), res.shape)
    noise = noise or DetectorNoise()
    lock_power = ScanPlan.lock_power
    samples = []
    for i in range(res.size):
        d1, d3 = _read(lock_power, th[i], noise, _rng(seed, i, 0))
        d2, d4 = _read(probe_power, th[i] * r[i], noise, _rng(seed, i, 1))
        t_hi, t_lo = d3 / d1, d4 / d2
        q = t_lo / t_hi
        samples.append(ScanSample(float(res[i]), math.nan, float(t_hi), float(t_lo),
                                  float(q), float(_optical_depth(q)), float(probe_power)))
    return SpectrumTrace(float(probe_power), samples, dict(metadata or {}))
