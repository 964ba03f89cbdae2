"""Fabry-Perot cavity with an intracavity saturable absorber.

The absorber enters the Airy formulae as a lumped round-trip intensity
loss ``A = 2 * alpha * path_length``. The intensity handed to the medium
is the on-axis standing-wave intensity at the waist,
``2 * P_circ / (pi w^2 / 2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants as const

from .errors import ConvergenceError, ValidationError
from . import medium as _medium


@dataclass(frozen=True)
class CavitySpec:
    length: float = 2.4983  # cm
    mirror_transmission: float = 7.5e-4  # per mirror
    mirror_loss: float = 3.5e-5  # per mirror
    mode_waist: float = 58.0  # um, 1/e^2 intensity radius
    mirror_roc: float = 2.5  # cm

    def __post_init__(self):
        if not self.length > 0:
            raise ValidationError("must be > 0", "cavity.length")
        if not (self.mirror_transmission > 0 and self.mirror_loss > 0):
            raise ValidationError("transmission and loss must be > 0", "cavity")
        if not self.mirror_transmission + self.mirror_loss < 0.01:
            raise ValidationError("transmission + loss must be < 0.01", "cavity")
        if not self.mode_waist > 0:
            raise ValidationError("must be > 0", "cavity.mode_waist")

    @property
    def reflectivity(self):
        return 1.0 - self.mirror_transmission - self.mirror_loss

    @property
    def fsr_mhz(self):
        return const.c / (2.0 * self.length * 1e-2) * 1e-6

    @property
    def mode_area(self):
        """Effective area pi w^2 / 2 in cm^2."""
        w = self.mode_waist * 1e-4
        return math.pi * w * w / 2.0

    @property
    def empty_transmission(self):
        """Resonant output/input of the empty cavity."""
        return airy_transmission(0.0, self, 0.0)


@dataclass(frozen=True)
class CavityFigures:
    fsr: float  # GHz
    finesse: float
    linewidth: float  # MHz
    quality_factor: float
    buildup: float


@dataclass
class SteadyState:
    circulating_power: np.ndarray | float  # W
    intensity: np.ndarray | float  # W/cm^2
    alpha_eff: np.ndarray | float  # cm^-1
    transmission_ratio: np.ndarray | float
    absolute_transmission: np.ndarray | float
    iterations: np.ndarray | int
    residual: np.ndarray | float


def figures(spec: CavitySpec, optical_frequency) -> CavityFigures:
    fsr = spec.fsr_mhz
    finesse = 2.0 * math.pi / (2.0 * (spec.mirror_transmission + spec.mirror_loss))
    linewidth = fsr / finesse
    q = optical_frequency * 1e6 / linewidth
    buildup = spec.mirror_transmission / (1.0 - spec.reflectivity) ** 2
    return CavityFigures(fsr * 1e-3, finesse, linewidth, q, buildup)


def _airy_denominator(detuning, spec, round_trip_absorption):
    a = np.asarray(round_trip_absorption, dtype=float)
    if np.any(a < 0):
        raise ValidationError("absorption must be >= 0", "round_trip_absorption")
    root_s = spec.reflectivity * np.exp(-0.5 * a)
    phase = np.sin(math.pi * np.asarray(detuning, dtype=float) / spec.fsr_mhz)
    return (1.0 - root_s) ** 2 + 4.0 * root_s * phase * phase


def airy_transmission(detuning, spec: CavitySpec, round_trip_absorption=0.0):
    """Output/input power for a laser ``detuning`` MHz from a cavity resonance."""
    a = np.asarray(round_trip_absorption, dtype=float)
    t = spec.mirror_transmission
    out = t * t * np.exp(-0.5 * a) / _airy_denominator(detuning, spec, a)
    return float(out) if np.ndim(out) == 0 else out


def circulating_power(input_power, detuning, spec: CavitySpec, round_trip_absorption=0.0):
    """One-way circulating power in W."""
    p = np.asarray(input_power, dtype=float)
    if np.any(p < 0):
        raise ValidationError("input power must be >= 0", "input_power")
    out = p * spec.mirror_transmission / _airy_denominator(detuning, spec,
                                                            round_trip_absorption)
    return float(out) if np.ndim(out) == 0 else out


def standing_wave_intensity(power, spec: CavitySpec):
    """Peak on-axis intensity (W/cm^2) of the standing wave at the waist."""
    return 2.0 * np.asarray(power, dtype=float) / spec.mode_area


class _FixedPoint:
    """Residual g(x) = x - ln I_circ(alpha(nu, e^x)) on a set of instances."""

    def __init__(self, input_power, laser_frequency, detuning, spec, medium, catalog):
        self.p = input_power
        self.nu = laser_frequency
        self.det = detuning
        self.spec = spec
        self.medium = medium
        self.tab = _medium._LineTable(medium, catalog)
        self.model = medium.model

    def alpha(self, idx, intensity):
        return _medium._alpha(self.tab, self.model, self.nu[idx], intensity)

    def intensity_for(self, idx, alpha):
        a_rt = 2.0 * alpha * self.medium.path_length
        pc = circulating_power(self.p[idx], self.det[idx], self.spec, a_rt)
        return standing_wave_intensity(pc, self.spec)

    def g(self, idx, x):
        a = self.alpha(idx, np.exp(x))
        return x - np.log(self.intensity_for(idx, a)), a


def solve_steady_state(input_power, laser_frequency, cavity_resonance,
                       spec: CavitySpec, medium, catalog, tol=1e-8,
                       max_iter=200, scan_points=16):
    """Self-consistent intracavity intensity for given input power(s).

    ``laser_frequency`` and ``cavity_resonance`` are absolute (THz); all
    three leading arguments broadcast. The fixed point I = I_circ(alpha(I))
    is bracketed by the fully absorbing and the empty-cavity intensities.
    Because the map is increasing in I, the lowest root is the state reached
    when the probe is switched on from darkness; it is found by a coarse
    logarithmic scan of the bracket followed by Illinois regula falsi on
    ln I. Convergence means ``|ln I - ln I_circ(alpha(I))| <= tol``.
    """
    p, nu, res = np.broadcast_arrays(np.asarray(input_power, dtype=float),
                                     np.asarray(laser_frequency, dtype=float),
                                     np.asarray(cavity_resonance, dtype=float))
    shape = p.shape
    p, nu, res = p.ravel(), nu.ravel(), res.ravel()
    if np.any(~np.isfinite(p)) or np.any(~np.isfinite(nu)) or np.any(~np.isfinite(res)):
        raise ValidationError("inputs must be finite", "solve_steady_state")
    if np.any(p < 0):
        raise ValidationError("input power must be >= 0", "input_power")
    catalog.check_coverage(nu)
    det = (nu - res) * 1e6
    fp = _FixedPoint(p, nu, det, spec, medium, catalog)
    n = p.size
    all_idx = np.arange(n)

    alpha0 = fp.alpha(all_idx, np.zeros(n))
    i_lo = fp.intensity_for(all_idx, alpha0)
    i_hi = fp.intensity_for(all_idx, np.zeros(n))

    intensity = i_lo.copy()
    alpha_eff = alpha0.copy()
    resid = np.zeros(n)
    iters = np.zeros(n, dtype=int)

    # trivial instances: dark input, or no absorption to saturate
    open_ = (i_lo > 0) & (i_hi > i_lo * (1.0 + 1e-15))
    todo = np.nonzero(open_)[0]
    if todo.size:
        x_lo = np.log(i_lo[todo])
        x_hi = np.log(i_hi[todo])
        grid = x_lo[:, None] + (x_hi - x_lo)[:, None] * np.linspace(0.0, 1.0, scan_points)
        gvals = np.empty(grid.shape)
        avals = np.empty(grid.shape)
        for k in range(scan_points):
            gvals[:, k], avals[:, k] = fp.g(todo, grid[:, k])
        iters[todo] = scan_points
        # first grid point with g >= 0; g(x_hi) >= 0 always holds
        first = np.argmax(gvals >= 0.0, axis=1)
        rows = np.arange(todo.size)
        exact = first == 0
        a = grid[rows, np.maximum(first - 1, 0)]
        b = grid[rows, first]
        ga = gvals[rows, np.maximum(first - 1, 0)]
        gb = gvals[rows, first]
        x = b.copy()
        gx = gb.copy()
        ax = avals[rows, first]
        active = ~exact & (np.abs(gb) > tol)
        side = np.zeros(todo.size, dtype=int)
        for it in range(max_iter - scan_points):
            if not active.any():
                break
            k = np.nonzero(active)[0]
            denom = gb[k] - ga[k]
            c = np.where(denom > 0, (a[k] * gb[k] - b[k] * ga[k]) / np.where(denom > 0, denom, 1.0),
                         0.5 * (a[k] + b[k]))
            c = np.clip(c, np.minimum(a[k], b[k]), np.maximum(a[k], b[k]))
            gc, ac = fp.g(todo[k], c)
            iters[todo[k]] += 1
            x[k], gx[k], ax[k] = c, gc, ac
            hit_b = gc >= 0
            # Illinois: halve the stale endpoint's residual on repeated sides
            kb = k[hit_b]
            b[kb], gb[kb] = c[hit_b], gc[hit_b]
            stale = kb[side[kb] == 1]
            ga[stale] *= 0.5
            side[kb] = 1
            ka = k[~hit_b]
            a[ka], ga[ka] = c[~hit_b], gc[~hit_b]
            stale = ka[side[ka] == -1]
            gb[stale] *= 0.5
            side[ka] = -1
            done = (np.abs(gc) <= tol) | (np.abs(b[k] - a[k]) <= 1e-15 * np.abs(c))
            active[k[done]] = False
        if active.any():
            worst = float(np.max(np.abs(gx[active])))
            raise ConvergenceError("steady-state solve did not converge",
                                   residual=worst, iterations=max_iter)
        intensity[todo] = np.exp(x)
        alpha_eff[todo] = ax
        resid[todo] = np.abs(gx)

    a_rt = 2.0 * alpha_eff * medium.path_length
    t_abs = airy_transmission(det, spec, a_rt)
    t_abs = np.asarray(t_abs, dtype=float)
    ratio = t_abs / spec.empty_transmission
    pcirc = intensity * spec.mode_area / 2.0

    def shaped(v):
        v = np.asarray(v).reshape(shape)
        return v.item() if v.ndim == 0 else v

    return SteadyState(shaped(pcirc), shaped(intensity), shaped(alpha_eff),
                       shaped(ratio), shaped(t_abs), shaped(iters), shaped(resid))
