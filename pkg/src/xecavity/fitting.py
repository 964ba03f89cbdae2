"""Multi-dip Voigt fits of transmission-ratio traces.

The reduced model is

    ratio(nu) = baseline - sum_d depth_d * U_d(nu) / (1 + P / P_sat,d)

with ``U_d`` a Voigt profile scaled to 1 at its center. Within one trace the
probe power is fixed, so each dip's saturation power is held at its
initial value and the fitted depth carries the saturation. Across traces
``fit_global`` fits P_sat jointly and ``estimate_saturation_power`` reads
it off a single frequency.

Minimisation is a damped Gauss-Newton (Levenberg-Marquardt) iteration with
Marquardt diagonal scaling. Dip centers are fitted as MHz offsets from
their initial values, so the parameters stay well scaled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import FitError, ValidationError
from .lineshape import unit_voigt

MAX_ITER = 500
STEP_TOL = 1e-10
COST_TOL = 1e-12
MAX_REJECTS = 20
LAMBDA0 = 1e-3
LAMBDA_UP = 10.0
LAMBDA_DOWN = 3.0
JACOBIAN_TOL = 1e-5

PER_DIP = ("center", "gaussian_fwhm", "lorentzian_fwhm", "depth")


@dataclass(frozen=True)
class Dip:
    center: float  # THz
    gaussian_fwhm: float  # MHz
    lorentzian_fwhm: float  # MHz
    depth: float
    saturation_power: float = math.inf  # W

    def __post_init__(self):
        if not (self.gaussian_fwhm > 0 and self.lorentzian_fwhm > 0):
            raise ValidationError("widths must be > 0", "dip")
        if self.depth < 0:
            raise ValidationError("depth must be >= 0", "dip")
        if not self.saturation_power > 0:
            raise ValidationError("saturation_power must be > 0", "dip")


@dataclass(frozen=True)
class FitModel:
    baseline: float
    dips: tuple
    probe_power: float  # W

    def __post_init__(self):
        object.__setattr__(self, "dips", tuple(
            d if isinstance(d, Dip) else Dip(**d) for d in self.dips))
        if not 0.0 <= self.baseline <= 1.0:
            raise ValidationError("baseline must lie in [0, 1]", "model.baseline")
        if not self.probe_power > 0:
            raise ValidationError("probe_power must be > 0", "model.probe_power")

    def saturation_factors(self):
        return np.array([1.0 / (1.0 + self.probe_power / d.saturation_power)
                         for d in self.dips])

    def __call__(self, frequency):
        """Model ratio at absolute ``frequency`` (THz)."""
        nu = np.asarray(frequency, dtype=float)
        out = np.full(nu.shape, float(self.baseline))
        for d, s in zip(self.dips, self.saturation_factors()):
            out = out - d.depth * s * unit_voigt((nu - d.center) * 1e6,
                                                 d.gaussian_fwhm, d.lorentzian_fwhm)
        return out

    def to_dict(self):
        return {"baseline": self.baseline, "probe_power": self.probe_power,
                "dips": [{"center": d.center, "gaussian_fwhm": d.gaussian_fwhm,
                          "lorentzian_fwhm": d.lorentzian_fwhm, "depth": d.depth,
                          "saturation_power": _json_float(d.saturation_power)}
                         for d in self.dips]}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ValidationError("fit model must be an object", "model")
        extra = set(data) - {"baseline", "probe_power", "dips"}
        if extra:
            raise ValidationError(f"unknown keys {sorted(extra)}", "model")
        dips = []
        for k, d in enumerate(data.get("dips", [])):
            extra = set(d) - set(PER_DIP) - {"saturation_power"}
            if extra:
                raise ValidationError(f"unknown keys {sorted(extra)}", f"model.dips[{k}]")
            d = dict(d)
            if "saturation_power" in d:
                d["saturation_power"] = float(d["saturation_power"])
            dips.append(Dip(**d))
        try:
            return cls(float(data["baseline"]), dips, float(data["probe_power"]))
        except KeyError as exc:
            raise ValidationError("missing key", f"model.{exc.args[0]}") from None


def _json_float(x):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


@dataclass(frozen=True)
class FitResult:
    model: FitModel
    residual_rms: float
    iterations: int
    converged: bool
    covariance_diagonal: dict
    cost_history: tuple = field(default=(), repr=False)

    def to_dict(self):
        return {"model": self.model.to_dict(), "residual_rms": self.residual_rms,
                "iterations": self.iterations, "converged": self.converged,
                "covariance_diagonal": self.covariance_diagonal}


def parameter_names(model: FitModel, free_saturation=False):
    names = ["baseline"]
    per = PER_DIP + (("log_saturation_power",) if free_saturation else ())
    for k in range(len(model.dips)):
        names += [f"dips[{k}].{p}" for p in per]
    return names


class _Problem:
    """Parameter packing, model values and Jacobian over a set of samples.

    ``power`` gives each sample's probe power. With ``free_sat`` the log of
    each dip's saturation power is a fit parameter; otherwise it is fixed.
    """

    def __init__(self, nu, power, initial: FitModel, free_sat=False):
        self.nu = nu
        self.power = power
        self.initial = initial
        self.free_sat = free_sat
        self.npd = 5 if free_sat else 4
        self.c0 = np.array([d.center for d in initial.dips])
        self.sat = [1.0 / (1.0 + power / d.saturation_power) for d in initial.dips]
        # MHz detuning of each sample from each initial center, computed once
        self.x0 = [(nu - c) * 1e6 for c in self.c0]

    def pack(self, model: FitModel):
        p = [model.baseline]
        for d, c in zip(model.dips, self.c0):
            p += [(d.center - c) * 1e6, d.gaussian_fwhm, d.lorentzian_fwhm, d.depth]
            if self.free_sat:
                p.append(math.log(d.saturation_power))
        return np.array(p, dtype=float)

    def unpack(self, p, probe_power=None):
        dips = []
        for k, d in enumerate(self.initial.dips):
            off, g, l, a = p[1 + self.npd * k:5 + self.npd * k]
            ps = math.exp(p[5 + self.npd * k]) if self.free_sat else d.saturation_power
            dips.append(Dip(self.c0[k] + off * 1e-6, g, l, max(a, 0.0), ps))
        return FitModel(min(max(p[0], 0.0), 1.0), dips,
                        probe_power or self.initial.probe_power)

    def scales(self, p):
        s = np.abs(p).copy()
        s[0] = max(s[0], 1.0)
        for k in range(len(self.c0)):
            i = 1 + self.npd * k
            s[i] = abs(p[i + 1]) + abs(p[i + 2])
            if self.free_sat:
                s[i + 4] = 1.0
        return np.maximum(s, 1e-300)

    def valid(self, p):
        g = p[2::self.npd]
        l = p[3::self.npd]
        return bool(np.all(g > 0) and np.all(l > 0) and np.all(np.isfinite(p)))

    def values(self, p, jacobian=True):
        m = np.full(self.nu.shape, p[0])
        jac = np.zeros((self.nu.size, p.size)) if jacobian else None
        if jacobian:
            jac[:, 0] = 1.0
        for k in range(len(self.c0)):
            i = 1 + self.npd * k
            off, g, l, a = p[i:i + 4]
            if self.free_sat:
                s = 1.0 / (1.0 + self.power * math.exp(-p[i + 4]))
            else:
                s = self.sat[k]
            x = self.x0[k] - off
            if jacobian:
                u, du_dx, du_dg, du_dl = unit_voigt(x, g, l, derivatives=True)
                jac[:, i] = a * s * du_dx
                jac[:, i + 1] = -a * s * du_dg
                jac[:, i + 2] = -a * s * du_dl
                jac[:, i + 3] = -s * u
                if self.free_sat:
                    jac[:, i + 4] = -a * u * s * (1.0 - s)
            else:
                u = unit_voigt(x, g, l)
            m = m - a * s * u
        return m, jac


def _transform(m, jac, od_scale):
    """Map ratio-scale model/Jacobian to the OD scale if requested."""
    if not od_scale:
        return m, jac
    if np.any(m <= 0):
        return None, None
    return -np.log(m), (None if jac is None else -jac / m[:, None])


def _data(traces, od_scale):
    nu = np.concatenate([t.resonance for t in traces])
    y = np.concatenate([t.optical_depth if od_scale else t.ratio for t in traces])
    power = np.concatenate([np.full(len(t), t.probe_power) for t in traces])
    keep = np.isfinite(y)
    return nu[keep], y[keep], power[keep]


def _mismatch(prob, p, od_scale, rel_step=1e-6):
    m, jac = _transform(*prob.values(p), od_scale)
    if m is None:
        raise ValidationError("model ratio must be > 0 on the OD scale", "model")
    h = rel_step * prob.scales(p)
    worst = 0.0
    for k in range(p.size):
        up, dn = p.copy(), p.copy()
        up[k] += h[k]
        dn[k] -= h[k]
        fu, _ = _transform(*prob.values(up, False), od_scale)
        fd, _ = _transform(*prob.values(dn, False), od_scale)
        fd_col = (fu - fd) / (2.0 * h[k])
        ref = np.max(np.abs(jac[:, k]))
        if ref == 0:
            worst = max(worst, float(np.max(np.abs(fd_col))))
            continue
        worst = max(worst, float(np.max(np.abs(fd_col - jac[:, k])) / ref))
    return worst


def jacobian_mismatch(trace, model: FitModel, od_scale=False, rel_step=1e-6):
    """Largest relative difference between analytic and central-difference Jacobians.

    Each column is compared relative to its largest analytic entry.
    """
    nu, _, power = _data([trace], od_scale)
    prob = _Problem(nu, power, model)
    return _mismatch(prob, prob.pack(model), od_scale, rel_step)


def _rank_ok(jac):
    norms = np.linalg.norm(jac, axis=0)
    if np.any(norms == 0) or not np.all(np.isfinite(jac)):
        return False
    sv = np.linalg.svd(jac / norms, compute_uv=False)
    return sv[-1] > 1e-10 * sv[0]


def _minimize(prob, p, y, od_scale, max_iter):
    """Damped Gauss-Newton loop; returns (p, jac, cost, iterations, converged, history)."""
    m, jac = _transform(*prob.values(p), od_scale)
    if m is None:
        raise ValidationError("initial model ratio must be > 0 on the OD scale", "initial")
    r = m - y
    cost = float(r @ r)
    history = [cost]
    lam = LAMBDA0
    rejects = 0
    converged = cost == 0.0
    it = 0
    while not converged and it < max_iter:
        if not _rank_ok(jac):
            raise FitError("rank-deficient Jacobian", iterations=it,
                           context="parameters are not identifiable from this data")
        jtj = jac.T @ jac
        grad = jac.T @ r
        it += 1
        new = None
        while True:
            a = jtj + lam * np.diag(np.diag(jtj))
            try:
                step = -np.linalg.solve(a, grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.max(np.abs(step) / prob.scales(p)) < STEP_TOL:
                # at the rounding floor: no representable improvement left
                break
            trial = None if step is None else p + step
            if trial is not None and prob.valid(trial):
                mt, jt = _transform(*prob.values(trial), od_scale)
                if mt is not None:
                    rt = mt - y
                    ct = float(rt @ rt)
                    if ct < cost:
                        new = (trial, mt, jt, rt, ct)
                        break
            lam *= LAMBDA_UP
            rejects += 1
            if rejects >= MAX_REJECTS:
                raise FitError("fit diverged: residual grew on consecutive damped steps",
                               residual=math.sqrt(cost / y.size), iterations=it)
        if new is None:
            converged = True
            break
        rejects = 0
        lam /= LAMBDA_DOWN
        rel_step = float(np.max(np.abs(step) / prob.scales(p)))
        rel_cost = (cost - new[4]) / cost
        p, m, jac, r, cost = new
        history.append(cost)
        if rel_step < STEP_TOL or rel_cost < COST_TOL or cost == 0.0:
            converged = True
    return p, jac, cost, it, converged, history


def _result(prob, p, jac, cost, n, it, converged, history, probe_power=None):
    model = prob.unpack(p, probe_power)
    dof = max(n - p.size, 1)
    names = parameter_names(model, prob.free_sat)
    try:
        var = np.diag(np.linalg.inv(jac.T @ jac)) * (cost / dof)
    except np.linalg.LinAlgError:
        var = np.full(p.size, np.inf)
    # center variances are in MHz^2
    return FitResult(model, math.sqrt(cost / n), it, converged,
                     {k: float(v) for k, v in zip(names, var)}, tuple(history))


def _prepare(traces, initial, od_scale, free_sat, check_jacobian, where):
    nu, y, power = _data(traces, od_scale)
    if not initial.dips:
        raise ValidationError("model has no dips", "initial")
    prob = _Problem(nu, power, initial, free_sat)
    p = prob.pack(initial)
    if nu.size < 3 * p.size:
        raise ValidationError(
            f"{nu.size} samples for {p.size} free parameters; need at least {3 * p.size}",
            where)
    if check_jacobian:
        err = _mismatch(prob, p, od_scale)
        if err > JACOBIAN_TOL:
            raise FitError("analytic Jacobian disagrees with finite differences",
                           residual=err)
    return prob, p, y


def fit_trace(trace, initial: FitModel, od_scale=False, check_jacobian=False,
              max_iter=MAX_ITER) -> FitResult:
    """Least-squares fit of ``initial`` to a SpectrumTrace.

    Fits the ratio column, or the optical_depth column with ``od_scale``.
    Saturation powers stay at their initial values (the trace's probe power
    is used in the model). Stops when the relative parameter step falls
    below 1e-10, the relative cost change below 1e-12, or after
    ``max_iter`` iterations (then ``converged`` is False). Raises FitError
    on a rank-deficient Jacobian or after 20 consecutive rejected steps.
    """
    initial = replace(initial, probe_power=trace.probe_power)
    prob, p, y = _prepare([trace], initial, od_scale, False, check_jacobian, "fit_trace")
    p, jac, cost, it, conv, hist = _minimize(prob, p, y, od_scale, max_iter)
    return _result(prob, p, jac, cost, y.size, it, conv, hist)


def fit_global(traces, initial: FitModel, od_scale=False, check_jacobian=False,
               max_iter=MAX_ITER) -> FitResult:
    """Joint fit of traces taken at different probe powers.

    Centers, widths, depths and the baseline are shared; each dip's
    saturation power is a free parameter (fitted as its logarithm, so the
    initial values must be finite). The returned model carries the lowest
    probe power.
    """
    traces = sorted(traces, key=lambda t: t.probe_power)
    if len({t.probe_power for t in traces}) < 2:
        raise ValidationError("need traces at >= 2 distinct probe powers", "fit_global")
    if any(not math.isfinite(d.saturation_power) for d in initial.dips):
        raise ValidationError("initial saturation powers must be finite", "fit_global")
    prob, p, y = _prepare(traces, initial, od_scale, True, check_jacobian, "fit_global")
    p, jac, cost, it, conv, hist = _minimize(prob, p, y, od_scale, max_iter)
    return _result(prob, p, jac, cost, y.size, it, conv, hist, traces[0].probe_power)


def guess_model(trace, max_dips=5, gaussian_fwhm=400.0, lorentzian_fwhm=300.0,
                prominence=0.05) -> FitModel:
    """Crude initializer: one dip per prominent local minimum of the ratio."""
    from scipy.signal import find_peaks, peak_widths

    y = trace.ratio
    nu = trace.resonance
    finite = np.isfinite(y)
    if finite.sum() < 3:
        raise ValidationError("trace has too few finite samples", "trace")
    base = float(np.clip(np.max(y[finite]), 0.0, 1.0))
    depth = base - np.where(finite, y, base)
    peaks, props = find_peaks(depth, prominence=prominence)
    if peaks.size == 0:
        raise ValidationError("no dip found in trace", "trace")
    order = np.argsort(props["prominences"])[::-1][:max_dips]
    peaks = np.sort(peaks[order])
    widths = peak_widths(depth, peaks, rel_height=0.5)[0]
    step = np.median(np.diff(nu)) * 1e6
    dips = []
    for k, w in zip(peaks, widths):
        fw = max(w * step, 1e-3)
        scale = fw / (gaussian_fwhm + lorentzian_fwhm) * 1.6
        dips.append(Dip(float(nu[k]), gaussian_fwhm * scale, lorentzian_fwhm * scale,
                        float(depth[k])))
    return FitModel(base, dips, trace.probe_power)


@dataclass(frozen=True)
class SaturationEstimate:
    p_sat: float  # W, inf when the data show no saturation
    curve: tuple  # (power W, value) pairs used in the fit
    baseline: float
    depth: float
    residual_rms: float


def _saturation_fit(powers, values):
    """Fit values = b - d / (1 + P/P_sat); returns (P_sat, b, d, cost).

    b and d are eliminated by linear least squares; log P_sat is found by a
    coarse scan followed by a bounded 1-D minimisation.
    """
    p = np.asarray(powers, dtype=float)
    v = np.asarray(values, dtype=float)

    def solve(log_ps):
        f = 1.0 / (1.0 + p / math.exp(log_ps))
        a = np.column_stack([np.ones_like(p), -f])
        coef, *_ = np.linalg.lstsq(a, v, rcond=None)
        res = a @ coef - v
        return float(res @ res), coef

    if np.ptp(v) <= 1e-12 * max(1.0, float(np.max(np.abs(v)))):
        return math.inf, float(np.mean(v)), 0.0, 0.0
    lo = math.log(p.min()) - 6.0
    hi = math.log(p.max()) + 6.0
    grid = np.linspace(lo, hi, 241)
    costs = np.array([solve(g)[0] for g in grid])
    k = int(np.argmin(costs))
    if k in (0, grid.size - 1):
        # the ratio varies, but not in a way that places P_sat within reach of
        # the measured powers (e.g. a curve that is still steepening at the top)
        raise FitError("saturation power is not bounded by the data",
                       residual=math.sqrt(costs[k] / p.size),
                       context=f"best fit at the {'lower' if k == 0 else 'upper'} edge "
                               f"of [{math.exp(lo):.3g}, {math.exp(hi):.3g}] W")
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    opt = minimize_scalar(lambda g: solve(g)[0], bounds=(a, b), method="bounded",
                          options={"xatol": 1e-10})
    cost, coef = solve(opt.x)
    return math.exp(opt.x), float(coef[0]), float(coef[1]), cost


def estimate_saturation_power(traces, frequency) -> SaturationEstimate:
    """Saturation power from the ratio at ``frequency`` across probe powers.

    Takes each trace's sample nearest ``frequency`` and fits
    ratio(P) = b - d / (1 + P/P_sat). Returns ``p_sat = inf`` when the
    ratio does not change with power (a linear medium). Raises FitError
    when the ratio changes but the best P_sat falls outside the searched
    range (about 400x beyond the lowest and highest powers), as happens for
    a curve still steepening at the highest power.
    """
    powers = sorted({t.probe_power for t in traces})
    if len(powers) < 3:
        raise ValidationError("need traces at >= 3 distinct probe powers",
                              "estimate_saturation_power")
    curve = []
    for t in sorted(traces, key=lambda t: t.probe_power):
        r = t.resonance
        if not r[0] <= frequency <= r[-1]:
            raise ValidationError(f"frequency {frequency} THz outside trace range "
                                  f"[{r[0]}, {r[-1]}]", "estimate_saturation_power")
        curve.append((t.probe_power, float(t.ratio[int(np.argmin(np.abs(r - frequency)))])))
    p_sat, b, d, cost = _saturation_fit(*zip(*curve))
    return SaturationEstimate(p_sat, tuple(curve), b, d, math.sqrt(cost / len(curve)))
