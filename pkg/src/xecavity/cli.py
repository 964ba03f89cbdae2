"""Command-line entry point: ``xecavity <command> [--config FILE] [--set k=v ...]``.

Exit codes: 0 success, 1 validation or configuration error (including a
failed selfcheck), 2 solver or fit non-convergence, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from decimal import Decimal
from pathlib import Path

import numpy as np

from . import acceptance
from .cavity import figures, solve_steady_state
from .catalog import read_catalog
from .config import config_to_dict, load_config
from .errors import ConvergenceError, ValidationError
from .fitting import FitModel, fit_global, fit_trace, guess_model
from .medium import unsaturated_alpha
from .protocol import run_scan
from .traceio import read_trace, write_trace

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_IO = 0, 1, 2, 3

PLOT_STUB = '''"""Plot the traces written by `xecavity scan` (needs matplotlib)."""
import csv
import glob
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
fig, ax = plt.subplots()
for path in sorted(glob.glob(os.path.join(here, "{prefix}_*.csv"))):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ref = float(rows[0]["resonance_thz"])
    x = [(float(r["resonance_thz"]) - ref) * 1e3 for r in rows]
    y = [float(r["ratio"]) for r in rows]
    ax.plot(x, y, label=rows[0]["probe_power_nw"] + " nW")
ax.set_xlabel("cavity resonance - start (GHz)")
ax.set_ylabel("transmission ratio")
ax.legend()
plt.show()
'''


def _nw_label(power):
    return format(Decimal(repr(float(power))).scaleb(9).normalize(), "f").replace(".", "p")


def _emit(text, output):
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_spectrum(args, cfg):
    cat = cfg.load_catalog()
    plan = cfg.plan
    start = plan.resonance_start if args.start is None else args.start
    stop = plan.resonance_stop if args.stop is None else args.stop
    step = plan.step if args.step is None else args.step
    if not (start < stop and step > 0):
        raise ValidationError("need start < stop and step > 0", "spectrum")
    n = int(np.floor((stop - start) * 1e6 / step + 1e-9)) + 1
    nu = start + np.arange(n) * step * 1e-6
    a0 = np.atleast_1d(unsaturated_alpha(nu, cfg.medium, cat))
    lines = ["frequency_thz,alpha0_per_cm,single_pass_od"]
    lines += [f"{f!r},{a!r},{a * cfg.medium.path_length!r}"
              for f, a in zip(nu.tolist(), a0.tolist())]
    _emit("\n".join(lines) + "\n", args.output)
    return EXIT_OK


def cmd_scan(args, cfg):
    cat = cfg.load_catalog()
    out = Path(args.output_dir or cfg.output.directory)
    traces = run_scan(cfg.plan, cfg.cavity, cfg.medium, cat, workers=args.workers)
    out.mkdir(parents=True, exist_ok=True)
    prefix = cfg.output.prefix
    written = []
    for t in traces:
        path = out / f"{prefix}_{_nw_label(t.probe_power)}nW.csv"
        write_trace(t, path)
        written.append(path)
    meta = {"config": config_to_dict(cfg), "config_hash": traces[0].metadata["config_hash"],
            "files": [p.name for p in written]}
    (out / f"{prefix}_meta.json").write_text(json.dumps(meta, indent=2) + "\n",
                                             encoding="utf-8")
    if cfg.output.plot_script:
        (out / f"plot_{prefix}.py").write_text(PLOT_STUB.replace("{prefix}", prefix),
                                               encoding="utf-8")
    if not args.quiet:
        for p in written:
            print(p)
    return EXIT_OK


def cmd_transmission(args, cfg):
    cat = cfg.load_catalog()
    res = args.frequency - args.detuning * 1e-6
    st = solve_steady_state(args.power, args.frequency, res, cfg.cavity, cfg.medium, cat)
    fig = figures(cfg.cavity, args.frequency)
    report = {"input_power_w": args.power, "laser_frequency_thz": args.frequency,
              "detuning_mhz": args.detuning,
              "circulating_power_w": st.circulating_power, "intensity_w_cm2": st.intensity,
              "alpha_eff_per_cm": st.alpha_eff, "transmission_ratio": st.transmission_ratio,
              "absolute_transmission": st.absolute_transmission,
              "iterations": int(st.iterations), "residual": st.residual,
              "cavity": {"fsr_ghz": fig.fsr, "finesse": fig.finesse,
                         "linewidth_mhz": fig.linewidth, "q": fig.quality_factor,
                         "buildup": fig.buildup}}
    _emit(json.dumps(report, indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_fit(args, cfg):
    traces = [read_trace(p) for p in args.traces]
    if args.initial:
        try:
            data = json.loads(Path(args.initial).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(exc.msg, f"{args.initial}: line {exc.lineno}") from None
        initial = FitModel.from_dict(data)
    else:
        initial = guess_model(min(traces, key=lambda t: t.probe_power), max_dips=args.max_dips)
    if len(traces) > 1:
        if not args.initial:
            initial = replace(initial, dips=[replace(d, saturation_power=args.saturation_guess)
                                             for d in initial.dips])
        result = fit_global(traces, initial, od_scale=args.od)
    else:
        result = fit_trace(traces[0], initial, od_scale=args.od)
    _emit(json.dumps(result.to_dict(), indent=2) + "\n", args.output)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def cmd_catalog_validate(args, cfg):
    cat = read_catalog(args.path) if args.path else cfg.load_catalog()
    masses = sorted({s.mass_number for s in cat.species})
    print(f"valid: {len(cat)} lines, {len(cat.species)} species ({', '.join(map(str, masses))})")
    return EXIT_OK


def cmd_selfcheck(args, cfg):
    results = acceptance.run_all(echo=print)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failing: {', '.join(map(str, failed))}" if failed else ""))
    return EXIT_OK if not failed else EXIT_INVALID


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config value")
    parser = _Parser(prog="xecavity", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("spectrum", parents=[common], help="unsaturated alpha over a range")
    p.add_argument("--start", type=float, help="THz")
    p.add_argument("--stop", type=float, help="THz")
    p.add_argument("--step", type=float, help="MHz")
    p.add_argument("--output", help="CSV file (default stdout)")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("scan", parents=[common], help="full lock-and-probe scan")
    p.add_argument("--output-dir", help="overrides output.directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("transmission", parents=[common], help="single steady-state query")
    p.add_argument("--power", type=float, required=True, help="input power, W")
    p.add_argument("--frequency", type=float, default=acceptance.ANCHOR, help="laser, THz")
    p.add_argument("--detuning", type=float, default=0.0,
                   help="laser minus cavity resonance, MHz")
    p.add_argument("--output", help="JSON file (default stdout)")
    p.set_defaults(func=cmd_transmission)

    p = sub.add_parser("fit", parents=[common], help="fit trace CSV file(s)")
    p.add_argument("traces", nargs="+", help="trace CSV; several = joint fit across powers")
    p.add_argument("--initial", help="FitModel JSON; default is a guess from the data")
    p.add_argument("--od", action="store_true", help="fit on the optical-depth scale")
    p.add_argument("--max-dips", type=int, default=5)
    p.add_argument("--saturation-guess", type=float, default=2e-9,
                   help="initial P_sat (W) for joint fits without --initial")
    p.add_argument("--output", help="JSON report file (default stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("catalog-validate", parents=[common], help="validate a catalog file")
    p.add_argument("path", nargs="?", help="catalog JSON (default: configured catalog)")
    p.set_defaults(func=cmd_catalog_validate)

    p = sub.add_parser("selfcheck", parents=[common], help="run the acceptance suite")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return args.func(args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
