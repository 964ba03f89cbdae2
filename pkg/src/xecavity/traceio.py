"""CSV reading and writing of spectrum traces.

One trace per file, header exactly::

    resonance_thz,probe_power_nw,t_high,t_low,ratio,optical_depth

Floats are written with ``repr`` (shortest round-trip form), so reading a
file back reproduces every value bit for bit. The probe power is scaled to
nW in decimal arithmetic, which keeps that column exact too.
"""
from __future__ import annotations

import math
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np

from .errors import TraceFormatError, ValidationError
from .protocol import ScanSample, SpectrumTrace

HEADER = "resonance_thz,probe_power_nw,t_high,t_low,ratio,optical_depth"
COLUMNS = HEADER.split(",")
OD_TOL = 1e-12


def _watts_to_nw(p):
    return format(Decimal(repr(float(p))).scaleb(9), "f")


def _nw_to_watts(text):
    return float(Decimal(text).scaleb(-9))


def format_trace(trace: SpectrumTrace) -> str:
    lines = [HEADER]
    for s in trace.samples:
        lines.append(",".join([repr(float(s.cavity_resonance)), _watts_to_nw(s.probe_power),
                               repr(float(s.t_high)), repr(float(s.t_low)),
                               repr(float(s.ratio)), repr(float(s.optical_depth))]))
    return "\n".join(lines) + "\n"


def write_trace(trace: SpectrumTrace, destination) -> int:
    """Write ``trace`` as CSV to a path or binary stream; returns bytes written."""
    data = format_trace(trace).encode("utf-8")
    if hasattr(destination, "write"):
        destination.write(data)
        return len(data)
    with open(destination, "wb") as fh:
        fh.write(data)
    return len(data)


def _parse_float(text, row, col):
    if text != text.strip() or not text:
        raise TraceFormatError(f"empty or padded field {text!r}", f"row {row}, column {col}")
    try:
        if col == "probe_power_nw":
            return _nw_to_watts(text)
        return float(text)
    except (ValueError, InvalidOperation):
        raise TraceFormatError(f"not a number: {text!r}", f"row {row}, column {col}") from None


def parse_trace(text: str) -> SpectrumTrace:
    if "\r" in text:
        raise TraceFormatError("line endings must be LF", "file")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != HEADER:
        got = lines[0] if lines else ""
        raise TraceFormatError(f"expected header {HEADER!r}, got {got!r}", "row 1")
    if len(lines) < 2:
        raise TraceFormatError("no data rows", "row 2")
    rows = []
    for k, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != len(COLUMNS):
            raise TraceFormatError(f"expected {len(COLUMNS)} fields, got {len(fields)}",
                                   f"row {k}")
        vals = [_parse_float(f, k, c) for f, c in zip(fields, COLUMNS)]
        res, power, t_high, t_low, ratio, od = vals
        if not all(math.isfinite(v) for v in (res, power, t_high, t_low, ratio)):
            raise TraceFormatError("non-finite value", f"row {k}")
        if not power > 0:
            raise TraceFormatError("probe power must be > 0", f"row {k}, column probe_power_nw")
        if not t_high > 0:
            raise TraceFormatError("t_high must be > 0", f"row {k}, column t_high")
        expect = -math.log(ratio) if ratio > 0 else math.inf
        if not (od == expect or abs(od - expect) <= OD_TOL * max(1.0, abs(expect))):
            raise TraceFormatError("optical_depth is not -ln(ratio)",
                                   f"row {k}, column optical_depth")
        rows.append(vals)
    arr = np.array([r[0] for r in rows])
    bad = np.nonzero(np.diff(arr) <= 0)[0]
    if bad.size:
        raise TraceFormatError("resonance_thz must be strictly increasing",
                               f"row {int(bad[0]) + 3}, column resonance_thz")
    powers = {r[1] for r in rows}
    if len(powers) != 1:
        raise TraceFormatError("probe_power_nw differs between rows", "column probe_power_nw")
    power = powers.pop()
    samples = [ScanSample(r[0], math.nan, r[2], r[3], r[4], r[5], r[1]) for r in rows]
    try:
        return SpectrumTrace(power, samples)
    except ValidationError as exc:
        raise TraceFormatError(str(exc)) from None


def read_trace(source) -> SpectrumTrace:
    """Read a trace from a path, a text/binary stream, or bytes."""
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif hasattr(source, "read"):
        data = source.read()
    else:
        data = Path(source).read_bytes()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TraceFormatError(f"not UTF-8: {exc.reason}", f"byte {exc.start}") from None
    if data.startswith("\ufeff"):
        raise TraceFormatError("byte-order mark not allowed", "row 1")
    return parse_trace(data)

