"""CSV readers and writers for every data file the toolkit consumes or emits.

All quantities are SI base units. Floats are written with ``repr`` so files
re-parse to identical values and repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .electromech import SimTrace
from .errors import ParseError, ValidationError
from .membrane import ModeIndex, ModeShapeField
from .spectral import RingdownTrace, Spectrum
from .stability import AllanCurve, FrequencySeries
from .stress import ModeRecord, StressFitResult

SPECTRUM_HEADER = ("freq_hz", "psd")
RINGDOWN_HEADER = ("time_s", "amplitude", "gate")
MODE_TABLE_HEADER = ("m", "n", "freq_hz", "q")
SERIES_HEADER = ("time_s", "freq_hz")
ALLAN_HEADER = ("tau_s", "sigma", "n_diffs")
STRESS_PLOT_HEADER = ("m2_plus_n2", "f_meas_hz", "f_pred_hz")
TRACE_HEADER = ("time_s", "re_b1", "im_b1", "re_b2", "im_b2", "occ1", "occ2", "phase_label")
SHAPE_HEADER = ("x", "y", "amplitude")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _read_table(path, header):
    """Rows of a headed CSV as ``(line_number, cells)`` plus ``# key=value`` metadata."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path=path) from None
    meta, rows = {}, []
    seen_header = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            continue
        cells = next(csv.reader([line]))
        cells = [c.strip() for c in cells]
        if not seen_header:
            if tuple(cells) != tuple(header):
                raise ParseError(f"expected header {','.join(header)!r}, got {line!r}", path=path, line=lineno)
            seen_header = True
            continue
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(cells)}", path=path, line=lineno)
        rows.append((lineno, cells))
    if not seen_header:
        raise ParseError("file is empty or has no header", path=path, line=1)
    return rows, meta


def _float(cell, path, line, name):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"{name}: not a number: {cell!r}", path=path, line=line) from None
    if math.isinf(v):
        raise ParseError(f"{name}: infinite value", path=path, line=line)
    return v


def _int(cell, path, line, name):
    try:
        return int(cell)
    except ValueError:
        raise ParseError(f"{name}: not an integer: {cell!r}", path=path, line=line) from None


def _write(path, header, rows, comments=()):
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    Path(path).write_text(buf.getvalue())
    return Path(path)


def _wrap(path, exc, line=None):
    return ParseError(str(exc), path=path, line=line)


# -- spectrum --------------------------------------------------------------------


def read_spectrum(path) -> Spectrum:
    rows, meta = _read_table(path, SPECTRUM_HEADER)
    f = [_float(c[0], path, ln, "freq_hz") for ln, c in rows]
    p = [_float(c[1], path, ln, "psd") for ln, c in rows]
    try:
        return Spectrum(np.array(f), np.array(p), meta.get("tag", Path(path).stem))
    except ValidationError as exc:
        raise _wrap(path, exc) from None


def write_spectrum(path, spectrum: Spectrum):
    return _write(path, SPECTRUM_HEADER, ((_fmt(a), _fmt(b)) for a, b in zip(spectrum.frequency, spectrum.psd)))


# -- ring-down -------------------------------------------------------------------


def read_ringdown(path) -> RingdownTrace:
    rows, _ = _read_table(path, RINGDOWN_HEADER)
    t, a, g = [], [], []
    for ln, c in rows:
        t.append(_float(c[0], path, ln, "time_s"))
        a.append(_float(c[1], path, ln, "amplitude"))
        if c[2] not in ("0", "1"):
            raise ParseError(f"gate must be 0 or 1, got {c[2]!r}", path=path, line=ln)
        g.append(c[2] == "1")
    try:
        return RingdownTrace(np.array(t), np.array(a), np.array(g, dtype=bool))
    except ValidationError as exc:
        raise _wrap(path, exc) from None


def write_ringdown(path, trace: RingdownTrace):
    rows = ((_fmt(t), _fmt(a), "1" if g else "0") for t, a, g in zip(trace.time, trace.amplitude, trace.gate))
    return _write(path, RINGDOWN_HEADER, rows)


# -- mode table ------------------------------------------------------------------


def read_mode_table(path) -> list[ModeRecord]:
    """Mode records; ``m`` and ``n`` may both be blank for unassigned modes."""
    try:
        empty = not Path(path).read_text().strip()
    except OSError:
        empty = False
    if empty:
        raise ParseError("no modes: file is empty", path=path, line=1)
    rows, _ = _read_table(path, MODE_TABLE_HEADER)
    if not rows:
        raise ParseError("no modes: table has a header but no rows", path=path)
    out = []
    for ln, c in rows:
        m, n = c[0], c[1]
        if bool(m) != bool(n):
            raise ParseError("m and n must both be given or both blank", path=path, line=ln)
        f = _float(c[2], path, ln, "freq_hz")
        q = _float(c[3], path, ln, "q") if c[3] else None
        try:
            idx = ModeIndex.of(_int(m, path, ln, "m"), _int(n, path, ln, "n")) if m else None
            out.append(ModeRecord(f, idx, q=q))
        except ValidationError as exc:
            raise _wrap(path, exc, ln) from None
    return out


def write_mode_table(path, modes):
    rows = []
    for rec in modes:
        m, n = (str(rec.index.m), str(rec.index.n)) if rec.index is not None else ("", "")
        rows.append((m, n, _fmt(rec.frequency), _fmt(rec.q) if rec.q is not None else ""))
    return _write(path, MODE_TABLE_HEADER, rows)


# -- frequency series ------------------------------------------------------------


def read_series(path, sample_interval: float | None = None) -> FrequencySeries:
    """Frequency log with a ``# f0_hz=<value>`` header; gaps become NaN samples."""
    rows, meta = _read_table(path, SERIES_HEADER)
    if "f0_hz" not in meta:
        raise ParseError("missing '# f0_hz=<value>' header line", path=path, line=1)
    try:
        f0 = float(meta["f0_hz"])
    except ValueError:
        raise ParseError(f"f0_hz is not a number: {meta['f0_hz']!r}", path=path, line=1) from None
    if sample_interval is None and "sample_interval_s" in meta:
        sample_interval = float(meta["sample_interval_s"])
    t = [_float(c[0], path, ln, "time_s") for ln, c in rows]
    f = [_float(c[1], path, ln, "freq_hz") for ln, c in rows]
    try:
        return FrequencySeries.from_timestamps(np.array(t), np.array(f), f0, sample_interval)
    except ValidationError as exc:
        raise _wrap(path, exc) from None


def write_series(path, series: FrequencySeries):
    ok = ~np.isnan(series.samples)
    rows = ((_fmt(t), _fmt(f)) for t, f in zip(series.times[ok], series.samples[ok]))
    comments = (f"f0_hz={_fmt(series.f0)}", f"sample_interval_s={_fmt(series.sample_interval)}")
    return _write(path, SERIES_HEADER, rows, comments)


# -- outputs ---------------------------------------------------------------------


def read_allan_curve(path) -> AllanCurve:
    rows, _ = _read_table(path, ALLAN_HEADER)
    tau = np.array([_float(c[0], path, ln, "tau_s") for ln, c in rows])
    sig = np.array([_float(c[1], path, ln, "sigma") for ln, c in rows])
    nd = np.array([_int(c[2], path, ln, "n_diffs") for ln, c in rows], dtype=int)
    try:
        return AllanCurve(tau, sig, nd)
    except ValidationError as exc:
        raise _wrap(path, exc) from None


def write_allan_curve(path, curve: AllanCurve):
    rows = ((_fmt(t), _fmt(s), _fmt(int(n))) for t, s, n in zip(curve.tau, curve.sigma, curve.n_diffs))
    return _write(path, ALLAN_HEADER, rows)


def write_stress_plot(path, result: StressFitResult):
    return _write(path, STRESS_PLOT_HEADER, ((_fmt(o), _fmt(a), _fmt(b)) for o, a, b in result.plot_rows()))


def read_stress_plot(path):
    rows, _ = _read_table(path, STRESS_PLOT_HEADER)
    return [
        (_int(c[0], path, ln, "m2_plus_n2"), _float(c[1], path, ln, "f_meas_hz"), _float(c[2], path, ln, "f_pred_hz"))
        for ln, c in rows
    ]


def write_trace(path, trace: SimTrace):
    rows = (
        (_fmt(t), _fmt(b1.real), _fmt(b1.imag), _fmt(b2.real), _fmt(b2.imag), _fmt(o1), _fmt(o2), lab)
        for t, b1, b2, o1, o2, lab in zip(trace.time, trace.b1, trace.b2, trace.occ1, trace.occ2, trace.labels)
    )
    return _write(path, TRACE_HEADER, rows)


def read_trace(path) -> dict:
    """Exported trace columns as arrays (the integrator state is not stored)."""
    rows, _ = _read_table(path, TRACE_HEADER)
    cols = {name: [] for name in TRACE_HEADER}
    for ln, c in rows:
        for name, cell in zip(TRACE_HEADER[:-1], c[:-1]):
            cols[name].append(_float(cell, path, ln, name))
        cols["phase_label"].append(c[-1])
    return {k: np.array(v) for k, v in cols.items()}


def write_shape_grid(path, shape: ModeShapeField):
    c = shape.coords
    rows = (
        (_fmt(c[j]), _fmt(c[i]), _fmt(shape.amplitude[i, j]))
        for i in range(shape.resolution)
        for j in range(shape.resolution)
    )
    return _write(path, SHAPE_HEADER, rows)


def read_shape_grid(path) -> np.ndarray:
    rows, _ = _read_table(path, SHAPE_HEADER)
    return np.array([[_float(x, path, ln, h) for x, h in zip(c, SHAPE_HEADER)] for ln, c in rows])


def write_json(path, payload) -> Path:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return Path(path)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
