"""Resonance parameters from power spectra and gated ring-down traces.

Linewidths are full widths (FWHM), so ``Q = f0 / linewidth``. Ring-down rates
are energy decay rates: the amplitude envelope decays as ``exp(-rate * t / 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import DriveContaminationError, FitError, NoPeakError, ValidationError

MIN_SPECTRUM_POINTS = 16
MIN_WINDOW_POINTS = 8
MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-10
# second-moment width of a Lorentzian restricted to its half-maximum region,
# in units of the full width
_HALF_MAX_SD_PER_FWHM = math.sqrt(1.0 - math.pi / 4.0) / math.sqrt(math.pi / 2.0) / 2.0


@dataclass(frozen=True)
class Spectrum:
    """PSD on a uniform, strictly increasing frequency grid (Hz)."""

    frequency: np.ndarray = field(repr=False)
    psd: np.ndarray = field(repr=False)
    tag: str = ""

    def __post_init__(self):
        f = np.asarray(self.frequency, dtype=float)
        p = np.asarray(self.psd, dtype=float)
        object.__setattr__(self, "frequency", f)
        object.__setattr__(self, "psd", p)
        if f.ndim != 1 or p.shape != f.shape:
            raise ValidationError("frequency and psd must be 1-D arrays of equal length", field="psd")
        if f.size < MIN_SPECTRUM_POINTS:
            raise ValidationError(f"spectrum needs >= {MIN_SPECTRUM_POINTS} points, got {f.size}", field="frequency")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(p))):
            raise ValidationError("spectrum contains non-finite values", field="psd")
        if np.any(p < 0):
            raise ValidationError("psd values must be >= 0", field="psd")
        check_uniform_grid(f, "frequency")

    @property
    def spacing(self) -> float:
        return (self.frequency[-1] - self.frequency[0]) / (self.frequency.size - 1)


def check_uniform_grid(x: np.ndarray, name: str = "grid", rel_tol: float = 1e-9) -> float:
    """Validate a strictly increasing uniform grid and return its spacing.

    The tolerance is ``rel_tol`` of the spacing plus the float resolution of the
    grid values themselves (a fine grid around a large offset cannot be more
    uniform than its representation).
    """
    dx = np.diff(x)
    if np.any(dx <= 0):
        raise ValidationError(f"{name} must be strictly increasing", field=name)
    mean = (x[-1] - x[0]) / (x.size - 1)
    tol = rel_tol * mean + 8.0 * np.finfo(float).eps * np.max(np.abs(x))
    if np.max(np.abs(dx - mean)) > tol:
        raise ValidationError(f"{name} spacing is not uniform", field=name)
    return mean


@dataclass(frozen=True)
class LorentzianFit:
    center: float
    linewidth: float
    amplitude: float
    offset: float
    center_err: float
    linewidth_err: float
    amplitude_err: float
    offset_err: float
    residual_norm: float
    n_points: int
    n_iterations: int = 0

    @property
    def q(self) -> float:
        return self.center / self.linewidth

    @property
    def q_err(self) -> float:
        return self.q * math.hypot(self.center_err / self.center, self.linewidth_err / self.linewidth)

    def as_dict(self) -> dict:
        return {
            "center_hz": self.center,
            "center_err_hz": self.center_err,
            "linewidth_hz": self.linewidth,
            "linewidth_err_hz": self.linewidth_err,
            "amplitude": self.amplitude,
            "amplitude_err": self.amplitude_err,
            "offset": self.offset,
            "offset_err": self.offset_err,
            "q": self.q,
            "q_err": self.q_err,
            "residual_norm": self.residual_norm,
            "n_points": self.n_points,
        }


def lorentzian(f, center, linewidth, amplitude, offset=0.0):
    """``offset + amplitude * (w/2)^2 / ((f - center)^2 + (w/2)^2)``; ``amplitude`` is the peak height."""
    hw2 = (0.5 * linewidth) ** 2
    return offset + amplitude * hw2 / ((np.asarray(f) - center) ** 2 + hw2)


def _initial_guess(x, y):
    i_pk = int(np.argmax(y))
    edge = max(2, x.size // 10)
    offset = float(np.median(np.concatenate([y[:edge], y[-edge:]])))
    peak = float(y[i_pk] - offset)
    above = y - offset >= 0.5 * peak
    # contiguous half-maximum region around the peak
    lo = i_pk
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = i_pk
    while hi < x.size - 1 and above[hi + 1]:
        hi += 1
    w = y[lo : hi + 1] - offset
    xs = x[lo : hi + 1]
    if hi - lo >= 2:
        mu = np.sum(w * xs) / np.sum(w)
        sd = math.sqrt(max(np.sum(w * (xs - mu) ** 2) / np.sum(w), 0.0))
        width = sd / _HALF_MAX_SD_PER_FWHM
    else:
        width = 0.0
    dx = x[1] - x[0]
    width = max(width, 2.0 * dx)
    return i_pk, offset, peak, width


def fit_lorentzian(spectrum: Spectrum, window: tuple[float, float] | None = None,
                   max_iterations: int = MAX_ITERATIONS) -> LorentzianFit:
    """Least-squares Lorentzian-plus-offset fit.

    Parameters are standardized internally against the initial guess and the
    frequency axis is the grid index times the mean spacing, which keeps
    sub-mHz linewidths on a MHz carrier well conditioned.
    """
    f = spectrum.frequency
    y = spectrum.psd
    if window is not None:
        lo, hi = sorted(window)
        sel = (f >= lo) & (f <= hi)
        if sel.sum() < MIN_WINDOW_POINTS:
            raise ValidationError(f"window holds {int(sel.sum())} points; need >= {MIN_WINDOW_POINTS}", field="window")
        if not np.any(sel & (y == y.max())):
            raise ValidationError("window does not contain the global psd maximum", field="window")
        idx = np.flatnonzero(sel)
        f, y = f[idx], y[idx]
    n = f.size
    med = float(np.median(y))
    if y.max() <= 0 or (med > 0 and y.max() / med < 2.0):
        raise NoPeakError(f"no resolvable peak (max/median = {y.max() / med if med > 0 else math.inf:.3g})")

    dx = (f[-1] - f[0]) / (n - 1)
    i_ref, off0, pk0, w0 = _initial_guess(np.arange(n) * dx, y)
    x = (np.arange(n) - i_ref) * dx
    ys = pk0 if pk0 > 0 else float(y.max())

    def resid(p):
        c, w, a, o = p[0] * w0, p[1] * w0, p[2] * ys, p[3] * ys
        return (lorentzian(x, c, w, a, o) - y) / ys

    def jac(p):
        c, w, a = p[0] * w0, p[1] * w0, p[2] * ys
        hw2 = 0.25 * w * w
        d = (x - c) ** 2 + hw2
        g = hw2 / d
        J = np.empty((n, 4))
        J[:, 0] = a * g * 2.0 * (x - c) / d * w0 / ys
        J[:, 1] = a * (0.5 * w / d - hw2 * 0.5 * w / d ** 2) * w0 / ys
        J[:, 2] = g
        J[:, 3] = 1.0
        return J

    p0 = np.array([0.0, 1.0, 1.0, off0 / ys])
    sol = least_squares(resid, p0, jac=jac, method="lm", xtol=STEP_TOLERANCE, ftol=1e-15,
                        gtol=1e-15, max_nfev=max_iterations * 5)
    rnorm = float(np.linalg.norm(sol.fun) * ys)
    if sol.status <= 0 or not np.all(np.isfinite(sol.x)):
        raise FitError(f"Lorentzian fit did not converge: {sol.message}", best_residual=rnorm)
    c, w, a, o = sol.x[0] * w0, abs(sol.x[1]) * w0, sol.x[2] * ys, sol.x[3] * ys
    if a <= 0:
        raise NoPeakError("fitted peak amplitude is not positive")

    dof = max(n - 4, 1)
    s2 = float(np.sum(sol.fun ** 2)) / dof
    try:
        cov = np.linalg.inv(sol.jac.T @ sol.jac) * s2
        errs = np.sqrt(np.clip(np.diag(cov), 0.0, None)) * np.array([w0, w0, ys, ys])
    except np.linalg.LinAlgError:
        errs = np.full(4, math.inf)
    return LorentzianFit(
        center=float(f[0] + i_ref * dx + c),
        linewidth=float(w),
        amplitude=float(a),
        offset=float(o),
        center_err=float(errs[0]),
        linewidth_err=float(errs[1]),
        amplitude_err=float(errs[2]),
        offset_err=float(errs[3]),
        residual_norm=rnorm,
        n_points=n,
        n_iterations=int(sol.nfev),
    )


def synth_spectrum(center: float, linewidth: float, amplitude: float = 1.0, offset: float = 0.0,
                   start: float | None = None, stop: float | None = None, spacing: float | None = None,
                   noise: float = 0.0, seed: int = 0, tag: str = "synthetic") -> Spectrum:
    """Lorentzian PSD with optional multiplicative Gaussian noise.

    The grid defaults to ``center +/- 10 linewidths`` at ``linewidth / 20``
    spacing. Negative noisy values are clipped to zero.
    """
    if not linewidth > 0:
        raise ValidationError("linewidth must be positive", field="linewidth")
    if spacing is None:
        spacing = linewidth / 20.0
    if start is None:
        start = center - 10.0 * linewidth
    if stop is None:
        stop = center + 10.0 * linewidth
    if start > center - 5.0 * linewidth or stop < center + 5.0 * linewidth:
        raise ValidationError("grid must cover center +/- 5 linewidths", field="grid")
    if not spacing > 0:
        raise ValidationError("spacing must be positive", field="spacing")
    n = int(round((stop - start) / spacing)) + 1
    f = start + spacing * np.arange(n)
    psd = lorentzian(f, center, linewidth, amplitude, offset)
    if noise:
        rng = np.random.default_rng(seed)
        psd = np.clip(psd * (1.0 + noise * rng.standard_normal(n)), 0.0, None)
    return Spectrum(f, psd, tag)


# -- ring-down ----------------------------------------------------------------


@dataclass(frozen=True)
class RingdownTrace:
    """Gated amplitude samples; ``gate`` marks samples taken while the probe was on.

    When ``intervals`` is given, segments are the samples falling in each
    interval; otherwise they are the contiguous runs of gated samples.
    """

    time: np.ndarray = field(repr=False)
    amplitude: np.ndarray = field(repr=False)
    gate: np.ndarray = field(repr=False)
    intervals: tuple = ()

    def __post_init__(self):
        t = np.asarray(self.time, dtype=float)
        a = np.asarray(self.amplitude, dtype=float)
        g = np.asarray(self.gate, dtype=bool)
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "amplitude", a)
        object.__setattr__(self, "gate", g)
        if t.ndim != 1 or a.shape != t.shape or g.shape != t.shape:
            raise ValidationError("time, amplitude and gate must be 1-D arrays of equal length", field="time")
        if t.size and np.any(np.diff(t) <= 0):
            raise ValidationError("time stamps must be strictly increasing", field="time")
        object.__setattr__(self, "intervals", tuple((float(a), float(b)) for a, b in self.intervals))

    @classmethod
    def from_intervals(cls, time, amplitude, intervals) -> "RingdownTrace":
        t = np.asarray(time, dtype=float)
        g = np.zeros(t.shape, dtype=bool)
        for lo, hi in intervals:
            g |= (t >= lo) & (t <= hi)
        return cls(t, amplitude, g, intervals=tuple(intervals))

    def segments(self) -> list[np.ndarray]:
        """Index arrays of gated samples, one per segment."""
        if self.intervals:
            out = []
            for lo, hi in self.intervals:
                idx = np.flatnonzero(self.gate & (self.time >= lo) & (self.time <= hi))
                if idx.size:
                    out.append(idx)
            return out
        idx = np.flatnonzero(self.gate)
        if idx.size == 0:
            return []
        breaks = np.flatnonzero(np.diff(idx) > 1) + 1
        return np.split(idx, breaks)


@dataclass(frozen=True)
class RingdownFit:
    rate: float
    rate_err: float
    initial_amplitude: float
    initial_amplitude_err: float
    n_segments: int
    n_samples: int
    residual_norm: float

    def as_dict(self) -> dict:
        return {
            "energy_decay_rate_hz": self.rate,
            "energy_decay_rate_err_hz": self.rate_err,
            "initial_amplitude": self.initial_amplitude,
            "initial_amplitude_err": self.initial_amplitude_err,
            "n_segments": self.n_segments,
            "n_samples": self.n_samples,
            "residual_norm": self.residual_norm,
        }


def fit_ringdown(trace: RingdownTrace, min_segments: int = 3, min_samples: int = 4) -> RingdownFit:
    """Joint fit of ``A0 * exp(-rate * t / 2)`` over all gated segments.

    A log-linear regression seeds one nonlinear least-squares pass on the raw
    amplitudes.
    """
    segs = [s for s in trace.segments() if s.size >= min_samples]
    if len(segs) < min_segments:
        raise ValidationError(
            f"need >= {min_segments} gated segments with >= {min_samples} samples, found {len(segs)}",
            field="gate",
        )
    idx = np.concatenate(segs)
    t = trace.time[idx]
    a = trace.amplitude[idx]
    pos = a > 0
    if pos.sum() < 2:
        raise DriveContaminationError("no positive amplitude samples to fit")
    # t is shifted to the first gated sample for conditioning
    t0 = t[0]
    tt = t - t0
    slope, intercept = np.polyfit(tt[pos], np.log(a[pos]), 1)
    rate0 = -2.0 * slope
    # an envelope that changes by < 1e-9 over the trace is treated as flat
    if not rate0 * max(tt[-1], 1e-300) > 1e-9:
        raise DriveContaminationError(f"amplitude does not decay (log-linear rate {rate0:.3g} <= 0)")
    amp0 = math.exp(intercept)
    tscale = 2.0 / rate0

    def resid(p):
        return p[0] * np.exp(-p[1] * tt / tscale) - a / amp0

    def jac(p):
        e = np.exp(-p[1] * tt / tscale)
        return np.column_stack([e, -p[0] * tt / tscale * e])

    sol = least_squares(resid, np.array([1.0, 1.0]), jac=jac, method="lm", xtol=STEP_TOLERANCE,
                        ftol=1e-15, gtol=1e-15, max_nfev=MAX_ITERATIONS * 3)
    if sol.status <= 0:
        raise FitError(f"ring-down fit did not converge: {sol.message}",
                       best_residual=float(np.linalg.norm(sol.fun) * amp0))
    amp = sol.x[0] * amp0
    rate = sol.x[1] * 2.0 / tscale
    if not rate > 0:
        raise DriveContaminationError(f"fitted energy decay rate {rate:.3g} <= 0; drive contamination?")
    dof = max(tt.size - 2, 1)
    s2 = float(np.sum(sol.fun ** 2)) / dof
    try:
        cov = np.linalg.inv(sol.jac.T @ sol.jac) * s2
        e_amp = math.sqrt(max(cov[0, 0], 0.0)) * amp0
        e_rate = math.sqrt(max(cov[1, 1], 0.0)) * 2.0 / tscale
    except np.linalg.LinAlgError:
        e_amp = e_rate = math.inf
    # report A0 at the trace origin rather than at the first gated sample
    amp_origin = amp * math.exp(rate * t0 / 2.0)
    return RingdownFit(
        rate=float(rate),
        rate_err=float(e_rate),
        initial_amplitude=float(amp_origin),
        initial_amplitude_err=float(e_amp * math.exp(rate * t0 / 2.0)),
        n_segments=len(segs),
        n_samples=int(tt.size),
        residual_norm=float(np.linalg.norm(sol.fun) * amp0),
    )


def gate_mask(time, period: float, duty: float, phase: float = 0.0) -> np.ndarray:
    """Boolean gate: on for the first ``duty`` fraction of each ``period``."""
    if not 0.0 < duty <= 1.0:
        raise ValidationError("duty cycle must lie in (0, 1]", field="duty")
    if not period > 0:
        raise ValidationError("gate period must be positive", field="period")
    t = np.asarray(time, dtype=float)
    if duty == 1.0:
        return np.ones(t.shape, dtype=bool)
    frac = np.mod((t - phase) / period, 1.0)
    return frac < duty


def synth_ringdown(rate: float, duration: float, sample_interval: float, gate_period: float,
                   duty: float = 0.5, amplitude: float = 1.0, noise: float = 0.0,
                   seed: int = 0) -> RingdownTrace:
    """Gated exponential ring-down; ``noise`` is additive Gaussian relative to ``amplitude``."""
    if not rate > 0:
        raise ValidationError("decay rate must be positive", field="rate")
    if not (duration > 0 and sample_interval > 0):
        raise ValidationError("duration and sample interval must be positive", field="duration")
    n = int(math.floor(duration / sample_interval + 1e-9)) + 1
    t = sample_interval * np.arange(n)
    a = amplitude * np.exp(-rate * t / 2.0)
    if noise:
        rng = np.random.default_rng(seed)
        a = a + noise * amplitude * rng.standard_normal(n)
    return RingdownTrace(t, a, gate_mask(t, gate_period, duty))


def decoherence_decomposition(total_linewidth: float, energy_decay_rate: float) -> float:
    """Pure dephasing rate ``total - energy``; both rates in the same units."""
    if not energy_decay_rate > 0:
        raise ValidationError("energy decay rate must be positive", field="energy_decay_rate")
    if total_linewidth < energy_decay_rate:
        raise ValidationError(
            f"total linewidth {total_linewidth:.6g} is below the energy decay rate {energy_decay_rate:.6g}",
            field="total_linewidth",
        )
    return total_linewidth - energy_decay_rate
