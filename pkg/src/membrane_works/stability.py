"""Frequency-stability analysis of resonance-frequency time series.

The Allan deviation uses non-overlapping averaging windows with zero dead
time::

    sigma(tau)^2 = 1 / (2 (N - 1)) * sum_i ((fbar_{i+1} - fbar_i) / f0)^2
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ComputationError, ValidationError

SECONDS_PER_DAY = 86400.0
WHITE_NOISE_EXPONENT_RANGE = (-0.6, -0.4)
_MULTIPLE_TOL = 1e-9


@dataclass(frozen=True)
class FrequencySeries:
    """Uniformly sampled resonance frequencies; NaN marks a missing sample."""

    sample_interval: float
    samples: np.ndarray = field(repr=False)
    f0: float
    start: float = 0.0

    def __post_init__(self):
        y = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", y)
        if not (math.isfinite(self.sample_interval) and self.sample_interval > 0):
            raise ValidationError("sample interval must be positive", field="sample_interval")
        if not (math.isfinite(self.f0) and self.f0 > 0):
            raise ValidationError("reference frequency f0 must be positive", field="f0")
        if y.ndim != 1 or y.size < 3:
            raise ValidationError("series needs at least 3 samples", field="samples")
        if np.any(np.isinf(y)):
            raise ValidationError("series contains infinite samples", field="samples")

    @classmethod
    def from_timestamps(cls, time, freq, f0: float, sample_interval: float | None = None) -> "FrequencySeries":
        """Build from (time, frequency) pairs, inserting NaN for whole missing samples.

        Irregular spacing that is not an integer multiple of the sample
        interval is rejected rather than interpolated.
        """
        t = np.asarray(time, dtype=float)
        f = np.asarray(freq, dtype=float)
        if t.shape != f.shape or t.ndim != 1 or t.size < 3:
            raise ValidationError("need >= 3 (time, frequency) pairs", field="samples")
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise ValidationError("time stamps must be strictly increasing", field="time")
        tau0 = float(np.min(dt)) if sample_interval is None else float(sample_interval)
        steps = dt / tau0
        k = np.rint(steps)
        if np.any(k < 1) or np.any(np.abs(steps - k) > 1e-6 * np.maximum(k, 1.0)):
            raise ValidationError("samples are not on a uniform grid (gaps must be whole samples)", field="time")
        pos = np.concatenate([[0], np.cumsum(k.astype(int))])
        y = np.full(pos[-1] + 1, np.nan)
        y[pos] = f
        return cls(tau0, y, f0, float(t[0]))

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.n_samples * self.sample_interval

    @property
    def times(self) -> np.ndarray:
        return self.start + self.sample_interval * np.arange(self.n_samples)

    @property
    def has_gaps(self) -> bool:
        return bool(np.any(np.isnan(self.samples)))


def _window_length(series: FrequencySeries, tau: float) -> int:
    ratio = tau / series.sample_interval
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > _MULTIPLE_TOL * max(k, 1):
        raise ValidationError(
            f"tau = {tau:g} s is not a positive integer multiple of the sample interval "
            f"{series.sample_interval:g} s",
            field="tau",
        )
    return k


def allan_deviation_detail(series: FrequencySeries, tau: float) -> tuple[float, int]:
    """``(sigma, n_diffs)`` at integration time ``tau``."""
    k = _window_length(series, tau)
    if series.n_samples // k < 2:
        raise ValidationError(
            f"tau = {tau:g} s needs >= {2 * k} samples for two averaging windows, have {series.n_samples}",
            field="tau",
        )
    sigma, n_diffs = kernels.allan_sigma(np.ascontiguousarray(series.samples), k, float(series.f0))
    if n_diffs == 0:
        raise ValidationError(f"gaps leave no pair of adjacent valid windows at tau = {tau:g} s", field="tau")
    return float(sigma), int(n_diffs)


def allan_deviation(series: FrequencySeries, tau: float) -> float:
    """Non-overlapping Allan deviation (dimensionless) at integration time ``tau``."""
    return allan_deviation_detail(series, tau)[0]


@dataclass(frozen=True)
class AllanCurve:
    tau: np.ndarray
    sigma: np.ndarray
    n_diffs: np.ndarray
    skipped: tuple[tuple[float, str], ...] = ()

    def __post_init__(self):
        if self.tau.size > 1 and np.any(np.diff(self.tau) <= 0):
            raise ValidationError("curve tau values must be strictly increasing", field="tau")

    @property
    def sigma_err(self) -> np.ndarray:
        """Relative error bar 1/sqrt(n) applied to sigma."""
        return self.sigma / np.sqrt(self.n_diffs)

    def __len__(self):
        return self.tau.size


def octave_taus(series: FrequencySeries) -> list[float]:
    """tau0, 2 tau0, 4 tau0, ... up to N tau0 / 4."""
    out = []
    k = 1
    while k <= series.n_samples // 4:
        out.append(k * series.sample_interval)
        k *= 2
    if not out:
        out.append(series.sample_interval)
    return out


def allan_curve(series: FrequencySeries, taus: Sequence[float] | None = None) -> AllanCurve:
    """Allan deviation at each ``tau``; invalid taus are skipped and reported."""
    if taus is None:
        taus = octave_taus(series)
    taus = sorted(float(t) for t in taus)
    if not taus:
        raise ValidationError("tau list is empty", field="tau")
    t_ok, s_ok, n_ok, skipped = [], [], [], []
    for tau in taus:
        try:
            s, n = allan_deviation_detail(series, tau)
        except ValidationError as exc:
            skipped.append((tau, str(exc)))
            continue
        if t_ok and tau == t_ok[-1]:
            continue
        t_ok.append(tau)
        s_ok.append(s)
        n_ok.append(n)
    return AllanCurve(np.array(t_ok), np.array(s_ok), np.array(n_ok, dtype=int), tuple(skipped))


@dataclass(frozen=True)
class NoiseFit:
    amplitude: float
    exponent: float
    exponent_err: float
    amplitude_rel_err: float
    fixed_exponent: bool = False

    @property
    def white_noise_consistent(self) -> bool:
        lo, hi = WHITE_NOISE_EXPONENT_RANGE
        return lo <= self.exponent <= hi

    def __call__(self, tau):
        return self.amplitude * np.asarray(tau, dtype=float) ** self.exponent

    def as_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "amplitude_rel_err": self.amplitude_rel_err,
            "exponent": self.exponent,
            "exponent_err": self.exponent_err,
            "fixed_exponent": self.fixed_exponent,
            "white_noise_consistent": self.white_noise_consistent,
        }


def amplitude_through(tau: float, sigma: float, exponent: float = -0.5) -> float:
    """Power-law amplitude A with ``sigma = A * tau**exponent``."""
    if not (tau > 0 and sigma > 0):
        raise ValidationError("tau and sigma must be positive", field="tau")
    return sigma / tau ** exponent


def fit_noise_model(curve: AllanCurve, exponent: float | None = None, weighted: bool = True) -> NoiseFit:
    """Log-log regression of ``sigma = A * tau**p``.

    Points are weighted by their difference counts (the variance of log sigma
    scales as 1/n). Passing ``exponent`` fixes p and solves for A alone.
    """
    tau, sigma = curve.tau, curve.sigma
    if np.any(sigma <= 0):
        raise ComputationError("curve contains sigma <= 0; log-log fit undefined")
    w = curve.n_diffs.astype(float) if weighted else np.ones(tau.size)
    lt, ls = np.log(tau), np.log(sigma)
    if exponent is not None:
        if tau.size < 1:
            raise ValidationError("curve is empty", field="curve")
        la = np.sum(w * (ls - exponent * lt)) / np.sum(w)
        if tau.size > 1:
            r = ls - exponent * lt - la
            rel = math.sqrt(np.sum(w * r * r) / np.sum(w) / (tau.size - 1))
        else:
            rel = 0.0
        return NoiseFit(float(math.exp(la)), float(exponent), 0.0, rel, fixed_exponent=True)
    if tau.size < 3 or np.unique(tau).size < 2:
        raise ValidationError(f"noise-model fit needs >= 3 distinct tau points, got {tau.size}", field="curve")
    X = np.column_stack([np.ones_like(lt), lt])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], ls * sw, rcond=None)
    r = ls - X @ coef
    dof = tau.size - 2
    s2 = float(np.sum(w * r * r)) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ (X * w[:, None]))
    return NoiseFit(
        amplitude=float(math.exp(coef[0])),
        exponent=float(coef[1]),
        exponent_err=float(math.sqrt(max(cov[1, 1], 0.0))),
        amplitude_rel_err=float(math.sqrt(max(cov[0, 0], 0.0))),
    )


@dataclass(frozen=True)
class DriftReport:
    slope_hz_per_day: float
    slope_err_hz_per_day: float
    ppm_span: float
    duration_s: float

    def as_dict(self) -> dict:
        return {
            "slope_hz_per_day": self.slope_hz_per_day,
            "slope_err_hz_per_day": self.slope_err_hz_per_day,
            "ppm_span": self.ppm_span,
            "duration_s": self.duration_s,
        }


def drift_detect(series: FrequencySeries, n_windows: int = 10) -> DriftReport:
    """Linear drift (Hz/day) and the peak-to-peak span of windowed means in ppm of f0."""
    if series.n_samples < 10:
        raise ValidationError("drift detection needs a duration of at least 10 samples", field="samples")
    if n_windows < 2:
        raise ValidationError("need at least 2 windows", field="n_windows")
    n_windows = min(n_windows, series.n_samples)
    ok = np.isfinite(series.samples)
    t = series.times[ok]
    y = series.samples[ok]
    tc = t - t.mean()
    sxx = float(np.sum(tc * tc))
    slope = float(np.sum(tc * (y - y.mean())) / sxx)
    r = y - y.mean() - slope * tc
    dof = y.size - 2
    s2 = float(np.sum(r * r)) / dof if dof > 0 else 0.0
    slope_err = math.sqrt(s2 / sxx)
    edges = np.linspace(0, series.n_samples, n_windows + 1).astype(int)
    means = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        chunk = series.samples[lo:hi]
        chunk = chunk[np.isfinite(chunk)]
        if chunk.size:
            means.append(chunk.mean())
    span = (max(means) - min(means)) / series.f0 * 1e6
    return DriftReport(slope * SECONDS_PER_DAY, slope_err * SECONDS_PER_DAY, float(span), series.duration)


def response_time(linewidth: float) -> float:
    """Resonator response time 1 / (pi * linewidth)."""
    if not (math.isfinite(linewidth) and linewidth > 0):
        raise ValidationError("linewidth must be positive", field="linewidth")
    return 1.0 / (math.pi * linewidth)


def synth_frequency_series(kind: str, n_samples: int, sample_interval: float, f0: float,
                           level: float = 1e-9, seed: int = 0, period: float | None = None) -> FrequencySeries:
    """Synthetic series of fractional level ``level`` about ``f0``.

    kinds: ``white`` (white frequency noise), ``random_walk``, ``constant``,
    ``alternating`` (f0 +/- level f0), ``ramp`` (linear, total excursion
    level f0), ``wander`` (sinusoid of amplitude level f0 and ``period`` s).
    """
    rng = np.random.default_rng(seed)
    i = np.arange(n_samples)
    if kind == "white":
        y = f0 * (1.0 + level * rng.standard_normal(n_samples))
    elif kind == "random_walk":
        y = f0 * (1.0 + level * np.cumsum(rng.standard_normal(n_samples)))
    elif kind == "constant":
        y = np.full(n_samples, float(f0))
    elif kind == "alternating":
        y = f0 + level * f0 * np.where(i % 2 == 0, 1.0, -1.0)
    elif kind == "ramp":
        y = f0 + level * f0 * i / max(n_samples - 1, 1)
    elif kind == "wander":
        p = period if period is not None else n_samples * sample_interval / 3.0
        y = f0 * (1.0 + level * np.sin(2.0 * np.pi * i * sample_interval / p))
    else:
        raise ValidationError(f"unknown series kind {kind!r}", field="kind")
    return FrequencySeries(sample_interval, y, f0)
