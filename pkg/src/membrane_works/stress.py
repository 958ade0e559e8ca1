"""Mode-index assignment and collective biaxial-stress fitting.

Squaring the frequency law gives a model that is linear in the two stresses::

    f**2 = (m**2 * sigma_x + n**2 * sigma_y) / (4 L**2 rho)

so the fit is a closed-form weighted least-squares problem in f**2 space.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import AssignmentError, NegativeStressError, RankDeficiencyError, ValidationError
from .membrane import MembraneSpec, ModeIndex, enumerate_modes, mode_frequencies

DUPLICATE_TOLERANCE_HZ = 1.0
CANDIDATE_FACTOR = 1.05


class DegenerateAssignmentWarning(UserWarning):
    """Two measured frequencies could not be told apart by the model."""


@dataclass(frozen=True)
class ModeRecord:
    frequency: float
    index: ModeIndex | None = None
    linewidth: float | None = None
    q: float | None = None
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.frequency) and self.frequency > 0):
            raise ValidationError(f"mode frequency must be positive, got {self.frequency!r}", field="frequency")
        if self.q is not None and not self.q > 0:
            raise ValidationError(f"Q must be positive, got {self.q!r}", field="q")
        if self.linewidth is not None and not self.linewidth > 0:
            raise ValidationError(f"linewidth must be positive, got {self.linewidth!r}", field="linewidth")
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ValidationError(f"weight must be positive, got {self.weight!r}", field="weight")
        if self.index is not None and not isinstance(self.index, ModeIndex):
            object.__setattr__(self, "index", ModeIndex.of(*self.index))


def _pairwise_consistent(records, predicted):
    """Put partner pairs in the same frequency order as the model predicts.

    For an L1 cost on a line the order-preserving matching is always optimal, so
    this only resolves ties left open by the solver.
    """
    pos = {r.index: k for k, r in enumerate(records)}
    for k, r in enumerate(records):
        m, n = r.index
        if m <= n:
            continue
        j = pos.get(ModeIndex(n, m))
        if j is None:
            continue
        lo, hi = (k, j) if records[k].frequency <= records[j].frequency else (j, k)
        if predicted[records[lo].index] > predicted[records[hi].index]:
            a, b = records[lo], records[hi]
            records[lo] = replace(a, index=b.index)
            records[hi] = replace(b, index=a.index)
            pos[records[lo].index], pos[records[hi].index] = lo, hi
    return records


def assign_indices(frequencies: Sequence[float], spec_guess: MembraneSpec,
                   max_candidate_freq_factor: float = CANDIDATE_FACTOR,
                   method: str = "matching") -> list[ModeRecord]:
    """Pair each measured frequency with a distinct (m, n).

    ``method="matching"`` minimizes the total absolute frequency mismatch by
    bipartite matching; ``method="greedy"`` walks measurements in ascending
    order taking the nearest free candidate, which agrees with the matching
    when candidate gaps exceed the measurement noise.
    """
    freqs = np.asarray(frequencies, dtype=float)
    if freqs.ndim != 1 or freqs.size == 0:
        raise ValidationError("no modes to assign", field="frequencies")
    if np.any(~np.isfinite(freqs)) or np.any(freqs <= 0):
        raise ValidationError("frequencies must be positive", field="frequencies")
    if np.any(np.diff(freqs) < 0):
        raise ValidationError("frequencies must be sorted ascending", field="frequencies")
    dup = np.flatnonzero(np.diff(freqs) < DUPLICATE_TOLERANCE_HZ)
    if dup.size:
        warnings.warn(
            f"{dup.size} measured frequency pair(s) closer than {DUPLICATE_TOLERANCE_HZ} Hz; "
            "both members are assigned",
            DegenerateAssignmentWarning,
            stacklevel=2,
        )

    cands = enumerate_modes(spec_guess, freqs[-1] * max_candidate_freq_factor)
    if len(cands) < freqs.size:
        raise AssignmentError(
            f"{freqs.size} measured modes but only {len(cands)} candidates below "
            f"{freqs[-1] * max_candidate_freq_factor:.6g} Hz"
        )
    cand_idx = [c[0] for c in cands]
    cand_f = np.array([c[1] for c in cands])
    predicted = dict(zip(cand_idx, cand_f))

    if method == "matching":
        cost = np.abs(freqs[:, None] - cand_f[None, :])
        rows, cols = linear_sum_assignment(cost)
        chosen = np.empty(freqs.size, dtype=int)
        chosen[rows] = cols
    elif method == "greedy":
        free = np.ones(cand_f.size, dtype=bool)
        chosen = np.empty(freqs.size, dtype=int)
        for k, f in enumerate(freqs):
            d = np.where(free, np.abs(cand_f - f), np.inf)
            j = int(np.argmin(d))
            chosen[k] = j
            free[j] = False
    else:
        raise ValidationError(f"unknown assignment method {method!r}", field="method")

    records = [ModeRecord(float(f), cand_idx[j]) for f, j in zip(freqs, chosen)]
    if spec_guess.is_isotropic:
        if any(r.index.m != r.index.n and ModeIndex(r.index.n, r.index.m) in {q.index for q in records}
               for r in records):
            warnings.warn(
                "isotropic stress guess: degenerate (m,n)/(n,m) pairs assigned in arbitrary order",
                DegenerateAssignmentWarning,
                stacklevel=2,
            )
        return records
    return _pairwise_consistent(records, predicted)


@dataclass(frozen=True)
class StressFitResult:
    stress_x: float
    stress_y: float
    covariance: np.ndarray = field(repr=False)
    r_squared: float
    indices: tuple[ModeIndex, ...] = field(repr=False)
    measured: np.ndarray = field(repr=False)
    predicted: np.ndarray = field(repr=False)
    side_length: float = 0.0
    density: float = 0.0

    @property
    def residuals(self) -> np.ndarray:
        return self.measured - self.predicted

    def plot_rows(self):
        """(m^2 + n^2, measured Hz, predicted Hz) rows sorted by the abscissa."""
        rows = [(i.order, float(fm), float(fp)) for i, fm, fp in zip(self.indices, self.measured, self.predicted)]
        return sorted(rows, key=lambda r: (r[0], r[1]))

    def as_dict(self) -> dict:
        dx, dy = stress_resolution(self)
        return {
            "stress_x_pa": self.stress_x,
            "stress_y_pa": self.stress_y,
            "stress_x_err_pa": dx,
            "stress_y_err_pa": dy,
            "covariance_pa2": self.covariance.tolist(),
            "r_squared": self.r_squared,
            "side_length_m": self.side_length,
            "density_kg_m3": self.density,
            "n_modes": len(self.indices),
            "modes": [
                {"m": i.m, "n": i.n, "freq_meas_hz": float(fm), "freq_pred_hz": float(fp),
                 "residual_hz": float(fm - fp)}
                for i, fm, fp in zip(self.indices, self.measured, self.predicted)
            ],
        }


def fit_biaxial_stress(modes: Sequence[ModeRecord], side_length: float, density: float) -> StressFitResult:
    """Weighted linear least squares for (sigma_x, sigma_y).

    The parameter covariance is ``s^2 (X^T W X)^-1`` with ``s^2`` the weighted
    residual variance in f**2 space; R^2 is evaluated on the frequencies.
    """
    if not (side_length > 0 and density > 0):
        raise ValidationError("side length and density must be positive", field="side_length")
    if any(r.index is None for r in modes):
        raise ValidationError("every mode needs an (m, n) index before fitting", field="index")
    if len(modes) < 2:
        raise RankDeficiencyError(f"need at least 2 modes, got {len(modes)}")
    mn = np.array([r.index for r in modes], dtype=float)
    f = np.array([r.frequency for r in modes])
    w = np.array([r.weight for r in modes])
    scale = 4.0 * side_length ** 2 * density
    X = mn ** 2 / scale
    if np.linalg.matrix_rank(mn ** 2) < 2:
        raise RankDeficiencyError("all modes share one (m^2, n^2) direction; stresses are not separable")
    sw = np.sqrt(w)
    y = f ** 2
    sol, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    sx, sy = float(sol[0]), float(sol[1])
    if not (sx > 0 and sy > 0):
        raise NegativeStressError(
            f"fitted stresses ({sx:.4g}, {sy:.4g}) Pa are not both positive; check density and side length"
        )
    resid = y - X @ sol
    dof = f.size - 2
    s2 = float(np.sum(w * resid ** 2)) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ (X * w[:, None]))
    cov = 0.5 * (cov + cov.T)
    f_pred = np.sqrt(X @ sol)
    ss_res = float(np.sum((f - f_pred) ** 2))
    ss_tot = float(np.sum((f - f.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return StressFitResult(
        stress_x=sx,
        stress_y=sy,
        covariance=cov,
        r_squared=min(max(r2, 0.0), 1.0),
        indices=tuple(r.index for r in modes),
        measured=f,
        predicted=f_pred,
        side_length=side_length,
        density=density,
    )


def stress_resolution(result: StressFitResult) -> tuple[float, float]:
    """One-standard-deviation uncertainties of (sigma_x, sigma_y) in Pa."""
    d = np.clip(np.diag(result.covariance), 0.0, None)
    return float(math.sqrt(d[0])), float(math.sqrt(d[1]))


def synth_mode_table(spec: MembraneSpec, count: int | None = None, max_frequency: float | None = None,
                     noise_hz: float = 0.0, seed: int = 0) -> list[ModeRecord]:
    """Model frequencies for the lowest ``count`` modes or all modes up to ``max_frequency``."""
    if (count is None) == (max_frequency is None):
        raise ValidationError("give exactly one of count or max_frequency", field="count")
    if count is not None:
        if count < 1:
            raise ValidationError("count must be >= 1", field="count")
        # widen the cutoff until enough modes are enumerated
        fmax = 2.0 * max(mode_frequencies(spec, [(1, 1)]))
        modes = enumerate_modes(spec, fmax)
        while len(modes) < count:
            fmax *= 1.5
            modes = enumerate_modes(spec, fmax)
        modes = modes[:count]
    else:
        modes = enumerate_modes(spec, max_frequency)
    freqs = np.array([f for _, f in modes])
    if noise_hz:
        freqs = freqs + noise_hz * np.random.default_rng(seed).standard_normal(freqs.size)
    return [ModeRecord(float(f), idx) for (idx, _), f in zip(modes, freqs)]


def _one_seed(args):
    indices, f_true, noise_hz, seed_seq, side_length, density = args
    rng = np.random.default_rng(seed_seq)
    f = f_true + noise_hz * rng.standard_normal(f_true.size)
    res = fit_biaxial_stress([ModeRecord(float(x), i) for x, i in zip(f, indices)], side_length, density)
    return res.stress_x, res.stress_y, *stress_resolution(res)


@dataclass(frozen=True)
class ResolutionStudy:
    stress_x: np.ndarray = field(repr=False)
    stress_y: np.ndarray = field(repr=False)
    reported_x: np.ndarray = field(repr=False)
    reported_y: np.ndarray = field(repr=False)

    @property
    def n_seeds(self) -> int:
        return self.stress_x.size

    def empirical_resolution(self) -> tuple[float, float]:
        return float(np.std(self.stress_x, ddof=1)), float(np.std(self.stress_y, ddof=1))

    def mean_reported_resolution(self) -> tuple[float, float]:
        return float(np.mean(self.reported_x)), float(np.mean(self.reported_y))


def resolution_study(spec: MembraneSpec, indices: Sequence, noise_hz: float, n_seeds: int = 100,
                     seed: int = 0, jobs: int = 1) -> ResolutionStudy:
    """Monte-Carlo stress uncertainty for a mode set under Gaussian frequency noise."""
    idx = [ModeIndex.of(*i) for i in indices]
    f_true = mode_frequencies(spec, idx)
    seeds = np.random.SeedSequence(seed).spawn(n_seeds)
    tasks = [(idx, f_true, noise_hz, s, spec.side_length, spec.density) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_one_seed, tasks, chunksize=max(1, n_seeds // (4 * jobs))))
    else:
        out = [_one_seed(t) for t in tasks]
    arr = np.array(out)
    return ResolutionStudy(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
