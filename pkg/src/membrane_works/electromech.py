"""Coupled-mode simulation of one microwave cavity and two mechanical modes.

Classical complex amplitudes in rotating frames: each mechanical amplitude
``b_i`` rotates at its own frequency and ``|b_i|^2`` is its coherent phonon
number. Every protocol phase is a constant-coefficient linear system
``dz/dt = A z + B conj(z) + F`` on ``z = (a, b1, b2)``, integrated with
fixed-step RK4.

Units: tone, cavity and mechanical frequencies, cavity linewidths, couplings
``g0``/``G``/``J`` and detunings are cyclic (Hz, i.e. value/2pi). Mechanical
damping rates (``linewidth``, ``energy_decay``) are plain rates in 1/s: an
undriven mode loses energy as ``exp(-rate * t)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import kernels
from .errors import (
    IntegrationError,
    StepControlError,
    UndefinedEfficiencyError,
    ValidationError,
)
from .spectral import RingdownTrace

TWO_PI = 2.0 * math.pi
PLANCK = 6.62607015e-34
BOLTZMANN = 1.380649e-23

PHASE_ORDER = ("cooling", "excitation", "swapping", "readout")
MIN_STEPS_PER_PERIOD = 20
#: swap-period conventions: J = factor / period (cyclic Hz)
PERIOD_CONVENTIONS = {"oscillation": 0.5, "exchange": 0.25}
#: first complete exchange time times J (cyclic) in a lossless swap
EXCHANGE_TIME_TIMES_COUPLING = 0.25
SEPARATION_TOLERANCE_HZ = 1e-5


class ResolvedSidebandWarning(UserWarning):
    """Cavity linewidth is not below the mechanical frequency."""


class AdiabaticityWarning(UserWarning):
    """Swap detuning is not large compared with the cavity linewidth."""


def bose_occupation(frequency: float, temperature: float) -> float:
    """Mean thermal phonon number 1 / (exp(h f / k T) - 1)."""
    if not (frequency > 0 and temperature > 0):
        raise ValidationError("frequency and temperature must be positive", field="temperature")
    return 1.0 / math.expm1(PLANCK * frequency / (BOLTZMANN * temperature))


@dataclass(frozen=True)
class MechModeParams:
    frequency: float
    linewidth: float
    energy_decay: float
    g0: float = 10.0
    n_th: float = 0.0

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValidationError("mechanical frequency must be positive", field="frequency")
        if not self.energy_decay > 0:
            raise ValidationError("energy decay rate must be positive", field="energy_decay")
        if self.linewidth < self.energy_decay:
            raise ValidationError("linewidth must be >= energy decay rate", field="linewidth")
        if not self.g0 > 0:
            raise ValidationError("g0 must be positive", field="g0")
        if self.n_th < 0:
            raise ValidationError("thermal occupation must be >= 0", field="n_th")

    def damping(self, kind: str) -> float:
        if kind == "energy":
            return self.energy_decay
        if kind == "linewidth":
            return self.linewidth
        raise ValidationError(f"unknown damping kind {kind!r}; use 'energy' or 'linewidth'", field="damping")


@dataclass(frozen=True)
class EMSystem:
    cavity_frequency: float
    kappa_ext: float
    kappa_int: float
    modes: tuple[MechModeParams, MechModeParams]

    def __post_init__(self):
        if not self.cavity_frequency > 0:
            raise ValidationError("cavity frequency must be positive", field="cavity_frequency")
        if not (self.kappa_ext > 0 and self.kappa_int > 0):
            raise ValidationError("cavity loss rates must be positive", field="kappa_ext")
        modes = tuple(self.modes)
        if len(modes) != 2:
            raise ValidationError("exactly two mechanical modes are required", field="modes")
        object.__setattr__(self, "modes", modes)
        if self.kappa_tot >= min(m.frequency for m in modes):
            warnings.warn(
                f"kappa_tot = {self.kappa_tot:.4g} Hz is not below the mechanical frequencies; "
                "sidebands are not resolved",
                ResolvedSidebandWarning,
                stacklevel=3,
            )

    @property
    def kappa_tot(self) -> float:
        return self.kappa_ext + self.kappa_int

    @property
    def resolved_sideband(self) -> bool:
        return self.kappa_tot < min(m.frequency for m in self.modes)

    @property
    def mode_splitting(self) -> float:
        return self.modes[1].frequency - self.modes[0].frequency


def reference_system(g0: float = 10.0, temperature: float = 0.01) -> EMSystem:
    """The 5.39 GHz cavity with the (3,1)/(1,3) mode pair at base temperature.

    ``g0`` is not known for the device; it only sets the tone amplitudes needed
    for a given coupling.
    """
    m1 = MechModeParams(871.93e3, 8.13e-3, 6.13e-3, g0, bose_occupation(871.93e3, temperature))
    m2 = MechModeParams(885.39e3, 5.63e-3, 4.4e-3, g0, bose_occupation(885.39e3, temperature))
    return EMSystem(5.39e9, 100.25e3, 100e3, (m1, m2))


@dataclass(frozen=True)
class PumpTone:
    """Microwave tone; ``amplitude**2`` is the incident photon flux (1/s).

    ``intervals`` are on-windows in seconds relative to the start of the
    phase that carries the tone; empty means on for the whole phase.
    """

    frequency: float
    amplitude: float
    phase: float = 0.0
    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise ValidationError("tone amplitude must be >= 0", field="amplitude")
        iv = tuple((float(a), float(b)) for a, b in self.intervals)
        prev = -math.inf
        for a, b in iv:
            if not (b > a >= prev):
                raise ValidationError("tone on-intervals must be ordered and disjoint", field="intervals")
            prev = b
        object.__setattr__(self, "intervals", iv)

    def is_on(self, t: float) -> bool:
        if not self.intervals:
            return True
        return any(a <= t < b for a, b in self.intervals)


def intracavity_photons(system: EMSystem, tone: PumpTone) -> float:
    """Steady intracavity photon number driven by ``tone`` through the external port."""
    k_ext = TWO_PI * system.kappa_ext
    k_tot = TWO_PI * system.kappa_tot
    det = TWO_PI * (tone.frequency - system.cavity_frequency)
    return k_ext * tone.amplitude ** 2 / ((0.5 * k_tot) ** 2 + det * det)


def tone_coupling(system: EMSystem, tone: PumpTone, mode: int) -> float:
    """Parametrically enhanced coupling G = g0 sqrt(n) (cyclic Hz)."""
    return system.modes[mode].g0 * math.sqrt(intracavity_photons(system, tone))


def tone_for_coupling(system: EMSystem, frequency: float, mode: int, coupling: float, phase: float = 0.0) -> PumpTone:
    """Tone at ``frequency`` whose enhanced coupling to ``mode`` equals ``coupling`` (Hz)."""
    if coupling < 0:
        raise ValidationError("coupling must be >= 0", field="coupling")
    n = (coupling / system.modes[mode].g0) ** 2
    k_ext = TWO_PI * system.kappa_ext
    k_tot = TWO_PI * system.kappa_tot
    det = TWO_PI * (frequency - system.cavity_frequency)
    flux = n * ((0.5 * k_tot) ** 2 + det * det) / k_ext
    return PumpTone(frequency, math.sqrt(flux), phase)


@dataclass(frozen=True)
class Sideband:
    frequency: float
    tone: int
    mode: int
    sign: int  # +1 upper (anti-Stokes), -1 lower (Stokes)


def sideband_frequencies(system: EMSystem, tones: Sequence[PumpTone], window: float = 1e-3):
    """Motional sidebands ``tone +/- f_m`` for every tone and mode.

    Returns ``(sidebands, overlaps)`` where ``overlaps`` lists index pairs of
    sidebands closer than ``window`` Hz that come from different tones.
    """
    if not tones:
        raise ValidationError("at least one tone is required", field="tones")
    out = []
    for k, tone in enumerate(tones):
        for i, mode in enumerate(system.modes):
            for sign in (+1, -1):
                out.append(Sideband(tone.frequency + sign * mode.frequency, k, i, sign))
    overlaps = [
        (p, q)
        for p in range(len(out))
        for q in range(p + 1, len(out))
        if out[p].tone != out[q].tone and abs(out[p].frequency - out[q].frequency) <= window
    ]
    return out, overlaps


# -- protocol -------------------------------------------------------------------


@dataclass(frozen=True)
class Phase:
    name: str
    duration: float
    tones: tuple[PumpTone, ...] = ()

    def __post_init__(self):
        if self.name not in PHASE_ORDER:
            raise ValidationError(f"unknown phase {self.name!r}; expected one of {PHASE_ORDER}", field="phases")
        if not self.duration > 0:
            raise ValidationError(f"phase {self.name!r} needs a positive duration", field="duration")
        object.__setattr__(self, "tones", tuple(self.tones))


@dataclass(frozen=True)
class ProtocolSchedule:
    """Ordered phases drawn from cooling, excitation, swapping, readout.

    Phases may be omitted but never reordered. Swap tones come in the order
    (tone pairing with mode 2, tone pairing with mode 1); their separation must
    equal the mechanical splitting unless ``allow_mismatch`` is set.
    """

    phases: tuple[Phase, ...]
    detuning: float = 1.8e6
    allow_mismatch: bool = False

    def __post_init__(self):
        phases = tuple(self.phases)
        object.__setattr__(self, "phases", phases)
        if not phases:
            raise ValidationError("schedule has no phases", field="phases")
        order = [PHASE_ORDER.index(p.name) for p in phases]
        if any(b <= a for a, b in zip(order, order[1:])):
            raise ValidationError(
                f"phase order must follow {PHASE_ORDER} without repeats, got {[p.name for p in phases]}",
                field="phases",
            )

    def phase(self, name: str) -> Phase | None:
        for p in self.phases:
            if p.name == name:
                return p
        return None

    @property
    def total_duration(self) -> float:
        return sum(p.duration for p in self.phases)

    def check_against(self, system: EMSystem) -> None:
        swap = self.phase("swapping")
        if swap is None or not swap.tones:
            return
        if len(swap.tones) != 2:
            raise ValidationError("the swapping phase needs exactly two tones", field="tones")
        sep = swap.tones[1].frequency - swap.tones[0].frequency
        want = system.mode_splitting
        if not self.allow_mismatch and abs(abs(sep) - abs(want)) > SEPARATION_TOLERANCE_HZ:
            raise ValidationError(
                f"swap-tone separation {sep:.9g} Hz differs from the mode splitting {want:.9g} Hz",
                field="tones",
            )
        if abs(self.detuning) < 5.0 * system.kappa_tot:
            warnings.warn(
                f"swap detuning {self.detuning:.4g} Hz is not >> kappa_tot {system.kappa_tot:.4g} Hz",
                AdiabaticityWarning,
                stacklevel=2,
            )

    def with_phase(self, name: str, **changes) -> "ProtocolSchedule":
        phases = tuple(replace(p, **changes) if p.name == name else p for p in self.phases)
        return replace(self, phases=phases)


def coupling_for_period(period: float, convention: str = "oscillation") -> float:
    """Swap coupling J (cyclic Hz) that produces ``period`` under ``convention``.

    ``oscillation``: ``period`` is the full occupation oscillation b1 -> b2 -> b1,
    so J = 1 / (2 period). ``exchange``: ``period`` is the time of the first
    complete b1 -> b2 transfer, so J = 1 / (4 period).
    """
    if not period > 0:
        raise ValidationError("swap period must be positive", field="swap_period")
    try:
        return PERIOD_CONVENTIONS[convention] / period
    except KeyError:
        raise ValidationError(f"unknown period convention {convention!r}", field="period_convention") from None


def swap_period(coupling: float, convention: str = "oscillation") -> float:
    if not coupling > 0:
        raise ValidationError("coupling must be positive", field="coupling")
    return PERIOD_CONVENTIONS[convention] / coupling


def swap_tones(system: EMSystem, coupling: float, detuning: float = 1.8e6, balance: float = 1.0,
               mismatch: float = 0.0) -> tuple[PumpTone, PumpTone]:
    """Two swap tones realizing cavity-mediated coupling ``coupling`` (cyclic Hz).

    Tone 1 sits at ``f_c + detuning - f_m2`` and tone 2 at ``f_c + detuning - f_m1``
    (plus ``mismatch``), so both upper sidebands land ``detuning`` above the
    cavity. ``balance`` = G1/G2 is the ratio of the mode-1 and mode-2 enhanced
    couplings; G1^2 + G2^2 = 2 J detuning keeps the bright-mode rotation (and
    so the observed oscillation period) independent of the balance.
    """
    if not coupling > 0:
        raise ValidationError("coupling must be positive", field="coupling")
    if not balance > 0:
        raise ValidationError("balance must be positive", field="balance")
    if detuning == 0:
        raise ValidationError("detuning must be nonzero", field="detuning")
    m1, m2 = system.modes
    g2 = math.sqrt(2.0 * coupling * abs(detuning) / (1.0 + balance * balance))
    g1 = balance * g2
    f_t1 = system.cavity_frequency + detuning - m2.frequency
    f_t2 = system.cavity_frequency + detuning - m1.frequency + mismatch
    # tone 1 pairs with mode 2, tone 2 with mode 1
    return tone_for_coupling(system, f_t1, 1, g2), tone_for_coupling(system, f_t2, 0, g1)


def red_tone_for_rate(system: EMSystem, mode: int, optical_damping: float) -> PumpTone:
    """Red-sideband tone giving optical damping ``4 G^2 / kappa`` = ``optical_damping`` (1/s)."""
    if optical_damping < 0:
        raise ValidationError("optical damping must be >= 0", field="optical_damping")
    k = TWO_PI * system.kappa_tot
    g = math.sqrt(optical_damping * k / 4.0) / TWO_PI
    freq = system.cavity_frequency - system.modes[mode].frequency
    return tone_for_coupling(system, freq, mode, g)


def reference_schedule(system: EMSystem, swap_period_s: float = 2.1, convention: str = "oscillation",
                       detuning: float = 1.8e6, swap_duration: float = 10.0, balance: float = 1.0,
                       mismatch: float = 0.0, cooling_ratio: float = 1e3, cooling_duration: float = 0.02,
                       excitation_phonons: float = 1e4, excitation_duration: float = 0.02,
                       readout_gain_rate: float = 20.0, readout_duration: float = 0.005) -> ProtocolSchedule:
    """Cool / excite mode 1 / swap / read out, parameterized by calibrated rates."""
    m1, m2 = system.modes
    cool_tones = (
        red_tone_for_rate(system, 0, cooling_ratio * m1.linewidth),
        red_tone_for_rate(system, 1, cooling_ratio * m2.linewidth),
    )
    # excitation: a weak red tone plus a cavity-frequency tone; their beat drives mode 1
    red = red_tone_for_rate(system, 0, m1.linewidth)
    k = 0.5 * (m1.energy_decay + m1.linewidth)
    drive = math.sqrt(excitation_phonons) * k / -math.expm1(-k * excitation_duration)
    n_red = intracavity_photons(system, red)
    n_c = (drive / (TWO_PI * m1.g0 * math.sqrt(n_red))) ** 2
    k_ext, k_tot = TWO_PI * system.kappa_ext, TWO_PI * system.kappa_tot
    carrier = PumpTone(system.cavity_frequency, math.sqrt(n_c * (0.5 * k_tot) ** 2 / k_ext))
    j = coupling_for_period(swap_period_s, convention)
    blue_g = math.sqrt(readout_gain_rate * k_tot / 4.0) / TWO_PI
    readout = (
        tone_for_coupling(system, system.cavity_frequency + m1.frequency, 0, blue_g),
        tone_for_coupling(system, system.cavity_frequency + m2.frequency, 1, blue_g),
    )
    return ProtocolSchedule(
        (
            Phase("cooling", cooling_duration, cool_tones),
            Phase("excitation", excitation_duration, (carrier, red)),
            Phase("swapping", swap_duration, swap_tones(system, j, detuning, balance, mismatch)),
            Phase("readout", readout_duration, readout),
        ),
        detuning=detuning,
        allow_mismatch=mismatch != 0.0,
    )


def effective_swap_coupling(system: EMSystem, schedule: ProtocolSchedule) -> float:
    """Cavity-mediated beam-splitter rate J = G1 G2 / detuning (cyclic Hz).

    G1 is the mode-1 coupling through the second swap tone and G2 the mode-2
    coupling through the first. The detuning is that of the overlapping
    sideband from the cavity, read from the tone frequencies.
    """
    swap = schedule.phase("swapping")
    if swap is None or len(swap.tones) != 2:
        raise ValidationError("schedule has no two-tone swapping phase", field="phases")
    det = _swap_detuning(system, swap)
    if det == 0:
        raise ZeroDivisionError("swap detuning is zero; the dispersive (adiabatic) model does not apply, "
                                "use the explicit-cavity model")
    g2 = tone_coupling(system, swap.tones[0], 1)
    g1 = tone_coupling(system, swap.tones[1], 0)
    return g1 * g2 / abs(det)


def _swap_detuning(system, swap):
    return swap.tones[0].frequency + system.modes[1].frequency - system.cavity_frequency


def _swap_mismatch(system, swap):
    return (swap.tones[1].frequency - swap.tones[0].frequency) - system.mode_splitting


# -- linear-system assembly -----------------------------------------------------


@dataclass(frozen=True)
class SimOptions:
    damping: str = "energy"
    damping_scale: float = 1.0
    extra_damping: float = 0.0
    swap_model: str = "adiabatic"
    cavity_damping: bool = True
    steps_per_period: int = MIN_STEPS_PER_PERIOD
    max_step: float | None = None
    sample_interval: float | None = None
    samples_per_phase: int = 1000


def _real_form(A, B, F):
    """Real 6x6 matrix and forcing for dz/dt = A z + B conj(z) + F."""
    Ar, Ai, Br, Bi = A.real, A.imag, B.real, B.imag
    M = np.block([[Ar + Br, Bi - Ai], [Ai + Bi, Ar - Br]])
    return np.ascontiguousarray(M), np.ascontiguousarray(np.concatenate([F.real, F.imag]))


def _mech_rates(system, opts):
    return [
        0.5 * (m.damping(opts.damping) * opts.damping_scale + opts.extra_damping)
        for m in system.modes
    ]


def _classify(system, tone):
    """Role of a tone: ('red', i), ('blue', i), ('carrier', None) or ('other', None)."""
    tol = 0.5 * system.kappa_tot
    fc = system.cavity_frequency
    targets = [(abs(tone.frequency - fc), "carrier", None)]
    for i, m in enumerate(system.modes):
        targets.append((abs(tone.frequency - (fc - m.frequency)), "red", i))
        targets.append((abs(tone.frequency - (fc + m.frequency)), "blue", i))
    dist, role, idx = min(targets, key=lambda t: t[0])
    return (role, idx) if dist <= tol else ("other", None)


def _build_phase_system(system, schedule, phase, active, opts):
    """(A, B, F, frame_shift, meta) for one constant segment of a phase."""
    A = np.zeros((3, 3), complex)
    B = np.zeros((3, 3), complex)
    F = np.zeros(3, complex)
    r1, r2 = _mech_rates(system, opts)
    A[1, 1] = -r1
    A[2, 2] = -r2
    kappa = TWO_PI * system.kappa_tot
    meta = {}
    frame_shift = 0.0

    if phase.name == "swapping" and len(active) == 2:
        det = TWO_PI * _swap_detuning(system, phase)
        delta = TWO_PI * _swap_mismatch(system, phase)
        g2 = TWO_PI * tone_coupling(system, active[0], 1)
        g1 = TWO_PI * tone_coupling(system, active[1], 0)
        g1 *= np.exp(1j * active[1].phase)
        g2 *= np.exp(1j * active[0].phase)
        frame_shift = delta
        A[1, 1] += -1j * delta
        meta.update(detuning=det, mismatch=delta, g1=g1, g2=g2)
        if opts.swap_model == "adiabatic":
            if det == 0:
                raise ZeroDivisionError("swap detuning is zero; use swap_model='explicit'")
            # cavity eliminated to leading order in kappa / detuning
            c = ((0.5 * kappa if opts.cavity_damping else 0.0) + 1j * det) / (det * det)
            g = np.array([g1, g2])
            A[1:, 1:] -= c * np.outer(np.conj(g), g)
            meta["adiabatic_c"] = c
        elif opts.swap_model == "explicit":
            A[0, 0] = 1j * det - 0.5 * kappa
            A[0, 1], A[0, 2] = -1j * g1, -1j * g2
            A[1, 0], A[2, 0] = -1j * np.conj(g1), -1j * np.conj(g2)
        else:
            raise ValidationError(f"unknown swap model {opts.swap_model!r}", field="swap_model")
        return A, B, F, frame_shift, meta

    # explicit cavity in its resonant frame
    A[0, 0] = -0.5 * kappa
    carrier = None
    reds = {}
    for tone in active:
        role, i = _classify(system, tone)
        if role == "red":
            g = TWO_PI * tone_coupling(system, tone, i) * np.exp(1j * tone.phase)
            A[0, 1 + i] += -1j * g
            A[1 + i, 0] += -1j * np.conj(g)
            reds[i] = (tone, g)
        elif role == "blue":
            if phase.name == "cooling":
                raise ValidationError("blue-detuned tone in the cooling phase would anti-damp the mode",
                                      field="tones")
            g = TWO_PI * tone_coupling(system, tone, i) * np.exp(1j * tone.phase)
            B[0, 1 + i] += -1j * g
            B[1 + i, 0] += -1j * g
        elif role == "carrier":
            carrier = tone
        elif phase.name != "swapping":
            raise ValidationError(
                f"tone at {tone.frequency:.9g} Hz has no role in the {phase.name} phase", field="tones"
            )
    if carrier is not None:
        # beat between the carrier and a red tone drives that mode resonantly
        for i, (tone, g) in reds.items():
            n_c = intracavity_photons(system, carrier)
            n_r = intracavity_photons(system, tone)
            force = TWO_PI * system.modes[i].g0 * math.sqrt(n_c * n_r) * np.exp(1j * (carrier.phase - tone.phase))
            F[1 + i] += -1j * force
    return A, B, F, frame_shift, meta


def _segments_of(phase):
    """Split a phase at tone switching times; yields (t_start, t_end, active tones)."""
    cuts = {0.0, phase.duration}
    for tone in phase.tones:
        for a, b in tone.intervals:
            for t in (a, b):
                if 0.0 < t < phase.duration:
                    cuts.add(t)
    cuts = sorted(cuts)
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        yield a, b, tuple(t for t in phase.tones if t.is_on(mid))


@dataclass(frozen=True)
class Segment:
    name: str
    t0: float
    t1: float
    matrix: np.ndarray = field(repr=False)
    forcing: np.ndarray = field(repr=False)
    step: float
    frame_shift: float
    start: int
    stop: int
    meta: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class SimTrace:
    time: np.ndarray = field(repr=False)
    cavity: np.ndarray = field(repr=False)
    b1: np.ndarray = field(repr=False)
    b2: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    markers: tuple[tuple[str, float, float], ...]
    segments: tuple[Segment, ...] = field(repr=False)
    backend: str = ""

    @property
    def occ1(self) -> np.ndarray:
        return np.abs(self.b1) ** 2

    @property
    def occ2(self) -> np.ndarray:
        return np.abs(self.b2) ** 2

    def phase_span(self, name: str) -> tuple[float, float] | None:
        for n, a, b in self.markers:
            if n == name:
                return a, b
        return None

    def state_at_index(self, i: int) -> np.ndarray:
        return np.array([self.cavity[i], self.b1[i], self.b2[i]])


def required_step(matrix: np.ndarray, steps_per_period: int = MIN_STEPS_PER_PERIOD) -> float:
    """Largest step giving ``steps_per_period`` steps per period of the fastest mode.

    The fastest mode is the spectral radius of the system matrix, so damping
    rates count as frequencies too.
    """
    rho = float(np.max(np.abs(np.linalg.eigvals(matrix)))) if matrix.size else 0.0
    if rho == 0.0:
        return math.inf
    return TWO_PI / (steps_per_period * rho)


def _to_frame(z, shift, dt):
    z = np.array(z, dtype=complex)
    z[1] *= np.exp(-1j * shift * dt)
    return z


def _integrate(M, f, x0, h, n_out, substeps, t0):
    states, n_valid = kernels.rk4_linear(M, f, np.ascontiguousarray(x0, dtype=float), h, n_out, substeps)
    if n_valid < n_out + 1:
        raise IntegrationError(
            f"non-finite state at t = {t0 + (n_valid) * substeps * h:.6g} s",
            last_valid_time=t0 + (n_valid - 1) * substeps * h,
        )
    return states


def simulate(system: EMSystem, schedule: ProtocolSchedule, initial_state=None,
             options: SimOptions | None = None, **kw) -> SimTrace:
    """Integrate the protocol and return the sampled trace.

    ``initial_state`` is ``(a, b1, b2)`` (complex), default all zero. Keyword
    arguments override fields of ``options``.
    """
    opts = options or SimOptions()
    if kw:
        opts = replace(opts, **kw)
    if opts.steps_per_period < MIN_STEPS_PER_PERIOD:
        raise StepControlError(
            f"steps_per_period = {opts.steps_per_period} is below the minimum {MIN_STEPS_PER_PERIOD}"
        )
    schedule.check_against(system)
    z = np.zeros(3, complex) if initial_state is None else np.array(initial_state, dtype=complex).reshape(3)

    times, states, labels, segments, markers = [], [], [], [], []
    t_phase = 0.0
    for phase in schedule.phases:
        markers.append((phase.name, t_phase, t_phase + phase.duration))
        for a, b, active in _segments_of(phase):
            A, B, F, shift, meta = _build_phase_system(system, schedule, phase, active, opts)
            if phase.name == "swapping" and meta.get("adiabatic_c") is not None:
                z[0] = 0.0
            # an uncoupled cavity rings down in closed form and must not set the step
            cavity_free = not (np.any(A[0, 1:]) or np.any(A[1:, 0]) or np.any(B[0]) or np.any(B[:, 0]) or F[0])
            cavity_rate = A[0, 0]
            if cavity_free:
                A[0, 0] = 0.0
            M, f = _real_form(A, B, F)
            h_req = required_step(M, opts.steps_per_period)
            if opts.max_step is not None and opts.max_step > h_req:
                raise StepControlError(
                    f"max_step {opts.max_step:.3g} s is too coarse for the {phase.name} phase; "
                    f"need <= {h_req:.3g} s",
                    required_step=h_req,
                )
            h_cap = min(h_req, opts.max_step) if opts.max_step is not None else h_req
            dur = b - a
            frac = dur / phase.duration
            if opts.sample_interval is not None:
                n_out = max(1, int(math.ceil(dur / opts.sample_interval - 1e-9)))
            else:
                n_out = max(1, int(round(opts.samples_per_phase * frac)))
            substeps = max(1, int(math.ceil(dur / n_out / h_cap)))
            h = dur / (n_out * substeps)
            t0 = t_phase + a
            x0 = np.concatenate([z.real, z.imag])
            xs = _integrate(M, f, x0, h, n_out, substeps, t0)
            zs = xs[:, :3] + 1j * xs[:, 3:]
            tt = t0 + dur * np.arange(n_out + 1) / n_out
            if shift:
                zs[:, 1] *= np.exp(1j * shift * (tt - t0))
            if cavity_free:
                zs[:, 0] = z[0] * np.exp(cavity_rate * (tt - t0))
            if meta.get("adiabatic_c") is not None:
                # slaved cavity field, reported for completeness
                zs[:, 0] = -1j * (meta["g1"] * zs[:, 1] * np.exp(-1j * shift * (tt - t0)) + meta["g2"] * zs[:, 2]) \
                    / (0.5 * TWO_PI * system.kappa_tot - 1j * meta["detuning"])
            start = len(times) if not times else len(times) - 1
            if times:
                # drop the duplicated boundary sample
                zs, tt = zs[1:], tt[1:]
                start = len(times) - 1
            times.extend(tt.tolist())
            states.extend(zs)
            labels.extend([phase.name] * len(tt))
            segments.append(Segment(phase.name, t0, t0 + dur, M, f, h, shift, start, len(times) - 1, meta))
            z = np.array(states[-1])
        t_phase += phase.duration

    st = np.array(states)
    occ = np.abs(st[:, 1:]) ** 2
    if not np.all(np.isfinite(occ)):
        raise IntegrationError("trace contains non-finite occupations")
    return SimTrace(
        time=np.array(times),
        cavity=st[:, 0],
        b1=st[:, 1],
        b2=st[:, 2],
        labels=np.array(labels),
        markers=tuple(markers),
        segments=tuple(segments),
        backend=kernels.BACKEND,
    )


def step_halving_error(system: EMSystem, schedule: ProtocolSchedule, initial_state=None, **kw) -> float:
    """Largest occupation change when the step is halved, relative to the peak occupation."""
    steps = kw.pop("steps_per_period", MIN_STEPS_PER_PERIOD)
    coarse = simulate(system, schedule, initial_state, steps_per_period=steps, **kw)
    fine = simulate(system, schedule, initial_state, steps_per_period=2 * steps, **kw)
    scale = max(float(np.max(coarse.occ1)), float(np.max(coarse.occ2)), 1e-300)
    diff = max(float(np.max(np.abs(coarse.occ1 - fine.occ1))), float(np.max(np.abs(coarse.occ2 - fine.occ2))))
    return diff / scale


def propagate(segment: Segment, state, t_from: float, t_to: float) -> np.ndarray:
    """State at ``t_to`` from ``state`` at ``t_from`` inside ``segment`` (RK4, step <= segment step)."""
    dt = t_to - t_from
    if dt < 0:
        raise ValidationError("can only propagate forward in time", field="t_to")
    z = _to_frame(state, segment.frame_shift, t_from - segment.t0)
    if dt == 0:
        out = z
    else:
        n = max(1, int(math.ceil(dt / segment.step)))
        x0 = np.concatenate([z.real, z.imag])
        xs = _integrate(segment.matrix, segment.forcing, x0, dt / n, 1, n, t_from)
        out = xs[-1, :3] + 1j * xs[-1, 3:]
    out = np.array(out, dtype=complex)
    out[1] *= np.exp(1j * segment.frame_shift * (t_to - segment.t0))
    return out


@dataclass(frozen=True)
class SwapResult:
    efficiency: float
    swap_start: float
    first_swap_end: float
    initial_phonons: float
    transferred_phonons: float

    @property
    def exchange_time(self) -> float:
        return self.first_swap_end - self.swap_start

    def as_dict(self) -> dict:
        return {
            "transfer_efficiency": self.efficiency,
            "swap_start_s": self.swap_start,
            "first_swap_end_s": self.first_swap_end,
            "exchange_time_s": self.exchange_time,
            "initial_phonons": self.initial_phonons,
            "transferred_phonons": self.transferred_phonons,
        }


def first_swap(trace: SimTrace) -> SwapResult:
    """Locate the first maximum of the mode-2 occupation during the swap."""
    segs = [s for s in trace.segments if s.name == "swapping"]
    if not segs:
        raise UndefinedEfficiencyError("trace has no swapping phase")
    i0 = segs[0].start
    n0 = float(abs(trace.b1[i0]) ** 2)
    if n0 == 0.0:
        raise UndefinedEfficiencyError("mode 1 holds no phonons at the start of the swap")
    occ2 = trace.occ2
    for seg in segs:
        lo, hi = seg.start, seg.stop
        for i in range(max(lo + 1, i0 + 1), hi):
            if occ2[i] >= occ2[i - 1] and occ2[i] > occ2[i + 1]:
                t_a, t_b = trace.time[i - 1], trace.time[i + 1]
                z_a = trace.state_at_index(i - 1)

                def neg_occ(t):
                    return -abs(propagate(seg, z_a, t_a, t)[2]) ** 2

                span = t_b - t_a
                res = minimize_scalar(neg_occ, bounds=(t_a, t_b), method="bounded",
                                      options={"xatol": 1e-9 * span})
                t_best, occ_best = float(res.x), -float(res.fun)
                if occ2[i] > occ_best:
                    t_best, occ_best = float(trace.time[i]), float(occ2[i])
                return SwapResult(occ_best / n0, float(trace.time[i0]), t_best, n0, occ_best)
    raise UndefinedEfficiencyError("swap phase ends before the first complete exchange")


def transfer_efficiency(trace: SimTrace) -> float:
    """Phonons in mode 2 at the end of the first swap over phonons in mode 1 at its start."""
    return first_swap(trace).efficiency


def efficiency_band(system: EMSystem, schedule: ProtocolSchedule, imbalance_db: float = 3.0,
                    n_points: int = 5, **sim_kw) -> dict:
    """Transfer efficiency under a tone-power calibration uncertainty.

    The swap tones are rebuilt with coupling ratios spanning
    ``+/- imbalance_db`` of power while the observed swap period is held fixed.
    Returns the nominal efficiency and the min/max over the sweep.
    """
    swap = schedule.phase("swapping")
    if swap is None or len(swap.tones) != 2:
        raise ValidationError("schedule has no two-tone swapping phase", field="phases")
    det = _swap_detuning(system, swap)
    mismatch = _swap_mismatch(system, swap)
    g2 = tone_coupling(system, swap.tones[0], 1)
    g1 = tone_coupling(system, swap.tones[1], 0)
    j_obs = (g1 * g1 + g2 * g2) / (2.0 * abs(det))
    ratios = 10.0 ** (np.linspace(-imbalance_db, imbalance_db, n_points) / 20.0) * (g1 / g2)
    effs = []
    for r in ratios:
        tones = swap_tones(system, j_obs, det, float(r), mismatch)
        sched = schedule.with_phase("swapping", tones=tones)
        effs.append(transfer_efficiency(simulate(system, sched, **sim_kw)))
    nominal = transfer_efficiency(simulate(system, schedule, **sim_kw))
    return {
        "nominal": nominal,
        "low": float(min(effs + [nominal])),
        "high": float(max(effs + [nominal])),
        "imbalance_db": imbalance_db,
        "balances": ratios.tolist(),
        "efficiencies": effs,
    }


# -- cooling (rate equations) ---------------------------------------------------


@dataclass(frozen=True)
class CoolingTrace:
    time: np.ndarray = field(repr=False)
    occupation: np.ndarray = field(repr=False)  # shape (2, n)
    steady_state: tuple[float, float]
    optical_damping: tuple[float, float]
    total_rate: tuple[float, float]


def cool(system: EMSystem, red_tones: Sequence[PumpTone], duration: float, n_points: int = 201,
         initial: Sequence[float] | None = None) -> CoolingTrace:
    """Sideband cooling of both modes from their thermal occupations.

    Each mode relaxes to ``n_th * gamma_m / (gamma_m + Gamma_opt)`` at rate
    ``gamma_m + Gamma_opt`` with ``Gamma_opt = 4 G^2 / kappa_tot``.
    """
    if not duration > 0:
        raise ValidationError("cooling duration must be positive", field="duration")
    if not system.resolved_sideband:
        raise ValidationError("sideband cooling needs the resolved-sideband regime", field="kappa_tot")
    gopt = [0.0, 0.0]
    k = TWO_PI * system.kappa_tot
    for tone in red_tones:
        role, i = _classify(system, tone)
        if role == "blue" or tone.frequency > system.cavity_frequency:
            raise ValidationError(
                f"tone at {tone.frequency:.9g} Hz is blue of the cavity and would anti-damp the mode",
                field="tones",
            )
        if role != "red":
            raise ValidationError(f"tone at {tone.frequency:.9g} Hz is not on a red sideband", field="tones")
        g = TWO_PI * tone_coupling(system, tone, i)
        gopt[i] += 4.0 * g * g / k
    t = np.linspace(0.0, duration, n_points)
    occ = np.empty((2, n_points))
    nss, rates = [], []
    for i, m in enumerate(system.modes):
        rate = m.linewidth + gopt[i]
        n_ss = m.n_th * m.linewidth / rate
        n_init = m.n_th if initial is None else float(initial[i])
        occ[i] = n_ss + (n_init - n_ss) * np.exp(-rate * t)
        nss.append(n_ss)
        rates.append(rate)
    return CoolingTrace(t, occ, tuple(nss), tuple(gopt), tuple(rates))


# -- stroboscopic readout ---------------------------------------------------------


def stroboscopic_readout(trace: SimTrace, gates: Sequence[tuple[float, float]], mode: int = 1) -> RingdownTrace:
    """Sideband amplitude ``|b_mode|`` sampled only inside the gate windows."""
    if mode not in (1, 2):
        raise ValidationError("mode must be 1 or 2", field="mode")
    amp = np.abs(trace.b1 if mode == 1 else trace.b2)
    t = trace.time
    gates = [(float(a), float(b)) for a, b in gates]
    if gates and (min(a for a, _ in gates) < t[0] - 1e-12 or max(b for _, b in gates) > t[-1] + 1e-12):
        raise ValidationError("gates extend beyond the trace", field="gates")
    keep = np.zeros(t.shape, dtype=bool)
    for a, b in gates:
        keep |= (t >= a) & (t <= b)
    # de-duplicate identical time stamps at phase boundaries
    idx = np.flatnonzero(keep)
    if idx.size:
        idx = idx[np.concatenate([[True], np.diff(t[idx]) > 0])]
    return RingdownTrace(t[idx], amp[idx], np.ones(idx.size, dtype=bool), intervals=tuple(gates))


def periodic_gates(t_start: float, t_end: float, period: float, duty: float) -> list[tuple[float, float]]:
    if not (period > 0 and 0 < duty <= 1):
        raise ValidationError("gate period must be positive and duty in (0, 1]", field="duty")
    out = []
    t = t_start
    while t < t_end:
        out.append((t, min(t + duty * period, t_end)))
        t += period
    return out
