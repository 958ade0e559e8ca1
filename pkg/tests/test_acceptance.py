"""Acceptance criteria 1-8, each timed against its wall-clock budget.

Run under pytest (``pytest tests/test_acceptance.py -s`` shows the summary
lines live) or directly with ``python tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from membrane_works import electromech as em  # noqa: E402
from membrane_works.membrane import dilution_factor, mode_frequency, reference_membrane  # noqa: E402
from membrane_works.spectral import fit_lorentzian, fit_ringdown, synth_spectrum  # noqa: E402
from membrane_works.stability import (  # noqa: E402
    AllanCurve,
    FrequencySeries,
    allan_curve,
    allan_deviation,
    allan_deviation_detail,
    fit_noise_model,
    synth_frequency_series,
)
from membrane_works.stress import fit_biaxial_stress, resolution_study, synth_mode_table  # noqa: E402

from oracles import allan_brute_force, membrane_frequency  # noqa: E402

RESULTS = {}


def check(number, title, func, budget_s=None):
    """Run one criterion, print its PASS/FAIL line and re-raise any failure."""
    t0 = time.perf_counter()
    detail, error = "", None
    try:
        detail = func() or ""
        elapsed = time.perf_counter() - t0
        if budget_s is not None and elapsed >= budget_s:
            raise AssertionError(f"runtime {elapsed:.2f} s exceeds {budget_s} s")
    except AssertionError as exc:
        error = exc
        detail = str(exc).splitlines()[0] if str(exc) else "assertion failed"
    elapsed = time.perf_counter() - t0
    status = "FAIL" if error else "PASS"
    budget = f" (budget {budget_s:g} s)" if budget_s is not None else ""
    line = f"criterion {number} {status}: {title} [{elapsed:.2f} s{budget}] {detail}"
    RESULTS[number] = line
    print(line, flush=True)
    if error:
        raise error


# -- 1 -----------------------------------------------------------------------------

MEASURED_HZ = {(3, 1): 868.70e3, (1, 3): 875.54e3, (6, 5): 2.152e6, (5, 6): 2.158e6}


def frequency_law():
    spec = reference_membrane()
    worst = 0.0
    for idx, measured in MEASURED_HZ.items():
        pred = mode_frequency(spec, idx)
        oracle = membrane_frequency(spec.side_length, spec.density, spec.stress_x, spec.stress_y, *idx)
        assert pred == pytest.approx(oracle, rel=1e-14)
        dev = abs(pred - measured) / measured
        assert dev < 3e-3, f"mode {idx}: predicted {pred:.1f} Hz deviates {dev:.2%} from {measured:.0f} Hz"
        worst = max(worst, dev)
    return f"worst deviation {worst:.3%}"


# -- 2 -----------------------------------------------------------------------------

def dilution():
    dq = dilution_factor(reference_membrane(), (3, 1))
    assert 363 <= dq <= 378, f"D_Q(3,1) = {dq:.2f}"
    return f"D_Q(3,1) = {dq:.2f}"


# -- 3 -----------------------------------------------------------------------------

def stress_round_trip():
    spec = reference_membrane()
    modes = synth_mode_table(spec, count=57)
    assert len(modes) == 57
    fit = fit_biaxial_stress(modes, spec.side_length, spec.density)
    assert fit.stress_x == pytest.approx(spec.stress_x, rel=1e-6)
    assert fit.stress_y == pytest.approx(spec.stress_y, rel=1e-6)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    study = resolution_study(spec, [m.index for m in modes], noise_hz=10.0, n_seeds=100, seed=0)
    sx, sy = study.empirical_resolution()
    assert sx < 0.5e6 and sy < 0.5e6, f"1-sigma resolution {sx / 1e6:.3f}, {sy / 1e6:.3f} MPa"
    return f"noiseless R^2 = {fit.r_squared:.12f}; 10 Hz noise 1-sigma = {sx / 1e6:.3f} / {sy / 1e6:.3f} MPa"


# -- 4 -----------------------------------------------------------------------------

def q_consistency():
    out = []
    for center, width, q_want in ((871.93e3, 8.13e-3, 1.07e8), (885.39e3, 5.63e-3, 1.57e8)):
        fit = fit_lorentzian(synth_spectrum(center, width))
        assert fit.q == pytest.approx(q_want, rel=0.01), f"Q = {fit.q:.4g}, expected {q_want:.3g}"
        out.append(f"{fit.q:.4g}")
    return "Q = " + ", ".join(out)


# -- 5 -----------------------------------------------------------------------------

def allan_estimator():
    f0 = 885.39e3
    rng = np.random.default_rng(2024)
    compared = 0
    for n in range(4, 65):
        for trial in range(3):
            y = f0 + rng.normal(0.0, 0.3, n)
            if trial:
                y[rng.random(n) < 0.15 * trial] = np.nan
            series = FrequencySeries(5.0, y, f0)
            for k in range(1, n // 2 + 1):
                want, n_diffs = allan_brute_force(list(y), k, f0)
                if n_diffs == 0:
                    continue
                got = allan_deviation_detail(series, 5.0 * k)
                assert got == (want, n_diffs), f"n={n} k={k}: {got} != {(want, n_diffs)}"
                compared += 1

    exps = [fit_noise_model(allan_curve(synth_frequency_series("white", 2 ** 14, 1.0, f0, seed=s))).exponent
            for s in range(100)]
    mean_exp = float(np.mean(exps))
    assert abs(mean_exp + 0.5) <= 0.05, f"mean exponent {mean_exp:.4f}"

    delta = 0.5
    alt = synth_frequency_series("alternating", 64, 1.0, f0, level=delta / f0)
    sigma = allan_deviation(alt, 1.0)
    assert sigma == pytest.approx(math.sqrt(2) * delta / f0, rel=1e-15, abs=0)
    return f"{compared} brute-force comparisons exact; white-noise exponent {mean_exp:.4f}"


# -- 6 -----------------------------------------------------------------------------

def allan_anchor():
    closed_form = 6e-10 * math.sqrt(3e4)
    curve = AllanCurve(np.array([3e4]), np.array([6e-10]), np.array([1]))
    fit = fit_noise_model(curve, exponent=-0.5)
    assert fit.amplitude == pytest.approx(closed_form, rel=0.01)
    assert fit.amplitude == pytest.approx(1.04e-7, rel=0.01)
    return f"A = {fit.amplitude:.6g}"


# -- 7 -----------------------------------------------------------------------------

def swap_dynamics():
    system = em.reference_system()
    sched = em.reference_schedule(system)
    lossless = em.transfer_efficiency(em.simulate(system, sched, damping_scale=0.0, cavity_damping=False))
    assert lossless == pytest.approx(1.0, abs=1e-6), f"lossless efficiency {lossless!r}"

    t0 = time.perf_counter()
    trace = em.simulate(system, sched)
    sim_wall = time.perf_counter() - t0
    assert trace.time[-1] - trace.time[0] >= 10.0
    assert sim_wall < 60.0
    eff = em.transfer_efficiency(trace)
    assert 0.70 <= eff <= 0.85, f"anchored efficiency {eff:.4f}"
    band = em.efficiency_band(system, sched)
    assert band["low"] <= 0.7818 <= band["high"], f"band [{band['low']:.4f}, {band['high']:.4f}]"

    effs = [em.transfer_efficiency(em.simulate(system, sched, extra_damping=x)) for x in (0.0, 1e-3, 1e-2, 1e-1)]
    assert all(a > b for a, b in zip(effs, effs[1:])), f"not monotone: {effs}"
    return (f"lossless 1-{1 - lossless:.1e}; anchored {eff:.4f} in band [{band['low']:.4f}, {band['high']:.4f}]; "
            f"{trace.time[-1]:.2f} s simulated in {sim_wall:.3f} s")


# -- 8 -----------------------------------------------------------------------------

def cross_module():
    system = em.reference_system()
    sched = em.ProtocolSchedule((em.Phase("readout", 600.0, ()),))
    trace = em.simulate(system, sched, [0, 100.0, 0], sample_interval=1.0)
    readout = em.stroboscopic_readout(trace, em.periodic_gates(0.0, 600.0, 60.0, 0.5))
    fit = fit_ringdown(readout)
    truth = system.modes[0].energy_decay
    assert fit.rate == pytest.approx(truth, rel=1e-4), f"rate {fit.rate!r} vs {truth!r}"
    return f"gamma_E = {fit.rate:.8g} 1/s (relative error {abs(fit.rate / truth - 1):.1e})"


CRITERIA = [
    (1, "frequency law vs measured modes", frequency_law, 1.0),
    (2, "dilution factor of mode (3,1)", dilution, 1.0),
    (3, "stress-fit round trip and resolution", stress_round_trip, 10.0),
    (4, "Q from Lorentzian fits", q_consistency, 5.0),
    (5, "Allan estimator exactness and scaling", allan_estimator, 30.0),
    (6, "Allan noise-model anchor", allan_anchor, None),
    (7, "two-mode swap dynamics", swap_dynamics, 60.0),
    (8, "simulated ring-down recovers energy decay rate", cross_module, None),
]


@pytest.mark.parametrize("number, title, func, budget", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_acceptance_criterion(number, title, func, budget):
    check(number, title, func, budget)


if __name__ == "__main__":
    failed = 0
    for crit in CRITERIA:
        try:
            check(*crit)
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
