"""Compare the compiled and pure-Python kernels on representative workloads.

    python benchmarks/bench_kernels.py [--repeat N]

Prints the best wall-clock time per kernel and backend, the speed-up, and the
largest difference between backend outputs.
"""

import argparse
import timeit

import numpy as np

from membrane_works import electromech as em
from membrane_works.kernels import available_backends


def swap_workload():
    """Real-form matrix and step of the reference adiabatic swap phase."""
    system = em.reference_system()
    trace = em.simulate(system, em.reference_schedule(system))
    seg = next(s for s in trace.segments if s.name == "swapping")
    x0 = np.zeros(seg.matrix.shape[0])
    x0[2] = 100.0
    n_out = 1000
    substeps = max(1, int(round((seg.t1 - seg.t0) / n_out / seg.step)))
    h = (seg.t1 - seg.t0) / (n_out * substeps)
    return (seg.matrix, seg.forcing, x0, h, n_out, substeps)


def allan_workload(n=2 ** 16, seed=0):
    rng = np.random.default_rng(seed)
    y = 885.39e3 + rng.normal(0.0, 1e-3, n)
    y[rng.random(n) < 0.01] = np.nan
    return y


def run(repeat):
    backends = available_backends()
    rk_args = swap_workload()
    y = allan_workload()
    jobs = {
        "rk4_linear (10 s swap)": lambda mod: mod.rk4_linear(*rk_args)[0],
        "allan_sigma (65536 samples, octave k)": lambda mod: [mod.allan_sigma(y, k, 885.39e3)
                                                              for k in 2 ** np.arange(15)],
    }
    print(f"{'kernel':40s} " + " ".join(f"{b:>12s}" for b in backends) + f" {'speed-up':>10s} {'max diff':>10s}")
    for name, job in jobs.items():
        times, outs = {}, {}
        for b, mod in backends.items():
            outs[b] = job(mod)
            times[b] = min(timeit.repeat(lambda: job(mod), number=1, repeat=repeat))
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        ref = np.asarray(outs["python"], dtype=float)
        diff = max((np.nanmax(np.abs(np.asarray(o, dtype=float) - ref)) for o in outs.values()), default=0.0)
        cells = " ".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
        print(f"{name:40s} {cells} {speed:9.1f}x {diff:10.2e}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    run(p.parse_args().repeat)
