"""Independent reference implementations used to freeze expected values.

These are deliberately naive transcriptions (explicit loops, no shared code
with the package) so agreement is meaningful.
"""

import math


def allan_brute_force(y, k, f0):
    """Non-overlapping two-sample deviation of fractional frequency.

    Window means of ``k`` consecutive samples; only adjacent windows that are
    both gap-free form a difference.
    """
    n_win = len(y) // k
    means, valid = [], []
    for w in range(n_win):
        s = 0.0
        ok = True
        for i in range(w * k, (w + 1) * k):
            if math.isnan(y[i]):
                ok = False
            s += y[i]
        means.append(s / k)
        valid.append(ok)
    acc = 0.0
    count = 0
    for w in range(1, n_win):
        if valid[w] and valid[w - 1]:
            d = (means[w] - means[w - 1]) / f0
            acc += d * d
            count += 1
    if count == 0:
        return math.nan, 0
    return math.sqrt(acc / (2 * count)), count


def membrane_frequency(L, rho, sx, sy, m, n):
    return math.sqrt((m * m * sx + n * n * sy) / rho) / (2 * L)


def bending_rigidity(E, h, nu):
    return E * h ** 3 / (12 * (1 - nu * nu))


def dilution(E, h, nu, L, sigma, m, n):
    lam = math.sqrt(4 * bending_rigidity(E, h, nu) / (sigma * h * L * L))
    return 1 / (lam * (1 + math.pi ** 2 * lam * (m * m + n * n) / 4))


def bose(f, T):
    h = 6.62607015e-34
    kb = 1.380649e-23
    return 1 / (math.exp(h * f / (kb * T)) - 1)


def damped_rabi_first_max(j_cyc, gamma):
    """Equal energy damping on both modes: |b2|^2 / n0 = sin^2(2 pi J t) exp(-gamma t).

    Returns (time, value) at its first maximum.
    """
    w = 2 * math.pi * j_cyc
    # d/dt [sin^2(wt) e^{-g t}] = 0  ->  tan(wt) = 2 w / g
    t = math.atan2(2 * w, gamma) / w
    return t, math.sin(w * t) ** 2 * math.exp(-gamma * t)


def count_modes_below(L, rho, sx, sy, fmax):
    count = 0
    for m in range(1, 200):
        for n in range(1, 200):
            if membrane_frequency(L, rho, sx, sy, m, n) <= fmax:
                count += 1
    return count
