"""Pure-Python/NumPy implementations of the compiled kernels.

Used when the extension is unavailable or ``MEMBRANE_WORKS_PURE=1``.
"""

import math

import numpy as np

BACKEND = "python"


def rk4_linear(m, f, x0, h, n_out, substeps):
    m = np.ascontiguousarray(m, dtype=np.float64)
    f = np.ascontiguousarray(f, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    d = x.shape[0]
    if m.shape != (d, d) or f.shape != (d,):
        raise ValueError("shape mismatch between matrix, forcing and state")
    out = np.empty((n_out + 1, d))
    out[0] = x
    half = 0.5 * h
    sixth = h / 6.0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n_out + 1):
            for _ in range(substeps):
                k1 = m @ x + f
                k2 = m @ (x + half * k1) + f
                k3 = m @ (x + half * k2) + f
                k4 = m @ (x + h * k3) + f
                x = x + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[i] = x
            if not np.all(np.isfinite(x)):
                return out, i
    return out, n_out + 1


def allan_sigma(y, k, f0):
    y = np.asarray(y, dtype=np.float64)
    n_win = y.shape[0] // k
    if n_win == 0:
        return math.nan, 0
    blocks = y[: n_win * k].reshape(n_win, k)
    # cumsum is strictly sequential, so these sums match a plain loop bit-for-bit
    means = np.cumsum(blocks, axis=1)[:, -1] / k
    valid = np.isfinite(blocks).all(axis=1)
    pair = valid[1:] & valid[:-1]
    n_diffs = int(pair.sum())
    if n_diffs == 0:
        return math.nan, 0
    d = (means[1:][pair] - means[:-1][pair]) / f0
    acc = float(np.cumsum(d * d)[-1])
    return math.sqrt(acc / (2.0 * n_diffs)), n_diffs
