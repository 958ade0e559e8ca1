import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from membrane_works import kernels

from oracles import allan_brute_force


def test_backend_is_selected():
    assert kernels.BACKEND in kernels.available_backends()


def test_rk4_matches_matrix_exponential(backend):
    rng = np.random.default_rng(3)
    m = rng.standard_normal((6, 6))
    m -= 3.0 * np.eye(6)
    f = rng.standard_normal(6)
    x0 = rng.standard_normal(6)
    h, n_out, sub = 1e-3, 10, 50
    states, n_valid = backend.rk4_linear(m, f, x0, h, n_out, sub)
    assert n_valid == n_out + 1
    t = h * sub * n_out
    # affine solution x(t) = e^{Mt} x0 + M^{-1}(e^{Mt} - I) f
    e = expm(m * t)
    exact = e @ x0 + np.linalg.solve(m, (e - np.eye(6)) @ f)
    np.testing.assert_allclose(states[-1], exact, rtol=1e-9, atol=1e-11)


def test_rk4_stops_on_overflow(backend):
    m = np.array([[1e3]])
    states, n_valid = backend.rk4_linear(m, np.zeros(1), np.array([1e300]), 1.0, 5, 1)
    assert n_valid < 6
    assert np.all(np.isfinite(states[:n_valid]))


def test_backends_agree_on_rk4():
    backends = kernels.available_backends()
    if len(backends) < 2:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(0)
    m = rng.standard_normal((6, 6)) - 2 * np.eye(6)
    f = rng.standard_normal(6)
    x0 = rng.standard_normal(6)
    a, _ = backends["python"].rk4_linear(m, f, x0, 1e-3, 20, 7)
    b, _ = backends["cython"].rk4_linear(m, f, x0, 1e-3, 20, 7)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


series = st.lists(
    st.one_of(st.floats(-1e3, 1e3, allow_nan=False), st.just(math.nan)),
    min_size=2, max_size=64,
)


@given(y=series, k=st.integers(1, 32), f0=st.floats(1.0, 1e9))
def test_allan_kernel_matches_brute_force_exactly(y, k, f0):
    for impl in kernels.available_backends().values():
        got = impl.allan_sigma(np.array(y, dtype=float), k, f0)
        want = allan_brute_force(y, k, f0)
        assert got[1] == want[1]
        if want[1]:
            assert got[0] == want[0]
        else:
            assert math.isnan(got[0])
