import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from elista.prox import (
    ConvergenceError,
    mutual_coherence,
    soft_threshold,
    soft_threshold_jvp,
    spectral_norm_sq,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec = arrays(np.float64, 7, elements=finite)
thr = st.floats(0, 50, allow_nan=False)


def test_soft_threshold_examples():
    np.testing.assert_array_equal(soft_threshold([1.5, -0.3, 2.0], 1.0), [0.5, 0.0, 1.0])
    np.testing.assert_array_equal(soft_threshold([-2.0], 0.5), [-1.5])
    u = np.random.default_rng(0).standard_normal(20)
    np.testing.assert_array_equal(soft_threshold(u, 0.0), u)


def test_soft_threshold_rejects_negative_threshold():
    with pytest.raises(ValueError):
        soft_threshold([1.0], -0.1)


def test_jvp_examples():
    for u, d_u, d_t in (([2.0], [1], [-1]), ([-0.5], [0], [0]), ([1.0], [0], [0])):
        du, dt = soft_threshold_jvp(np.array(u), 1.0)
        np.testing.assert_array_equal(du, d_u)
        np.testing.assert_array_equal(dt, d_t)


@settings(max_examples=200, deadline=None)
@given(vec, vec, thr)
def test_nonexpansive(u, v, theta):
    lhs = np.linalg.norm(soft_threshold(u, theta) - soft_threshold(v, theta))
    assert lhs <= np.linalg.norm(u - v) * (1 + 1e-12) + 1e-12


@settings(max_examples=200, deadline=None)
@given(vec, thr)
def test_shrinkage_and_sign(u, theta):
    out = soft_threshold(u, theta)
    assert np.max(np.abs(out)) <= max(np.max(np.abs(u)) - theta, 0.0)
    assert np.all((np.sign(out) == 0) | (np.sign(out) == np.sign(u)))


@settings(max_examples=200, deadline=None)
@given(vec, thr, thr)
def test_monotone_in_threshold(u, t1, t2):
    lo, hi = sorted((t1, t2))
    assert np.all(np.abs(soft_threshold(u, lo)) >= np.abs(soft_threshold(u, hi)))


def test_jvp_matches_central_differences():
    rng = np.random.default_rng(1)
    u = rng.uniform(-3, 3, 500)
    theta = 0.7
    keep = np.abs(np.abs(u) - theta) > 1e-4
    u = u[keep]
    h = 1e-7
    du, dt = soft_threshold_jvp(u, theta)
    fd_u = (soft_threshold(u + h, theta) - soft_threshold(u - h, theta)) / (2 * h)
    fd_t = (soft_threshold(u, theta + h) - soft_threshold(u, theta - h)) / (2 * h)
    np.testing.assert_allclose(fd_u, du, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(fd_t, dt, rtol=1e-6, atol=1e-6)


def test_spectral_norm_sq():
    assert spectral_norm_sq(np.eye(3)) == pytest.approx(1.0, rel=1e-10)
    assert spectral_norm_sq(np.diag([3.0, 1.0])) == pytest.approx(9.0, rel=1e-10)
    A = np.random.default_rng(0).standard_normal((8, 16))
    oracle = np.linalg.svd(A, compute_uv=False)[0] ** 2
    assert spectral_norm_sq(A) == pytest.approx(oracle, rel=1e-8)


def test_spectral_norm_sq_cap():
    A = np.random.default_rng(0).standard_normal((8, 16))
    with pytest.raises(ConvergenceError):
        spectral_norm_sq(A, tol=1e-15, max_iters=3)
    with pytest.raises(ValueError):
        spectral_norm_sq(np.zeros((2, 2)))


def test_mutual_coherence():
    assert mutual_coherence(np.eye(5)) == 0.0
    A = np.random.default_rng(2).standard_normal((4, 6))
    A[:, 3] = A[:, 1]
    assert mutual_coherence(A) == pytest.approx(1.0)


def test_mutual_coherence_brute_force():
    A = np.random.default_rng(0).standard_normal((8, 16))
    best = 0.0
    for i in range(16):
        for j in range(16):
            if i != j:
                c = abs(A[:, i] @ A[:, j]) / (np.linalg.norm(A[:, i]) * np.linalg.norm(A[:, j]))
                best = max(best, c)
    assert mutual_coherence(A) == pytest.approx(best, rel=1e-12)


def test_mutual_coherence_zero_column():
    A = np.eye(3)
    A[:, 2] = 0
    with pytest.raises(ValueError, match="zero column"):
        mutual_coherence(A)
