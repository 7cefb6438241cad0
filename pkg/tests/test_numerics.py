import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnw.errors import InvalidRangeError, NumericError
from dnw.numerics import (IDENTITY, RELU, TANH, Rng, activate, activation_grad, finite_diff,
                          softmax_ce, uniform)


def test_splitmix64_reference_stream():
    # first outputs of the published SplitMix64 recurrence
    assert Rng(0).next_u64() == 0xE220A8397B1DCDAF
    r = Rng(1234567)
    assert [r.next_u64() for _ in range(3)] == [6457827717110365317, 3203168211198807973,
                                                9817491932198370423]


def test_u64_array_matches_scalar_calls():
    a, b = Rng(99), Rng(99)
    arr = a.u64_array(50)
    assert [int(x) for x in arr] == [b.next_u64() for _ in range(50)]
    assert a.state == b.state


def test_uniform_range_and_determinism():
    v = uniform(Rng(5), 0.0, 1.0)
    assert 0.0 <= v < 1.0
    assert uniform(Rng(7), -0.5, 0.5) == uniform(Rng(7), -0.5, 0.5)


def test_uniform_invalid_range():
    with pytest.raises(InvalidRangeError):
        uniform(Rng(0), 1.0, 1.0)
    with pytest.raises(InvalidRangeError):
        Rng(0).uniform_array(3, 2.0, 1.0)


def test_uniform_mean_law_of_large_numbers():
    r = Rng(11)
    m = np.mean([uniform(r, 0.0, 1.0) for _ in range(100_000)])
    assert 0.49 <= m <= 0.51


@given(st.integers(0, 2**64 - 1), st.floats(-1e3, 1e3), st.floats(1e-3, 1e3))
@settings(max_examples=200, deadline=None)
def test_uniform_in_range_property(seed, lo, width):
    hi = lo + width
    v = uniform(Rng(seed), lo, hi)
    assert lo <= v < hi


@given(st.integers(0, 2**64 - 1))
@settings(max_examples=50, deadline=None)
def test_streams_reproducible(seed):
    assert np.array_equal(Rng(seed).uniform_array(20), Rng(seed).uniform_array(20))


def test_permutation_is_a_permutation():
    p = Rng(3).permutation(100)
    assert sorted(p.tolist()) == list(range(100))


def test_softmax_ce_uniform_logits():
    loss, _ = softmax_ce(np.zeros((2, 1)), np.array([0]))
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_softmax_ce_saturated_closed_form():
    loss, _ = softmax_ce(np.array([[10.0], [-10.0]]), np.array([0]))
    assert loss == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)
    assert loss == pytest.approx(2.06e-9, rel=1e-2)


def test_softmax_ce_gradient_finite_difference():
    r = np.random.default_rng(0)
    logits = r.normal(size=(4, 6))
    y = r.integers(0, 4, 6)
    _, g = softmax_ce(logits, y)
    fd = finite_diff(lambda L: softmax_ce(L, y)[0], logits)
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1e-8)) < 1e-6


def test_softmax_ce_rejects_non_finite():
    with pytest.raises(NumericError):
        softmax_ce(np.array([[np.nan], [0.0]]), np.array([0]))


@given(st.integers(2, 5), st.integers(1, 6), st.integers(0, 10**6))
@settings(max_examples=100, deadline=None)
def test_softmax_ce_properties(C, B, seed):
    r = np.random.default_rng(seed)
    logits = 5.0 * r.normal(size=(C, B))
    y = r.integers(0, C, B)
    loss, g = softmax_ce(logits, y)
    assert loss >= 0.0
    assert np.allclose(g.sum(axis=0), 0.0, atol=1e-15)


def test_finite_diff_examples():
    assert finite_diff(lambda x: float(x[0] ** 2), np.array([3.0]))[0] == pytest.approx(6.0, abs=1e-8)
    assert np.array_equal(finite_diff(lambda x: 4.0, np.zeros(3)), np.zeros(3))


def test_finite_diff_non_finite():
    with pytest.raises(NumericError):
        finite_diff(lambda x: float("inf"), np.zeros(2))


@pytest.mark.parametrize("code", [IDENTITY, RELU, TANH])
def test_activation_derivative_matches_finite_difference(code):
    y = np.array([-1.3, -0.2, 0.4, 2.0])
    analytic = activation_grad(activate(y, code), code)
    fd = np.array([finite_diff(lambda t: float(activate(t, code)[0]), y[i:i + 1])[0]
                   for i in range(y.size)])
    assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-10)


def test_relu_derivative_at_zero_is_zero():
    assert activation_grad(activate(np.array([0.0]), RELU), RELU)[0] == 0.0
