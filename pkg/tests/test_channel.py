import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isacsim.channel import (ChannelParams, crandn, first_tap_factor, modified_rician_factor,
                             power_delay_profile, sample_narrowband, sample_wideband,
                             steering_derivative, steering_vector, stream)


def test_steering_vector_examples():
    np.testing.assert_allclose(steering_vector(0.0, 4), np.ones(4))
    np.testing.assert_allclose(steering_vector(np.pi / 2, 2), [1, -1], atol=1e-15)
    m = np.arange(3)
    np.testing.assert_allclose(steering_vector(np.pi / 6, 3), np.exp(1j * np.pi * m * 0.5))


def test_steering_vector_rejects_bad_inputs():
    with pytest.raises(ValueError):
        steering_vector(0.0, 0)
    with pytest.raises(ValueError):
        steering_vector(0.0, 4, spacing_ratio=0.0)


def test_steering_derivative_examples():
    np.testing.assert_allclose(steering_derivative(0.0, 3), [0, 1j * np.pi, 2j * np.pi])
    np.testing.assert_allclose(steering_derivative(np.pi / 2, 5), np.zeros(5), atol=1e-15)
    # frozen: entry 1 at theta = pi/6 is j pi cos(pi/6) exp(j pi/2)
    d = steering_derivative(np.pi / 6, 2)
    assert d[0] == 0
    assert abs(d[1] - (-np.pi * np.cos(np.pi / 6))) < 1e-12


@settings(max_examples=100, deadline=None)
@given(theta=st.floats(-1.5, 1.5), M=st.integers(1, 12), ratio=st.floats(0.1, 1.0))
def test_steering_derivative_matches_finite_difference(theta, M, ratio):
    h = 1e-6
    fd = (steering_vector(theta + h, M, ratio) - steering_vector(theta - h, M, ratio)) / (2 * h)
    np.testing.assert_allclose(steering_derivative(theta, M, ratio), fd, atol=1e-6)
    assert np.allclose(np.abs(steering_vector(theta, M, ratio)), 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), M=st.integers(1, 6))
def test_derivative_quadratic_form_sign_invariant(seed, M):
    rng = np.random.default_rng(seed)
    G = crandn(rng, M, M)
    Q = G @ G.conj().T
    d = steering_derivative(0.3, M)
    assert np.isclose(np.vdot(d, Q @ d), np.vdot(-d, Q @ -d))


def test_power_delay_profile_examples():
    np.testing.assert_allclose(power_delay_profile(1, 0.3), [1.0])
    np.testing.assert_allclose(power_delay_profile(2, 1.0), [0.5, 0.5])
    p = power_delay_profile(4)
    assert abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(p[1:] / p[:-1], np.exp(-1.0))


def test_modified_rician_factor_examples():
    assert modified_rician_factor(3.0, [1.0]) == pytest.approx(3.0)
    assert modified_rician_factor(1.0, [0.5, 0.5]) == pytest.approx(1 / 3)


@settings(max_examples=50, deadline=None)
@given(beta=st.floats(1e-3, 0.5), L=st.integers(2, 6))
def test_first_tap_factor_round_trip(beta, L):
    pdp = power_delay_profile(L)
    ceiling = modified_rician_factor(1e12, pdp)
    if beta >= ceiling:
        with pytest.raises(ValueError):
            first_tap_factor(beta, pdp)
        return
    b0 = first_tap_factor(beta, pdp)
    assert abs(modified_rician_factor(b0, pdp) - beta) < 1e-10


def test_first_tap_factor_unreachable():
    with pytest.raises(ValueError, match="unreachable"):
        first_tap_factor(10.0, power_delay_profile(4))


def test_stream_is_order_independent():
    a = stream(1, 3, "channel").standard_normal(5)
    stream(1, 4, "channel").standard_normal(100)
    b = stream(1, 3, "channel").standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, stream(1, 3, "init").standard_normal(5))


def test_narrowband_limits():
    los = sample_narrowband(ChannelParams(M=4, beta=np.inf, theta=(0.2, -0.1)), stream(0, 0, "x"))
    np.testing.assert_allclose(los.h[0], steering_vector(0.2, 4))
    h1 = sample_narrowband(ChannelParams(M=4, beta=1.0), stream(5, 0, "x")).h
    h2 = sample_narrowband(ChannelParams(M=4, beta=1.0), stream(5, 0, "x")).h
    assert np.array_equal(h1, h2)


def test_narrowband_rayleigh_variance():
    rng = stream(0, 0, "moments")
    h = np.stack([sample_narrowband(ChannelParams(M=2, beta=0.0), rng).h for _ in range(5000)])
    var = np.mean(np.abs(h) ** 2)
    assert abs(var - 1.0) < 0.05
    assert abs(np.mean(h)) < 3 * np.sqrt(1.0 / h.size)


def test_wideband_single_tap_los():
    ch = sample_wideband(ChannelParams(M=3, L=1, L_tilde=1, beta=np.inf, theta=(0.4, 0.0)),
                         stream(0, 0, "x"))
    np.testing.assert_allclose(ch.h[0, 0], steering_vector(0.4, 3))


def test_wideband_total_power():
    rng = stream(0, 1, "moments")
    params = ChannelParams(M=4, L=4, L_tilde=4, beta=0.2)
    tot = np.mean([np.sum(np.abs(sample_wideband(params, rng).h[0]) ** 2) / 4
                   for _ in range(5000)])
    assert abs(tot - 1.0) < 0.05


def test_wideband_rejects_too_many_taps():
    with pytest.raises(ValueError):
        sample_wideband(ChannelParams(M=2, L=3, L_tilde=1), stream(0, 0, "x"))
