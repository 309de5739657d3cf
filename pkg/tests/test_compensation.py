import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import kstest, norm

from lidbench.compensation import (PcenConfig, WarpConfig, apply_method, cms, cmvn, feature_warp,
                                   normalize_method, pcen, rasta_filter, rasta_response,
                                   windowed_cmvn)
from lidbench.spectral import FeatureMatrix, cepstra

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def rasta_recursion(x):
    """Direct evaluation of y[t] = 0.98 y[t-1] + 0.1(2x[t] + x[t-1] - x[t-3] - 2x[t-4])."""
    y = np.zeros(len(x))
    get = lambda i: x[i] if i >= 0 else 0.0
    prev = 0.0
    for t in range(len(x)):
        y[t] = 0.98 * prev + 0.1 * (2 * get(t) + get(t - 1) - get(t - 3) - 2 * get(t - 4))
        prev = y[t]
    return y


def test_cms_examples():
    np.testing.assert_array_equal(cms(np.array([[1.0, 2.0, 3.0]])), [[-1.0, 0.0, 1.0]])
    z = np.array([[-1.0, 0.0, 1.0]])
    np.testing.assert_array_equal(cms(z), z)


@given(arrays(np.float64, (3, 7), elements=finite), finite)
@settings(max_examples=50, deadline=None)
def test_cms_shift_invariant_and_idempotent(x, c):
    np.testing.assert_allclose(cms(x + c), cms(x), atol=1e-9)
    np.testing.assert_allclose(cms(cms(x)), cms(x), atol=1e-9)


def test_cmvn_examples():
    np.testing.assert_allclose(cmvn(np.array([[1.0, 2.0, 3.0]])), [[-1.2247449, 0.0, 1.2247449]], atol=1e-7)
    z = np.array([[-1.0, 1.0, -1.0, 1.0]])
    np.testing.assert_allclose(cmvn(z), z, atol=1e-12)
    np.testing.assert_array_equal(cmvn(np.array([[5.0, 5.0, 5.0]])), [[0.0, 0.0, 0.0]])


@given(arrays(np.float64, (4, 9), elements=st.floats(-100, 100)))
@settings(max_examples=50, deadline=None)
def test_cmvn_moments_and_idempotence(x):
    y = cmvn(x)
    varying = x.std(axis=1) > 1e-6 * (1 + np.abs(x).max())
    assert np.all(np.abs(y.mean(axis=1)) < 1e-9)
    assert np.all(np.abs(y.std(axis=1)[varying] - 1) < 1e-9)
    np.testing.assert_allclose(cmvn(y)[varying], y[varying], atol=1e-9)


def test_wcmvn_short_input_matches_global():
    x = np.random.default_rng(0).standard_normal((5, 250))
    np.testing.assert_allclose(windowed_cmvn(x), cmvn(x), atol=1e-10)


def test_wcmvn_windows_use_brute_force_stats():
    x = np.random.default_rng(1).standard_normal((2, 40))
    y = windowed_cmvn(x, window_frames=9)
    for t in range(40):
        s = min(max(t - 4, 0), 40 - 9)
        w = x[:, s:s + 9]
        np.testing.assert_allclose(y[:, t], (x[:, t] - w.mean(1)) / w.std(1), atol=1e-10)


def test_wcmvn_stationary_running_mean():
    y = windowed_cmvn(np.random.default_rng(2).standard_normal((3, 3000)) * 4 + 7)
    kernel = np.ones(301) / 301
    for row in y:
        assert np.max(np.abs(np.convolve(row, kernel, mode="valid"))) < 0.1


def test_wcmvn_step_change():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2000))
    x[:, 1000:] += 10.0
    y = windowed_cmvn(x)[0]
    g = cmvn(x)[0]
    left, right = y[:1000 - 301], y[1000 + 301:]
    assert abs(left.mean()) < 0.1 and abs(right.mean()) < 0.1
    assert abs(g[:1000 - 301].mean()) > 0.5  # global normalization cannot follow the step


def test_warp_median_and_max():
    cfg = WarpConfig(3)
    assert feature_warp(np.array([[1.0, 2.0, 3.0]]), cfg)[0, 1] == 0.0
    assert feature_warp(np.array([[1.0, 3.0, 2.0]]), cfg)[0, 1] == pytest.approx(norm.ppf(2.5 / 3))
    assert norm.ppf(2.5 / 3) == pytest.approx(0.9674, abs=1e-4)


def test_warp_increasing_row_center():
    y = feature_warp(np.arange(301, dtype=float)[None, :])
    assert y[0, 150] == 0.0


def test_warp_ties_by_frame_index():
    y = feature_warp(np.array([[5.0, 5.0, 5.0]]), WarpConfig(3))
    np.testing.assert_allclose(y[0], norm.ppf((np.arange(1, 4) - 0.5) / 3))


def test_warp_rejects_even_window():
    with pytest.raises(ValueError):
        WarpConfig(300)


@pytest.mark.parametrize("dist", ["normal", "exponential", "uniform"])
def test_warp_long_run_is_gaussian(dist):
    rng = np.random.default_rng(4)
    x = getattr(rng, dist)(size=(1, 10000))
    y = feature_warp(x)[0]
    lo, hi = norm.ppf(0.5 / 301), norm.ppf(300.5 / 301)
    assert y.min() >= lo - 1e-12 and y.max() <= hi + 1e-12
    assert kstest(y, "norm").statistic < 0.05


def test_rasta_impulse():
    x = np.zeros((1, 50))
    x[0, 0] = 1.0
    y = rasta_filter(x)[0]
    np.testing.assert_allclose(y[:3], [0.2, 0.296, 0.29008], atol=1e-12)
    np.testing.assert_allclose(y, rasta_recursion(x[0]), atol=1e-12)


def test_rasta_dc():
    assert rasta_response(0.0) == 0.0
    y = rasta_filter(np.full((1, 600), 3.0))[0]
    assert np.all(np.abs(y[401:]) < 1e-3 * 3.0)


@given(arrays(np.float64, (2, 30), elements=st.floats(-10, 10)),
       arrays(np.float64, (2, 30), elements=st.floats(-10, 10)),
       st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=40, deadline=None)
def test_rasta_linear(x, y, a, b):
    np.testing.assert_allclose(rasta_filter(a * x + b * y), a * rasta_filter(x) + b * rasta_filter(y),
                               atol=1e-9)


@pytest.mark.parametrize("f", [0.05, 0.1, 0.25])
def test_rasta_measured_response(f):
    t = np.arange(20000)
    y = rasta_filter(np.cos(2 * np.pi * f * t)[None, :])[0][5000:]
    measured = np.sqrt(2 * np.mean(y ** 2))
    assert measured == pytest.approx(abs(rasta_response(f)), abs=1e-3)


def test_pcen_constant_closed_form():
    cfg = PcenConfig(alpha=1.0, eps=0.0)
    y = pcen(np.full((3, 50), 7.0), cfg)
    np.testing.assert_allclose(y, np.sqrt(3) - np.sqrt(2), atol=1e-12)
    assert np.sqrt(3) - np.sqrt(2) == pytest.approx(0.31784, abs=1e-5)


def test_pcen_zero_input():
    np.testing.assert_array_equal(pcen(np.zeros((2, 10))), 0.0)


def test_pcen_rejects_negative():
    with pytest.raises(ValueError):
        pcen(np.array([[1.0, -1.0]]))


def test_pcen_scale_invariant():
    cfg = PcenConfig(alpha=1.0, eps=0.0)
    e = np.random.default_rng(5).exponential(size=(4, 200)) + 1e-3
    base = pcen(e, cfg)
    for k in (0.25, 2.0, 1024.0):
        np.testing.assert_array_equal(pcen(k * e, cfg), base)
    for k in (0.3, 7.0, 1e5):
        np.testing.assert_allclose(pcen(k * e, cfg), base, rtol=0, atol=1e-12)


def test_pcen_smoother_recursion():
    cfg = PcenConfig(alpha=1.0, eps=0.0, delta=2.0, r=1.0)
    e = np.array([[1.0, 3.0, 2.0]])
    m1 = 0.025 * 3.0 + 0.975 * 1.0
    m2 = 0.025 * 2.0 + 0.975 * m1
    np.testing.assert_allclose(pcen(e, cfg)[0], [1.0, 3.0 / m1, 2.0 / m2], atol=1e-12)


@given(st.floats(0, 100), st.floats(0, 100))
def test_pcen_drc_increasing(g1, g2):
    d, r = 2.0, 0.5
    f = lambda g: (g + d) ** r - d ** r
    if g1 < g2:
        assert f(g1) < f(g2) or np.isclose(g1, g2)


def test_pcen_config_validation():
    with pytest.raises(ValueError):
        PcenConfig(s=1.5)
    with pytest.raises(ValueError):
        PcenConfig(alpha=0.0)


@given(arrays(np.float64, (3, 40), elements=st.floats(0.0, 50.0)))
@settings(max_examples=20, deadline=None)
def test_shapes_preserved(x):
    for fn in (cms, cmvn, windowed_cmvn, feature_warp, rasta_filter, pcen):
        assert fn(x).shape == x.shape


def test_method_dispatch():
    rng = np.random.default_rng(6)
    mf = FeatureMatrix(rng.standard_normal((20, 50)), "mfcc")
    mel = FeatureMatrix(rng.exponential(size=(30, 50)), "mel")
    np.testing.assert_array_equal(apply_method(mf, "M1").values, cmvn(mf.values))
    np.testing.assert_array_equal(apply_method(mf, "rasta").values, rasta_filter(mf.values))
    out = apply_method(mel, "M5")
    assert out.values.shape == (20, 50)
    np.testing.assert_allclose(out.values, cepstra(pcen(mel.values)))
    assert apply_method(mf, "baseline") is mf
    with pytest.raises(ValueError):
        apply_method(mf, "M9")
    with pytest.raises(ValueError):
        apply_method(mel, "M0")
    with pytest.raises(ValueError):
        apply_method(mf, "M5")


@pytest.mark.parametrize("token,expected", [("M0", "M0"), ("m3", "M3"), ("cms", "M0"),
                                            ("wcmvn", "M2"), ("FW", "M3"), ("pcen", "M5"),
                                            ("baseline", "baseline")])
def test_method_aliases(token, expected):
    assert normalize_method(token) == expected
