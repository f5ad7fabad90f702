import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualhdr.capture import expose
from dualhdr.radiometry import (DegenerateInputError, ExposureMeta, build_input_stack, gamma_to_linear,
                                global_luminance_align, inverse_mu_tonemap, mu_tonemap, relative_exposure,
                                stack_frames)

unit = st.floats(0.0, 1.0, allow_nan=False)


def frame(img, ev, t):
    return SimpleNamespace(image=img, meta=ExposureMeta(t, ev))


# --- gamma_to_linear


def test_gamma_zero_and_ones():
    z = np.zeros((2, 3, 3))
    assert np.array_equal(gamma_to_linear(z, ExposureMeta(1.0)), z)
    np.testing.assert_allclose(gamma_to_linear(np.ones((2, 2, 3)), ExposureMeta(0.25)), 4.0)


def test_gamma_half_gray():
    # oracle: math.pow is an independent scalar evaluation
    out = gamma_to_linear(np.full((1, 1, 3), 0.5), ExposureMeta(1.0, gamma=2.2))
    np.testing.assert_allclose(out, math.pow(0.5, 2.2), rtol=1e-12)
    assert abs(out[0, 0, 0] - 0.217637) < 1e-6


def test_gamma_rejects_nonfinite():
    img = np.full((2, 2, 3), 0.5)
    img[1, 1, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        gamma_to_linear(img, ExposureMeta(1.0))


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_meta_rejects_bad_time(t):
    with pytest.raises(ValueError):
        ExposureMeta(t)


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=30), st.floats(1e-3, 1.0))
def test_expose_round_trip(values, t):
    meta = ExposureMeta(t)
    hdr = np.resize(np.array(values), (1, len(values) // 3 or 1, 3)) / t  # H * t <= 1
    back = gamma_to_linear(expose(hdr, meta, 0.0, None), meta)
    np.testing.assert_allclose(back, hdr, rtol=1e-6, atol=1e-12)


# --- mu_tonemap


def test_mu_endpoints_and_example():
    np.testing.assert_array_equal(mu_tonemap(np.array([0.0, 1.0])), [0.0, 1.0])
    expected = math.log(51) / math.log(5001)
    assert abs(float(mu_tonemap(np.array(0.01))) - expected) < 1e-12
    # the quoted 0.46153 holds to three decimals; the exact value is 0.461623
    assert round(expected, 3) == round(0.46153, 3)


def test_mu_clamps_and_rejects_bad_mu():
    np.testing.assert_array_equal(mu_tonemap(np.array([-1.0, 3.0])), [0.0, 1.0])
    with pytest.raises(ValueError):
        mu_tonemap(np.zeros(1), mu=0.0)


@given(unit, unit)
def test_mu_strictly_monotone(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert mu_tonemap(np.array(lo)) < mu_tonemap(np.array(hi))


@given(unit)
def test_mu_inverse(x):
    assert abs(float(inverse_mu_tonemap(mu_tonemap(np.array(x)))) - x) < 1e-9


# --- global luminance alignment


def test_gla_examples():
    lo, mid = np.full((4, 4, 3), 0.2), np.full((4, 4, 3), 0.4)
    np.testing.assert_allclose(global_luminance_align(lo, mid, "as-written"), 0.1, rtol=1e-12)
    np.testing.assert_allclose(global_luminance_align(lo, mid, "inverted"), 0.4, rtol=1e-12)


def test_gla_clips_after_product():
    lo, mid = np.full((2, 2, 3), 0.8), np.full((2, 2, 3), 0.4)
    np.testing.assert_array_equal(global_luminance_align(lo, mid, "as-written"), 1.0)


@given(st.lists(st.floats(0.01, 1.0), min_size=12, max_size=12), st.sampled_from(["as-written", "inverted"]))
def test_gla_self_is_identity(values, variant):
    img = np.array(values).reshape(2, 2, 3)
    np.testing.assert_allclose(global_luminance_align(img, img, variant), img, rtol=1e-15)


def test_gla_degenerate_and_unknown():
    with pytest.raises(DegenerateInputError):
        global_luminance_align(np.full((2, 2, 3), 0.3), np.zeros((2, 2, 3)))
    with pytest.raises(DegenerateInputError):
        global_luminance_align(np.zeros((2, 2, 3)), np.full((2, 2, 3), 0.3), "inverted")
    with pytest.raises(ValueError):
        global_luminance_align(np.ones((2, 2, 3)), np.ones((2, 2, 3)), "sideways")


# --- relative exposure


@pytest.mark.parametrize("ratio,expected", [(1.0, 0.0), (4.0, 0.2), (0.25, -0.2)])
def test_relative_exposure_examples(ratio, expected):
    assert relative_exposure(0.01 * ratio, 0.01) == pytest.approx(expected, abs=1e-15)


@given(st.floats(1e-3, 1e3), st.floats(1e-4, 1.0))
def test_relative_exposure_antisymmetric(k, t_m):
    assert relative_exposure(k * t_m, t_m) == pytest.approx(-relative_exposure(t_m / k, t_m), abs=1e-12)


@pytest.mark.parametrize("t", [0.0, -0.1])
def test_relative_exposure_rejects(t):
    with pytest.raises(ValueError):
        relative_exposure(t, 0.01)


# --- input stack


def _group(rng, h=5, w=6):
    t = 0.01
    imgs = [rng.uniform(0.05, 0.95, (h, w, 3)) for _ in range(3)]
    return SimpleNamespace(low=frame(imgs[0], -2, t / 4), reference=frame(imgs[1], 0, t),
                           high=frame(imgs[2], 2, t * 4), white_point=None)


def test_stack_layout(rng):
    g = _group(rng)
    s = build_input_stack(g)
    assert s.channels == 27
    for branch, f in zip((s.low, s.mid, s.high), (g.low, g.reference, g.high)):
        assert branch.shape == (9, 5, 6)
        np.testing.assert_array_equal(branch[:3], np.transpose(f.image, (2, 0, 1)))
    np.testing.assert_array_equal(s.mid[6:], s.mid[:3])
    assert (s.e_low, s.e_high) == (pytest.approx(-0.2), pytest.approx(0.2))


def test_stack_gray_triplet(rng):
    gray = np.full((4, 4, 3), 0.5)
    ts = (0.0025, 0.01, 0.04)
    s = stack_frames(gray, gray, gray, tuple(ExposureMeta(t, ev) for t, ev in zip(ts, (-2, 0, 2))),
                     white_point=1.0)
    for branch, t in zip((s.low, s.mid, s.high), ts):
        np.testing.assert_array_equal(branch[:3], s.mid[:3])
        np.testing.assert_array_equal(branch[6:], s.mid[6:])
        np.testing.assert_allclose(branch[3:6], 0.5 ** 2.2 / t, rtol=1e-12)


def test_stack_rejects_mismatched_sizes():
    metas = tuple(ExposureMeta(t, ev) for t, ev in ((0.0025, -2), (0.01, 0), (0.04, 2)))
    with pytest.raises(ValueError, match="shape"):
        stack_frames(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)), np.zeros((4, 4, 3)), metas)
