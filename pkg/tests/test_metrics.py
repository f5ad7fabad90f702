import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dualhdr.capture import CaptureConfig, Element, Scene, capture_ae, capture_dcs
from dualhdr.metrics import (PSNR_CAP, evaluate_sequence, l_avg, lsd, psnr, psnr_mu, ssim, ssim_mu, t_ssim)
from dualhdr.radiometry import mu_tonemap

seeds = st.integers(0, 2 ** 31)


def images(seed, n=2, shape=(8, 8, 3)):
    rng = np.random.default_rng(seed)
    return [rng.uniform(size=shape) for _ in range(n)]


# --- psnr


def test_psnr_examples():
    a = np.full((4, 4, 3), 0.5)
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)  # MSE 0.01
    with pytest.raises(ValueError):
        psnr(a, a[:2])


@given(seeds)
def test_psnr_matches_oracle(seed):
    a, b = images(seed)
    assert psnr(a, b) == pytest.approx(oracles.psnr(a, b), rel=1e-12)


# --- ssim


def test_ssim_examples():
    a = np.random.default_rng(0).uniform(size=(16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    c = np.full((16, 16, 3), 0.1)
    assert ssim(c, c + 0.6) < 1


@given(seeds)
@settings(max_examples=10)
def test_ssim_matches_windowed_loop(seed):
    a, b = images(seed)
    assert ssim(a, b) == pytest.approx(oracles.ssim(a, b), rel=1e-9)


@given(seeds)
def test_ssim_symmetric_and_bounded(seed):
    a, b = images(seed, shape=(12, 10, 3))
    s = ssim(a, b)
    assert abs(s - ssim(b, a)) <= 1e-9
    assert -1 <= s <= 1


# --- tonemapped fidelity


def test_mu_metrics_compose():
    a, b = images(3)
    a, b = a * 0.3, b * 0.3
    assert psnr_mu(a, b) == psnr(mu_tonemap(a), mu_tonemap(b))
    assert ssim_mu(a, b) == ssim(mu_tonemap(a), mu_tonemap(b))
    assert psnr_mu(a, a) == PSNR_CAP and ssim_mu(a, a) == pytest.approx(1.0)


def test_highlight_errors_score_higher_under_mu():
    rng = np.random.default_rng(1)
    truth = rng.uniform(0.0, 0.05, size=(16, 16, 3))
    truth[4:8, 4:8] = 0.8
    pred = truth.copy()
    pred[4:8, 4:8] += 0.1
    assert psnr_mu(pred, truth) > psnr(pred, truth)


# --- sequence metrics


def test_luminance_examples():
    const = [np.full((4, 4, 3), 0.5)] * 3
    assert l_avg(const) == 0.5 and lsd(const) == 0.0
    pair = [np.full((4, 4, 3), 0.2), np.full((4, 4, 3), 0.4)]
    assert l_avg(pair) == pytest.approx(0.3, abs=1e-15)
    assert lsd(pair) == pytest.approx(0.1, abs=1e-15)


@given(seeds, st.integers(1, 8))
def test_sequence_metrics_match_oracle(seed, n):
    frames = images(seed, n, (5, 6, 3))
    assert l_avg(frames) == pytest.approx(oracles.l_avg(frames), rel=1e-12)
    assert lsd(frames) == pytest.approx(oracles.lsd(frames), rel=1e-9, abs=1e-15)


@given(seeds, st.integers(1, 6))
def test_duplicating_frames_is_invariant(seed, n):
    frames = images(seed, n, (4, 4, 3))
    doubled = frames + [f.copy() for f in frames]
    assert l_avg(doubled) == pytest.approx(l_avg(frames), rel=1e-12)
    assert lsd(doubled) == pytest.approx(lsd(frames), rel=1e-9, abs=1e-15)


def test_t_ssim():
    f = np.random.default_rng(2).uniform(size=(12, 12, 3))
    assert t_ssim([f, f, f]) == pytest.approx(1.0)
    assert t_ssim([f]) is None


def test_domain_validation():
    with pytest.raises(ValueError):
        lsd([np.zeros((2, 2, 3))], domain="log")
    with pytest.raises(ValueError):
        lsd([])


def moving_scene():
    return Scene(32, 32, [Element("rect", (10, 12), (8, 6), (8.0, 4.0, 2.0), (15.0, 5.0)),
                          Element("disk", (24, 8), (3, 3), (400.0,) * 3)], texture=0.2)


def test_ae_flickers_more_than_dcs():
    s = moving_scene()
    cfg = CaptureConfig(noise=0.0, duration=0.4)
    ref, _, _ = capture_dcs(s, cfg, 0)
    ae, _ = capture_ae(s, cfg, 0)
    assert t_ssim([f.image for f in ae]) < t_ssim([f.image for f in ref])
    ratio = lsd([mu_tonemap(f.image) for f in ae]) / lsd([mu_tonemap(f.image) for f in ref])
    assert ratio >= 5


def test_static_scene_flicker_separation():
    s = Scene(24, 24, [Element("disk", (12, 12), (4, 4), (300.0,) * 3)], texture=0.2)
    cfg = CaptureConfig(noise=0.0)
    ref, _, _ = capture_dcs(s, cfg, 0)
    ae, _ = capture_ae(s, cfg, 0)
    tonemapped = [mu_tonemap(f.image) for f in ref]
    assert lsd(tonemapped) == 0.0
    assert lsd([mu_tonemap(f.image) for f in ae]) > 0


# --- reports


def test_evaluate_perfect_reconstruction():
    gts = [f * 0.5 for f in images(4, 3)]
    rep = evaluate_sequence(gts, gts)
    assert rep.psnr_mu == [PSNR_CAP] * 3 and rep.psnr_linear == [PSNR_CAP] * 3
    assert rep.ssim_mu == [pytest.approx(1.0)] * 3
    assert rep.lsd == lsd(gts, "mu")
    d = json.loads(rep.dumps())
    assert d["mean"]["psnr_mu"] == PSNR_CAP
    assert rep.to_csv().splitlines()[0] == "frame,luminance,psnr_mu,psnr_linear,ssim_mu,ssim_linear"


def test_evaluate_without_truth():
    rep = evaluate_sequence(images(5, 2))
    d = rep.to_json()
    assert "psnr_mu" not in d and "ssim_linear" not in d
    assert {"lsd", "t_ssim", "l_avg"} <= set(d)
    assert rep.to_csv().splitlines()[0] == "frame,luminance"


def test_evaluate_errors():
    with pytest.raises(ValueError):
        evaluate_sequence([])
    with pytest.raises(ValueError):
        evaluate_sequence(images(6, 2), images(6, 3))
