import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import correlate2d

from dualhdr import engine as E
from dualhdr.capture import synthetic_groups
from dualhdr.eafnet import (Eafnet, EafnetConfig, TrainConfig, TrainingDiverged, Trace, aca, asl,
                            cross_scale_guidance, d_asl, efsm, extract_features, fuse, hdr_loss, init_params,
                            mu_law, restore, tiny, train)
from dualhdr.eafnet.loss import SOBEL_KERNELS
from dualhdr.eafnet.model import exposure_selection, reference_selection
from dualhdr.eafnet.train import check_attention, prepare


@pytest.fixture(autouse=True)
def double_precision():
    with E.precision(np.float64):
        yield


@pytest.fixture(scope="module")
def groups():
    return synthetic_groups(4, 16, seed=5)


def feat(rng, c=8, h=8, w=8, n=1):
    return E.Tensor(rng.normal(size=(n, c, h, w)))


def zero_param(p, name):
    p[name].data = np.zeros_like(p[name].data)


# --- features and EFSM


def test_extract_zero_and_shapes(rng):
    cfg = EafnetConfig()
    p = init_params(cfg, 0)
    zeros = {b: E.Tensor(np.zeros((1, 9, 16, 16))) for b in "lmh"}
    f = extract_features(zeros, p, cfg)
    for b in "lmh":
        assert all((t.data == 0).all() for t in f.branch(b))
    x = E.Tensor(rng.uniform(size=(1, 9, 16, 16)))
    f = extract_features({b: x for b in "lmh"}, p, cfg)
    assert f.m[0].shape == (1, 8, 16, 16) and f.m[1].shape == (1, 8, 8, 8)
    assert not np.array_equal(f.l[0].data, f.m[0].data)
    assert not np.array_equal(f.h[0].data, f.m[0].data)


def test_efsm_identity_when_coefficients_are_one(rng):
    p = init_params(EafnetConfig(), 0)
    for name in ("fsb.fc2", "efsb.fc3c"):
        zero_param(p, f"{name}.w")
        p[f"{name}.b"].data = np.full(8, 1e3)  # sigmoid saturates to exactly 1.0
    f_nr, f_r = feat(rng), feat(rng)
    out_nr, out_r = efsm(f_nr, f_r, E.Tensor([[0.2]]), p)
    np.testing.assert_array_equal(out_nr.data, f_nr.data)
    np.testing.assert_array_equal(out_r.data, f_r.data)


@given(st.integers(0, 2 ** 31), st.floats(-0.4, 0.4))
@settings(max_examples=15)
def test_efsm_never_amplifies(seed, e):
    rng = np.random.default_rng(seed)
    p = init_params(EafnetConfig(), seed)
    f_nr, f_r = feat(rng), feat(rng)
    out_nr, out_r = efsm(f_nr, f_r, E.Tensor([[e]]), p)
    assert (np.abs(out_nr.data) <= np.abs(f_nr.data)).all()
    assert (np.abs(out_r.data) <= np.abs(f_r.data)).all()


def test_exposure_changes_modulation(rng):
    p = init_params(EafnetConfig(), 1)
    f = feat(rng)
    u_low = exposure_selection(f, E.Tensor([[-0.2]]), p).data
    u_high = exposure_selection(f, E.Tensor([[0.2]]), p).data
    assert not np.allclose(u_low, u_high)
    v = reference_selection(f, p).data
    assert v.shape == (1, 8) and ((v > 0) & (v < 1)).all()


# --- attention


def test_attention_rows_normalized(rng):
    cfg = EafnetConfig()
    p = init_params(cfg, 0)
    _, a = aca(feat(rng), feat(rng), p, "l", 1, cfg)
    assert a.shape == (1, 4, 4)
    assert np.abs(a.data.sum(axis=-1) - 1).max() <= 1e-6


def test_zero_query_key_gives_uniform_attention(rng):
    cfg = EafnetConfig()
    p = init_params(cfg, 0)
    zero_param(p, "aca.l.1.wq")
    zero_param(p, "aca.l.1.wk")
    f_r, f_nr = feat(rng), feat(rng)
    aligned, a = aca(f_r, f_nr, p, "l", 1, cfg)
    np.testing.assert_allclose(a.data, 0.25)
    v = E.unfold(f_nr, 4).data @ p["aca.l.1.wv"].data
    tokens = np.broadcast_to(v.mean(axis=1, keepdims=True), v.shape)
    expected = E.fold(E.Tensor(np.ascontiguousarray(tokens)), f_nr.shape[1:], 4).data
    np.testing.assert_allclose(aligned.data, expected, atol=1e-12)


def test_attention_is_asymmetric(rng):
    cfg = EafnetConfig()
    p = init_params(cfg, 0)
    f_r, f_nr = feat(rng), feat(rng)
    _, a = aca(f_r, f_nr, p, "h", 1, cfg)
    _, a_swapped = aca(f_nr, f_r, p, "h", 1, cfg)
    assert not np.allclose(a.data, a_swapped.data)
    _, a_ca = aca(f_r, f_nr, p, "h", 1, EafnetConfig(attention="ca"))
    assert not np.allclose(a.data, a_ca.data)


# --- guidance, fusion, restoration


def test_guidance_with_zero_coarse(rng):
    p = init_params(EafnetConfig(), 0)
    f1 = feat(rng)
    out = cross_scale_guidance(f1, E.Tensor(np.zeros((1, 8, 4, 4))), p, "l", 1)
    assert out.shape == f1.shape
    w, b = p["guid.l.1.w"].data, p["guid.l.1.b"].data
    expected = E.conv2d(f1, E.Tensor(w[:, :8]), E.Tensor(b))
    np.testing.assert_allclose(out.data, expected.data, atol=1e-12)


def test_guidance_reaches_coarse_values(groups):
    cfg = EafnetConfig()
    net = Eafnet(cfg, seed=0)
    data = prepare(groups[:1], cfg)
    out = net.forward_arrays(data.arrays, data.exposures)
    E.sum_(E.mul(out, E.Tensor(np.random.default_rng(0).normal(size=out.shape)))).backward()
    for b in "lh":
        assert np.linalg.norm(net.params[f"aca.{b}.2.wv"].grad) > 0


def test_fuse_reference_slice_and_gate(rng):
    p = init_params(EafnetConfig(), 0)
    f_r, f_m = feat(rng), feat(rng)
    aligned = [feat(rng), feat(rng, h=4, w=4)]
    guidance = feat(rng)
    out = fuse(f_r, aligned, guidance, f_m, p, "l")
    assert out.shape == (1, 16, 8, 8)
    np.testing.assert_array_equal(out.data[:, 8:], f_m.data)
    zero_param(p, "fuse.l.merge.w")
    out = fuse(f_r, aligned, guidance, f_m, p, "l")
    assert (out.data[:, :8] == 0).all()


def test_restore_range_and_shape(rng):
    for cfg in (EafnetConfig(), EafnetConfig(use_dwt=False)):
        p = init_params(cfg, 0)
        out = restore(E.Tensor(rng.normal(size=(2, 32, 16, 24))), p, cfg)
        assert out.shape == (2, 3, 16, 24)
        assert ((out.data > 0) & (out.data < 1)).all()


def test_plain_multiscale_has_no_subband_parameters():
    names = list(init_params(EafnetConfig(use_dwt=False), 0))
    assert not any(".ll." in n or "x4.mix" in n for n in names)


# --- full model


def test_forward_deterministic_and_shape(groups):
    net = Eafnet(EafnetConfig(), seed=3)
    a, b = net.forward(groups[0]), net.forward(groups[0])
    assert a.tobytes() == b.tobytes()
    assert a.shape == groups[0].reference.image.shape


@pytest.mark.parametrize("h,w", [(13, 19), (16, 16), (9, 24)])
def test_shape_contract(h, w, rng):
    cfg = EafnetConfig()
    net = Eafnet(cfg, seed=0)
    arrays = {b: rng.uniform(size=(1, 9, h, w)) for b in "lmh"}
    out = net.forward_arrays(arrays, {"l": np.array([[-0.2]]), "h": np.array([[0.2]])})
    assert out.shape == (1, 3, h, w)


def test_branches_are_role_specific(groups):
    cfg = EafnetConfig()
    net = Eafnet(cfg, seed=0)
    data = prepare(groups[:1], cfg)
    base = net.forward_arrays(data.arrays, data.exposures).data
    swapped = dict(data.arrays, l=data.arrays["h"], h=data.arrays["l"])
    exposures = {"l": data.exposures["h"], "h": data.exposures["l"]}
    assert not np.allclose(base, net.forward_arrays(swapped, exposures).data)


def test_reference_features_ride_along(groups):
    net = Eafnet(EafnetConfig(), seed=0)
    trace = Trace()
    net.forward(groups[0], trace)
    for b in "lh":
        np.testing.assert_array_equal(trace.fused[b].data[:, 8:], trace.reference_features.data)
    for a in trace.attention.values():
        assert np.abs(a.sum(axis=-1) - 1).max() <= 1e-6


def test_check_attention_flags_bad_rows():
    trace = Trace(attention={("l", 1): np.full((1, 2, 2), 0.6)})
    with pytest.raises(AssertionError):
        check_attention(trace)


# --- loss


def test_asl_zero_cases(rng):
    z = E.Tensor(rng.uniform(size=(1, 3, 8, 8)))
    assert asl(z, z).item() == 0
    c1, c2 = E.Tensor(np.full((1, 3, 8, 8), 0.2)), E.Tensor(np.full((1, 3, 8, 8), 0.7))
    assert abs(d_asl(c1, c2).item()) <= 1e-15


def test_asl_step_edge():
    step = np.zeros((1, 1, 5, 6))
    step[..., 3:] = 1.0
    flat = E.Tensor(np.zeros_like(step))
    # hand convolution: at the two edge columns the 0, 45 and 135 degree kernels give 1, 3/4 and 3/4,
    # so the mean over 4 directions x 3 rows x 4 columns is 2 * 3 * 2.5 / 48
    assert asl(E.Tensor(step), flat).item() == pytest.approx(5 / 16, abs=1e-12)


@given(st.integers(0, 2 ** 31), st.sampled_from([1, 2, 3]))
@settings(max_examples=15)
def test_asl_matches_scipy(seed, dilation):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(1, 2, 9, 10)), rng.uniform(size=(1, 2, 9, 10))
    terms = []
    for k in SOBEL_KERNELS:
        kd = np.zeros((2 * dilation + 1,) * 2)
        kd[::dilation, ::dilation] = k
        for c in range(2):
            terms.append(np.abs(correlate2d(a[0, c] - b[0, c], kd, mode="valid")))
    assert asl(E.Tensor(a), E.Tensor(b), dilation).item() == pytest.approx(np.mean(terms), rel=1e-12)


def test_asl_shape_mismatch():
    with pytest.raises(ValueError):
        asl(E.Tensor(np.zeros((1, 1, 5, 5))), E.Tensor(np.zeros((1, 1, 6, 5))))


def test_loss_properties(rng):
    x = rng.uniform(size=(1, 3, 8, 8))
    y = rng.uniform(size=(1, 3, 8, 8))
    assert hdr_loss(E.Tensor(x), E.Tensor(x)).item() == 0
    l1 = float(np.abs(mu_law(E.Tensor(x)).data - mu_law(E.Tensor(y)).data).mean())
    assert hdr_loss(E.Tensor(x), E.Tensor(y), lambda_dasl=0).item() == pytest.approx(l1, rel=1e-12)
    assert hdr_loss(E.Tensor(x), E.Tensor(y)).item() >= l1
    with pytest.raises(ValueError):
        hdr_loss(E.Tensor(x), E.Tensor(y[..., :7]))


def test_constant_offset_is_in_sobel_null_space():
    a = np.full((1, 3, 8, 8), 0.3)
    b = np.full((1, 3, 8, 8), 0.5)
    za, zb = mu_law(E.Tensor(a)), mu_law(E.Tensor(b))
    assert abs(d_asl(za, zb).item()) <= 1e-15
    assert hdr_loss(E.Tensor(a), E.Tensor(b)).item() > 0


# --- training


def test_zero_epochs_keeps_init(groups):
    cfg = EafnetConfig()
    res = train(groups, cfg, TrainConfig(epochs=0))
    init = init_params(cfg, 0)
    for name, t in res.net.params.items():
        np.testing.assert_array_equal(t.data, init[name].data)
    assert res.history == []


def test_training_is_reproducible(groups):
    cfg = tiny()
    tcfg = TrainConfig(epochs=2, batch_size=2, seed=4)
    a, b = train(groups, cfg, tcfg, val_groups=groups[:1]), train(groups, cfg, tcfg, val_groups=groups[:1])
    assert a.history == b.history
    assert a.history[0]["val_psnr_mu"] is not None
    for name, t in a.net.params.items():
        assert t.data.tobytes() == b.net.params[name].data.tobytes()


def test_resume_matches_uninterrupted(groups):
    cfg = tiny()
    full = train(groups, cfg, TrainConfig(epochs=2, batch_size=2))
    first = train(groups, cfg, TrainConfig(epochs=1, batch_size=2))
    resumed = train(groups, cfg, TrainConfig(epochs=2, batch_size=2), net=first.net, start_epoch=1)
    assert resumed.history[-1] == full.history[-1]


def test_lr_schedule():
    t = TrainConfig(epochs=100, lr=1e-4)
    assert [t.lr_at(e) for e in (0, 9, 10, 25)] == [1e-4, 1e-4, 5e-5, 2.5e-5]


def test_divergence_is_reported(groups):
    cfg = tiny()
    net = Eafnet(cfg, seed=0)
    net.params["restore.out.b"].data[:] = np.nan
    with pytest.raises(TrainingDiverged):
        train(groups, cfg, TrainConfig(epochs=1), net=net)


def test_empty_dataset():
    with pytest.raises(ValueError):
        train([], EafnetConfig(), TrainConfig(epochs=1))


def test_config_round_trip(tmp_path):
    cfg = EafnetConfig(base_channels=12, attention="ca", dasl_dilations=(1, 2))
    cfg.save(tmp_path / "c.json")
    assert EafnetConfig.load(tmp_path / "c.json") == cfg
    with pytest.raises(ValueError):
        EafnetConfig.from_json({"channels": 3})
    with pytest.raises(ValueError):
        EafnetConfig(base_channels=6)
