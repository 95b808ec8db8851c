import json
import math
import struct
from datetime import date, timedelta

import numpy as np
import pytest

from framework.errors import (
    BadMagic,
    BadThresholds,
    CorruptHeader,
    NonFiniteWeight,
    ShapeMismatch,
    TruncatedPayload,
)
from models.danger import TENSOR_NAMES, ModelConfig
from models.grid import SampleTensor
from services.inference import classify_danger, conv2d_same, convlstm_cell_step, infer_region
from services.weights import (
    decode_weights,
    encode_weights,
    from_combined_conv,
    load_weights,
    save_weights,
    synthetic_weights,
    validate_weights,
    zero_weights,
)
from tests.factories import axis, make_grid


def _sample(values, start=date(2024, 7, 7)):
    values = np.asarray(values, dtype=np.float32)
    nf, days, h, w = values.shape
    return SampleTensor(
        values=values,
        features=tuple(f"f{k}" for k in range(nf)),
        dates=tuple(start + timedelta(days=k) for k in range(days)),
        lat=axis(41.0, 0.1, h),
        lon=axis(15.0, 0.1, w),
    )


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def _scalar_lstm(xs, w):
    t = {k: v.astype(np.float64).ravel() for k, v in w.tensors.items()}
    h = c = 0.0
    for x in xs:
        gate = {g: t[f"W_x{g}"][0] * x + t[f"W_h{g}"][0] * h + t[f"b_{g}"][0] for g in "ifog"}
        c = _sigmoid(gate["f"]) * c + _sigmoid(gate["i"]) * math.tanh(gate["g"])
        h = _sigmoid(gate["o"]) * math.tanh(c)
    z0 = t["head_W"][0] * h + t["head_b"][0]
    z1 = t["head_W"][1] * h + t["head_b"][1]
    return 1.0 / (1.0 + math.exp(z0 - z1))


def test_single_cell_matches_scalar_lstm():
    cfg = ModelConfig(nf=1, days=3, hidden=1, kernel=1)
    rng = np.random.default_rng(11)
    for draw in range(1000):
        w = synthetic_weights(cfg, seed=draw, scale=1.0)
        xs = rng.normal(size=3).astype(np.float32)
        dmap = infer_region(_sample(xs.reshape(1, 3, 1, 1)), cfg, w)
        assert dmap.p_fire.values[0, 0] == pytest.approx(_scalar_lstm(xs.astype(np.float64), w), abs=1e-6)


def _naive_conv(x, w):
    n, ch, hh, ww = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    out = np.zeros((n, o, hh, ww))
    for b in range(n):
        for oc in range(o):
            for i in range(hh):
                for j in range(ww):
                    acc = 0.0
                    for c in range(ch):
                        for di in range(k):
                            for dj in range(k):
                                y, xx = i + di - p, j + dj - p
                                if 0 <= y < hh and 0 <= xx < ww:
                                    acc += x[b, c, y, xx] * w[oc, c, di, dj]
                    out[b, oc, i, j] = acc
    return out


def test_conv2d_same_matches_naive_loops():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 4, 4))
    w = rng.normal(size=(5, 3, 3, 3))
    np.testing.assert_allclose(conv2d_same(x, w), _naive_conv(x, w), atol=1e-10)


def test_cell_step_matches_naive_gates():
    cfg = ModelConfig(nf=2, days=1, hidden=3, kernel=3)
    w = synthetic_weights(cfg, seed=2)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 4, 4))
    h = rng.normal(size=(3, 4, 4))
    c = rng.normal(size=(3, 4, 4))

    t = {k: v.astype(np.float64) for k, v in w.tensors.items()}
    z = {
        g: _naive_conv(x[None], t[f"W_x{g}"])[0] + _naive_conv(h[None], t[f"W_h{g}"])[0] + t[f"b_{g}"][:, None, None]
        for g in "ifog"
    }
    sig = lambda a: 1.0 / (1.0 + np.exp(-a))  # noqa: E731
    c_ref = sig(z["f"]) * c + sig(z["i"]) * np.tanh(z["g"])
    h_ref = sig(z["o"]) * np.tanh(c_ref)

    h_next, c_next = convlstm_cell_step(x, (h, c), w)
    np.testing.assert_allclose(h_next, h_ref, atol=1e-5)
    np.testing.assert_allclose(c_next, c_ref, atol=1e-5)


def test_cell_step_rejects_bad_shapes():
    cfg = ModelConfig(nf=2, days=1, hidden=3, kernel=3)
    w = zero_weights(cfg)
    with pytest.raises(ShapeMismatch):
        convlstm_cell_step(np.zeros((4, 4, 4)), (np.zeros((3, 4, 4)), np.zeros((3, 4, 4))), w)
    with pytest.raises(ShapeMismatch):
        convlstm_cell_step(np.zeros((2, 4, 4)), (np.zeros((2, 4, 4)), np.zeros((3, 4, 4))), w)


def test_cell_step_commutes_with_shifts_inside_the_border():
    cfg = ModelConfig(nf=2, days=1, hidden=3, kernel=3)
    w = synthetic_weights(cfg, seed=9)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 9, 8))
    h = rng.normal(size=(3, 9, 8))
    c = rng.normal(size=(3, 9, 8))
    dy, dx = 2, 1

    def shift(a):
        return np.roll(a, (dy, dx), axis=(1, 2))

    h_next, c_next = convlstm_cell_step(x, (h, c), w)
    h_moved, c_moved = convlstm_cell_step(shift(x), (shift(h), shift(c)), w)
    inner = np.s_[:, 1 + dy : 9 - 1, 1 + dx : 8 - 1]
    source = np.s_[:, 1 : 9 - 1 - dy, 1 : 8 - 1 - dx]
    np.testing.assert_allclose(h_moved[inner], h_next[source], atol=1e-10)
    np.testing.assert_allclose(c_moved[inner], c_next[source], atol=1e-10)


def test_one_day_model_is_one_step_and_the_head():
    cfg = ModelConfig(nf=2, days=1, hidden=3, kernel=3)
    w = synthetic_weights(cfg, seed=10, scale=1.2)
    x = np.random.default_rng(10).normal(size=(2, 1, 4, 5)).astype(np.float32)
    dmap = infer_region(_sample(x), cfg, w)

    zeros = np.zeros((3, 4, 5))
    h, _ = convlstm_cell_step(x[:, 0], (zeros, zeros), w)
    logits = np.einsum("kc,chw->khw", w["head_W"].astype(np.float64), h) + w["head_b"].astype(np.float64)[:, None, None]
    e = np.exp(logits)
    p_fire = e[1] / e.sum(axis=0)
    np.testing.assert_allclose(dmap.p_fire.values, p_fire, atol=1e-6)


def test_probabilities_are_normalized():
    cfg = ModelConfig(nf=3, days=2, hidden=4, kernel=3)
    rng = np.random.default_rng(0)
    for draw in range(100):
        w = synthetic_weights(cfg, seed=draw, scale=1.5)
        dmap = infer_region(_sample(rng.normal(size=(3, 2, 5, 4)) * 3), cfg, w)
        total = dmap.p_fire.values.astype(np.float64) + dmap.p_nofire.values.astype(np.float64)
        assert np.max(np.abs(total - 1.0)) < 1e-6
        assert np.all((dmap.p_fire.values >= 0) & (dmap.p_fire.values <= 1))


def test_zero_weights_give_even_odds():
    cfg = ModelConfig(nf=2, days=2, hidden=2, kernel=3)
    dmap = infer_region(_sample(np.ones((2, 2, 3, 3))), cfg, zero_weights(cfg), pilot="demo")
    assert np.all(dmap.p_fire.values == 0.5)
    assert np.all(dmap.categories == 3)
    assert dmap.forecast_date == date(2024, 7, 8)
    assert dmap.pilot == "demo"


def test_patch_mode_matches_dense_away_from_borders():
    # two steps of a 3x3 kernel see two pixels out; a 5x5 patch covers that
    cfg = ModelConfig(nf=2, days=2, hidden=3, kernel=3)
    w = synthetic_weights(cfg, seed=4, scale=0.8)
    sample = _sample(np.random.default_rng(4).normal(size=(2, 2, 6, 5)))
    dense = infer_region(sample, cfg, w, mode="dense")
    patch = infer_region(sample, cfg, w, mode="patch", patch_size=5)
    assert patch.p_fire.values.shape == (6, 5)
    np.testing.assert_allclose(patch.p_fire.values[1:-1, 1:-1], dense.p_fire.values[1:-1, 1:-1], atol=1e-6)


def test_patch_mode_without_spatial_mixing_equals_dense():
    cfg = ModelConfig(nf=2, days=3, hidden=2, kernel=1)
    w = synthetic_weights(cfg, seed=6)
    sample = _sample(np.random.default_rng(6).normal(size=(2, 3, 4, 3)))
    dense = infer_region(sample, cfg, w, mode="dense")
    patch = infer_region(sample, cfg, w, mode="patch", patch_size=3)
    np.testing.assert_allclose(patch.p_fire.values, dense.p_fire.values, atol=1e-6)


def test_patch_mode_options():
    cfg = ModelConfig(nf=1, days=1, hidden=1, kernel=1)
    sample = _sample(np.zeros((1, 1, 2, 2)))
    with pytest.raises(ShapeMismatch):
        infer_region(sample, cfg, zero_weights(cfg), mode="patch", patch_size=4)
    with pytest.raises(ValueError):
        infer_region(sample, cfg, zero_weights(cfg), mode="tiled")


def test_sample_must_match_model():
    cfg = ModelConfig(nf=2, days=3, hidden=2)
    with pytest.raises(ShapeMismatch):
        infer_region(_sample(np.zeros((2, 2, 3, 3))), cfg, zero_weights(cfg))


# -----------------------------------------------------------------------------
# danger classes
# -----------------------------------------------------------------------------
def test_classify_boundaries_belong_to_upper_class():
    p = make_grid(np.array([[0.0, 0.1999, 0.2, 0.4, 0.6, 0.8, 1.0]]))
    out = classify_danger(p, (0.2, 0.4, 0.6, 0.8))
    assert out.values.astype(int).tolist() == [[1, 1, 2, 3, 4, 5, 5]]


@pytest.mark.parametrize("thresholds", [(0.5, 0.5), (0.0, 0.5), (0.2, 1.0), (0.6, 0.4), (-0.1,)])
def test_bad_thresholds(thresholds):
    with pytest.raises(BadThresholds):
        classify_danger(make_grid(np.zeros((1, 1))), thresholds)
    with pytest.raises(BadThresholds):
        ModelConfig(nf=1, days=1, thresholds=thresholds)


# -----------------------------------------------------------------------------
# weight files
# -----------------------------------------------------------------------------
def test_weights_file_round_trip(tmp_path):
    cfg = ModelConfig(nf=3, days=2, hidden=4, kernel=3, thresholds=(0.3, 0.7))
    w = synthetic_weights(cfg, seed=1)
    path = save_weights(tmp_path / "w.opfw", cfg, w)
    cfg2, w2 = load_weights(path)
    assert cfg2 == cfg
    for name in TENSOR_NAMES:
        np.testing.assert_array_equal(w2[name], w[name])


def test_weights_codec_errors():
    cfg = ModelConfig(nf=1, days=1, hidden=2, kernel=1)
    data = encode_weights(cfg, synthetic_weights(cfg))
    with pytest.raises(BadMagic):
        decode_weights(b"OPGR" + data[4:])
    with pytest.raises(TruncatedPayload):
        decode_weights(data[:-4])
    with pytest.raises(TruncatedPayload):
        decode_weights(data[:12])


def _edit_manifest(data, edit):
    _, _, head_len = struct.unpack_from("<4sBI", data)
    manifest = json.loads(data[9:9 + head_len])
    edit(manifest)
    head = json.dumps(manifest).encode("utf-8")
    return struct.pack("<4sBI", b"OPFW", 1, len(head)) + head + data[9 + head_len:]


def test_corrupt_weights_manifest():
    cfg = ModelConfig(nf=1, days=1, hidden=2, kernel=1)
    data = encode_weights(cfg, synthetic_weights(cfg))
    with pytest.raises(CorruptHeader):
        decode_weights(data[:9] + b"#" + data[10:])
    with pytest.raises(CorruptHeader):
        decode_weights(_edit_manifest(data, lambda m: m["config"].update(nf=0)))
    with pytest.raises(CorruptHeader):
        decode_weights(_edit_manifest(data, lambda m: m.pop("tensors")))
    with pytest.raises(CorruptHeader):
        decode_weights(_edit_manifest(data, lambda m: m["tensors"]["head_b"].update(shape=["two"])))


def test_validate_weights_checks_shapes_and_values():
    cfg = ModelConfig(nf=1, days=1, hidden=2, kernel=1)
    tensors = {n: np.zeros(s, dtype=np.float32) for n, s in cfg.expected_shapes().items()}
    bad = dict(tensors, W_xi=np.zeros((2, 2, 1, 1), dtype=np.float32))
    with pytest.raises(ShapeMismatch) as e:
        validate_weights(cfg, bad)
    assert e.value.tensor == "W_xi"
    nan = dict(tensors, head_b=np.array([0.0, np.nan], dtype=np.float32))
    with pytest.raises(NonFiniteWeight):
        validate_weights(cfg, nan)
    missing = {k: v for k, v in tensors.items() if k != "b_g"}
    with pytest.raises(ShapeMismatch):
        validate_weights(cfg, missing)


def test_combined_conv_checkpoint_converts():
    cfg = ModelConfig(nf=2, days=1, hidden=3, kernel=3)
    rng = np.random.default_rng(9)
    conv_w = rng.normal(size=(12, 5, 3, 3)).astype(np.float32) * 0.4
    conv_b = rng.normal(size=12).astype(np.float32)
    w = from_combined_conv(cfg, conv_w, conv_b, rng.normal(size=(2, 3, 1, 1)), rng.normal(size=2))

    x = rng.normal(size=(2, 4, 4))
    h = rng.normal(size=(3, 4, 4))
    c = rng.normal(size=(3, 4, 4))
    z = conv2d_same(np.concatenate([x, h])[None], conv_w.astype(np.float64))[0] + conv_b[:, None, None]
    zi, zf, zo, zg = np.split(z, 4)
    sig = lambda a: 1.0 / (1.0 + np.exp(-a))  # noqa: E731
    c_ref = sig(zf) * c + sig(zi) * np.tanh(zg)
    h_ref = sig(zo) * np.tanh(c_ref)

    h_next, c_next = convlstm_cell_step(x, (h, c), w)
    np.testing.assert_allclose(h_next, h_ref, atol=1e-5)
    np.testing.assert_allclose(c_next, c_ref, atol=1e-5)

    with pytest.raises(ShapeMismatch):
        from_combined_conv(cfg, conv_w[:8], conv_b, np.zeros((2, 3)), np.zeros(2))
