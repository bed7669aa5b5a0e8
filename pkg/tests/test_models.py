"""Whole-network behaviour: forward, baselines, parameter counts, knockout, checkpoints."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from aila import autodiff as ad
from aila.autodiff import Tensor
from aila.config import ConfigError, ModelConfig
from aila.layers import base_forward
from aila.models import (CheckpointError, build_baseline, build_model, checksum, forward,
                         load_checkpoint, load_into, param_count, read_checkpoint, run_layers,
                         save_checkpoint)


def small(variant="aila2", **kw):
    base = dict(variant=variant, num_layers=2, hidden=4, d_k=4, d_v=4, heads=1, input_dim=2)
    base.update(kw)
    return ModelConfig(**base)


def inputs(batch=3, T=2, dim=2, seed=0):
    return np.random.default_rng(seed).normal(size=(batch, T, dim))


def test_aila2_matches_straight_line_oracle():
    model = build_model(small("aila2"), seed=3)
    x = inputs()
    got = forward(model, x).data
    np.testing.assert_allclose(got, oracles.model_forward(model, x), rtol=0, atol=1e-10)


def test_aila1_matches_straight_line_oracle():
    model = build_model(small("aila1", num_layers=3), seed=4)
    x = inputs(T=3)
    np.testing.assert_allclose(forward(model, x).data, oracles.model_forward(model, x), rtol=0, atol=1e-10)


def test_multihead_aila2_oracle():
    model = build_model(small("aila2", num_layers=3, hidden=4, heads=2), seed=5)
    x = inputs(T=3)
    np.testing.assert_allclose(forward(model, x).data, oracles.model_forward(model, x), rtol=0, atol=1e-10)


def test_plain_single_layer_is_base_plus_head():
    model = build_model(small("plain", num_layers=1), seed=0)
    x = inputs()
    layer = model.layers[0]
    h = ad.layer_norm(ad.relu(base_forward(Tensor(x), layer.base)), layer.gain, layer.bias)
    want = h.data[:, -1] @ model.head_weight.data + model.head_bias.data
    np.testing.assert_array_equal(forward(model, x).data, want)


@pytest.mark.parametrize("variant", ["aila1", "aila2"])
def test_single_layer_aila_equals_plain(variant):
    plain = build_model(small("plain", num_layers=1), seed=1)
    other = build_model(small(variant, num_layers=1), seed=2)
    load_into(other, plain.state_arrays())
    x = inputs(seed=9)
    np.testing.assert_array_equal(forward(other, x).data, forward(plain, x).data)


def test_full_knockout_gives_head_bias():
    model = build_model(small("aila2", num_layers=3), seed=0)
    out = forward(model, inputs(batch=4), knockout={1, 2, 3}).data
    np.testing.assert_array_equal(out, np.broadcast_to(model.head_bias.data, out.shape))


def test_knockout_zeroes_layer_and_feeds_zero_forward():
    model = build_model(small("aila2", num_layers=3), seed=0)
    st_ = run_layers(model, inputs(), knockout={2})
    assert len(st_.outputs) == 3
    assert not np.any(st_.outputs[1].data)
    assert np.any(st_.outputs[2].data)


@pytest.mark.parametrize("bad", [{0}, {4}, {-1}])
def test_knockout_out_of_range(bad):
    model = build_model(small(num_layers=3), seed=0)
    with pytest.raises(ConfigError):
        forward(model, inputs(), knockout=bad)


def test_knockout_leaves_later_gradients_finite():
    model = build_model(small("aila2", num_layers=3), seed=0)
    with ad.recording():
        loss = ad.mean(ad.mul(forward(model, inputs(), knockout={2}), forward(model, inputs(), knockout={2})))
        ad.backward(loss)
    for name, p in model.params.items():
        if name.startswith("layer3") or name.startswith("head"):
            assert p.grad is not None and np.all(np.isfinite(p.grad)), name


def test_residual_sum_with_zero_base_output():
    model = build_model(small("residual_sum", num_layers=2), seed=0)
    # all-zero LSTM parameters give g = tanh(0) = 0, so c and h~_2 stay exactly zero
    lstm = model.layers[1].base
    lstm.weight.data[...] = 0.0
    lstm.bias.data[...] = 0.0
    st_ = run_layers(model, inputs())
    h1, h2 = st_.outputs
    l2 = model.layers[1]
    want = ad.layer_norm(ad.relu(h1), l2.gain, l2.bias).data
    np.testing.assert_allclose(h2.data, want, atol=1e-15)


def test_dense_concat_first_layer_matches_plain():
    plain = build_model(small("plain", num_layers=1), seed=2)
    dense = build_model(small("dense_concat", num_layers=1), seed=2)
    x = inputs()
    np.testing.assert_array_equal(forward(dense, x).data, forward(plain, x).data)


def test_dense_concat_projection_shape():
    model = build_model(small("dense_concat", num_layers=3), seed=0)
    assert model.params["layer3.dense_proj"].shape == (8, 4)
    assert "layer1.dense_proj" not in model.params


def test_param_count_hand_example():
    cfg = ModelConfig(variant="plain", num_layers=1, hidden=2, d_k=2, d_v=2, base_kind="mlp", input_dim=2)
    assert param_count(build_model(cfg)) == 13


def test_aila1_minus_plain_is_integrator_size():
    a1 = build_model(small("aila1"), seed=0)
    pl = build_model(small("plain"), seed=0)
    integ = sum(p.size for k, p in a1.params.items() if ".integrator." in k)
    assert integ > 0
    assert param_count(a1) - param_count(pl) == integ


def test_baselines_smaller_than_aila2():
    cfg = ModelConfig(variant="aila2", num_layers=4, hidden=8, d_k=8, d_v=8)
    n2 = param_count(build_model(cfg))
    for b in ("plain", "residual_sum", "dense_concat"):
        assert param_count(build_baseline(b, cfg)) < n2


def test_build_baseline_rejects_aila():
    with pytest.raises(ConfigError):
        build_baseline("aila2", small())


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=10)
def test_param_count_seed_invariant(seed):
    assert param_count(build_model(small("aila1"), seed=seed)) == param_count(build_model(small("aila1"), seed=0))


def test_registry_has_each_tensor_once():
    model = build_model(small("aila1", num_layers=3, task_dim=4), seed=0)
    ids = [id(p) for p in model.params.values()]
    assert len(ids) == len(set(ids))
    assert "task" in model.params
    assert "layer1.integrator.scorers" in model.params


def test_same_seed_same_bits():
    x = inputs()
    a = forward(build_model(small(), seed=11), x).data
    b = forward(build_model(small(), seed=11), x).data
    assert a.tobytes() == b.tobytes()


def test_token_model_forward_shape():
    cfg = ModelConfig(variant="aila2", num_layers=2, hidden=4, d_k=4, d_v=4, vocab_size=6, embed_dim=3,
                      head_kind="binary")
    model = build_model(cfg)
    ids = np.array([[0, 1, 3, 2], [1, 2, 0, 5]])
    assert forward(model, ids).shape == (2, 1)


def test_mlp_base_forward_shape():
    cfg = ModelConfig(variant="aila2", num_layers=3, hidden=4, d_k=4, d_v=4, base_kind="mlp", input_dim=5,
                      head_kind="multiclass", num_classes=3)
    model = build_model(cfg)
    assert forward(model, np.ones((7, 5))).shape == (7, 3)


def test_checkpoint_round_trip(tmp_path):
    model = build_model(small("aila1", task_dim=4), seed=7)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, extra={"note": "x"})
    loaded, header = load_checkpoint(path)
    assert header["extra"] == {"note": "x"}
    assert checksum(loaded) == checksum(model)
    for k, p in model.params.items():
        assert loaded.params[k].data.tobytes() == p.data.tobytes()
    save_checkpoint(tmp_path / "again.ckpt", loaded, extra={"note": "x"})
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_shape_mismatch_lists_differences(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, build_model(small(hidden=4), seed=0))
    _, arrays = read_checkpoint(path)
    other = build_model(small(hidden=8, d_k=8, d_v=8), seed=0)
    with pytest.raises(CheckpointError, match="layer1.base.weight"):
        load_into(other, arrays)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(hidden=6, d_k=6, d_v=6, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(variant="aila2", hidden=4, d_v=8)
    with pytest.raises(ConfigError):
        ModelConfig(variant="aila2", task_dim=3)
    assert dataclasses.replace(small(), heads=2).heads == 2
