import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import batch_loss, random_problem, relative_error
from lamlstm.data import SyntheticSpec, WindowSample, generate_synthetic
from lamlstm.model import ModelConfig, ModelParams, forward, init_params
from lamlstm.numerics import Rng
from lamlstm.training import (
    AdamState,
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    TrainConfig,
    adam_step,
    backward,
    cross_entropy,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
    train,
)


def test_cross_entropy_examples():
    assert cross_entropy([0.0, 0.0], 0) == pytest.approx(math.log(2), abs=1e-15)
    assert cross_entropy([0.0, 0.0], 1) == pytest.approx(0.693147, abs=1e-6)
    assert cross_entropy([-50.0, 50.0], 1) < 1e-20
    assert cross_entropy([0.0, math.log(3.0)], 1) == pytest.approx(-math.log(0.75), abs=1e-15)
    assert cross_entropy([0.0, math.log(3.0)], 1) == pytest.approx(0.287682, abs=1e-6)
    assert cross_entropy([0.0, 0.0], 1, class_weight=3.0) == pytest.approx(3 * math.log(2))


def test_cross_entropy_rejects_unlabeled():
    with pytest.raises(ValueError):
        cross_entropy([0.0, 0.0], 255)


@given(st.floats(-300, 300), st.floats(-300, 300), st.sampled_from([0, 1]))
def test_cross_entropy_nonnegative(a, b, y):
    assert cross_entropy([a, b], y) >= 0.0


def test_backward_at_zero_params():
    cfg = ModelConfig(3, 2, 2, 3, (3, 3, 3))
    p = ModelParams.zeros(cfg)
    X = np.random.default_rng(0).normal(size=(4, 3, 3))
    y = np.array([1, 0, 1, 1])
    loss, g = backward(p, (X, y))
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    # d loss / d b4 = mean(softmax - onehot) = mean([0.5 - (1-y), 0.5 - y])
    expected = np.array([np.mean(0.5 - (1 - y)), np.mean(0.5 - y)])
    np.testing.assert_allclose(g["head4.b"], expected, atol=1e-15)


def test_backward_accepts_window_samples():
    p, X, y = random_problem(1, B=3)
    samples = [WindowSample("t", i, X[i], int(y[i])) for i in range(3)]
    l1, g1 = backward(p, samples)
    l2, g2 = backward(p, (X, y))
    assert l1 == l2
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)


def test_backward_errors():
    p, X, y = random_problem(0)
    with pytest.raises(ValueError):
        backward(p, [])
    with pytest.raises(ValueError):
        backward(p, (X, np.array([0, 1, 255, 0])))


def test_backward_finite_differences(tiny_problem):
    params, X, y = tiny_problem
    loss, grads = backward(params, (X, y))
    assert loss == pytest.approx(batch_loss(params, X, y), abs=1e-14)
    fd = oracles.finite_difference_grads(lambda: batch_loss(params, X, y), params.tensors)
    for k in params:
        assert relative_error(grads[k], fd[k]) <= 1e-4, k


def test_backward_finite_differences_weighted():
    params, X, y = random_problem(5, D=3, P=2, H=2, Tw=3, B=5)
    cw = (0.3, 2.0)
    _, grads = backward(params, (X, y), class_weights=cw)
    fd = oracles.finite_difference_grads(lambda: batch_loss(params, X, y, cw), params.tensors)
    for k in params:
        assert relative_error(grads[k], fd[k]) <= 1e-4, k


def test_duplicating_batch_is_invariant(tiny_problem):
    params, X, y = tiny_problem
    l1, g1 = backward(params, (X, y))
    l2, g2 = backward(params, (np.concatenate([X, X]), np.concatenate([y, y])))
    assert l2 == pytest.approx(l1, rel=1e-14)
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-12, atol=1e-16)


def test_adam_zero_gradient_is_identity():
    p = init_params(ModelConfig(3, 2, 2, 3, (2, 2, 2)), Rng(0))
    zeros = {k: np.zeros_like(v) for k, v in p.items()}
    new, state = adam_step(AdamState(), p, zeros)
    assert all(np.array_equal(new[k], p[k]) for k in p)
    assert state.t == 1


def test_adam_first_step_closed_form():
    new, _ = adam_step(AdamState(lr=1e-4), {"x": np.array(0.0)}, {"x": np.array(0.5)})
    assert float(new["x"]) == pytest.approx(-1e-4 * 0.5 / (0.5 + 1e-8), abs=1e-20)
    # 1e-4 * (1 - 2e-8) to first order
    assert float(new["x"]) == pytest.approx(-9.9999998e-5, abs=1e-18)


def test_adam_two_steps_match_scalar_oracle():
    theta = {"x": np.array(0.0)}
    state = AdamState()
    traj = []
    for g in (0.5, -0.5):
        theta, state = adam_step(state, theta, {"x": np.array(g)})
        traj.append(float(theta["x"]))
    expected = oracles.adam(0.0, [0.5, -0.5])
    np.testing.assert_allclose(traj, expected, atol=1e-15, rtol=0)


def test_adam_deterministic_and_shape_preserving():
    rng = np.random.default_rng(0)
    p = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    g = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    n1, s1 = adam_step(AdamState(), p, g)
    n2, s2 = adam_step(AdamState(), p, g)
    assert all(n1[k].tobytes() == n2[k].tobytes() and n1[k].shape == p[k].shape for k in p)
    with pytest.raises(ValueError):
        adam_step(AdamState(), p, {"a": np.zeros(3), "b": np.zeros(4)})


def small_dataset(seed=0, n_tracks=24, **kw):
    spec = SyntheticSpec(n_tracks=n_tracks, frames_per_track=20, feature_dim=6, **kw)
    return generate_synthetic(spec, seed)


SMALL_MODEL = ModelConfig(6, 8, 4, 5, (8, 6, 4))


def test_train_without_validation_has_loss_only():
    tracks = [t for t in small_dataset() if t.split != "val"]
    _, hist = train(TrainConfig(epochs=1, batch_size=32), SMALL_MODEL, tracks)
    assert len(hist) == 1 and set(hist[0]) == {"epoch", "loss"}


def test_train_loss_decreases_on_separable_data():
    tracks = small_dataset(separation=4.0, noise_std=0.1)
    _, hist = train(TrainConfig(epochs=5, batch_size=32, learning_rate=1e-3), SMALL_MODEL, tracks)
    assert hist[4]["loss"] < hist[0]["loss"]
    assert {"val_mAP", "val_accuracy"} <= set(hist[0])


def test_train_deterministic():
    tracks = small_dataset(1)
    p1, h1 = train(TrainConfig(epochs=2, batch_size=16, seed=3), SMALL_MODEL, tracks)
    p2, h2 = train(TrainConfig(epochs=2, batch_size=16, seed=3), SMALL_MODEL, tracks)
    assert encode_checkpoint(p1) == encode_checkpoint(p2)
    assert h1 == h2


def test_train_parallel_workers_deterministic():
    tracks = small_dataset(1)
    cfg = TrainConfig(epochs=1, batch_size=16, seed=3, workers=3)
    p1, _ = train(cfg, SMALL_MODEL, tracks)
    p2, _ = train(cfg, SMALL_MODEL, tracks)
    assert encode_checkpoint(p1) == encode_checkpoint(p2)
    serial, _ = train(TrainConfig(epochs=1, batch_size=16, seed=3), SMALL_MODEL, tracks)
    for k in serial:
        np.testing.assert_allclose(p1[k], serial[k], rtol=1e-9, atol=1e-12)


def test_train_requires_flip_streams():
    tracks = [t for t in small_dataset() if t.stream == "original"]
    with pytest.raises(ValueError, match="flip"):
        train(TrainConfig(epochs=1), SMALL_MODEL, tracks)
    train(TrainConfig(epochs=1, use_flip_augmentation=False), SMALL_MODEL, tracks)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(class_weights=(1.0,))
    assert TrainConfig().batch_size == 128 and TrainConfig().learning_rate == 1e-4


def test_checkpoint_roundtrip(tmp_path):
    p = init_params(ModelConfig(5, 3, 4, 3, (4, 3, 2)), Rng(2))
    save_checkpoint(p, tmp_path / "m.lamc")
    q, cfg = load_checkpoint(tmp_path / "m.lamc")
    assert cfg == p.config
    assert all(p[k].tobytes() == q[k].tobytes() for k in p)
    x = np.random.default_rng(0).normal(size=(3, 5))
    assert forward(p, x).tobytes() == forward(q, x).tobytes()


def test_checkpoint_layout():
    p = ModelParams.zeros(ModelConfig(1, 1, 1, 1, (1, 1, 1)))
    buf = encode_checkpoint(p)
    assert buf[:4] == b"LAMC"
    assert int.from_bytes(buf[4:8], "little") == 1
    n = int.from_bytes(buf[8:12], "little")
    assert buf[12:12 + n].startswith(b"{")
    name_len = int.from_bytes(buf[12 + n:14 + n], "little")
    assert buf[14 + n:14 + n + name_len] == b"proj.W"


def test_checkpoint_errors():
    buf = encode_checkpoint(init_params(ModelConfig(2, 2, 2, 3, (2, 2, 2)), Rng(0)))
    with pytest.raises(CheckpointTruncatedError):
        decode_checkpoint(buf[:-5])
    with pytest.raises(CheckpointTruncatedError):
        decode_checkpoint(buf[:10])
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(b"NOPE" + buf[4:])
    bad_version = bytearray(buf)
    bad_version[4] = 9
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(bytes(bad_version))
    # config claims a wider hidden layer than the stored tensors carry
    n = int.from_bytes(buf[8:12], "little")
    cfg = buf[12:12 + n].replace(b'"hidden_dim": 2', b'"hidden_dim": 3')
    with pytest.raises(CheckpointShapeError):
        decode_checkpoint(buf[:12] + cfg + buf[12 + n:])
