import math

import numpy as np
import pytest

from bayescount.scene import FormatError, LossConfig, Point2, Scene, ShapeMismatchError, ValidationError
from bayescount.toy import (
    PARAM_SHAPES,
    ToyModel,
    TrainConfig,
    backward,
    checkpoint_bytes,
    forward,
    init_model,
    load_checkpoint,
    loss_and_grads,
    make_objective,
    model_from_bytes,
    save_checkpoint,
    train,
)

from oracles import central_difference, naive_forward, rel_err


def random_model(seed, scale=0.5):
    rng = np.random.default_rng(seed)
    return ToyModel(**{k: rng.normal(0, scale, s) for k, s in PARAM_SHAPES.items()})


def as_lists(model):
    return {k: getattr(model, k).tolist() for k in PARAM_SHAPES}


def test_zero_model_outputs_ln2():
    m = ToyModel(**{k: np.zeros(s) for k, s in PARAM_SHAPES.items()})
    out = forward(m, np.random.default_rng(0).uniform(size=(5, 6)))
    assert out.shape == (5, 6)
    np.testing.assert_allclose(out, math.log(2), rtol=0, atol=1e-16)


def test_head_bias_only():
    m = random_model(1)
    m.w3[...] = 0.0
    m.b3[...] = -1.3
    out = forward(m, np.random.default_rng(1).uniform(size=(4, 4)))
    np.testing.assert_allclose(out, math.log1p(math.exp(-1.3)), rtol=0, atol=1e-16)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_forward_matches_naive(seed):
    m = random_model(seed)
    x = np.random.default_rng(seed + 10).uniform(-1, 1, (5, 7))
    want = np.array(naive_forward(as_lists(m), x.tolist()))
    np.testing.assert_allclose(forward(m, x), want, rtol=0, atol=1e-12)


def test_forward_too_small():
    with pytest.raises(ValidationError):
        forward(init_model(0), np.zeros((2, 5)))


def test_output_nonnegative():
    rng = np.random.default_rng(3)
    for seed in range(5):
        m = random_model(seed, scale=3.0)
        assert np.all(forward(m, rng.normal(0, 5, (6, 6))) >= 0)


def test_backward_zero_upstream():
    m = random_model(4)
    g = backward(m, np.random.default_rng(4).uniform(size=(6, 6)), np.zeros((6, 6)))
    assert all(np.all(p == 0) for p in g.params())


def test_backward_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        backward(init_model(0), np.zeros((6, 6)), np.zeros((5, 6)))


def test_backward_linear_in_upstream():
    m = random_model(5)
    x = np.random.default_rng(5).uniform(size=(6, 6))
    u = np.random.default_rng(6).normal(size=(6, 6))
    g1 = backward(m, x, u).flat()
    g3 = backward(m, x, 3.0 * u).flat()
    gsum = backward(m, x, u + 2.0 * u).flat()
    np.testing.assert_allclose(g3, 3.0 * g1, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(gsum, g3, rtol=1e-13, atol=1e-15)


def _param_fd(model, f, h=1e-6):
    """Central differences of ``f(model)`` w.r.t. every parameter."""
    out = []
    for name in ToyModel.param_names():
        p = getattr(model, name)

        def g(v, name=name):
            trial = model.copy()
            getattr(trial, name)[...] = v
            return f(trial)

        out.append(central_difference(g, p, h).ravel())
    return np.concatenate(out)


@pytest.mark.parametrize("seed", range(4))
def test_backward_matches_fd(seed):
    m = random_model(seed)
    x = np.random.default_rng(100 + seed).uniform(size=(8, 8))
    u = np.random.default_rng(200 + seed).normal(size=(8, 8))
    g = backward(m, x, u).flat()
    fd = _param_fd(m, lambda mm: float((forward(mm, x) * u).sum()))
    assert rel_err(g, fd) < 1e-4


@pytest.mark.parametrize("loss", ["baseline", "bayes", "bayes+"])
def test_end_to_end_gradient(loss):
    rng = np.random.default_rng(7)
    scene = Scene(8, 8, tuple(Point2(*rng.uniform(0.5, 7.5, 2)) for _ in range(3)))
    cfg = TrainConfig(loss=loss, loss_cfg=LossConfig(sigma=2.0, margin_d=3.0))
    obj = make_objective(scene, cfg)
    m = random_model(8, scale=0.3)
    x = rng.uniform(size=(8, 8))
    _, g = loss_and_grads(m, x, obj)
    fd = _param_fd(m, lambda mm: obj(forward(mm, x)).value)
    assert rel_err(g.flat(), fd) < 1e-4


def test_init_bounds_and_determinism():
    a, b = init_model(3), init_model(3)
    assert a == b
    assert not a == init_model(4)
    for name, shape in PARAM_SHAPES.items():
        p = getattr(a, name)
        assert p.shape == shape
        if name.startswith("w"):
            bound = math.sqrt(6.0 / (shape[0] * shape[1] * shape[2]))
            assert np.all(np.abs(p) <= bound)


def tiny_dataset(n=6, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        pts = tuple(Point2(*rng.uniform(1, 9, 2)) for _ in range(int(rng.integers(0, 4))))
        out.append((rng.uniform(size=(10, 10)), Scene(10, 10, pts)))
    return out


def test_train_zero_epochs_returns_init():
    cfg = TrainConfig(epochs=0, seed=5)
    m0 = init_model(0)
    model, trace = train(tiny_dataset(), cfg, model=m0)
    assert trace == [] and model == m0
    model2, trace2 = train(tiny_dataset(), cfg)
    assert trace2 == []
    assert model2 == train(tiny_dataset(), cfg)[0]


def test_train_empty_dataset():
    with pytest.raises(ValidationError):
        train([], TrainConfig())


@pytest.mark.parametrize("loss", ["baseline", "bayes", "bayes+"])
def test_train_deterministic(loss):
    cfg = TrainConfig(epochs=3, batch_size=2, seed=11, loss=loss, lr=1e-2,
                      loss_cfg=LossConfig(sigma=2.0))
    m1, t1 = train(tiny_dataset(), cfg)
    m2, t2 = train(tiny_dataset(), cfg)
    assert len(t1) == 3
    assert t1 == t2
    assert m1 == m2


def test_train_reduces_loss():
    data = tiny_dataset(8, seed=1)
    cfg = TrainConfig(epochs=25, batch_size=2, seed=0, loss="bayes", lr=3e-2,
                      loss_cfg=LossConfig(sigma=1.5))
    _, trace = train(data, cfg)
    assert trace[-1] < trace[0]


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(loss="mse")
    with pytest.raises(ValidationError):
        TrainConfig(lr=0)
    with pytest.raises(ValidationError):
        TrainConfig(epochs=-1)
    assert TrainConfig(loss="bayes+").resolved_loss_cfg().background
    assert not TrainConfig(loss="bayes", loss_cfg=LossConfig(background=True)).resolved_loss_cfg().background


def test_checkpoint_roundtrip(tmp_path):
    m = random_model(12)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(m, a)
    back = load_checkpoint(a)
    assert back == m
    save_checkpoint(back, b)
    assert a.read_bytes() == b.read_bytes()
    head = a.read_bytes().split(b"\nEND\n")[0].decode()
    assert head.splitlines()[0] == "BAYESCOUNT-CKPT 1"
    assert "w2 f8 3 3 8 8" in head


def test_checkpoint_corrupt():
    data = checkpoint_bytes(init_model(0))
    with pytest.raises(FormatError):
        model_from_bytes(data[:-8])
    with pytest.raises(FormatError):
        model_from_bytes(data + b"\x00")
    with pytest.raises(FormatError):
        model_from_bytes(data.replace(b"BAYESCOUNT-CKPT 1", b"BAYESCOUNT-CKPT 9"))
    with pytest.raises(FormatError):
        model_from_bytes(b"garbage")
