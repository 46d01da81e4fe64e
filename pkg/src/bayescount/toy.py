"""A three-layer convolutional density estimator with hand-written backprop.

Architecture (stride 1, same padding)::

    input (H, W)
      -> conv 3x3, 1 -> 8, ReLU
      -> conv 3x3, 8 -> 8, ReLU
      -> conv 1x1, 8 -> 1, softplus      # nonnegative density

Weights use the ``(kh, kw, c_in, c_out)`` layout.  Convolutions, and the
input gradient of the middle convolution, are im2col matrix products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .posterior import iter_posterior
from .losses import FixedKernel, baseline_density, baseline_loss, bayes_loss, total_count
from .scene import FormatError, LossConfig, ShapeMismatchError, ValidationError

CHANNELS = 8
HEAD_BIAS_INIT = -10.0
LOSSES = ("baseline", "bayes", "bayes+")

CHECKPOINT_MAGIC = "BAYESCOUNT-CKPT"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class ToyModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @staticmethod
    def param_names():
        return [f.name for f in fields(ToyModel)]

    def params(self):
        return [getattr(self, n) for n in self.param_names()]

    def copy(self):
        return ToyModel(*(p.copy() for p in self.params()))

    def zeros_like(self):
        return ToyModel(*(np.zeros_like(p) for p in self.params()))

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def __eq__(self, other):
        if not isinstance(other, ToyModel):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))


PARAM_SHAPES = {
    "w1": (3, 3, 1, CHANNELS),
    "b1": (CHANNELS,),
    "w2": (3, 3, CHANNELS, CHANNELS),
    "b2": (CHANNELS,),
    "w3": (1, 1, CHANNELS, 1),
    "b3": (1,),
}


def init_model(seed=0, head_bias=HEAD_BIAS_INIT):
    """Weights uniform in +-sqrt(6 / fan_in); biases zero except the head's.

    The head bias starts far negative so the initial map is nearly empty;
    starting from a map heavier than the annotations drives softplus into
    saturation before any features form.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in PARAM_SHAPES.items():
        if name.startswith("w"):
            fan_in = shape[0] * shape[1] * shape[2]
            bound = math.sqrt(6.0 / fan_in)
            out[name] = rng.uniform(-bound, bound, size=shape)
        else:
            out[name] = np.zeros(shape)
    out["b3"][:] = head_bias
    return ToyModel(**out)


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _patches(a):
    """3x3 same-padded patches of ``a`` (H, W, C) as an (H*W, 9*C) matrix."""
    h, w, c = a.shape
    padded = np.pad(a, ((1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(padded, (3, 3), axis=(0, 1))  # (H, W, C, 3, 3)
    return win.transpose(0, 1, 3, 4, 2).reshape(h * w, 9 * c)


def _conv_input_grad(g, w, h, width):
    """Gradient w.r.t. the input of a 3x3 same conv: correlate ``g`` with the
    spatially flipped, channel-transposed kernel."""
    c_out, c_in = w.shape[3], w.shape[2]
    flipped = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(9 * c_out, c_in)
    return _patches(g.reshape(h, width, c_out)) @ flipped


def _check_input(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 3:
        raise ValidationError(f"input must be a 2-D grid of at least 3x3, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    return x


def _forward(model, x):
    x = _check_input(x)
    h, w = x.shape
    p1 = _patches(x[:, :, None])
    z1 = p1 @ model.w1.reshape(9, CHANNELS) + model.b1
    a1 = np.maximum(z1, 0.0)
    p2 = _patches(a1.reshape(h, w, CHANNELS))
    z2 = p2 @ model.w2.reshape(9 * CHANNELS, CHANNELS) + model.b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ model.w3.reshape(CHANNELS, 1) + model.b3
    cache = (p1, z1, p2, z2, a2, z3)
    return softplus(z3).reshape(h, w), cache


def forward(model, x):
    """Predicted density map, same shape as ``x`` (an array of nonnegative reals)."""
    return _forward(model, x)[0]


def _backward(model, cache, upstream):
    p1, z1, p2, z2, a2, z3 = cache
    h, w = upstream.shape
    g3 = upstream.reshape(-1, 1) * sigmoid(z3)
    grads = {
        "w3": (a2.T @ g3).reshape(PARAM_SHAPES["w3"]),
        "b3": g3.sum(axis=0),
    }
    gz2 = (g3 @ model.w3.reshape(CHANNELS, 1).T) * (z2 > 0)
    grads["w2"] = (p2.T @ gz2).reshape(PARAM_SHAPES["w2"])
    grads["b2"] = gz2.sum(axis=0)
    ga1 = _conv_input_grad(gz2, model.w2, h, w)
    gz1 = ga1 * (z1 > 0)
    grads["w1"] = (p1.T @ gz1).reshape(PARAM_SHAPES["w1"])
    grads["b1"] = gz1.sum(axis=0)
    return ToyModel(**grads)


def backward(model, x, upstream):
    """Parameter gradients given ``upstream`` = dLoss/d(output density)."""
    x = _check_input(x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape:
        raise ShapeMismatchError(f"upstream {upstream.shape} vs input {x.shape}")
    _, cache = _forward(model, x)
    return _backward(model, cache, upstream)


# -- training --------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 4
    seed: int = 0
    loss: str = "bayes+"
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValidationError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")

    def resolved_loss_cfg(self):
        """Loss config with the background flag implied by the selector."""
        return replace(self.loss_cfg, background=(self.loss == "bayes+"))


class Adam:
    def __init__(self, model, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = model.zeros_like()
        self.v = model.zeros_like()
        self.t = 0

    def step(self, model, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in ToyModel.param_names():
            g = getattr(grads, name)
            m = getattr(self.m, name)
            v = getattr(self.v, name)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p = getattr(model, name)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_objective(scene, cfg):
    """Return ``f(density) -> LossValue`` for one training scene."""
    if cfg.loss == "baseline":
        gt = baseline_density(scene, FixedKernel(cfg.loss_cfg.sigma))
        return lambda d: baseline_loss(gt, d)
    loss_cfg = cfg.resolved_loss_cfg()
    if scene.n == 0:
        return lambda d: bayes_loss(scene, d, loss_cfg)
    blocks = list(iter_posterior(scene, loss_cfg))
    return lambda d: bayes_loss(scene, d, loss_cfg, blocks=blocks)


def loss_and_grads(model, x, objective):
    out, cache = _forward(model, x)
    lv = objective(out)
    return lv.value, _backward(model, cache, lv.gradient)


def train(dataset, cfg, model=None, on_epoch=None):
    """Fit a model on ``[(input grid, Scene), ...]``.

    Per-image losses are summed over the image and averaged over each
    minibatch.  Returns ``(model, trace)`` where ``trace[e]`` is the mean
    training loss seen during epoch ``e``.  ``on_epoch(epoch, model, mean_loss)``
    is called after every epoch if given.
    """
    if not dataset:
        raise ValidationError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(int(rng.integers(2**63))) if model is None else model.copy()
    if cfg.epochs == 0:
        return model, []
    objectives = [make_objective(scene, cfg) for _, scene in dataset]
    opt = Adam(model, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        seen = []
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b:b + cfg.batch_size]
            acc = model.zeros_like()
            for i in batch:
                value, g = loss_and_grads(model, dataset[i][0], objectives[i])
                seen.append(value)
                for name in ToyModel.param_names():
                    getattr(acc, name)[...] += getattr(g, name)
            for p in acc.params():
                p /= len(batch)
            opt.step(model, acc)
        trace.append(math.fsum(seen) / len(seen))
        if on_epoch is not None:
            on_epoch(len(trace) - 1, model, trace[-1])
    return model, trace


def predict_counts(model, inputs):
    return [total_count(forward(model, x)) for x in inputs]


# -- checkpoints -----------------------------------------------------------

def checkpoint_bytes(model):
    header = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}"]
    for name in ToyModel.param_names():
        shape = PARAM_SHAPES[name]
        header.append(f"{name} f8 " + " ".join(str(s) for s in shape))
    header.append("END")
    blob = b"".join(np.ascontiguousarray(getattr(model, n), dtype="<f8").tobytes()
                    for n in ToyModel.param_names())
    return ("\n".join(header) + "\n").encode("ascii") + blob


def model_from_bytes(data):
    marker = b"\nEND\n"
    cut = data.find(marker)
    if cut < 0:
        raise FormatError("checkpoint header not terminated")
    lines = data[:cut].decode("ascii").split("\n")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
        raise FormatError(f"not a checkpoint (header {lines[0]!r})")
    if magic[1] != str(CHECKPOINT_VERSION):
        raise FormatError(f"unsupported checkpoint version {magic[1]}")
    blob = memoryview(data)[cut + len(marker):]
    params = {}
    offset = 0
    for line in lines[1:]:
        parts = line.split()
        name, dtype, shape = parts[0], parts[1], tuple(int(s) for s in parts[2:])
        if dtype != "f8" or PARAM_SHAPES.get(name) != shape:
            raise FormatError(f"unexpected parameter entry {line!r}")
        size = 8 * math.prod(shape)
        if offset + size > len(blob):
            raise FormatError("checkpoint truncated")
        params[name] = np.frombuffer(blob[offset:offset + size], dtype="<f8").reshape(shape).astype(np.float64)
        offset += size
    if offset != len(blob):
        raise FormatError("trailing bytes after checkpoint payload")
    if set(params) != set(PARAM_SHAPES):
        raise FormatError("checkpoint is missing parameters")
    return ToyModel(**params)


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
