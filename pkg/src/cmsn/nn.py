"""Minimal float64 feed-forward network substrate.

Networks are flat lists of layer descriptors (dataclasses) plus a parallel
list of parameter blocks (dicts of float64 ndarrays).  Everything is plain
numpy; arrays are batch-first:

* convolutional part: ``(batch, length, channels)``
* dense part: ``(batch, features)`` (a 3-D input to the first dense layer
  is flattened row-major, i.e. position-major / channel-minor)

Each train-mode ``forward`` produces a :class:`ForwardCache` that feeds
exactly one ``backward``.  ``finite_diff_gradient`` is the central-difference
oracle used by the test suite to pin the analytic gradients.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Array shape inconsistent with the network architecture."""


class NumericsError(ValueError):
    """Non-finite values where finite ones are required."""


class CacheError(RuntimeError):
    """Forward cache misused (reused, or wrong mode)."""


# ---------------------------------------------------------------------------
# Layer descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv1d:
    """1-D convolution, valid padding by default (``pad`` adds symmetric zeros)."""
    filters: int
    kernel: int
    stride: int = 1
    pad: bool = False

    def __post_init__(self):
        if self.kernel < 1:
            raise ValueError("kernel length must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.filters < 1:
            raise ValueError("filter count must be >= 1")


@dataclass(frozen=True)
class BatchNorm:
    momentum: float = 0.9
    eps: float = 1e-5


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Tanh:
    pass


@dataclass(frozen=True)
class MaxPool1d:
    """Non-overlapping max pooling; stride equals the pool width."""
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("pool width must be >= 1")


@dataclass(frozen=True)
class Dropout:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError("dropout probability must lie in [0, 1)")


@dataclass(frozen=True)
class Dense:
    units: int

    def __post_init__(self):
        if self.units < 1:
            raise ValueError("neuron count must be >= 1")


@dataclass(frozen=True)
class Softmax:
    pass


# Parameter block keys the optimizers may update, per layer kind.
TRAINABLE_KEYS = {
    Conv1d: ("W", "b"),
    Dense: ("W", "b"),
    BatchNorm: ("gamma", "beta"),
}


# ---------------------------------------------------------------------------
# Shape inference
# ---------------------------------------------------------------------------

def infer_shapes(input_shape, layers):
    """Propagate ``input_shape`` through ``layers``, returning per-layer output shapes.

    ``input_shape`` is ``(length, channels)`` for signal input or
    ``(features,)`` for flat input.  Raises :class:`ShapeError` naming the
    offending layer index if any spatial length drops below 1.
    """
    shapes = []
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        if isinstance(layer, Conv1d):
            if len(shape) != 2:
                raise ShapeError(f"layer {i} (conv1d) needs (length, channels) input, got {shape}")
            length, _ = shape
            if layer.pad:
                length = length + 2 * (layer.kernel // 2)
            out_len = (length - layer.kernel) // layer.stride + 1
            if out_len < 1:
                raise ShapeError(
                    f"layer {i} (conv1d) reduces length {shape[0]} below 1 "
                    f"(kernel {layer.kernel}, stride {layer.stride})")
            shape = (out_len, layer.filters)
        elif isinstance(layer, MaxPool1d):
            if len(shape) != 2:
                raise ShapeError(f"layer {i} (maxpool1d) needs (length, channels) input, got {shape}")
            out_len = shape[0] // layer.width
            if out_len < 1:
                raise ShapeError(
                    f"layer {i} (maxpool1d) reduces length {shape[0]} below 1 (width {layer.width})")
            shape = (out_len, shape[1])
        elif isinstance(layer, Dense):
            shape = (layer.units,)
        elif isinstance(layer, (BatchNorm, Relu, Tanh, Dropout, Softmax)):
            pass  # shape preserved
        else:
            raise TypeError(f"unknown layer kind: {layer!r}")
        shapes.append(shape)
    return shapes


def _init_layer_params(layer, in_shape, rng):
    """Seeded parameter blocks for one layer (uniform +-1/sqrt(fan_in), zero bias)."""
    if isinstance(layer, Conv1d):
        fan_in = layer.kernel * in_shape[1]
        bound = 1.0 / np.sqrt(fan_in)
        return {
            "W": rng.uniform(-bound, bound, size=(layer.filters, layer.kernel, in_shape[1])),
            "b": np.zeros(layer.filters),
        }
    if isinstance(layer, Dense):
        fan_in = int(np.prod(in_shape))
        bound = 1.0 / np.sqrt(fan_in)
        return {
            "W": rng.uniform(-bound, bound, size=(fan_in, layer.units)),
            "b": np.zeros(layer.units),
        }
    if isinstance(layer, BatchNorm):
        channels = in_shape[-1]
        return {
            "gamma": np.ones(channels),
            "beta": np.zeros(channels),
            "run_mean": np.zeros(channels),
            "run_var": np.ones(channels),
        }
    return None


class Network:
    """A sequential network: layer descriptors + parameter blocks.

    Parameters are float64 throughout.  ``get_vector``/``set_vector`` expose
    the trainable parameters as one flat vector (batch-norm running
    statistics are excluded; they are state, not weights).
    """

    def __init__(self, input_shape, layers, params, seed=None):
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.params = params
        self.seed = seed
        self.output_shapes = infer_shapes(input_shape, layers)

    @property
    def output_shape(self):
        return self.output_shapes[-1]

    @property
    def num_params(self):
        return sum(block[k].size
                   for layer, block in zip(self.layers, self.params) if block
                   for k in TRAINABLE_KEYS.get(type(layer), ()))

    def is_dense_only(self):
        return all(isinstance(l, (Dense, Relu, Tanh, Softmax, Dropout)) for l in self.layers)

    def copy(self):
        clone = Network.__new__(Network)
        clone.input_shape = self.input_shape
        clone.layers = list(self.layers)
        clone.params = [
            {k: v.copy() for k, v in block.items()} if block else None
            for block in self.params
        ]
        clone.seed = self.seed
        clone.output_shapes = list(self.output_shapes)
        return clone

    def get_vector(self):
        """Flat vector of all trainable parameters, in layer order."""
        chunks = []
        for layer, block in zip(self.layers, self.params):
            for k in TRAINABLE_KEYS.get(type(layer), ()):
                chunks.append(block[k].ravel())
        if not chunks:
            return np.zeros(0)
        return np.concatenate(chunks)

    def set_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.num_params,):
            raise ShapeError(f"parameter vector length {vec.size} != {self.num_params}")
        pos = 0
        for layer, block in zip(self.layers, self.params):
            for k in TRAINABLE_KEYS.get(type(layer), ()):
                n = block[k].size
                block[k] = vec[pos:pos + n].reshape(block[k].shape).copy()
                pos += n

    def grads_like(self):
        """Zero gradient blocks shaped like the trainable parameters."""
        grads = []
        for layer, block in zip(self.layers, self.params):
            keys = TRAINABLE_KEYS.get(type(layer), ())
            grads.append({k: np.zeros_like(block[k]) for k in keys} if keys else None)
        return grads


def build_network(input_shape, layers, seed):
    """Construct a :class:`Network` with seeded initialization.

    Weight entries are uniform in ``[-1/sqrt(fan_in), +1/sqrt(fan_in)]``,
    biases zero, batch-norm gamma 1 / beta 0 with unit running variance.
    """
    shapes = infer_shapes(input_shape, layers)  # validate before allocating
    rng = np.random.default_rng(seed)
    params = []
    in_shapes = [tuple(input_shape)] + shapes[:-1]
    for layer, shape in zip(layers, in_shapes):
        params.append(_init_layer_params(layer, shape, rng))
    return Network(input_shape, layers, params, seed=seed)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    """Per-layer activations and masks from one train-mode forward pass.

    Consumed by exactly one ``backward``; reuse raises :class:`CacheError`.
    """
    mode: str
    entries: list = field(default_factory=list)
    consumed: bool = False


def _conv1d_forward(x, W, b, layer):
    if layer.pad:
        half = layer.kernel // 2
        x = np.pad(x, ((0, 0), (half, half), (0, 0)))
    batch, length, channels = x.shape
    windows = sliding_window_view(x, layer.kernel, axis=1)[:, ::layer.stride]
    out_len = windows.shape[1]
    # windows: (B, L', C, K) -> GEMM against (C*K, F)
    wr = np.ascontiguousarray(windows).reshape(batch * out_len, channels * layer.kernel)
    wm = np.ascontiguousarray(W.transpose(2, 1, 0)).reshape(channels * layer.kernel, layer.filters)
    y = (wr @ wm).reshape(batch, out_len, layer.filters) + b
    return y, {"x_padded": x, "windows_flat": wr, "out_len": out_len}


def _conv1d_backward(grad, cache, W, layer):
    x = cache["x_padded"]
    batch, length, channels = x.shape
    out_len = cache["out_len"]
    gr = grad.reshape(batch * out_len, layer.filters)
    dWm = cache["windows_flat"].T @ gr                      # (C*K, F)
    dW = dWm.reshape(channels, layer.kernel, layer.filters).transpose(2, 1, 0)
    db = grad.sum(axis=(0, 1))
    dx = np.zeros_like(x)
    positions = layer.stride * np.arange(out_len)
    for k in range(layer.kernel):
        # positions k + stride*l are unique for fixed k, so += is safe
        dx[:, positions + k, :] += grad @ W[:, k, :]
    if layer.pad:
        half = layer.kernel // 2
        dx = dx[:, half:length - half, :]
    return dx, {"W": dW, "b": db}


def _maxpool_forward(x, layer):
    batch, length, channels = x.shape
    out_len = length // layer.width
    xt = x[:, :out_len * layer.width, :].reshape(batch, out_len, layer.width, channels)
    arg = xt.argmax(axis=2)
    y = np.take_along_axis(xt, arg[:, :, None, :], axis=2).squeeze(2)
    return y, {"arg": arg, "in_shape": x.shape, "out_len": out_len}


def _maxpool_backward(grad, cache, layer):
    batch, length, channels = cache["in_shape"]
    out_len = cache["out_len"]
    dxt = np.zeros((batch, out_len, layer.width, channels))
    np.put_along_axis(dxt, cache["arg"][:, :, None, :], grad[:, :, None, :], axis=2)
    dx = np.zeros((batch, length, channels))
    dx[:, :out_len * layer.width, :] = dxt.reshape(batch, out_len * layer.width, channels)
    return dx


def _batchnorm_forward(x, block, layer, mode):
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + layer.eps)
        xhat = (x - mu) * inv_std
        m = layer.momentum
        block["run_mean"] = m * block["run_mean"] + (1 - m) * mu
        block["run_var"] = m * block["run_var"] + (1 - m) * var
        cache = {"xhat": xhat, "inv_std": inv_std, "centered": x - mu, "axes": axes}
    else:
        inv_std = 1.0 / np.sqrt(block["run_var"] + layer.eps)
        xhat = (x - block["run_mean"]) * inv_std
        cache = None
    return block["gamma"] * xhat + block["beta"], cache


def _batchnorm_backward(grad, cache, block):
    xhat, inv_std, axes = cache["xhat"], cache["inv_std"], cache["axes"]
    n = np.prod([xhat.shape[a] for a in axes])
    dgamma = (grad * xhat).sum(axis=axes)
    dbeta = grad.sum(axis=axes)
    dxhat = grad * block["gamma"]
    # standard batch-norm gradient with batch statistics
    dx = (inv_std / n) * (n * dxhat
                          - dxhat.sum(axis=axes)
                          - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, {"gamma": dgamma, "beta": dbeta}


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net, x, mode="infer", rng=None):
    """Run ``x`` through ``net``; returns ``(output, cache)``.

    In train mode batch norm uses batch statistics (and updates the running
    ones in place) and dropout draws masks from ``rng``; in infer mode both
    are deterministic (running statistics, identity dropout) and the cache
    cannot back a backward pass.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == len(net.input_shape):
        x = x[None]
    if x.shape[1:] != net.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} != network input {net.input_shape}")
    if not np.all(np.isfinite(x)):
        raise NumericsError("non-finite values in network input")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "train" and rng is None and any(isinstance(l, Dropout) for l in net.layers):
        raise ValueError("train-mode forward through dropout requires an rng")

    cache = ForwardCache(mode=mode)
    for layer, block in zip(net.layers, net.params):
        entry = {}
        if isinstance(layer, Conv1d):
            x, c = _conv1d_forward(x, block["W"], block["b"], layer)
            entry.update(c)
        elif isinstance(layer, BatchNorm):
            x, c = _batchnorm_forward(x, block, layer, mode)
            entry["bn"] = c
        elif isinstance(layer, Relu):
            entry["mask"] = x > 0
            x = np.maximum(x, 0.0)
        elif isinstance(layer, Tanh):
            x = np.tanh(x)
            entry["y"] = x
        elif isinstance(layer, MaxPool1d):
            x, c = _maxpool_forward(x, layer)
            entry.update(c)
        elif isinstance(layer, Dropout):
            if mode == "train":
                mask = rng.random(x.shape) >= layer.p
                x = x * mask / (1.0 - layer.p)
                entry["mask"] = mask
            else:
                entry["mask"] = None
        elif isinstance(layer, Dense):
            if x.ndim == 3:
                entry["pre_flatten"] = x.shape
                x = x.reshape(x.shape[0], -1)
            entry["x_in"] = x
            x = x @ block["W"] + block["b"]
        elif isinstance(layer, Softmax):
            x = _softmax(x)
            entry["y"] = x
        cache.entries.append(entry)
    return x, cache


def backward(net, cache, grad_out):
    """Backpropagate ``grad_out`` through a train-mode cache.

    Returns gradient blocks shaped like the trainable parameters.  The cache
    is consumed; a second call on the same cache raises :class:`CacheError`.
    """
    if cache.consumed:
        raise CacheError("forward cache already consumed by a backward pass")
    if cache.mode != "train":
        raise CacheError("backward requires a train-mode forward cache")
    cache.consumed = True

    grads = net.grads_like()
    grad = np.asarray(grad_out, dtype=np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        layer, block, entry = net.layers[i], net.params[i], cache.entries[i]
        if isinstance(layer, Conv1d):
            grad, g = _conv1d_backward(grad, entry, block["W"], layer)
            grads[i] = g
        elif isinstance(layer, BatchNorm):
            grad, g = _batchnorm_backward(grad, entry["bn"], block)
            grads[i] = g
        elif isinstance(layer, Relu):
            grad = grad * entry["mask"]
        elif isinstance(layer, Tanh):
            grad = grad * (1.0 - entry["y"] ** 2)
        elif isinstance(layer, MaxPool1d):
            grad = _maxpool_backward(grad, entry, layer)
        elif isinstance(layer, Dropout):
            if entry["mask"] is not None:
                grad = grad * entry["mask"] / (1.0 - layer.p)
        elif isinstance(layer, Dense):
            grads[i] = {"W": entry["x_in"].T @ grad, "b": grad.sum(axis=0)}
            grad = grad @ block["W"].T
            if "pre_flatten" in entry:
                grad = grad.reshape(entry["pre_flatten"])
        elif isinstance(layer, Softmax):
            y = entry["y"]
            grad = y * (grad - (grad * y).sum(axis=-1, keepdims=True))
    if not all(np.all(np.isfinite(b[k])) for b in grads if b for k in b):
        raise NumericsError("non-finite gradients")
    return grads


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

CE_CLAMP = 1e-12  # lower clamp on probabilities before log


def _check_loss_shapes(prediction, target):
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction shape {prediction.shape} != target shape {target.shape}")
    if prediction.ndim == 1:
        prediction = prediction[None]
        target = target[None]
    return prediction, target


def loss(kind, prediction, target):
    """Scalar loss: ``mse`` (mean over all elements) or ``cross_entropy``.

    Cross-entropy expects one-hot targets and predictions in (0, 1];
    probabilities are clamped to ``[1e-12, 1]`` before the log.  The value
    is the mean over batch rows of the per-row entropy sum.
    """
    prediction, target = _check_loss_shapes(prediction, target)
    if kind == "mse":
        return float(np.mean((prediction - target) ** 2))
    if kind == "cross_entropy":
        _check_one_hot(target)
        p = np.clip(prediction, CE_CLAMP, 1.0)
        return float(np.mean(-(target * np.log(p)).sum(axis=-1)))
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_grad(kind, prediction, target):
    """Gradient of :func:`loss` with respect to the prediction."""
    prediction, target = _check_loss_shapes(prediction, target)
    if kind == "mse":
        return 2.0 * (prediction - target) / prediction.size
    if kind == "cross_entropy":
        _check_one_hot(target)
        p = np.clip(prediction, CE_CLAMP, 1.0)
        return -(target / p) / prediction.shape[0]
    raise ValueError(f"unknown loss kind {kind!r}")


def _check_one_hot(target):
    ok = np.all((target == 0.0) | (target == 1.0)) and np.allclose(target.sum(axis=-1), 1.0)
    if not ok:
        raise ValueError("cross-entropy targets must be one-hot")


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# Finite-difference gradient oracle (test-side ground truth)
# ---------------------------------------------------------------------------

def finite_diff_gradient(net, x, target, loss_kind="mse", h=1e-6, mode="train", rng_seed=0):
    """Central-difference gradient of the loss w.r.t. every trainable scalar.

    Every probe runs on a fresh copy of the network (train-mode forwards
    mutate batch-norm running statistics) with an identically seeded rng so
    stochastic layers see the same masks.  Slow by design: this is the
    oracle the analytic backward pass is tested against.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("step h must lie in [1e-7, 1e-3]")

    def eval_loss(vec):
        probe = net.copy()
        probe.set_vector(vec)
        y, _ = forward(probe, x, mode, rng=np.random.default_rng(rng_seed))
        return loss(loss_kind, y, target)

    base = net.get_vector()
    grad = np.zeros_like(base)
    for i in range(base.size):
        up = base.copy()
        up[i] += h
        down = base.copy()
        down[i] -= h
        grad[i] = (eval_loss(up) - eval_loss(down)) / (2.0 * h)
    return grad
