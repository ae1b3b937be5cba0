"""Layers with explicit forward/backward passes on float64 numpy arrays.

Sequence tensors are channels-last: ``(batch, length, channels)``.

Each layer caches what it needs during ``forward`` and, in ``backward``,
returns the gradient with respect to its input while *accumulating*
parameter gradients into ``self.grads`` (shared layers receive gradients
from several heads within one step).
"""

import numpy as np

from ..errors import InvalidArgument


def uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}

    def zero_grad(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def _accumulate(self, name, g):
        if name in self.grads:
            self.grads[name] += g
        else:
            self.grads[name] = g.copy()

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def describe(self):
        raise NotImplementedError

    def output_shape(self, in_shape):
        """Per-sample output shape for a per-sample input shape."""
        return in_shape


class Conv1d(Layer):
    """1-D convolution over channels-last input ``(batch, length, channels)``.

    ``causal`` pads only on the left (TCN style); otherwise padding is split
    so that, at stride 1, the output has the input length.
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, dilation=1,
                 causal=False, rng=None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.dilation = dilation
        self.causal = causal
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel
        # W[k, c, o]: tap k, input channel c, output channel o
        self.params["W"] = uniform_fan_in(rng, (kernel, in_channels, out_channels), fan_in)
        self.params["b"] = uniform_fan_in(rng, (out_channels,), fan_in)
        self.zero_grad()

    @property
    def _pad(self):
        total = (self.kernel - 1) * self.dilation
        left = total if self.causal else total // 2
        return left, total - left

    def output_shape(self, in_shape):
        n, c = in_shape
        left, right = self._pad
        span = (self.kernel - 1) * self.dilation + 1
        return ((n + left + right - span) // self.stride + 1, self.out_channels)

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise InvalidArgument(
                f"Conv1d expects (batch, length, {self.in_channels}), got {x.shape}")
        b, n, c = x.shape
        left, right = self._pad
        xp = np.zeros((b, n + left + right, c))
        xp[:, left:left + n] = x
        n_out = self.output_shape((n, c))[0]
        s0, s1, s2 = xp.strides
        win = np.lib.stride_tricks.as_strided(
            xp, shape=(b, n_out, self.kernel, c),
            strides=(s0, self.stride * s1, self.dilation * s1, s2), writeable=False)
        cols = win.reshape(b * n_out, self.kernel * c)
        out = cols @ self.params["W"].reshape(-1, self.out_channels) + self.params["b"]
        self._cache = (cols, x.shape, n_out)
        return out.reshape(b, n_out, self.out_channels)

    def backward(self, grad):
        cols, (b, n, c), n_out = self._cache
        g = grad.reshape(b * n_out, self.out_channels)
        w = self.params["W"].reshape(-1, self.out_channels)
        self._accumulate("W", (cols.T @ g).reshape(self.params["W"].shape))
        self._accumulate("b", g.sum(axis=0))
        dcols = (g @ w.T).reshape(b, n_out, self.kernel, c)
        left, right = self._pad
        dxp = np.zeros((b, n + left + right, c))
        stop = self.stride * (n_out - 1) + 1
        for j in range(self.kernel):
            s = j * self.dilation
            dxp[:, s:s + stop:self.stride] += dcols[:, :, j]
        return dxp[:, left:left + n]

    def describe(self):
        return {"type": "conv1d", "in": self.in_channels, "out": self.out_channels,
                "kernel": self.kernel, "stride": self.stride,
                "dilation": self.dilation, "causal": self.causal}


class Dense(Layer):
    """Affine map ``x @ W + b`` on ``(batch, features)``."""

    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = uniform_fan_in(rng, (n_in, n_out), n_in)
        self.params["b"] = uniform_fan_in(rng, (n_out,), n_in)
        self.zero_grad()

    def output_shape(self, in_shape):
        return (self.n_out,)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise InvalidArgument(f"Dense expects (batch, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        self._accumulate("W", self._x.T @ grad)
        self._accumulate("b", grad.sum(axis=0))
        return grad @ self.params["W"].T

    def describe(self):
        return {"type": "dense", "in": self.n_in, "out": self.n_out}


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask

    def describe(self):
        return {"type": "relu"}


class MaxPool1d(Layer):
    """Non-overlapping max pooling along the length axis of
    ``(batch, length, channels)``; a trailing remainder is dropped."""

    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def output_shape(self, in_shape):
        n, c = in_shape
        return (n // self.size, c)

    def forward(self, x):
        if x.ndim != 3:
            raise InvalidArgument(f"MaxPool1d expects 3-D input, got {x.shape}")
        b, n, c = x.shape
        m = n // self.size
        blocks = x[:, : m * self.size].reshape(b, m, self.size, c)
        arg = blocks.argmax(axis=2)
        self._cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[:, :, None, :], axis=2)[:, :, 0]

    def backward(self, grad):
        (b, n, c), arg = self._cache
        m = grad.shape[1]
        hit = np.arange(self.size)[None, None, :, None] == arg[:, :, None, :]
        dx = np.zeros((b, n, c))
        dx[:, : m * self.size] = (hit * grad[:, :, None, :]).reshape(b, m * self.size, c)
        return dx

    def describe(self):
        return {"type": "maxpool", "size": self.size}


class GlobalAvgPool(Layer):
    """Mean over the length axis: ``(batch, n, c) -> (batch, c)``."""

    def output_shape(self, in_shape):
        return (in_shape[1],)

    def forward(self, x):
        if x.ndim != 3:
            raise InvalidArgument(f"GlobalAvgPool expects 3-D input, got {x.shape}")
        self._n = x.shape[1]
        return x.mean(axis=1)

    def backward(self, grad):
        return np.broadcast_to(grad[:, None, :] / self._n,
                               (grad.shape[0], self._n, grad.shape[1])).copy()

    def describe(self):
        return {"type": "gap"}


class Reshape(Layer):
    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def output_shape(self, in_shape):
        return self.shape

    def forward(self, x):
        self._in = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._in)

    def describe(self):
        return {"type": "reshape", "shape": list(self.shape)}


class SoftmaxCrossEntropy:
    """Softmax followed by mean cross-entropy against one-hot labels."""

    def forward(self, logits, onehot):
        logits = np.asarray(logits, dtype=np.float64)
        onehot = np.asarray(onehot, dtype=np.float64)
        if logits.shape != onehot.shape or logits.ndim != 2:
            raise InvalidArgument(
                f"logits {logits.shape} and labels {onehot.shape} must both be (batch, classes)")
        check_one_hot(onehot)
        logp = log_softmax(logits)
        self._probs = np.exp(logp)
        self._onehot = onehot
        return float(-np.sum(onehot * logp) / len(logits))

    def backward(self, grad=1.0):
        return grad * (self._probs - self._onehot) / len(self._onehot)


def check_one_hot(onehot):
    ok = np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)
    if not ok:
        raise InvalidArgument("labels must be one-hot rows")


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def cross_entropy_loss(logits, onehot):
    return SoftmaxCrossEntropy().forward(logits, onehot)


def one_hot(labels, n_classes):
    """One-hot rows for 0-based integer labels."""
    labels = np.asarray(labels)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def output_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
        return in_shape

    def parameters(self):
        """``(layer, name)`` pairs in declaration order."""
        return [(layer, name) for layer in self.layers for name in layer.params]

    def describe(self):
        return [layer.describe() for layer in self.layers]


def layer_forward_backward(layer, x, upstream_grad):
    """One forward and backward pass through ``layer``.

    Returns ``(output, input_grad, param_grads)`` with fresh parameter
    gradients (any previously accumulated ones are discarded).
    """
    layer.zero_grad()
    out = layer.forward(x)
    if out.shape != np.shape(upstream_grad):
        raise InvalidArgument(f"upstream grad {np.shape(upstream_grad)} != output {out.shape}")
    dx = layer.backward(np.asarray(upstream_grad, dtype=np.float64))
    return out, dx, {k: v.copy() for k, v in layer.grads.items()}
