"""Layers with hand-written backward passes (float64, NCHW)."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def output_shape(self, in_shape):
        return in_shape

    def __repr__(self):
        return f"{type(self).__name__}()"


class Conv2D(Layer):
    """Valid (unpadded) stride-1 convolution over all input channels."""

    kind = "conv"

    def __init__(self, c_in, c_out, k):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.params = {
            "W": np.zeros((c_out, c_in, k, k)),
            "b": np.zeros(c_out),
        }

    @property
    def fan_in(self):
        return self.c_in * self.k * self.k

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (self.c_out, h - self.k + 1, w - self.k + 1)

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        k = self.k
        ho, wo = h - k + 1, w - k + 1
        win = sliding_window_view(x, (k, k), axis=(2, 3))  # n, c, ho, wo, k, k
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        wmat = self.params["W"].reshape(self.c_out, -1)
        out = cols @ wmat.T + self.params["b"]
        self._cache = (x.shape, cols)
        return out.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dout):
        (n, c, h, w), cols = self._cache
        k = self.k
        ho, wo = h - k + 1, w - k + 1
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        wmat = self.params["W"].reshape(self.c_out, -1)
        self.grads["W"] = (d2.T @ cols).reshape(self.params["W"].shape)
        self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ wmat).reshape(n, ho, wo, c, k, k)
        dx = np.zeros((n, c, h, w))
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx

    def __repr__(self):
        return f"Conv2D({self.c_in}->{self.c_out}, {self.k}x{self.k})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dout):
        return np.where(self._cache, dout, 0.0)


class MaxPool2D(Layer):
    """Non-overlapping max pooling; trailing rows/columns are dropped.

    Ties route the gradient to the first maximum in row-major window order.
    """

    kind = "maxpool"

    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // self.size, w // self.size)

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        s = self.size
        ho, wo = h // s, w // s
        blocks = x[:, :, : ho * s, : wo * s].reshape(n, c, ho, s, wo, s).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, ho, wo, s * s)
        arg = blocks.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        (n, c, h, w), arg = self._cache
        s = self.size
        ho, wo = h // s, w // s
        blocks = np.zeros((n, c, ho, wo, s * s))
        np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
        blocks = blocks.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * s, wo * s)
        dx = np.zeros((n, c, h, w))
        dx[:, :, : ho * s, : wo * s] = blocks
        return dx

    def __repr__(self):
        return f"MaxPool2D({self.size}x{self.size}/{self.size})"


class Dropout(Layer):
    """Inverted dropout: scaled in training, identity in evaluation."""

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0:
            self._cache = None
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        keep = 1.0 - self.rate
        self._cache = (rng.random(x.shape) < keep) / keep
        return x * self._cache

    def backward(self, dout):
        return dout if self._cache is None else dout * self._cache

    def __repr__(self):
        return f"Dropout({self.rate:.0%})"


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cache)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": np.zeros((n_in, n_out)), "b": np.zeros(n_out)}

    @property
    def fan_in(self):
        return self.n_in

    def output_shape(self, in_shape):
        return (self.n_out,)

    def forward(self, x, train=False, rng=None):
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._cache.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T

    def __repr__(self):
        return f"Dense({self.n_in}->{self.n_out})"


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n
