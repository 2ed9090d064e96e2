"""CNN21 / CNN47 definitions, forward pass, gradients and feature tap."""
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch, UnknownArchitecture
from .layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU, cross_entropy, softmax

N_SLICES = 5
PENULTIMATE_UNITS = 200

ARCHITECTURES = {
    "CNN21": (21, 21, N_SLICES),
    "CNN47": (47, 47, N_SLICES),
}


def canonical_arch(tag):
    key = str(tag).upper()
    if key not in ARCHITECTURES:
        raise UnknownArchitecture(f"unknown architecture {tag!r}; expected CNN21 or CNN47")
    return key


def _cnn21_layers(c):
    return [
        Conv2D(c, 32, 5), ReLU(), MaxPool2D(2),
        Conv2D(32, 64, 3), ReLU(), MaxPool2D(2),
        Dropout(0.25), Flatten(),
        Dense(3 * 3 * 64, PENULTIMATE_UNITS), ReLU(),
        Dropout(0.5),
        Dense(PENULTIMATE_UNITS, 2),
    ]


def _cnn47_layers(c):
    return [
        Conv2D(c, 32, 5), ReLU(), MaxPool2D(2),
        Conv2D(32, 64, 5), ReLU(), MaxPool2D(2),
        Conv2D(64, 128, 3), ReLU(),
        Dropout(0.25), Flatten(),
        Dense(6 * 6 * 128, PENULTIMATE_UNITS), ReLU(),
        Dropout(0.5),
        Dense(PENULTIMATE_UNITS, 2),
    ]


@dataclass
class NetworkModel:
    arch: str
    layers: list
    input_shape: tuple  # (W, H, D)
    mode: str = "eval"

    @property
    def feature_index(self):
        """Index of the layer whose output is the penultimate feature vector."""
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if isinstance(layer, Dense) and layer.n_out != 2:
                return i + 1 if i + 1 < len(self.layers) and isinstance(self.layers[i + 1], ReLU) else i
        return len(self.layers) - 2

    def parameters(self):
        """Ordered ``(name, array)`` pairs; names are ``"<layer>.<W|b>"``."""
        return [(f"{i}.{k}", layer.params[k]) for i, layer in enumerate(self.layers) for k in sorted(layer.params)]

    def get_weights(self):
        return {name: arr.copy() for name, arr in self.parameters()}

    def set_weights(self, weights):
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                src = np.asarray(weights[f"{i}.{k}"], dtype=np.float64)
                if src.shape != layer.params[k].shape:
                    raise ShapeMismatch(f"weight {i}.{k}: shape {src.shape} != {layer.params[k].shape}")
                layer.params[k] = src.copy()

    def n_parameters(self):
        return int(sum(arr.size for _, arr in self.parameters()))


def build_network(tag, seed=0, layers=None, input_shape=None):
    """Build a network with He-uniform weights and zero biases.

    ``layers``/``input_shape`` allow small custom stacks (used for gradient
    checks); otherwise ``tag`` selects CNN21 or CNN47.
    """
    if layers is None:
        tag = canonical_arch(tag)
        input_shape = ARCHITECTURES[tag]
        layers = _cnn21_layers(N_SLICES) if tag == "CNN21" else _cnn47_layers(N_SLICES)
    rng = np.random.default_rng(seed)
    w, h, d = input_shape
    shape = (d, h, w)
    for layer in layers:
        if "W" in layer.params:
            limit = np.sqrt(6.0 / layer.fan_in)
            layer.params["W"] = rng.uniform(-limit, limit, size=layer.params["W"].shape)
            layer.params["b"] = np.zeros_like(layer.params["b"])
        shape = layer.output_shape(shape)
    if shape != (2,):
        raise ShapeMismatch(f"network output shape is {shape}, expected (2,)")
    return NetworkModel(str(tag), layers, tuple(input_shape))


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    w, h, d = model.input_shape
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (d, h, w):
        raise ShapeMismatch(f"{model.arch} expects (N, {d}, {h}, {w}) input, got {x.shape}")
    return x


def forward(model, x, train=None, rng=None):
    """Class probabilities and the list of per-layer activations.

    ``activations[i]`` is the output of layer ``i``; the last entry holds the
    logits.
    """
    x = _check_input(model, x)
    train = model.mode == "train" if train is None else train
    acts = []
    out = x
    for layer in model.layers:
        out = layer.forward(out, train=train, rng=rng)
        acts.append(out)
    return softmax(out), acts


def gradients(model, x, labels, train=None, rng=None):
    """Mean cross-entropy loss and exact gradients for every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    x = _check_input(model, x)
    if labels.shape != (x.shape[0],) or np.any((labels != 0) & (labels != 1)):
        raise ShapeMismatch("labels must be a 0/1 vector matching the batch")
    _, acts = forward(model, x, train=train, rng=rng)
    loss, grad = cross_entropy(acts[-1], labels)
    for layer in reversed(model.layers):
        grad = layer.backward(grad)
    grads = {f"{i}.{k}": layer.grads[k] for i, layer in enumerate(model.layers) for k in sorted(layer.params)}
    return grads, loss


def predict_proba(model, x, batch_size=64):
    """Positive-class probability per item, evaluated in eval mode."""
    x = _check_input(model, x)
    out = np.empty(len(x))
    for s in range(0, len(x), batch_size):
        probs, _ = forward(model, x[s : s + batch_size], train=False)
        out[s : s + batch_size] = probs[:, 1]
    return out


def extract_cnn_features(model, x, batch_size=64):
    """Post-ReLU activations of the 200-unit layer before the classifier."""
    x = _check_input(model, x)
    idx = model.feature_index
    feats = []
    for s in range(0, len(x), batch_size):
        _, acts = forward(model, x[s : s + batch_size], train=False)
        feats.append(acts[idx])
    if not feats:
        return np.zeros((0, PENULTIMATE_UNITS))
    return np.concatenate(feats)


def loss_and_accuracy(model, x, labels, batch_size=64):
    x = _check_input(model, x)
    labels = np.asarray(labels, dtype=np.int64)
    total, correct = 0.0, 0
    for s in range(0, len(x), batch_size):
        probs, acts = forward(model, x[s : s + batch_size], train=False)
        loss, _ = cross_entropy(acts[-1], labels[s : s + batch_size])
        total += loss * len(probs)
        correct += int(np.sum((probs[:, 1] >= 0.5) == labels[s : s + batch_size]))
    return total / len(x), correct / len(x)
