"""Minibatch SGD with momentum, held-out checkpointing and NDXW weight files.

NDXW layout::

    b"NDXW" | uint32 version (=1) | uint32 header length H | H bytes JSON
    {arch, input_shape, epoch, loss, kind, tensors: [{name, shape}, ...]}
    | float64 little-endian tensors concatenated in manifest order
"""
import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import BadMagic, ShapeMismatch, SingleClassTrainingSet, TruncatedPayload, VersionUnsupported
from ..seeding import sub_seed
from .augment import augment as augment_patch
from .network import build_network, gradients, loss_and_accuracy

NDXW_MAGIC = b"NDXW"
NDXW_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    augment: bool = True
    heldout_fraction: float = 0.2
    n_best: int = 3

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class Snapshot:
    epoch: int
    loss: float
    weights: dict
    kind: str = "best"


@dataclass
class CheckpointSet:
    final: Snapshot
    best: list = field(default_factory=list)  # ascending held-out loss
    history: list = field(default_factory=list)  # (epoch, train_loss, heldout_loss, heldout_acc)

    def __iter__(self):
        yield self.final
        yield from self.best

    def __len__(self):
        return 1 + len(self.best)


def stratified_holdout(labels, fraction, rng):
    """Per-class random split; at least one training item per class."""
    labels = np.asarray(labels)
    train, hold = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_hold = min(int(round(fraction * len(idx))), len(idx) - 1)
        hold.extend(idx[:n_hold].tolist())
        train.extend(idx[n_hold:].tolist())
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(hold, dtype=np.int64))


def train(model, x, labels, config=None, log=None):
    """Train ``model`` in place and return its :class:`CheckpointSet`.

    Snapshots are taken whenever the held-out loss reaches a new minimum; the
    last ``n_best`` of them (the lowest losses) are kept.
    """
    config = config or TrainConfig()
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(x) != len(labels):
        raise ShapeMismatch("patches and labels differ in length")
    if len(x) < 2 or len(np.unique(labels)) < 2:
        raise SingleClassTrainingSet("training needs at least one item of each class")

    split_rng = np.random.default_rng(sub_seed(config.seed, "split"))
    rng = np.random.default_rng(sub_seed(config.seed, "augment"))
    tr, ho = stratified_holdout(labels, config.heldout_fraction, split_rng)
    if len(ho) == 0:
        ho = tr
    x_tr, y_tr = x[tr], labels[tr]
    x_ho, y_ho = x[ho], labels[ho]

    velocity = {name: np.zeros_like(arr) for name, arr in model.parameters()}
    best = []
    best_loss = np.inf
    history = []
    model.mode = "train"
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x_tr))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s : s + config.batch_size]
            batch = x_tr[idx]
            if config.augment:
                batch = np.stack([augment_patch(p, rng) for p in batch])
            grads, loss = gradients(model, batch, y_tr[idx], train=True, rng=rng)
            total += loss * len(idx)
            for i, layer in enumerate(model.layers):
                for k in layer.params:
                    name = f"{i}.{k}"
                    v = velocity[name]
                    v *= config.momentum
                    v -= config.learning_rate * grads[name]
                    layer.params[k] = layer.params[k] + v
        model.mode = "eval"
        ho_loss, ho_acc = loss_and_accuracy(model, x_ho, y_ho, config.batch_size)
        model.mode = "train"
        history.append((epoch, total / len(x_tr), ho_loss, ho_acc))
        if log is not None:
            log(epoch, total / len(x_tr), ho_loss, ho_acc)
        if ho_loss < best_loss:
            best_loss = ho_loss
            best.append(Snapshot(epoch, float(ho_loss), model.get_weights()))
            best = best[-config.n_best :]
    model.mode = "eval"
    final = Snapshot(config.epochs, float(history[-1][2]), model.get_weights(), kind="final")
    return CheckpointSet(final, sorted(best, key=lambda s: s.loss), history)


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "heldout_loss", "heldout_acc"])
        for epoch, tl, hl, ha in history:
            w.writerow([epoch, repr(float(tl)), repr(float(hl)), repr(float(ha))])


# ------------------------------------------------------------------ NDXW io


def weights_bytes(model, snapshot=None):
    weights = snapshot.weights if snapshot is not None else model.get_weights()
    names = [name for name, _ in model.parameters()]
    header = {
        "arch": model.arch,
        "input_shape": list(model.input_shape),
        "epoch": None if snapshot is None else snapshot.epoch,
        "loss": None if snapshot is None else snapshot.loss,
        "kind": None if snapshot is None else snapshot.kind,
        "tensors": [{"name": n, "shape": list(weights[n].shape)} for n in names],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(weights[n], dtype="<f8").tobytes() for n in names)
    return NDXW_MAGIC + struct.pack("<II", NDXW_VERSION, len(hbytes)) + hbytes + payload


def write_weights(model, path, snapshot=None):
    data = weights_bytes(model, snapshot)
    Path(path).write_bytes(data)
    return len(data)


def parse_weights(data):
    """Return ``(header, {name: array})`` from NDXW bytes."""
    data = bytes(data)
    if data[:4] != NDXW_MAGIC:
        raise BadMagic(f"expected NDXW magic, got {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedPayload("file ends inside the fixed header")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != NDXW_VERSION:
        raise VersionUnsupported(f"NDXW version {version} not supported")
    if len(data) < 12 + hlen:
        raise TruncatedPayload("file ends inside the JSON header")
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    weights = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        end = offset + 8 * n
        if end > len(data):
            raise TruncatedPayload(f"tensor {t['name']} runs past end of file")
        weights[t["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(t["shape"]).astype(np.float64)
        offset = end
    return header, weights


def read_weights(path):
    """Load an NDXW file into a freshly built network of the recorded architecture."""
    header, weights = parse_weights(Path(path).read_bytes())
    model = build_network(header["arch"], seed=0)
    model.set_weights(weights)
    return model, header


def save_checkpoints(model, checkpoints, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "final.ndxw"]
    write_weights(model, paths[0], checkpoints.final)
    for rank, snap in enumerate(checkpoints.best, start=1):
        paths.append(out_dir / f"best_{rank}.ndxw")
        write_weights(model, paths[-1], snap)
    write_history_csv(checkpoints.history, out_dir / "training_log.csv")
    return paths


def config_dict(config):
    return asdict(config)
