"""Concrete classifiers: DNN, CNN, and the dual-branch fusion network.

Default stacks (all widths configurable through :class:`ModelConfig`):

* dnn:        flatten -> dense(512) -> relu -> dense(256) -> relu
              -> dense(K) -> softmax
* cnn:        conv(16,3x3,pad 1) -> relu -> pool(2) -> conv(32,3x3,pad 1)
              -> relu -> pool(2) -> flatten -> dense(128) -> relu
              -> dropout -> dense(K) -> softmax
* fusionnet:  the CNN trunk up to dense(128) -> relu as the image branch;
              dense(128) -> relu -> dense(64) -> relu over the texture
              histogram as the texture branch; concat(192) -> dense(64)
              -> relu -> dropout -> dense(K) -> softmax as the head.

``forward`` always returns class probabilities ([N, K] rows summing
to 1). A model is single-owner while training and immutable/shareable in
eval mode. The mode is chosen per call via the ``train`` flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .nn import SGDConfig
from .seeding import stream
from .tensor import Conv2DSpec, softmax

MODEL_KINDS = ("dnn", "cnn", "fusionnet")


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    input_image_shape: tuple[int, int, int] = (1, 64, 64)
    texture_dim: int = 256
    num_classes: int = 4
    dnn_hidden: tuple[int, ...] = (512, 256)
    cnn_filters: tuple[int, ...] = (16, 32)
    cnn_hidden: int = 128
    fusion_texture_hidden: tuple[int, ...] = (128, 64)
    fusion_head_hidden: int = 64
    dropout_rate: float = 0.5
    pooling: str = "max"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.input_image_shape) != 3 or any(v < 1 for v in self.input_image_shape):
            raise ValueError(f"bad input_image_shape {self.input_image_shape}")
        if self.kind == "fusionnet" and self.texture_dim < 1:
            raise ValueError("fusionnet requires a positive texture_dim")
        if self.pooling not in ("max", "avg"):
            raise ValueError(f"pooling must be 'max' or 'avg', got {self.pooling!r}")


@dataclass
class ArrayDataset:
    """Stacked arrays ready for training: images [N,C,H,W], optional
    textures [N,D], integer labels [N]."""

    images: np.ndarray
    textures: np.ndarray | None
    labels: np.ndarray

    def __post_init__(self):
        n = self.images.shape[0]
        if self.labels.shape != (n,):
            raise ValueError(f"labels shape {self.labels.shape} != ({n},)")
        if self.textures is not None and self.textures.shape[0] != n:
            raise ValueError(f"textures rows {self.textures.shape[0]} != {n}")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, indices) -> "ArrayDataset":
        idx = np.asarray(indices)
        tex = None if self.textures is None else self.textures[idx]
        return ArrayDataset(self.images[idx], tex, self.labels[idx])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float | None = None
    test_acc: float | None = None


class History:
    """Per-epoch training/testing curves, exportable as CSV."""

    HEADER = "epoch,train_loss,train_acc,test_loss,test_acc"

    def __init__(self):
        self.rows: list[EpochRecord] = []

    def append(self, row: EpochRecord) -> None:
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        def fmt(v):
            return "" if v is None else repr(float(v))

        lines = [self.HEADER]
        for r in self.rows:
            lines.append(
                f"{r.epoch},{fmt(r.train_loss)},{fmt(r.train_acc)},{fmt(r.test_loss)},{fmt(r.test_acc)}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


class Model:
    """Layer graph: an image trunk, an optional texture branch joined by a
    concat, and head layers. For dnn/cnn the trunk is the whole network."""

    def __init__(self, config: ModelConfig, image_layers, texture_layers=None, concat=None, head_layers=None):
        self.config = config
        self.kind = config.kind
        self.image_layers = list(image_layers)
        self.texture_layers = list(texture_layers or [])
        self.concat = concat
        self.head_layers = list(head_layers or [])
        if (self.kind == "fusionnet") != (concat is not None):
            raise ValueError("fusionnet models and only fusionnet models carry a concat layer")
        self._probs = None

    # -- structure ---------------------------------------------------------

    def layers_flat(self) -> list[nn.Layer]:
        layers = list(self.image_layers) + list(self.texture_layers)
        if self.concat is not None:
            layers.append(self.concat)
        return layers + list(self.head_layers)

    def _named_layers(self):
        for i, layer in enumerate(self.image_layers):
            yield f"image.{i}", layer
        for i, layer in enumerate(self.texture_layers):
            yield f"texture.{i}", layer
        for i, layer in enumerate(self.head_layers):
            yield f"head.{i}", layer

    def parameter_items(self) -> list[tuple[str, np.ndarray]]:
        items = []
        for prefix, layer in self._named_layers():
            for name, arr in layer.params().items():
                items.append((f"{prefix}.{name}", arr))
        return items

    def parameter_count(self) -> int:
        return sum(arr.size for _, arr in self.parameter_items())

    def initialize(self, rng: np.random.Generator) -> None:
        for layer in self.layers_flat():
            layer.initialize(rng)

    # -- forward / backward -------------------------------------------------

    def forward(self, images, textures=None, train: bool = False, rng: np.random.Generator | None = None):
        """Class probabilities for a batch; softmax applied to the logits."""
        if self.kind == "fusionnet":
            if textures is None:
                raise ValueError("fusionnet forward requires texture features")
        elif textures is not None:
            raise ValueError(f"{self.kind} forward takes no texture input")
        x = np.asarray(images, dtype=np.float64)
        for layer in self.image_layers:
            x = layer.forward(x, train=train, rng=rng)
        if self.kind == "fusionnet":
            t = np.asarray(textures, dtype=np.float64)
            if t.shape[0] != x.shape[0]:
                raise ValueError(f"texture batch {t.shape[0]} != image batch {x.shape[0]}")
            for layer in self.texture_layers:
                t = layer.forward(t, train=train, rng=rng)
            x = self.concat.forward((x, t), train=train, rng=rng)
        for layer in self.head_layers:
            x = layer.forward(x, train=train, rng=rng)
        probs = softmax(x)
        if train:
            self._probs = probs
        return probs

    def backprop(self, dlogits) -> dict[str, np.ndarray]:
        """Walk the graph in reverse from the logit gradient; returns the
        gradient set keyed like ``parameter_items``."""
        g = dlogits
        for layer in reversed(self.head_layers):
            g = layer.backward(g)
        if self.kind == "fusionnet":
            g, gt = self.concat.backward(g)
            for layer in reversed(self.texture_layers):
                gt = layer.backward(gt)
        for layer in reversed(self.image_layers):
            g = layer.backward(g)
        grads = {}
        for prefix, layer in self._named_layers():
            for name, arr in layer.grads().items():
                grads[f"{prefix}.{name}"] = arr
        return grads


# -- builders ---------------------------------------------------------------


def _cnn_trunk(config: ModelConfig):
    """conv/relu/pool twice, then flatten: shared by cnn and fusionnet."""
    c, h, w = config.input_image_shape
    pool_cls = nn.MaxPool2D if config.pooling == "max" else nn.AvgPool2D
    layers = []
    in_c = c
    for filters in config.cnn_filters:
        layers.append(nn.Conv2D(Conv2DSpec(in_c, filters, 3, 3, stride=1, padding=1)))
        layers.append(nn.ReLU())
        if h < 2 or w < 2:
            raise ValueError(
                f"input {config.input_image_shape} too small for {len(config.cnn_filters)} pooling stages"
            )
        layers.append(pool_cls(2, 2))
        h, w = (h - 2) // 2 + 1, (w - 2) // 2 + 1
        in_c = filters
    layers.append(nn.Flatten((in_c, h, w)))
    return layers, in_c * h * w


def build_dnn(config: ModelConfig) -> Model:
    if config.kind != "dnn":
        raise ValueError(f"build_dnn requires kind 'dnn', got {config.kind!r}")
    c, h, w = config.input_image_shape
    layers = [nn.Flatten((c, h, w))]
    in_dim = c * h * w
    for width in config.dnn_hidden:
        layers.append(nn.Dense(in_dim, width))
        layers.append(nn.ReLU())
        in_dim = width
    layers.append(nn.Dense(in_dim, config.num_classes))
    model = Model(config, layers)
    model.initialize(stream(config.seed, "init"))
    return model


def build_cnn(config: ModelConfig) -> Model:
    if config.kind != "cnn":
        raise ValueError(f"build_cnn requires kind 'cnn', got {config.kind!r}")
    layers, flat = _cnn_trunk(config)
    layers.append(nn.Dense(flat, config.cnn_hidden))
    layers.append(nn.ReLU())
    layers.append(nn.Dropout(config.dropout_rate))
    layers.append(nn.Dense(config.cnn_hidden, config.num_classes))
    model = Model(config, layers)
    model.initialize(stream(config.seed, "init"))
    return model


def build_fusionnet(config: ModelConfig) -> Model:
    if config.kind != "fusionnet":
        raise ValueError(f"build_fusionnet requires kind 'fusionnet', got {config.kind!r}")
    if config.texture_dim < 1:
        raise ValueError("fusionnet requires texture_dim >= 1")
    image_layers, flat = _cnn_trunk(config)
    image_layers.append(nn.Dense(flat, config.cnn_hidden))
    image_layers.append(nn.ReLU())

    texture_layers = []
    in_dim = config.texture_dim
    for width in config.fusion_texture_hidden:
        texture_layers.append(nn.Dense(in_dim, width))
        texture_layers.append(nn.ReLU())
        in_dim = width

    concat = nn.Concat(config.cnn_hidden, in_dim)
    head = [
        nn.Dense(config.cnn_hidden + in_dim, config.fusion_head_hidden),
        nn.ReLU(),
        nn.Dropout(config.dropout_rate),
        nn.Dense(config.fusion_head_hidden, config.num_classes),
    ]
    model = Model(config, image_layers, texture_layers, concat, head)
    model.initialize(stream(config.seed, "init"))
    return model


def build_model(config: ModelConfig) -> Model:
    return {"dnn": build_dnn, "cnn": build_cnn, "fusionnet": build_fusionnet}[config.kind](config)


# -- training ----------------------------------------------------------------


def evaluate_loss_acc(model: Model, data: ArrayDataset, batch_size: int = 256) -> tuple[float, float]:
    """Eval-mode mean cross-entropy and accuracy over a dataset."""
    n = len(data)
    if n == 0:
        raise ValueError("cannot evaluate an empty dataset")
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        tex = data.textures[sl] if model.kind == "fusionnet" else None
        probs = model.forward(data.images[sl], tex, train=False)
        labels = data.labels[sl]
        total_loss += nn.cross_entropy(probs, labels) * (sl.stop - sl.start)
        correct += int((probs.argmax(axis=1) == labels).sum())
    return total_loss / n, correct / n


def train(
    model: Model,
    data: ArrayDataset,
    config: SGDConfig,
    eval_data: ArrayDataset | None = None,
    on_epoch=None,
) -> tuple[Model, History]:
    """Epoch loop: seeded shuffle, mini-batches, backward + SGD step.

    Train loss/accuracy are accumulated from the train-mode forward passes
    (dropout active); test curves come from one eval-mode pass per epoch
    on ``eval_data`` when supplied. The shuffle and dropout streams both
    derive from ``config.seed``, so identical seed + data + config give
    bitwise-identical parameters and history.
    """
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if model.kind == "fusionnet" and data.textures is None:
        raise ValueError("fusionnet training data must include textures")
    shuffle_rng = stream(config.seed, "shuffle")
    dropout_rng = stream(config.seed, "dropout")
    history = History()
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            images = data.images[idx]
            textures = data.textures[idx] if model.kind == "fusionnet" else None
            labels = data.labels[idx]
            loss, grads = nn.backward(model, (images, textures, labels), rng=dropout_rng)
            nn.sgd_step(model, grads, config)
            total_loss += loss * len(idx)
            correct += int((model._probs.argmax(axis=1) == labels).sum())
        record = EpochRecord(epoch=epoch, train_loss=total_loss / n, train_acc=correct / n)
        if eval_data is not None and len(eval_data) > 0:
            record.test_loss, record.test_acc = evaluate_loss_acc(model, eval_data)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return model, history


def config_for_kind(kind: str, **overrides) -> ModelConfig:
    """Convenience constructor used by the CLI and tests."""
    return replace(ModelConfig(kind=kind), **overrides)
