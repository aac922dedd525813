"""Binary model checkpoints with exact round-trip.

Format (all integers little-endian):

    magic            4 bytes, b"FUTI"
    version          u32 (currently 1)
    model-kind tag   u8 length + ascii ("dnn" | "cnn" | "fusionnet")
    layer count      u32
    per layer:
        kind tag         u8 length + ascii
        hyperparameters  u32 count, then count f64 values
        parameter count  u32
        per parameter:
            name         u8 length + ascii ("weights" | "bias")
            ndim         u32, then ndim u32 dims
            data         product(dims) f64, IEEE-754 little-endian, C order

Layers are stored flat in forward order: image branch, texture branch,
concat, head. The concat layer's hyperparameters are
(image_branch_len, texture_branch_len, image_width, texture_width), which
is what lets the flat list be split back into branches on load. Parameter
data is float64 both in memory and on disk, so write -> read -> write is
bitwise idempotent.
"""

from __future__ import annotations

import struct

import numpy as np

from . import nn
from .models import Model, ModelConfig
from .tensor import Conv2DSpec

MAGIC = b"FUTI"
VERSION = 1


class CheckpointError(Exception):
    pass


def _pack_tag(tag: str) -> bytes:
    raw = tag.encode("ascii")
    if len(raw) > 255:
        raise CheckpointError(f"tag too long: {tag!r}")
    return struct.pack("<B", len(raw)) + raw


def _pack_layer(layer: nn.Layer, hyper_override=None) -> bytes:
    out = [_pack_tag(layer.kind)]
    hyper = layer.hyperparams() if hyper_override is None else hyper_override
    out.append(struct.pack("<I", len(hyper)))
    for v in hyper:
        out.append(struct.pack("<d", float(v)))
    params = layer.params()
    out.append(struct.pack("<I", len(params)))
    for name, arr in params.items():
        out.append(_pack_tag(name))
        out.append(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            out.append(struct.pack("<I", d))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def save_checkpoint(model: Model, path) -> None:
    blob = [MAGIC, struct.pack("<I", VERSION), _pack_tag(model.kind)]
    layers = model.layers_flat()
    blob.append(struct.pack("<I", len(layers)))
    for layer in layers:
        if layer.kind == "concat":
            hyper = (
                float(len(model.image_layers)),
                float(len(model.texture_layers)),
                float(layer.left_width),
                float(layer.right_width),
            )
            blob.append(_pack_layer(layer, hyper_override=hyper))
        else:
            blob.append(_pack_layer(layer))
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def tag(self) -> str:
        return self.take(self.u8()).decode("ascii")

    def array(self) -> np.ndarray:
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(count * 8), dtype="<f8").astype(np.float64)
        return data.reshape(shape)


def _build_layer(kind: str, hyper: tuple[float, ...]) -> nn.Layer:
    h = [int(v) for v in hyper]
    if kind == "dense":
        return nn.Dense(h[0], h[1])
    if kind == "conv2d":
        return nn.Conv2D(Conv2DSpec(h[0], h[1], h[2], h[3], stride=h[4], padding=h[5]))
    if kind == "maxpool2d":
        return nn.MaxPool2D(h[0], h[1])
    if kind == "avgpool2d":
        return nn.AvgPool2D(h[0], h[1])
    if kind == "relu":
        return nn.ReLU()
    if kind == "dropout":
        return nn.Dropout(float(hyper[0]))
    if kind == "flatten":
        return nn.Flatten((h[0], h[1], h[2]))
    if kind == "concat":
        return nn.Concat(h[2], h[3])
    raise CheckpointError(f"unknown layer kind {kind!r}")


def _infer_config(kind: str, image_layers, texture_layers, head_layers) -> ModelConfig:
    """Best-effort config reconstruction from the layer stack.

    num_classes and texture_dim are exact; the input image shape is
    recovered from the flatten record by undoing the pooling strides
    (valid for the stride-1, same-padding convs the builders emit).
    """
    all_layers = image_layers + head_layers
    num_classes = next(l.out_dim for l in reversed(all_layers) if l.kind == "dense")
    texture_dim = 256
    if texture_layers:
        texture_dim = next(l.in_dim for l in texture_layers if l.kind == "dense")
    flatten = next((l for l in image_layers if l.kind == "flatten"), None)
    image_shape = (1, 64, 64)
    if flatten is not None:
        c, h, w = flatten.input_shape
        first_conv = next((l for l in image_layers if l.kind == "conv2d"), None)
        for layer in image_layers:
            if layer.kind in ("maxpool2d", "avgpool2d"):
                h, w = h * layer.stride, w * layer.stride
        image_shape = (first_conv.spec.in_channels if first_conv else c, h, w)
    dropout_rate = next((l.rate for l in all_layers if l.kind == "dropout"), 0.5)
    pooling = "avg" if any(l.kind == "avgpool2d" for l in image_layers) else "max"
    return ModelConfig(
        kind=kind,
        input_image_shape=image_shape,
        texture_dim=texture_dim,
        num_classes=num_classes,
        dropout_rate=dropout_rate,
        pooling=pooling,
    )


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes, not a checkpoint")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    kind = reader.tag()
    n_layers = reader.u32()
    layers = []
    concat_hyper = None
    for _ in range(n_layers):
        layer_kind = reader.tag()
        hyper = tuple(reader.f64() for _ in range(reader.u32()))
        layer = _build_layer(layer_kind, hyper)
        if layer_kind == "concat":
            concat_hyper = hyper
        n_params = reader.u32()
        for _ in range(n_params):
            name = reader.tag()
            arr = reader.array()
            current = layer.params().get(name)
            if current is None or current.shape != arr.shape:
                raise CheckpointError(
                    f"{path}: parameter {name!r} shape {arr.shape} does not fit layer {layer_kind!r}"
                )
            setattr(layer, name, arr)
        layers.append(layer)
    if reader.pos != len(reader.buf):
        raise CheckpointError(f"{path}: {len(reader.buf) - reader.pos} trailing bytes")

    if kind == "fusionnet":
        if concat_hyper is None:
            raise CheckpointError(f"{path}: fusionnet checkpoint has no concat layer")
        img_len, tex_len = int(concat_hyper[0]), int(concat_hyper[1])
        image_layers = layers[:img_len]
        texture_layers = layers[img_len : img_len + tex_len]
        concat = layers[img_len + tex_len]
        head_layers = layers[img_len + tex_len + 1 :]
    else:
        if concat_hyper is not None:
            raise CheckpointError(f"{path}: {kind} checkpoint unexpectedly has a concat layer")
        image_layers, texture_layers, concat, head_layers = layers, [], None, []

    config = _infer_config(kind, image_layers, texture_layers, head_layers)
    return Model(config, image_layers, texture_layers, concat, head_layers)
