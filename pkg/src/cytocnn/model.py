"""Fixed convolutional stack: three strided conv+pool stages, a 128-unit dense
layer, and a softmax head, assembled over 100x100x3 inputs.

forward returns pre-softmax logits; the softmax lives in the loss
(ops.softmax_xent) and in predict.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from . import ops

INPUT_SHAPE = (100, 100, 3)


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | maxpool | flatten | dense
    units: int = 0  # filters for conv, output width for dense
    kernel: tuple[int, int] | None = None
    stride: tuple[int, int] | None = None
    activation: str = "none"  # relu | softmax | none


def default_layers(num_classes: int) -> tuple[LayerSpec, ...]:
    """The nine-layer stack: conv64/s2, pool, conv128/s2, pool, conv256/s2, pool,
    flatten, dense128, dense head."""
    return (
        LayerSpec("conv", 64, kernel=(3, 3), stride=(2, 2), activation="relu"),
        LayerSpec("maxpool", kernel=(2, 2), stride=(2, 2)),
        LayerSpec("conv", 128, kernel=(3, 3), stride=(2, 2), activation="relu"),
        LayerSpec("maxpool", kernel=(2, 2), stride=(2, 2)),
        LayerSpec("conv", 256, kernel=(3, 3), stride=(2, 2), activation="relu"),
        LayerSpec("maxpool", kernel=(2, 2), stride=(2, 2)),
        LayerSpec("flatten"),
        LayerSpec("dense", 128, activation="relu"),
        LayerSpec("dense", num_classes, activation="softmax"),
    )


@dataclass
class Model:
    layers: tuple[LayerSpec, ...]
    params: dict[str, np.ndarray]
    num_classes: int
    input_shape: tuple[int, int, int] = INPUT_SHAPE

    def param_names(self) -> list[str]:
        return list(self.params.keys())


@dataclass
class ForwardCache:
    """Single-use per-layer state captured by forward for the backward pass."""

    model_id: int
    records: list[dict] = field(default_factory=list)
    output_shapes: list[tuple[int, ...]] = field(default_factory=list)
    logits_shape: tuple[int, int] = (0, 0)
    consumed: bool = False


def _layer_param_names(layers: tuple[LayerSpec, ...]) -> list[str | None]:
    """Parameter-store prefix per layer: conv1..convN, dense1.., last dense = 'out'."""
    names: list[str | None] = []
    conv_i = 0
    dense_positions = [i for i, l in enumerate(layers) if l.kind == "dense"]
    dense_i = 0
    for i, layer in enumerate(layers):
        if layer.kind == "conv":
            conv_i += 1
            names.append(f"conv{conv_i}")
        elif layer.kind == "dense":
            dense_i += 1
            if i == dense_positions[-1]:
                names.append("out")
            else:
                names.append(f"dense{dense_i}")
        else:
            names.append(None)
    return names


def init_model(layers: tuple[LayerSpec, ...], input_shape: tuple[int, int, int],
               num_classes: int, seed: int) -> Model:
    """Walk the stack, shape-check it, and initialize parameters.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    names = _layer_param_names(layers)
    h, w, c = input_shape
    flat: int | None = None
    for layer, name in zip(layers, names):
        if layer.kind == "conv":
            kh, kw = layer.kernel
            sh, sw = layer.stride
            if h < kh or w < kw:
                raise ShapeError(f"{name}: window ({kh},{kw}) larger than input ({h},{w})")
            fan_in = kh * kw * c
            fan_out = kh * kw * layer.units
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[f"{name}/kernels"] = rng.uniform(-bound, bound, size=(kh, kw, c, layer.units))
            params[f"{name}/bias"] = np.zeros(layer.units)
            h, w, c = (h - kh) // sh + 1, (w - kw) // sw + 1, layer.units
        elif layer.kind == "maxpool":
            kh, kw = layer.kernel
            sh, sw = layer.stride
            if h < kh or w < kw:
                raise ShapeError(f"pool window ({kh},{kw}) larger than input ({h},{w})")
            h, w = (h - kh) // sh + 1, (w - kw) // sw + 1
        elif layer.kind == "flatten":
            flat = h * w * c
        elif layer.kind == "dense":
            if flat is None:
                raise ValidationError("dense layer requires a preceding flatten")
            fan_in, fan_out = flat, layer.units
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[f"{name}/weights"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params[f"{name}/bias"] = np.zeros(fan_out)
            flat = layer.units
        else:
            raise ValidationError(f"unknown layer kind {layer.kind!r}")
    if flat != num_classes:
        raise ValidationError(f"stack ends with width {flat}, expected {num_classes} classes")
    return Model(layers=tuple(layers), params=params, num_classes=num_classes,
                 input_shape=input_shape)


def build_model(num_classes: int, seed: int) -> Model:
    """The standard stack over 100x100x3 inputs with a num_classes softmax head."""
    if num_classes < 2:
        raise ValidationError(f"num_classes must be >= 2, got {num_classes}")
    return init_model(default_layers(num_classes), INPUT_SHAPE, num_classes, seed)


def param_count(model: Model) -> int:
    return int(sum(a.size for a in model.params.values()))


def per_layer_param_counts(model: Model) -> dict[str, int]:
    counts: dict[str, int] = {}
    for key, arr in model.params.items():
        prefix = key.split("/")[0]
        counts[prefix] = counts.get(prefix, 0) + arr.size
    return counts


def forward(model: Model, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the stack; returns pre-softmax logits plus the cache for backward."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != tuple(model.input_shape):
        raise ShapeError(
            f"batch shape {batch.shape} does not match (n, {model.input_shape[0]}, "
            f"{model.input_shape[1]}, {model.input_shape[2]})")

    cache = ForwardCache(model_id=id(model))
    names = _layer_param_names(model.layers)
    x = batch
    for layer, name in zip(model.layers, names):
        rec: dict = {"kind": layer.kind, "name": name}
        if layer.kind == "conv":
            p = ops.ConvParams(model.params[f"{name}/kernels"], model.params[f"{name}/bias"],
                               stride=layer.stride)
            rec["input"] = x
            rec["conv_params"] = p
            x = ops.conv2d(x, p)
        elif layer.kind == "maxpool":
            x, switches = ops.maxpool2d(x, layer.kernel, layer.stride)
            rec["switches"] = switches
        elif layer.kind == "flatten":
            rec["input_shape"] = x.shape
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == "dense":
            rec["input"] = x
            x = ops.dense(x, model.params[f"{name}/weights"], model.params[f"{name}/bias"])
        if layer.activation == "relu":
            x, mask = ops.relu(x)
            rec["relu_mask"] = mask
        # softmax activation is intentionally not applied here
        cache.records.append(rec)
        cache.output_shapes.append(x.shape)
    cache.logits_shape = x.shape
    return x, cache


def backward(model: Model, cache: ForwardCache, d_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradient of sum(d_logits * logits) for every parameter tensor."""
    if cache.model_id != id(model):
        raise ValidationError("cache was produced by a different model")
    if cache.consumed:
        raise ValidationError("cache already consumed; rerun forward before backward")
    if len(cache.records) != len(model.layers):
        raise ValidationError("cache layer count does not match model")
    d = np.asarray(d_logits, dtype=np.float64)
    if d.shape != cache.logits_shape:
        raise ShapeError(f"d_logits shape {d.shape} does not match logits {cache.logits_shape}")
    cache.consumed = True

    grads: dict[str, np.ndarray] = {}
    for layer, rec in zip(reversed(model.layers), reversed(cache.records)):
        if layer.activation == "relu":
            d = ops.relu_grad(rec["relu_mask"], d)
        if layer.kind == "conv":
            name = rec["name"]
            d, grads[f"{name}/kernels"], grads[f"{name}/bias"] = ops.conv2d_grad(
                rec["input"], rec["conv_params"], d)
        elif layer.kind == "maxpool":
            d = ops.maxpool2d_grad(rec["switches"], d)
        elif layer.kind == "flatten":
            d = d.reshape(rec["input_shape"])
        elif layer.kind == "dense":
            name = rec["name"]
            d, grads[f"{name}/weights"], grads[f"{name}/bias"] = ops.dense_grad(
                rec["input"], model.params[f"{name}/weights"], d)
    return {k: grads[k] for k in model.params}  # mirror params order


def predict(model: Model, images: np.ndarray) -> list[tuple[int, np.ndarray]]:
    """Per image: (argmax label with lowest-index tie-break, softmax probabilities)."""
    logits, _ = forward(model, images)
    probs = ops.softmax(logits)
    labels = probs.argmax(axis=1)
    return [(int(l), probs[i]) for i, l in enumerate(labels)]
