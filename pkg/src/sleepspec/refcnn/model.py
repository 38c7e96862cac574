"""Parameters, forward pass, and exact backpropagation for the built-in CNN."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sleepspec import kernels, tensorfile
from sleepspec.refcnn.arch import (
    CONV,
    DROPOUT,
    FC_RELU,
    FC_SOFTMAX,
    POOL,
    InvalidSpec,
    LayerSpec,
    layer_shapes,
    parse_arch,
)


class ShapeMismatch(ValueError):
    pass


@dataclass
class ModelParams:
    """Per-layer weights/biases aligned with the parsed layer list."""

    arch: str
    layers: tuple[LayerSpec, ...]
    input_hw: tuple[int, int]
    weights: list[np.ndarray | None]
    biases: list[np.ndarray | None]
    seed: int
    dtype: np.dtype

    @property
    def num_classes(self) -> int:
        return self.layers[-1].width

    def trainable(self) -> list[int]:
        return [i for i, w in enumerate(self.weights) if w is not None]

    def copy(self) -> "ModelParams":
        return ModelParams(
            arch=self.arch,
            layers=self.layers,
            input_hw=self.input_hw,
            weights=[None if w is None else w.copy() for w in self.weights],
            biases=[None if b is None else b.copy() for b in self.biases],
            seed=self.seed,
            dtype=self.dtype,
        )

    def astype(self, dtype) -> "ModelParams":
        dtype = np.dtype(dtype)
        out = self.copy()
        out.dtype = dtype
        out.weights = [None if w is None else w.astype(dtype) for w in out.weights]
        out.biases = [None if b is None else b.astype(dtype) for b in out.biases]
        return out


def init_xavier(
    arch: str,
    input_hw: tuple[int, int] = (224, 224),
    seed: int = 0,
    dropout_rate: float = 0.5,
    dtype=np.float32,
    in_channels: int = 3,
) -> ModelParams:
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    layers = parse_arch(arch, dropout_rate=dropout_rate)
    layer_shapes(layers, input_hw, in_channels)  # validates the chain
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    weights: list[np.ndarray | None] = []
    biases: list[np.ndarray | None] = []
    c, (h, w) = in_channels, input_hw
    flat = None
    for spec in layers:
        if spec.kind == CONV:
            fan_in, fan_out = c * 9, spec.width * 9
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(
                rng.uniform(-bound, bound, size=(spec.width, c, 3, 3)).astype(dtype)
            )
            biases.append(np.zeros(spec.width, dtype=dtype))
            c = spec.width
        elif spec.kind == POOL:
            weights.append(None)
            biases.append(None)
            h, w = h // 2, w // 2
        elif spec.kind in (FC_RELU, FC_SOFTMAX):
            if flat is None:
                flat = c * h * w
            fan_in, fan_out = flat, spec.width
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(
                rng.uniform(-bound, bound, size=(spec.width, flat)).astype(dtype)
            )
            biases.append(np.zeros(spec.width, dtype=dtype))
            flat = spec.width
        else:  # dropout
            weights.append(None)
            biases.append(None)
    return ModelParams(
        arch=arch,
        layers=layers,
        input_hw=input_hw,
        weights=weights,
        biases=biases,
        seed=seed,
        dtype=dtype,
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardCache:
    """Intermediate activations needed by the backward pass."""

    x_input: np.ndarray  # NCHW as fed to the first layer
    layer_inputs: list
    pool_indices: dict
    dropout_masks: dict
    flatten_at: int | None
    flatten_shape: tuple[int, ...] | None
    probs: np.ndarray
    train_mode: bool


def _to_nchw(images: np.ndarray, dtype: np.dtype) -> np.ndarray:
    if images.ndim != 4 or images.shape[3] != 3:
        raise ShapeMismatch(f"expected (n, h, w, 3) images, got {images.shape}")
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=dtype)


def forward(
    params: ModelParams,
    images: np.ndarray,
    train_mode: bool = False,
    dropout_seed: int = 0,
) -> tuple[np.ndarray, ForwardCache]:
    """Class probabilities for a batch of (n, h, w, 3) unit-interval images.

    Dropout is active only in train mode, with inverted scaling, and is
    deterministic given `dropout_seed`.
    """
    if images.shape[1:3] != params.input_hw:
        raise ShapeMismatch(
            f"images are {images.shape[1:3]}, model expects {params.input_hw}"
        )
    x = _to_nchw(images, params.dtype)
    cache = ForwardCache(
        x_input=x,
        layer_inputs=[],
        pool_indices={},
        dropout_masks={},
        flatten_at=None,
        flatten_shape=None,
        probs=np.empty(0),
        train_mode=train_mode,
    )
    rng = np.random.default_rng(dropout_seed)
    h = x
    for i, spec in enumerate(params.layers):
        if spec.kind in (FC_RELU, FC_SOFTMAX) and h.ndim == 4:
            cache.flatten_at = i
            cache.flatten_shape = h.shape
            h = np.ascontiguousarray(h.reshape(h.shape[0], -1))
        cache.layer_inputs.append(h)
        if spec.kind == CONV:
            h = kernels.conv3x3_forward(h, params.weights[i], params.biases[i])
            np.maximum(h, 0, out=h)
        elif spec.kind == POOL:
            h, idx = kernels.maxpool2x2_forward(h)
            cache.pool_indices[i] = idx
        elif spec.kind == FC_RELU:
            h = h @ params.weights[i].T + params.biases[i]
            np.maximum(h, 0, out=h)
        elif spec.kind == DROPOUT:
            if train_mode:
                keep = 1.0 - spec.dropout_rate
                mask = (rng.random(h.shape) < keep).astype(params.dtype) / keep
                cache.dropout_masks[i] = mask
                h = h * mask
        else:  # FC_SOFTMAX
            logits = h @ params.weights[i].T + params.biases[i]
            h = _softmax(logits.astype(np.float64)).astype(params.dtype)
    cache.probs = h
    return h, cache


def backward(
    params: ModelParams,
    cache: ForwardCache,
    labels: np.ndarray,
) -> tuple[float, list, np.ndarray]:
    """Cross-entropy loss and exact gradients.

    Returns (loss, per-layer [(dW, db) | None], input-pixel gradients in the
    original (n, h, w, 3) layout). The loss is the batch mean of
    -ln p[label]; gradients are of that mean.
    """
    probs = cache.probs.astype(np.float64)
    n = probs.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels shape {labels.shape} does not match batch {n}")
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))

    grads: list = [None] * len(params.layers)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    delta = ((probs - onehot) / n).astype(params.dtype)

    for i in range(len(params.layers) - 1, -1, -1):
        spec = params.layers[i]
        h_in = cache.layer_inputs[i]
        if spec.kind == FC_SOFTMAX:
            grads[i] = (delta.T @ h_in, delta.sum(axis=0))
            delta = delta @ params.weights[i]
        elif spec.kind == DROPOUT:
            if i in cache.dropout_masks:
                delta = delta * cache.dropout_masks[i]
        elif spec.kind == FC_RELU:
            post = cache.layer_inputs[i + 1]
            delta = delta * (post.reshape(delta.shape) > 0)
            grads[i] = (delta.T @ h_in, delta.sum(axis=0))
            delta = delta @ params.weights[i]
        elif spec.kind == POOL:
            h, w = h_in.shape[2], h_in.shape[3]
            delta = kernels.maxpool2x2_backward(
                np.ascontiguousarray(delta), cache.pool_indices[i], h, w
            )
        else:  # CONV
            post = cache.layer_inputs[i + 1]
            delta = np.where(post.reshape(delta.shape) > 0, delta, 0).astype(params.dtype)
            dx, dw, db = kernels.conv3x3_backward(
                h_in, params.weights[i], np.ascontiguousarray(delta)
            )
            grads[i] = (dw, db)
            delta = dx
        if cache.flatten_at == i:
            delta = delta.reshape(cache.flatten_shape)
    input_grads = np.ascontiguousarray(delta.transpose(0, 2, 3, 1))
    return loss, grads, input_grads


def predict_probs(
    params: ModelParams, images: np.ndarray, batch_size: int = 64
) -> np.ndarray:
    """Eval-mode probabilities, batched; deterministic (dropout off)."""
    chunks = []
    for start in range(0, len(images), batch_size):
        probs, _ = forward(params, images[start : start + batch_size])
        chunks.append(np.asarray(probs, dtype=np.float64))
    return np.concatenate(chunks, axis=0)


# ---------------------------------------------------------------------------
# Checkpoints: JSON header plus one TensorFile blob per parameter


def save_checkpoint(params: ModelParams, out_dir: Path | str, step_count: int = 0) -> None:
    out_dir = Path(out_dir)
    blob_dir = out_dir / "params"
    blob_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i in params.trainable():
        kind = params.layers[i].kind
        for suffix, tensor in (("w", params.weights[i]), ("b", params.biases[i])):
            name = f"{i:03d}_{kind}_{suffix}"
            tensorfile.write_tensor(blob_dir / f"{name}.tnsr", tensor.astype(np.float32))
            names.append(name)
    header = {
        "arch": params.arch,
        "input_hw": list(params.input_hw),
        "seed": params.seed,
        "step_count": step_count,
        "dropout_rate": max(
            (l.dropout_rate for l in params.layers if l.kind == DROPOUT), default=0.0
        ),
        "tensors": names,
    }
    with open(out_dir / "params.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)


def load_checkpoint(model_dir: Path | str) -> ModelParams:
    model_dir = Path(model_dir)
    with open(model_dir / "params.json") as fh:
        header = json.load(fh)
    params = init_xavier(
        header["arch"],
        input_hw=tuple(header["input_hw"]),
        seed=header["seed"],
        dropout_rate=header["dropout_rate"],
    )
    for name in header["tensors"]:
        i, suffix = int(name.split("_")[0]), name[-1]
        tensor = tensorfile.read_tensor(model_dir / "params" / f"{name}.tnsr")
        if suffix == "w":
            if tensor.shape != params.weights[i].shape:
                raise InvalidSpec(f"checkpoint tensor {name} has shape {tensor.shape}")
            params.weights[i] = tensor
        else:
            params.biases[i] = tensor
    return params
