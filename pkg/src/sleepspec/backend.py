"""Classifier backend protocol: descriptors, invocation, and validation.

A backend is a program exposing three subcommands over files:

- ``<exe> train --train M1 --val M2 --out DIR [--config C]``
- ``<exe> predict --model DIR --manifest M --out OUT``
- ``<exe> input-grad --model DIR --manifest M --out OUT``

Training succeeds iff the exit code is 0 and ``DIR/model.meta.json``
exists; predictions are a float32 (n, 5) TensorFile whose row i aligns with
manifest line i; input gradients are float32 (n, h, w, 3). The built-in
backend runs the identical code in-process.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sleepspec.dataset import read_manifest
from sleepspec.refcnn import service
from sleepspec.tensorfile import MalformedTensor, read_tensor

ROW_SUM_TOL = 1e-4

CAP_TRAIN = "train"
CAP_PREDICT = "predict"
CAP_INPUT_GRAD = "input_grad"
ALL_CAPABILITIES = frozenset({CAP_TRAIN, CAP_PREDICT, CAP_INPUT_GRAD})


class BackendFailed(RuntimeError):
    pass


class BackendTimeout(BackendFailed):
    pass


class CapabilityMissing(RuntimeError):
    pass


class RowNotNormalized(ValueError):
    pass


@dataclass(frozen=True)
class BackendDescriptor:
    """How to reach a classifier backend.

    `executable` is the argv prefix for an external backend (ignored for the
    builtin); `config` is forwarded to training.
    """

    mode: str = "builtin"
    executable: tuple[str, ...] = ()
    capabilities: frozenset[str] = ALL_CAPABILITIES
    config: dict | None = None
    timeout_s: float | None = None

    def __post_init__(self):
        if self.mode not in ("builtin", "external"):
            raise ValueError(f"mode must be builtin or external, got {self.mode!r}")
        if self.mode == "external" and not self.executable:
            raise ValueError("external backend needs an executable")

    def require(self, capability: str) -> None:
        if capability not in self.capabilities:
            raise CapabilityMissing(
                f"backend lacks the {capability!r} capability"
            )


def _run(backend: BackendDescriptor, args: list[str]) -> None:
    cmd = list(backend.executable) + args
    try:
        proc = subprocess.run(
            cmd, capture_output=True, text=True, timeout=backend.timeout_s
        )
    except subprocess.TimeoutExpired as exc:
        raise BackendTimeout(f"backend timed out: {' '.join(cmd)}") from exc
    except OSError as exc:
        raise BackendFailed(f"could not start backend {cmd[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        raise BackendFailed(
            f"backend exited with {proc.returncode}: {' '.join(cmd)}\n"
            f"stderr:\n{proc.stderr.strip()}"
        )


def invoke_train(
    backend: BackendDescriptor,
    train_manifest: Path | str,
    val_manifest: Path | str,
    out_dir: Path | str,
) -> Path:
    """Run backend training; returns the model directory."""
    backend.require(CAP_TRAIN)
    for p in (train_manifest, val_manifest):
        if not Path(p).exists():
            raise BackendFailed(f"manifest does not exist: {p}")
    out_dir = Path(out_dir)
    if backend.mode == "builtin":
        service.backend_train(train_manifest, val_manifest, out_dir, backend.config)
    else:
        args = [
            "train",
            "--train",
            str(train_manifest),
            "--val",
            str(val_manifest),
            "--out",
            str(out_dir),
        ]
        if backend.config is not None:
            config_path = out_dir / "backend_config.json"
            out_dir.mkdir(parents=True, exist_ok=True)
            config_path.write_text(json.dumps(backend.config, sort_keys=True))
            args += ["--config", str(config_path)]
        _run(backend, args)
    meta = out_dir / "model.meta.json"
    if not meta.exists():
        raise BackendFailed(f"backend produced no {meta}")
    return out_dir


def invoke_predict(
    backend: BackendDescriptor,
    model_dir: Path | str,
    manifest: Path | str,
    out_path: Path | str,
) -> np.ndarray:
    """Run backend prediction and validate the (n, 5) probability tensor."""
    backend.require(CAP_PREDICT)
    n = len(read_manifest(manifest))
    if backend.mode == "builtin":
        service.backend_predict(model_dir, manifest, out_path)
    else:
        _run(
            backend,
            [
                "predict",
                "--model",
                str(model_dir),
                "--manifest",
                str(manifest),
                "--out",
                str(out_path),
            ],
        )
    probs = read_tensor(out_path)
    if probs.dtype != np.float32 or probs.shape != (n, 5):
        raise MalformedTensor(
            f"expected float32 ({n}, 5) probabilities, got {probs.dtype} {probs.shape}"
        )
    sums = probs.sum(axis=1, dtype=np.float64)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        worst = float(np.abs(sums - 1.0).max())
        raise RowNotNormalized(f"probability rows deviate from 1 by up to {worst:g}")
    return probs


def invoke_input_grad(
    backend: BackendDescriptor,
    model_dir: Path | str,
    manifest: Path | str,
    out_path: Path | str,
) -> np.ndarray:
    """Run backend input-gradient extraction and validate the tensor shape."""
    backend.require(CAP_INPUT_GRAD)
    n = len(read_manifest(manifest))
    if backend.mode == "builtin":
        service.backend_input_grad(model_dir, manifest, out_path)
    else:
        _run(
            backend,
            [
                "input-grad",
                "--model",
                str(model_dir),
                "--manifest",
                str(manifest),
                "--out",
                str(out_path),
            ],
        )
    grads = read_tensor(out_path)
    if (
        grads.dtype != np.float32
        or grads.ndim != 4
        or grads.shape[0] != n
        or grads.shape[3] != 3
    ):
        raise MalformedTensor(
            f"expected float32 ({n}, h, w, 3) gradients, got {grads.dtype} {grads.shape}"
        )
    return grads
