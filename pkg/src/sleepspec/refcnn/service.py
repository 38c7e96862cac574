"""File-protocol entry points for the built-in backend.

These functions implement the backend contract (manifests in, TensorFiles
and model.meta.json out) and are shared by the in-process invoker and the
``sleepspec-backend`` executable, so both paths are literally the same code.
"""

from __future__ import annotations

import datetime
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from sleepspec import tensorfile
from sleepspec.dataset import ManifestEntry, read_manifest
from sleepspec.refcnn.model import backward, forward, load_checkpoint, save_checkpoint
from sleepspec.refcnn.train import TrainConfig, load_set, train
from sleepspec.stages import STAGE_NAMES

BACKEND_NAME = "refcnn"


def _write_meta(out_dir: Path, config: dict) -> None:
    meta = {
        "backend_name": BACKEND_NAME,
        "mode": "builtin",
        "classes": list(STAGE_NAMES),
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": config,
    }
    with open(out_dir / "model.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def backend_train(
    train_manifest: Path | str,
    val_manifest: Path | str,
    out_dir: Path | str,
    config: dict | None = None,
) -> Path:
    """Train on manifest files and write a checkpoint under `out_dir`."""
    cfg = TrainConfig.from_dict(config) if config else TrainConfig()
    train_entries = read_manifest(train_manifest)
    val_entries = read_manifest(val_manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, log = train(train_entries, val_entries, cfg)
    save_checkpoint(params, out_dir, step_count=len(log))
    with open(out_dir / "training_log.jsonl", "w") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    _write_meta(out_dir, cfg.to_dict())
    return out_dir


def _load_images(entries: Sequence[ManifestEntry]) -> np.ndarray:
    return load_set(entries).images


def backend_predict(
    model_dir: Path | str, manifest: Path | str, out_path: Path | str
) -> np.ndarray:
    """Probabilities for every manifest row, written as a float32 (n, 5) tensor."""
    params = load_checkpoint(model_dir)
    entries = read_manifest(manifest)
    images = _load_images(entries)
    chunks = []
    for start in range(0, len(images), 64):
        probs, _ = forward(params, images[start : start + 64])
        chunks.append(probs)
    probs = np.concatenate(chunks, axis=0).astype(np.float32)
    tensorfile.write_tensor(out_path, probs)
    return probs


def backend_input_grad(
    model_dir: Path | str, manifest: Path | str, out_path: Path | str
) -> np.ndarray:
    """Per-example loss gradients at the true label, (n, h, w, 3) float32.

    Examples are processed one at a time so each row is the gradient of that
    example's own loss (not a batch mean).
    """
    params = load_checkpoint(model_dir)
    entries = read_manifest(manifest)
    images = _load_images(entries)
    labels = np.array([STAGE_NAMES.index(e.label) for e in entries], dtype=np.int64)
    grads = np.empty(images.shape, dtype=np.float32)
    for i in range(len(images)):
        _, cache = forward(params, images[i : i + 1])
        _, _, input_grads = backward(params, cache, labels[i : i + 1])
        grads[i] = input_grads[0]
    tensorfile.write_tensor(out_path, grads)
    return grads
