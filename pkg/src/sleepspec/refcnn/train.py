"""Training loop: balanced resampling, minibatch Adam, early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from sleepspec.dataset import ManifestEntry, balanced_epoch
from sleepspec.imaging import load_unit_image
from sleepspec.refcnn.adam import adam_step, init_adam
from sleepspec.refcnn.model import ModelParams, backward, forward, init_xavier, predict_probs
from sleepspec.stages import STAGE_NAMES

logger = logging.getLogger(__name__)


class DivergedLoss(RuntimeError):
    pass


@dataclass
class TrainConfig:
    arch: str = "ccm8 ccm16 fcr64 fcs5"
    batch_size: int = 250
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout_rate: float = 0.5
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    precision: str = "float32"

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class LoadedSet:
    """Manifest images decoded into memory, aligned with entry order."""

    images: np.ndarray  # (n, h, w, 3) float32
    labels: np.ndarray  # (n,) int64
    ids: list[str]
    index_of: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index_of = {eid: i for i, eid in enumerate(self.ids)}


def load_set(entries: Sequence[ManifestEntry]) -> LoadedSet:
    if not entries:
        raise ValueError("empty manifest")
    images = np.stack([load_unit_image(e.image_path) for e in entries])
    labels = np.array([STAGE_NAMES.index(e.label) for e in entries], dtype=np.int64)
    return LoadedSet(images=images, labels=labels, ids=[e.id for e in entries])


def evaluate_loss(params: ModelParams, data: LoadedSet, batch_size: int = 64) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) over a whole set, eval mode."""
    probs = predict_probs(params, data.images, batch_size=batch_size)
    picked = probs[np.arange(len(data.labels)), data.labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    accuracy = float(np.mean(probs.argmax(axis=1) == data.labels))
    return loss, accuracy


def train(
    train_entries: Sequence[ManifestEntry],
    val_entries: Sequence[ManifestEntry],
    cfg: TrainConfig,
) -> tuple[ModelParams, list[dict]]:
    """Train to best validation loss.

    Every SGD epoch draws a fresh class-balanced sample of the training
    manifest; stops once validation loss has failed to improve for more than
    `patience` consecutive epochs and returns the best-validation parameters.
    """
    train_set = load_set(train_entries)
    val_set = load_set(val_entries)
    input_hw = train_set.images.shape[1:3]
    params = init_xavier(
        cfg.arch,
        input_hw=input_hw,
        seed=cfg.seed,
        dropout_rate=cfg.dropout_rate,
        dtype=np.dtype(cfg.precision),
    )
    state = init_adam(
        params, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps
    )
    best_params = params.copy()
    best_val = np.inf
    bad_epochs = 0
    log: list[dict] = []
    for epoch in range(cfg.max_epochs):
        ids = balanced_epoch(train_entries, cfg.seed, epoch)
        order = np.array([train_set.index_of[i] for i in ids])
        epoch_losses = []
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch_idx = order[start : start + cfg.batch_size]
            images = train_set.images[batch_idx]
            labels = train_set.labels[batch_idx]
            dropout_seed = (cfg.seed * 1000003 + epoch * 1009 + bi) & 0x7FFFFFFF
            _, cache = forward(
                params, images, train_mode=True, dropout_seed=dropout_seed
            )
            loss, grads, _ = backward(params, cache, labels)
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite training loss at epoch {epoch}")
            adam_step(params, grads, state)
            epoch_losses.append(loss)
        val_loss, val_accuracy = evaluate_loss(params, val_set)
        if not np.isfinite(val_loss):
            raise DivergedLoss(f"non-finite validation loss at epoch {epoch}")
        log.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "val_loss": val_loss,
                "val_accuracy": val_accuracy,
            }
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                logger.info("early stop at epoch %d (best val %.4f)", epoch, best_val)
                break
    return best_params, log
