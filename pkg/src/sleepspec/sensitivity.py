"""Per-class sensitivity maps from backend input gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from sleepspec.dataset import ManifestEntry
from sleepspec.imaging import encode_png, jet
from sleepspec.stages import SleepStage
from sleepspec import tensorfile

logger = logging.getLogger(__name__)


class EmptySelection(ValueError):
    pass


@dataclass(frozen=True)
class SensitivityMap:
    """Min-max normalized mean absolute input gradient, channels summed."""

    values: np.ndarray  # (h, w) in [0, 1]
    stage: SleepStage
    subject: str | None
    n_examples: int
    degenerate: bool = False

    def __post_init__(self):
        self.values.setflags(write=False)


def select_rows(
    entries: Sequence[ManifestEntry], stage: SleepStage, subject: str | None = None
) -> list[int]:
    return [
        i
        for i, e in enumerate(entries)
        if e.label == stage.name and (subject is None or e.subject == subject)
    ]


def sensitivity_map(
    gradients: np.ndarray,
    stage: SleepStage,
    subject: str | None = None,
    entries: Sequence[ManifestEntry] | None = None,
) -> SensitivityMap:
    """Aggregate per-example input gradients into one unit-interval map.

    `gradients` is (n, h, w, 3), row-aligned with `entries` when given; the
    selection keeps rows matching the stage (and subject, if any). Per pixel:
    mean over examples of |gradient|, summed over colour channels, then
    min-max normalized. A constant map normalizes to all zeros and is
    flagged degenerate.
    """
    gradients = np.asarray(gradients, dtype=np.float64)
    if gradients.ndim != 4 or gradients.shape[3] != 3:
        raise ValueError(f"expected (n, h, w, 3) gradients, got {gradients.shape}")
    if entries is not None:
        rows = select_rows(entries, stage, subject)
        gradients = gradients[rows]
    if gradients.shape[0] < 1:
        raise EmptySelection(
            f"no examples for stage {stage.name}"
            + (f" and subject {subject}" if subject else "")
        )
    mean_abs = np.abs(gradients).mean(axis=0).sum(axis=2)
    lo, hi = float(mean_abs.min()), float(mean_abs.max())
    if hi == lo:
        logger.warning(
            "degenerate sensitivity map for %s (constant gradient field)", stage.name
        )
        values = np.zeros_like(mean_abs)
        degenerate = True
    else:
        values = (mean_abs - lo) / (hi - lo)
        degenerate = False
    return SensitivityMap(
        values=values,
        stage=stage,
        subject=subject,
        n_examples=gradients.shape[0],
        degenerate=degenerate,
    )


def map_filename(smap: SensitivityMap) -> str:
    return f"sensmap_{smap.subject or 'all'}_{smap.stage.name}.png"


def render_map(smap: SensitivityMap, path: Path | str) -> None:
    """Jet-colourized PNG with the same orientation as the input images."""
    rgb = jet(smap.values)
    encode_png(np.floor(rgb * 255.0 + 0.5).astype(np.uint8), path)


def write_map_tensor(smap: SensitivityMap, path: Path | str) -> None:
    tensorfile.write_tensor(path, smap.values.astype(np.float32))
