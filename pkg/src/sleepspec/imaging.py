"""Spectrogram-to-image conversion: log scaling, Jet colourmap, PNG codec."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from sleepspec.multitaper import Spectrogram
from sleepspec.stages import SleepStage

POWER_FLOOR = 1e-12


class DegenerateRange(ValueError):
    """Per-recording percentiles coincide; nothing to normalize against."""


@dataclass(frozen=True)
class ScalingStats:
    """Per-recording power percentiles used by percentile-mode scaling."""

    p05: float
    p98: float


def power_percentiles(power_values: np.ndarray) -> ScalingStats:
    """5th/98th percentiles of (floored) power over a whole recording."""
    floored = np.maximum(np.asarray(power_values, dtype=np.float64), POWER_FLOOR)
    p05, p98 = np.percentile(floored, [5.0, 98.0])
    return ScalingStats(p05=float(p05), p98=float(p98))


def log_scale(
    power: np.ndarray, mode: str = "percentile", stats: ScalingStats | None = None
) -> np.ndarray:
    """Map non-negative power onto the unit interval via a log transform.

    ``paper`` mode applies ln(x) + 1 and clamps; ``percentile`` mode (the
    default) rescales ln(x) between the recording's 5th and 98th power
    percentiles. Zeros are floored at a tiny positive constant before the log.
    """
    x = np.log(np.maximum(np.asarray(power, dtype=np.float64), POWER_FLOOR))
    if mode == "paper":
        scaled = x + 1.0
    elif mode == "percentile":
        if stats is None:
            raise ValueError("percentile mode requires per-recording stats")
        if stats.p05 == stats.p98:
            raise DegenerateRange("5th and 98th power percentiles coincide")
        lo, hi = np.log(stats.p05), np.log(stats.p98)
        scaled = (x - lo) / (hi - lo)
    else:
        raise ValueError(f"unknown scaling mode {mode!r}")
    return np.clip(scaled, 0.0, 1.0)


def jet(u: np.ndarray | float) -> np.ndarray:
    """Analytic Jet colourmap on [0, 1]; returns (..., 3) RGB in [0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    r = np.clip(np.minimum(4 * u - 1.5, -4 * u + 4.5), 0.0, 1.0)
    g = np.clip(np.minimum(4 * u - 0.5, -4 * u + 3.5), 0.0, 1.0)
    b = np.clip(np.minimum(4 * u + 0.5, -4 * u + 2.5), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


@dataclass(frozen=True)
class EpochImage:
    """RGB image of one labeled epoch; row 0 is the highest frequency."""

    pixels: np.ndarray  # (H, W, 3) in [0, 1]
    label: SleepStage
    subject_id: str
    night: int
    epoch_index: int

    def __post_init__(self):
        self.pixels.setflags(write=False)

    def quantized(self) -> np.ndarray:
        """8-bit form; channel value = round(255 * c), half away from zero."""
        return np.floor(self.pixels * 255.0 + 0.5).astype(np.uint8)


def spectrogram_to_image(
    spec: Spectrogram,
    label: SleepStage,
    subject_id: str,
    night: int,
    epoch_index: int,
    mode: str = "percentile",
    stats: ScalingStats | None = None,
) -> EpochImage:
    """Colourize a spectrogram; frequency increases upward in the image."""
    unit = log_scale(spec.power, mode=mode, stats=stats)
    pixels = jet(np.flipud(unit))
    return EpochImage(
        pixels=pixels,
        label=label,
        subject_id=subject_id,
        night=night,
        epoch_index=epoch_index,
    )


def image_filename(subject_id: str, night: int, epoch_index: int, stage: SleepStage) -> str:
    return f"{subject_id}_{night}_{epoch_index}_{stage.name}.png"


def encode_png(image: EpochImage | np.ndarray, path: Path | str) -> None:
    """Write an 8-bit RGB PNG (no alpha); decoding returns identical pixels."""
    quantized = image.quantized() if isinstance(image, EpochImage) else image
    if quantized.dtype != np.uint8 or quantized.ndim != 3 or quantized.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) uint8 array")
    Image.fromarray(quantized, mode="RGB").save(str(path), format="PNG")


def decode_png(path: Path | str) -> np.ndarray:
    with Image.open(str(path)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def load_unit_image(path: Path | str) -> np.ndarray:
    """Decode a PNG into float32 unit-interval pixels (classifier input)."""
    return decode_png(path).astype(np.float32) / 255.0
