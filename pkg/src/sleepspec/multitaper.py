"""DPSS (Slepian) tapers and multitaper power spectrograms.

The spectral estimate is a uniform (non-adaptive) average over tapers,
evaluated by a direct transform at exactly the requested frequencies; there
is no FFT grid or interpolation, so results are deterministic at any window
size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from sleepspec import kernels
from sleepspec.edf import EPOCH_SECONDS, Recording


class MultitaperError(ValueError):
    pass


class InvalidBandwidth(MultitaperError):
    pass


class EigenFailure(MultitaperError):
    pass


class LengthMismatch(MultitaperError):
    pass


class EpochOutOfRange(MultitaperError):
    pass


@dataclass(frozen=True)
class MultitaperConfig:
    """Hyperparameters of the spectrogram pipeline.

    Defaults follow the working configuration for 100 Hz EEG: 3 s windows,
    2 Hz frequency resolution, time-half-bandwidth product 3, 5 tapers,
    224x224 output covering 0-30 Hz over a 150 s context bin.
    """

    window_s: float = 3.0
    step_s: float = 0.67
    freq_res_hz: float = 2.0
    half_bandwidth_product: float = 3.0
    num_tapers: int | None = 5
    fs: float = 100.0
    f_max_hz: float = 30.0
    n_freq_bins: int = 224
    n_time_cols: int = 224

    def __post_init__(self):
        expected_w = self.window_s * self.freq_res_hz / 2.0
        if abs(self.half_bandwidth_product - expected_w) > 1e-12:
            raise InvalidBandwidth(
                f"half_bandwidth_product must equal window_s*freq_res_hz/2 "
                f"({expected_w}), got {self.half_bandwidth_product}"
            )
        if self.num_tapers is None:
            object.__setattr__(
                self, "num_tapers", default_taper_count(self.half_bandwidth_product)
            )
        if self.num_tapers < 1:
            raise InvalidBandwidth("num_tapers must be >= 1")
        if not 0 < self.f_max_hz <= self.fs / 2.0:
            raise InvalidBandwidth(
                f"f_max_hz must lie in (0, fs/2], got {self.f_max_hz}"
            )
        if self.window_samples < self.num_tapers:
            raise InvalidBandwidth(
                f"window of {self.window_samples} samples cannot carry "
                f"{self.num_tapers} tapers"
            )

    @property
    def window_samples(self) -> int:
        return int(round(self.window_s * self.fs))

    @property
    def normalized_half_bandwidth(self) -> float:
        return self.half_bandwidth_product / self.window_samples

    @property
    def freqs_hz(self) -> np.ndarray:
        return np.linspace(0.0, self.f_max_hz, self.n_freq_bins)

    @property
    def bin_seconds(self) -> float:
        return 5 * EPOCH_SECONDS

    def to_dict(self) -> dict:
        return {
            "window_s": self.window_s,
            "step_s": self.step_s,
            "freq_res_hz": self.freq_res_hz,
            "half_bandwidth_product": self.half_bandwidth_product,
            "num_tapers": self.num_tapers,
            "fs": self.fs,
            "f_max_hz": self.f_max_hz,
            "n_freq_bins": self.n_freq_bins,
            "n_time_cols": self.n_time_cols,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MultitaperConfig":
        return cls(**d)


def default_taper_count(half_bandwidth_product: float) -> int:
    """The usual taper-count heuristic: floor(2W) - 1."""
    return int(math.floor(2 * half_bandwidth_product)) - 1


@dataclass(frozen=True)
class TaperSet:
    """Orthonormal Slepian tapers with their spectral concentrations."""

    tapers: np.ndarray  # (L, N), unit energy
    concentrations: np.ndarray  # (L,), strictly decreasing, in (0, 1)

    def __post_init__(self):
        self.tapers.setflags(write=False)
        self.concentrations.setflags(write=False)

    @property
    def num_tapers(self) -> int:
        return self.tapers.shape[0]

    @property
    def window_samples(self) -> int:
        return self.tapers.shape[1]


def _band_kernel_apply(v: np.ndarray, w_bin: float) -> np.ndarray:
    """Apply the Toeplitz band-concentration kernel sin(2πW(t-t'))/(π(t-t'))."""
    n = len(v)
    lags = np.arange(-(n - 1), n, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        kernel = np.sin(2 * np.pi * w_bin * lags) / (np.pi * lags)
    kernel[n - 1] = 2 * w_bin
    return np.convolve(v, kernel)[n - 1 : 2 * n - 1]


def compute_dpss(n: int, w_bin: float, num_tapers: int) -> TaperSet:
    """Compute the first `num_tapers` Slepian sequences of length `n`.

    Solves the symmetric tridiagonal eigenproblem (diagonal
    ((n-1)/2 - t)^2 cos(2πW), off-diagonal t(n-t)/2) and reports band
    concentrations via the sinc-kernel quadratic form. Sign convention:
    symmetric tapers have positive mean, antisymmetric tapers a positive
    leading lobe.
    """
    if not 0 < w_bin < 0.5:
        raise InvalidBandwidth(f"normalized half-bandwidth must be in (0, 0.5), got {w_bin}")
    if num_tapers > 2 * n * w_bin:
        raise InvalidBandwidth(
            f"{num_tapers} tapers exceed the 2NW = {2 * n * w_bin:.3g} concentration limit"
        )
    t = np.arange(n, dtype=np.float64)
    diag = ((n - 1) / 2.0 - t) ** 2 * math.cos(2 * math.pi * w_bin)
    off = t[1:] * (n - t[1:]) / 2.0
    try:
        _, vecs = eigh_tridiagonal(
            diag, off, select="i", select_range=(n - num_tapers, n - 1)
        )
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy rarely fails here
        raise EigenFailure(str(exc)) from exc
    vecs = vecs[:, ::-1].T  # descending eigenvalue order

    tapers = np.empty_like(vecs)
    for k, v in enumerate(vecs):
        v = v / np.linalg.norm(v)
        if k % 2 == 0:
            if v.sum() < 0:
                v = -v
        else:
            half = v[: n // 2]
            if half[np.argmax(np.abs(half))] < 0:
                v = -v
        tapers[k] = v
    concentrations = np.array(
        [float(v @ _band_kernel_apply(v, w_bin)) for v in tapers]
    )
    return TaperSet(tapers=tapers, concentrations=concentrations)


@lru_cache(maxsize=8)
def _cached_dpss(n: int, w_bin: float, num_tapers: int) -> TaperSet:
    return compute_dpss(n, w_bin, num_tapers)


def tapers_for(cfg: MultitaperConfig) -> TaperSet:
    return _cached_dpss(cfg.window_samples, cfg.normalized_half_bandwidth, cfg.num_tapers)


@dataclass(frozen=True)
class Spectrogram:
    """Time-frequency power estimates in µV²/Hz with axis metadata."""

    power: np.ndarray  # (n_freq_bins, n_time_cols)
    time_centers_s: np.ndarray
    freqs_hz: np.ndarray

    def __post_init__(self):
        self.power.setflags(write=False)
        self.time_centers_s.setflags(write=False)
        self.freqs_hz.setflags(write=False)


def multitaper_psd(
    segment: np.ndarray,
    tapers: TaperSet,
    freqs: Sequence[float] | np.ndarray,
    fs: float,
) -> np.ndarray:
    """Multitaper power of one window at the requested frequencies."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.shape != (tapers.window_samples,):
        raise LengthMismatch(
            f"segment length {segment.shape} does not match taper length "
            f"{tapers.window_samples}"
        )
    freqs = np.ascontiguousarray(freqs, dtype=np.float64)
    return kernels.tapered_spectra(
        segment[None, :], np.ascontiguousarray(tapers.tapers), freqs, fs
    )[0]


def _reflect_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """Map arbitrary integer indices into [0, n) by boundary reflection."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    m = np.abs(idx) % period
    return np.where(m < n, m, period - m)


def window_segments(
    samples: np.ndarray, centers_s: np.ndarray, fs: float, n_window: int
) -> np.ndarray:
    """Extract reflection-padded windows centered at the given times."""
    starts = np.round(centers_s * fs - n_window / 2.0).astype(np.int64)
    idx = starts[:, None] + np.arange(n_window)[None, :]
    return samples[_reflect_indices(idx, len(samples))]


def epoch_spectrogram(
    recording: Recording, epoch_index: int, cfg: MultitaperConfig
) -> Spectrogram:
    """Spectrogram of the 150 s context bin around one 30 s epoch.

    The bin covers [epoch_start - 60 s, epoch_start + 90 s] (the two
    previous and two posterior epochs); window centers are uniformly spaced
    so the column count matches the image resolution exactly. Windows
    reaching past the recording are reflection-padded.
    """
    if not 0 <= epoch_index < recording.num_epochs:
        raise EpochOutOfRange(
            f"epoch {epoch_index} outside recording with {recording.num_epochs} epochs"
        )
    if recording.fs != cfg.fs:
        raise LengthMismatch(
            f"recording is sampled at {recording.fs} Hz but config expects {cfg.fs} Hz"
        )
    epoch_start = epoch_index * EPOCH_SECONDS
    bin_start = epoch_start - 2 * EPOCH_SECONDS
    centers = bin_start + (np.arange(cfg.n_time_cols) + 0.5) * (
        cfg.bin_seconds / cfg.n_time_cols
    )
    segments = window_segments(
        np.asarray(recording.samples, dtype=np.float64),
        centers,
        cfg.fs,
        cfg.window_samples,
    )
    taper_set = tapers_for(cfg)
    power = kernels.tapered_spectra(
        np.ascontiguousarray(segments),
        np.ascontiguousarray(taper_set.tapers),
        cfg.freqs_hz,
        cfg.fs,
    )
    return Spectrogram(
        power=power.T.copy(),
        time_centers_s=centers,
        freqs_hz=cfg.freqs_hz,
    )
