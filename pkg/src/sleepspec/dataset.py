"""Partitioning, class-balanced sampling, manifests, and synthetic recordings."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from sleepspec.edf import (
    EPOCH_SECONDS,
    Annotation,
    LabeledEpoch,
    Recording,
    build_hypnogram_edf,
    build_psg_edf,
)
from sleepspec.stages import NUM_STAGES, STAGE_NAMES, SleepStage

logger = logging.getLogger(__name__)


class TooFewSubjects(ValueError):
    pass


class MissingClass(ValueError):
    pass


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Leave-one-subject-out folds


@dataclass(frozen=True)
class FoldSpec:
    test_subject: str
    validation_subjects: tuple[str, ...]
    train_subjects: tuple[str, ...]
    seed: int

    def to_dict(self) -> dict:
        return {
            "test_subject": self.test_subject,
            "validation_subjects": list(self.validation_subjects),
            "train_subjects": list(self.train_subjects),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldSpec":
        return cls(
            test_subject=d["test_subject"],
            validation_subjects=tuple(d["validation_subjects"]),
            train_subjects=tuple(d["train_subjects"]),
            seed=d["seed"],
        )


def validation_count(num_subjects: int) -> int:
    if num_subjects >= 6:
        return 4
    return max(1, math.floor(0.2 * (num_subjects - 1)))


def make_folds(subjects: Sequence[str], seed: int) -> list[FoldSpec]:
    """One fold per test subject; validation subjects drawn by seeded shuffle.

    The three subject sets of each fold are disjoint and cover the corpus, so
    no subject's epochs can leak across partitions.
    """
    subjects = sorted(set(subjects))
    if len(subjects) < 2:
        raise TooFewSubjects(f"need at least 2 subjects, got {len(subjects)}")
    n_val = validation_count(len(subjects))
    folds = []
    for i, test in enumerate(subjects):
        rest = [s for s in subjects if s != test]
        rng = np.random.default_rng([seed, i])
        order = rng.permutation(len(rest))
        val = tuple(rest[j] for j in sorted(order[:n_val]))
        train = tuple(s for s in rest if s not in val)
        if not train:
            logger.warning(
                "fold %r has an empty training set (%d subjects total)",
                test,
                len(subjects),
            )
        folds.append(
            FoldSpec(
                test_subject=test,
                validation_subjects=val,
                train_subjects=train,
                seed=seed,
            )
        )
    return folds


# ---------------------------------------------------------------------------
# Image manifests (newline-delimited JSON)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    subject: str
    night: int
    epoch_index: int
    label: str
    image_path: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "subject": self.subject,
            "night": self.night,
            "epoch_index": self.epoch_index,
            "label": self.label,
            "image_path": self.image_path,
        }


def entry_for(epoch: LabeledEpoch, image_path: str) -> ManifestEntry:
    return ManifestEntry(
        id=f"{epoch.subject_id}_n{epoch.night}_e{epoch.epoch_index}",
        subject=epoch.subject_id,
        night=epoch.night,
        epoch_index=epoch.epoch_index,
        label=epoch.stage.name,
        image_path=image_path,
    )


def write_manifest(
    entries: Iterable[ManifestEntry], path: Path | str, check_files: bool = True
) -> None:
    entries = list(entries)
    seen = set()
    for e in entries:
        if e.id in seen:
            raise ManifestError(f"duplicate manifest id {e.id!r}")
        seen.add(e.id)
        if e.label not in STAGE_NAMES:
            raise ManifestError(f"unknown label {e.label!r} in entry {e.id!r}")
        if check_files and not Path(e.image_path).exists():
            raise ManifestError(f"missing image file {e.image_path!r}")
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


def read_manifest(path: Path | str) -> list[ManifestEntry]:
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                entries.append(ManifestEntry(**d))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad manifest line") from exc
    return entries


def split_manifest(
    entries: Sequence[ManifestEntry], fold: FoldSpec
) -> tuple[list[ManifestEntry], list[ManifestEntry], list[ManifestEntry]]:
    """Partition manifest rows into (train, validation, test) for a fold."""
    train = [e for e in entries if e.subject in fold.train_subjects]
    val = [e for e in entries if e.subject in fold.validation_subjects]
    test = [e for e in entries if e.subject == fold.test_subject]
    return train, val, test


def balanced_epoch(
    entries: Sequence[ManifestEntry], seed: int, sgd_epoch_index: int
) -> list[str]:
    """Class-balanced id sample for one SGD epoch.

    Undersamples every class to the minority-class count, without
    replacement, and reshuffles; a fresh draw is made per `sgd_epoch_index`.
    """
    by_class: dict[str, list[str]] = {name: [] for name in STAGE_NAMES}
    for e in entries:
        by_class[e.label].append(e.id)
    missing = [name for name, ids in by_class.items() if not ids]
    if missing:
        raise MissingClass(f"manifest lacks examples of: {', '.join(missing)}")
    m = min(len(ids) for ids in by_class.values())
    rng = np.random.default_rng([seed, sgd_epoch_index])
    sample: list[str] = []
    for name in STAGE_NAMES:
        ids = by_class[name]
        chosen = rng.choice(len(ids), size=m, replace=False)
        sample.extend(ids[j] for j in chosen)
    rng.shuffle(sample)
    return sample


# ---------------------------------------------------------------------------
# Synthetic recordings (desk-scale stand-ins with stage-typical spectra)

_PINK_RMS_UV = 10.0
_SIGNATURE_RMS_UV = 31.6  # ~10 dB above the pink background


def _pink_noise(rng: np.random.Generator, n: int, fs: float) -> np.ndarray:
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    spectrum /= np.sqrt(np.maximum(freqs, 0.5))
    pink = np.fft.irfft(spectrum, n=n)
    return pink * (_PINK_RMS_UV / np.std(pink))


def _band_noise(rng: np.random.Generator, n: int, fs: float, lo: float, hi: float) -> np.ndarray:
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    band = np.fft.irfft(spectrum, n=n)
    return band / np.std(band)


def _burst_gate(t: np.ndarray, period_s: float, width_s: float) -> np.ndarray:
    """Smooth on/off gating: Hann-shaped bursts of `width_s` every `period_s`."""
    phase = np.mod(t, period_s)
    gate = np.zeros_like(t)
    inside = phase < width_s
    gate[inside] = 0.5 * (1.0 - np.cos(2 * np.pi * phase[inside] / width_s))
    return gate


def _stage_signature(
    stage: SleepStage, t: np.ndarray, fs: float, rng: np.random.Generator
) -> np.ndarray:
    amp = _SIGNATURE_RMS_UV * math.sqrt(2.0)
    if stage is SleepStage.W:
        return amp * np.sin(2 * np.pi * 10.0 * t) * _burst_gate(t, 4.0, 2.5)
    if stage is SleepStage.N1:
        return amp * np.sin(2 * np.pi * 5.0 * t)
    if stage is SleepStage.N2:
        spindles = 1.6 * amp * np.sin(2 * np.pi * 13.5 * t) * _burst_gate(t, 10.0, 1.0)
        transients = 1.2 * amp * np.sin(2 * np.pi * 1.2 * t) * _burst_gate(t, 7.0, 1.7)
        return spindles + transients
    if stage is SleepStage.N3:
        return 2.0 * amp * np.sin(2 * np.pi * 1.0 * t)
    return _SIGNATURE_RMS_UV * _band_noise(rng, len(t), fs, 2.0, 9.0)


def synth_recording(
    stage_sequence: Sequence[SleepStage],
    fs: float = 100.0,
    seed: int = 0,
    subject_id: str = "S00",
    night: int = 1,
    channel: str = "EEG Fpz-Cz",
) -> tuple[Recording, list[LabeledEpoch]]:
    """Generate a pink-noise recording with stage-typical spectral signatures.

    Deterministic given the seed; one 30 s epoch per requested stage.
    """
    if not stage_sequence:
        raise ValueError("stage sequence must be non-empty")
    rng = np.random.default_rng(seed)
    per_epoch = int(round(EPOCH_SECONDS * fs))
    chunks = []
    epochs = []
    for k, stage in enumerate(stage_sequence):
        t = (np.arange(per_epoch) + k * per_epoch) / fs
        x = _pink_noise(rng, per_epoch, fs) + _stage_signature(stage, t, fs, rng)
        chunks.append(x)
        epochs.append(LabeledEpoch(subject_id, night, k, stage))
    recording = Recording(
        subject_id=subject_id,
        night=night,
        channel=channel,
        fs=fs,
        samples=np.concatenate(chunks),
    )
    return recording, epochs


def default_stage_plan(rng: np.random.Generator, blocks_per_stage: int = 1,
                       block_len: int = 5) -> list[SleepStage]:
    """A shuffled block plan covering all five stages."""
    order = []
    for _ in range(blocks_per_stage):
        stages = list(SleepStage)
        rng.shuffle(stages)
        order.extend(stages)
    return [stage for stage in order for _ in range(block_len)]


def build_synthetic_corpus(
    data_dir: Path | str,
    num_subjects: int = 3,
    nights: int = 2,
    seed: int = 0,
    fs: float = 100.0,
    blocks_per_stage: int = 1,
    block_len: int = 5,
    channel: str = "EEG Fpz-Cz",
) -> dict:
    """Write a synthetic EDF corpus (PSG + EDF+ hypnogram pairs).

    Every night's plan covers all five stages; the hypnogram is written as
    EDF+ annotations so the full ingest path is exercised.
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    description: dict = {"seed": seed, "fs": fs, "channel": channel, "recordings": []}
    for si in range(num_subjects):
        subject = f"S{si + 1:02d}"
        for night in range(1, nights + 1):
            plan_rng = np.random.default_rng([seed, si, night])
            plan = default_stage_plan(plan_rng, blocks_per_stage, block_len)
            recording, epochs = synth_recording(
                plan,
                fs=fs,
                seed=int(plan_rng.integers(2**31)),
                subject_id=subject,
                night=night,
                channel=channel,
            )
            annotations = [
                Annotation(k * EPOCH_SECONDS, EPOCH_SECONDS, f"Sleep stage {e.stage.name}")
                for k, e in enumerate(epochs)
            ]
            psg_path = data_dir / f"{subject}n{night}-PSG.edf"
            hyp_path = data_dir / f"{subject}n{night}-Hypnogram.edf"
            psg_path.write_bytes(build_psg_edf(recording))
            hyp_path.write_bytes(build_hypnogram_edf(annotations))
            description["recordings"].append(
                {
                    "subject": subject,
                    "night": night,
                    "psg": psg_path.name,
                    "hypnogram": hyp_path.name,
                    "stages": [s.name for s in plan],
                }
            )
    with open(data_dir / "corpus.json", "w") as fh:
        json.dump(description, fh, indent=2, sort_keys=True)
    return description


def class_histogram(entries: Sequence[ManifestEntry]) -> dict[str, int]:
    counts = {name: 0 for name in STAGE_NAMES}
    for e in entries:
        counts[e.label] += 1
    return counts
