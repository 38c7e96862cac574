"""Shared fixtures: frozen evaluation tables and tiny rendered corpora."""

from __future__ import annotations

import numpy as np
import pytest

from sleepspec import imaging
from sleepspec.dataset import entry_for, synth_recording, write_manifest
from sleepspec.multitaper import MultitaperConfig, epoch_spectrogram
from sleepspec.stages import SleepStage

# Published aggregate confusion counts for the two pretrained-network
# scenarios (feature extraction / fine tuning); rows W,N1,N2,N3,R = true.
VGG_FE_COUNTS = np.array(
    [
        [3529, 579, 97, 46, 258],
        [458, 1219, 353, 29, 703],
        [346, 1215, 13118, 1676, 1222],
        [80, 31, 461, 5003, 16],
        [219, 781, 470, 6, 6235],
    ],
    dtype=np.int64,
)
VGG_FT_COUNTS = np.array(
    [
        [3505, 671, 52, 39, 242],
        [301, 1553, 334, 19, 555],
        [192, 985, 13884, 1411, 1105],
        [73, 24, 462, 5015, 17],
        [82, 563, 378, 14, 6674],
    ],
    dtype=np.int64,
)
VGG_FE_NORMALIZED = np.array(
    [
        [78, 13, 2, 1, 6],
        [17, 44, 13, 1, 25],
        [2, 7, 75, 10, 7],
        [1, 1, 8, 89, 0],
        [3, 10, 6, 0, 81],
    ]
)
VGG_FT_NORMALIZED = np.array(
    [
        [78, 15, 1, 1, 5],
        [11, 56, 12, 1, 20],
        [1, 6, 79, 8, 6],
        [1, 0, 8, 90, 0],
        [1, 7, 5, 0, 87],
    ]
)
# Per class: (precision, sensitivity, f1, accuracy), integer-rounded.
VGG_FE_METRICS = {
    "W": (93, 78, 85, 86),
    "N1": (85, 44, 58, 68),
    "N2": (91, 75, 82, 84),
    "N3": (97, 89, 93, 93),
    "R": (89, 81, 85, 86),
}
VGG_FT_METRICS = {
    "W": (96, 78, 86, 87),
    "N1": (89, 56, 69, 75),
    "N2": (92, 79, 85, 86),
    "N3": (97, 90, 93, 94),
    "R": (92, 87, 89, 89),
}
VGG_FT_MACRO = (93, 78, 84, 86)
VGG_FE_MACRO = (91, 73, 81, 83)


def small_config(n_bins: int = 32) -> MultitaperConfig:
    return MultitaperConfig(n_freq_bins=n_bins, n_time_cols=n_bins)


def render_corpus(
    tmp_path,
    stage_blocks: int = 2,
    n_bins: int = 32,
    subject_id: str = "S01",
    seed: int = 7,
):
    """Synthesize one recording and render its epochs to PNG + manifest.

    Returns (entries, manifest_path). `stage_blocks` epochs per stage.
    """
    plan = [s for s in SleepStage for _ in range(stage_blocks)]
    cfg = small_config(n_bins)
    recording, epochs = synth_recording(plan, seed=seed, subject_id=subject_id)
    spectrograms = [
        epoch_spectrogram(recording, e.epoch_index, cfg) for e in epochs
    ]
    stats = imaging.power_percentiles(np.stack([s.power for s in spectrograms]))
    image_dir = tmp_path / "images"
    image_dir.mkdir(exist_ok=True)
    entries = []
    for e, spec in zip(epochs, spectrograms):
        image = imaging.spectrogram_to_image(
            spec, e.stage, e.subject_id, e.night, e.epoch_index, stats=stats
        )
        path = image_dir / imaging.image_filename(
            e.subject_id, e.night, e.epoch_index, e.stage
        )
        imaging.encode_png(image, path)
        entries.append(entry_for(e, str(path)))
    manifest_path = tmp_path / f"{subject_id}_manifest.jsonl"
    write_manifest(entries, manifest_path)
    return entries, manifest_path


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Session-scoped 10-image corpus (2 per class, 32x32)."""
    tmp = tmp_path_factory.mktemp("tiny_corpus")
    entries, manifest = render_corpus(tmp, stage_blocks=2)
    return {"entries": entries, "manifest": manifest, "dir": tmp}
