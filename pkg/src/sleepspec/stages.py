"""Sleep stage vocabulary and annotation-label mapping."""

from __future__ import annotations

from enum import Enum


class SleepStage(Enum):
    """The five scoring classes, in fixed evaluation order."""

    W = 0
    N1 = 1
    N2 = 2
    N3 = 3
    R = 4

    def __str__(self) -> str:
        return self.name


STAGE_ORDER = (SleepStage.W, SleepStage.N1, SleepStage.N2, SleepStage.N3, SleepStage.R)
STAGE_NAMES = tuple(s.name for s in STAGE_ORDER)
NUM_STAGES = len(STAGE_ORDER)

# Annotation text -> stage. R&K stages 3 and 4 both collapse into N3; AASM-style
# names are accepted as well. Anything absent here is excluded from labeling.
_LABEL_MAP = {
    "W": SleepStage.W,
    "1": SleepStage.N1,
    "2": SleepStage.N2,
    "3": SleepStage.N3,
    "4": SleepStage.N3,
    "R": SleepStage.R,
    "N1": SleepStage.N1,
    "N2": SleepStage.N2,
    "N3": SleepStage.N3,
    "N4": SleepStage.N3,
}

SLEEPING_STAGES = frozenset(
    {SleepStage.N1, SleepStage.N2, SleepStage.N3, SleepStage.R}
)


def map_stage_label(text: str) -> SleepStage | None:
    """Map an annotation label to a stage, or ``None`` if it is excluded.

    Accepts hypnogram spellings like ``"Sleep stage W"``, ``"Sleep stage 4"``,
    or a bare stage token. ``"Movement time"``, ``"Sleep stage ?"`` and any
    unknown text map to ``None`` (epoch dropped).
    """
    token = text.strip()
    if token.lower().startswith("sleep stage"):
        token = token[len("sleep stage") :].strip()
    return _LABEL_MAP.get(token.upper())


def is_stage_annotation(text: str) -> bool:
    """True for labels that score an epoch, including excluded scorings.

    Distinguishes hypnogram intervals from point markers ("Lights off" etc.)
    so overlap checking does not trip on markers.
    """
    t = text.strip().lower()
    return t.startswith("sleep stage") or t == "movement time"
