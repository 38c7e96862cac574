"""EDF/EDF+ reading and writing, hypnogram decoding, and epoch labeling.

Implements the 256-byte fixed-offset EDF header layout, 16-bit little-endian
sample records, EDF+ time-stamped annotation lists (TALs), a CSV hypnogram
fallback, sleeping-time trimming, and 30 s epoch labeling.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from sleepspec.stages import (
    SLEEPING_STAGES,
    SleepStage,
    is_stage_annotation,
    map_stage_label,
)

logger = logging.getLogger(__name__)

EPOCH_SECONDS = 30.0

_HEADER_SIZE = 256
_PER_SIGNAL_SIZE = 256
_ANNOTATION_LABEL = "EDF Annotations"


class EdfError(ValueError):
    """Base class for EDF and hypnogram failures."""


class TruncatedFile(EdfError):
    pass


class MalformedHeader(EdfError):
    pass


class UnsupportedVersion(EdfError):
    pass


class DegenerateCalibration(EdfError):
    pass


class UnparsableTAL(EdfError):
    pass


class OverlappingAnnotations(EdfError):
    pass


class NoScoredSleep(EdfError):
    pass


class GapInAnnotations(EdfError):
    pass


@dataclass(frozen=True)
class SignalHeader:
    label: str
    transducer: str = ""
    physical_dimension: str = ""
    physical_min: float = -1.0
    physical_max: float = 1.0
    digital_min: int = -32768
    digital_max: int = 32767
    prefiltering: str = ""
    samples_per_record: int = 0
    reserved: str = ""

    def __post_init__(self):
        if self.digital_min >= self.digital_max:
            raise MalformedHeader(
                f"signal {self.label!r}: digital_min must be < digital_max"
            )
        if self.physical_min == self.physical_max:
            raise MalformedHeader(
                f"signal {self.label!r}: physical_min equals physical_max"
            )


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_date: str
    start_time: str
    header_bytes: int
    reserved: str
    num_records: int
    record_duration_s: float
    num_signals: int
    signals: tuple[SignalHeader, ...]

    def __post_init__(self):
        if self.header_bytes != _HEADER_SIZE * (1 + self.num_signals):
            raise MalformedHeader(
                f"header_bytes={self.header_bytes} but expected "
                f"{_HEADER_SIZE * (1 + self.num_signals)} for "
                f"{self.num_signals} signals"
            )
        if len(self.signals) != self.num_signals:
            raise MalformedHeader("signal header count mismatch")


class Annotation(NamedTuple):
    onset_s: float
    duration_s: float
    label: str


@dataclass(frozen=True)
class Recording:
    """Decoded physical-unit samples of one EEG channel."""

    subject_id: str
    night: int
    channel: str
    fs: float
    samples: np.ndarray
    start_epoch_offset: float = 0.0

    def __post_init__(self):
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        self.samples.setflags(write=False)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.fs

    @property
    def samples_per_epoch(self) -> int:
        return int(round(EPOCH_SECONDS * self.fs))

    @property
    def num_epochs(self) -> int:
        return len(self.samples) // self.samples_per_epoch

    def epoch_samples(self, epoch_index: int) -> np.ndarray:
        n = self.samples_per_epoch
        return self.samples[epoch_index * n : (epoch_index + 1) * n]


@dataclass(frozen=True)
class LabeledEpoch:
    subject_id: str
    night: int
    epoch_index: int
    stage: SleepStage


# ---------------------------------------------------------------------------
# Header parsing


def _ascii(raw: bytes, start: int, size: int) -> str:
    return raw[start : start + size].decode("ascii", errors="replace").rstrip()


def _int_field(raw: bytes, start: int, size: int, name: str) -> int:
    text = _ascii(raw, start, size).strip()
    try:
        return int(text)
    except ValueError:
        raise MalformedHeader(f"non-numeric {name} field: {text!r}") from None


def _float_field(text: str, name: str) -> float:
    try:
        return float(text.strip() or "nan")
    except ValueError:
        raise MalformedHeader(f"non-numeric {name} field: {text!r}") from None


def parse_edf(data: bytes | Path | str) -> tuple[EdfHeader, list[np.ndarray]]:
    """Parse an EDF/EDF+ byte stream into a header and per-signal digital arrays.

    Samples are 16-bit little-endian two's complement, grouped per data record
    in the file and concatenated per signal here.
    """
    if isinstance(data, (str, Path)):
        data = Path(data).read_bytes()
    if len(data) < _HEADER_SIZE:
        raise TruncatedFile(
            f"stream is {len(data)} bytes, shorter than the 256-byte header"
        )

    version = _ascii(data, 0, 8)
    if version.strip() != "0":
        raise UnsupportedVersion(f"unsupported EDF version field: {version!r}")
    num_records = _int_field(data, 236, 8, "num_records")
    if num_records < 0:
        raise UnsupportedVersion(
            "streaming EDF+ files (num_records = -1) are not supported"
        )
    num_signals = _int_field(data, 252, 4, "num_signals")
    if num_signals <= 0:
        raise MalformedHeader(f"num_signals must be positive, got {num_signals}")
    header_bytes = _int_field(data, 184, 8, "header_bytes")

    total_header = _HEADER_SIZE + _PER_SIGNAL_SIZE * num_signals
    if len(data) < total_header:
        raise TruncatedFile(
            f"stream ends inside the signal headers ({len(data)} < {total_header})"
        )

    ns = num_signals

    def sig_field(block_offset: int, width: int, i: int) -> str:
        start = _HEADER_SIZE + block_offset * ns + width * i
        return _ascii(data, start, width)

    signals = []
    for i in range(ns):
        signals.append(
            SignalHeader(
                label=sig_field(0, 16, i),
                transducer=sig_field(16, 80, i),
                physical_dimension=sig_field(96, 8, i),
                physical_min=_float_field(sig_field(104, 8, i), "physical_min"),
                physical_max=_float_field(sig_field(112, 8, i), "physical_max"),
                digital_min=_int_field(
                    data, _HEADER_SIZE + 120 * ns + 8 * i, 8, "digital_min"
                ),
                digital_max=_int_field(
                    data, _HEADER_SIZE + 128 * ns + 8 * i, 8, "digital_max"
                ),
                prefiltering=sig_field(136, 80, i),
                samples_per_record=_int_field(
                    data, _HEADER_SIZE + 216 * ns + 8 * i, 8, "samples_per_record"
                ),
                reserved=sig_field(224, 32, i),
            )
        )

    header = EdfHeader(
        version=version,
        patient_id=_ascii(data, 8, 80),
        recording_id=_ascii(data, 88, 80),
        start_date=_ascii(data, 168, 8),
        start_time=_ascii(data, 176, 8),
        header_bytes=header_bytes,
        reserved=_ascii(data, 192, 44),
        num_records=num_records,
        record_duration_s=_float_field(_ascii(data, 244, 8), "record_duration"),
        num_signals=ns,
        signals=tuple(signals),
    )

    record_samples = sum(s.samples_per_record for s in signals)
    expected = total_header + 2 * record_samples * num_records
    if len(data) < expected:
        raise TruncatedFile(
            f"stream is {len(data)} bytes but the header promises {expected}"
        )

    flat = np.frombuffer(
        data, dtype="<i2", count=record_samples * num_records, offset=total_header
    )
    per_record = flat.reshape(num_records, record_samples)
    channels = []
    offset = 0
    for s in signals:
        block = per_record[:, offset : offset + s.samples_per_record]
        channels.append(np.ascontiguousarray(block).reshape(-1))
        offset += s.samples_per_record
    return header, channels


# ---------------------------------------------------------------------------
# Header writing (companion writer; round-trips through parse_edf)


def _pad(text: str, width: int, name: str) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"{name} {text!r} exceeds {width} ASCII bytes")
    return raw.ljust(width)


def _fmt_number(value: float, width: int, name: str) -> bytes:
    if float(value).is_integer():
        text = str(int(value))
    else:
        text = repr(float(value))
        if len(text) > width:
            text = f"{value:.{width - 2}g}"
    return _pad(text, width, name)


def write_edf(header: EdfHeader, channels: Sequence[np.ndarray]) -> bytes:
    """Serialize a header and per-signal digital arrays to EDF bytes."""
    if len(channels) != header.num_signals:
        raise ValueError("channel count does not match header")
    parts = [
        _pad(header.version, 8, "version"),
        _pad(header.patient_id, 80, "patient_id"),
        _pad(header.recording_id, 80, "recording_id"),
        _pad(header.start_date, 8, "start_date"),
        _pad(header.start_time, 8, "start_time"),
        _fmt_number(header.header_bytes, 8, "header_bytes"),
        _pad(header.reserved, 44, "reserved"),
        _fmt_number(header.num_records, 8, "num_records"),
        _fmt_number(header.record_duration_s, 8, "record_duration"),
        _fmt_number(header.num_signals, 4, "num_signals"),
    ]
    sigs = header.signals
    parts += [_pad(s.label, 16, "label") for s in sigs]
    parts += [_pad(s.transducer, 80, "transducer") for s in sigs]
    parts += [_pad(s.physical_dimension, 8, "physical_dimension") for s in sigs]
    parts += [_fmt_number(s.physical_min, 8, "physical_min") for s in sigs]
    parts += [_fmt_number(s.physical_max, 8, "physical_max") for s in sigs]
    parts += [_fmt_number(s.digital_min, 8, "digital_min") for s in sigs]
    parts += [_fmt_number(s.digital_max, 8, "digital_max") for s in sigs]
    parts += [_pad(s.prefiltering, 80, "prefiltering") for s in sigs]
    parts += [_fmt_number(s.samples_per_record, 8, "samples_per_record") for s in sigs]
    parts += [_pad(s.reserved, 32, "reserved") for s in sigs]

    records = []
    for rec in range(header.num_records):
        for s, chan in zip(sigs, channels):
            n = s.samples_per_record
            block = np.asarray(chan[rec * n : (rec + 1) * n], dtype="<i2")
            if len(block) != n:
                raise ValueError(
                    f"signal {s.label!r} has too few samples for "
                    f"{header.num_records} records"
                )
            records.append(block.tobytes())
    return b"".join(parts) + b"".join(records)


# ---------------------------------------------------------------------------
# Calibration


def to_physical(
    digital: np.ndarray | int | float, cal: SignalHeader
) -> tuple[np.ndarray | float, int]:
    """Convert digital samples to physical units (affine map).

    Out-of-range digital values are clamped to [digital_min, digital_max];
    returns the converted values and the clamped-sample count.
    """
    if cal.digital_min == cal.digital_max:
        raise DegenerateCalibration("digital_min equals digital_max")
    scalar = np.isscalar(digital)
    dig = np.asarray(digital, dtype=np.float64)
    clipped = int(np.count_nonzero((dig < cal.digital_min) | (dig > cal.digital_max)))
    if clipped:
        dig = np.clip(dig, cal.digital_min, cal.digital_max)
    gain = (cal.physical_max - cal.physical_min) / (cal.digital_max - cal.digital_min)
    phys = (dig - cal.digital_min) * gain + cal.physical_min
    return (float(phys), clipped) if scalar else (phys, clipped)


def to_digital(physical: np.ndarray, cal: SignalHeader) -> np.ndarray:
    """Inverse of :func:`to_physical`, rounded and clamped to the digital range."""
    gain = (cal.digital_max - cal.digital_min) / (cal.physical_max - cal.physical_min)
    dig = np.rint((np.asarray(physical, dtype=np.float64) - cal.physical_min) * gain)
    dig += cal.digital_min
    return np.clip(dig, cal.digital_min, cal.digital_max).astype(np.int16)


# ---------------------------------------------------------------------------
# Hypnogram annotations

_TAL_ONSET_RE = re.compile(rb"^[+-]\d+(\.\d*)?$")
_TAL_DURATION_RE = re.compile(rb"^\d+(\.\d*)?$")


def parse_tal_stream(raw: bytes) -> list[Annotation]:
    """Decode a stream of 0x00-terminated TALs into annotations.

    Timekeeping TALs (empty annotation text) are dropped. Raises
    :class:`UnparsableTAL` on malformed structure.
    """
    annotations = []
    for tal in raw.split(b"\x00"):
        if not tal:
            continue
        fields = tal.split(b"\x14")
        if len(fields) < 2 or fields[-1] != b"":
            raise UnparsableTAL(f"TAL not 0x14-terminated: {tal!r}")
        head = fields[0].split(b"\x15")
        if len(head) > 2 or not _TAL_ONSET_RE.match(head[0]):
            raise UnparsableTAL(f"bad TAL onset field: {fields[0]!r}")
        onset = float(head[0])
        duration = 0.0
        if len(head) == 2:
            if not _TAL_DURATION_RE.match(head[1]):
                raise UnparsableTAL(f"bad TAL duration field: {fields[0]!r}")
            duration = float(head[1])
        for text in fields[1:-1]:
            label = text.decode("utf-8", errors="replace")
            if label:
                annotations.append(Annotation(onset, duration, label))
    return annotations


def _check_stage_overlap(annotations: list[Annotation]) -> None:
    stages = sorted(
        (a for a in annotations if is_stage_annotation(a.label)),
        key=lambda a: a.onset_s,
    )
    for prev, cur in zip(stages, stages[1:]):
        if cur.onset_s < prev.onset_s + prev.duration_s - 1e-9:
            raise OverlappingAnnotations(
                f"{prev.label!r} at {prev.onset_s}s (dur {prev.duration_s}s) "
                f"overlaps {cur.label!r} at {cur.onset_s}s"
            )


def parse_hypnogram_csv(text: str) -> list[Annotation]:
    """Parse ``onset,duration,label`` lines (header line optional)."""
    annotations = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",", 2)
        if len(parts) != 3:
            raise UnparsableTAL(f"CSV line {lineno}: expected 3 columns: {line!r}")
        try:
            onset, duration = float(parts[0]), float(parts[1])
        except ValueError:
            if lineno == 1:  # header row
                continue
            raise UnparsableTAL(f"CSV line {lineno}: non-numeric onset/duration")
        annotations.append(Annotation(onset, duration, parts[2].strip()))
    annotations.sort(key=lambda a: a.onset_s)
    _check_stage_overlap(annotations)
    return annotations


def parse_hypnogram(source: bytes | str | Path) -> list[Annotation]:
    """Parse a hypnogram from an EDF+ annotation file or a CSV fallback.

    Returns annotations sorted chronologically; sleep-stage annotations are
    checked for overlap.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.suffix.lower() in (".csv", ".txt"):
            return parse_hypnogram_csv(path.read_text())
        source = path.read_bytes()
    header, channels = parse_edf(source)
    for sig, chan in zip(header.signals, channels):
        if sig.label == _ANNOTATION_LABEL:
            annotations = parse_tal_stream(chan.astype("<i2").tobytes())
            annotations.sort(key=lambda a: a.onset_s)
            _check_stage_overlap(annotations)
            return annotations
    raise UnparsableTAL("no 'EDF Annotations' signal in file")


def _lights_markers(
    annotations: Sequence[Annotation],
) -> tuple[float | None, float | None]:
    off = on = None
    for a in annotations:
        text = a.label.lower()
        if "lights" in text and "off" in text:
            off = a.onset_s if off is None else min(off, a.onset_s)
        elif "lights" in text and "on" in text:
            on = a.onset_s if on is None else max(on, a.onset_s)
    return off, on


def trim_sleeping_time(
    recording: Recording, annotations: Sequence[Annotation]
) -> Recording:
    """Restrict a recording to sleeping time.

    Keeps [lights_off, lights_on] when both markers exist, otherwise 15
    minutes before the first and after the last scored sleep epoch,
    intersected with the recording bounds. The trailing partial epoch is
    dropped so the result splits into whole 30 s epochs.
    """
    lights_off, lights_on = _lights_markers(annotations)
    if lights_off is not None and lights_on is not None:
        t0, t1 = lights_off, lights_on
    else:
        sleep = [
            a for a in annotations if map_stage_label(a.label) in SLEEPING_STAGES
        ]
        if not sleep:
            raise NoScoredSleep("no sleep-stage annotation in hypnogram")
        t0 = min(a.onset_s for a in sleep) - 900.0
        t1 = max(a.onset_s + a.duration_s for a in sleep) + 900.0
    t0 = max(t0, 0.0)
    t1 = min(t1, recording.duration_s)

    per_epoch = recording.samples_per_epoch
    i0 = int(round(t0 * recording.fs))
    n_epochs = max(int(math.floor((t1 - t0) / EPOCH_SECONDS + 1e-9)), 0)
    n_epochs = min(n_epochs, (len(recording.samples) - i0) // per_epoch)
    samples = recording.samples[i0 : i0 + n_epochs * per_epoch].copy()
    return replace(
        recording, samples=samples, start_epoch_offset=i0 / recording.fs
    )


def label_epochs(
    recording: Recording, annotations: Sequence[Annotation]
) -> list[LabeledEpoch]:
    """Label each whole 30 s epoch of a trimmed recording.

    The label comes from the stage annotation covering the epoch start;
    coverage through the epoch end is required (:class:`GapInAnnotations`
    otherwise). Excluded scorings (movement, unscored) drop the epoch.
    """
    stages = sorted(
        (a for a in annotations if is_stage_annotation(a.label)),
        key=lambda a: a.onset_s,
    )
    epochs = []
    for k in range(recording.num_epochs):
        t = recording.start_epoch_offset + k * EPOCH_SECONDS
        t_end = t + EPOCH_SECONDS
        covering = None
        covered_to = t
        for a in stages:
            if a.onset_s > covered_to + 1e-9:
                break
            if a.onset_s + a.duration_s <= t + 1e-9:
                continue
            if covering is None and a.onset_s <= t + 1e-9:
                covering = a
            covered_to = max(covered_to, a.onset_s + a.duration_s)
            if covered_to >= t_end - 1e-9:
                break
        if covering is None or covered_to < t_end - 1e-9:
            raise GapInAnnotations(f"epoch {k} at {t}s is not fully annotated")
        stage = map_stage_label(covering.label)
        if stage is None:
            continue
        epochs.append(
            LabeledEpoch(recording.subject_id, recording.night, k, stage)
        )
    return epochs


def count_stages(epochs: Sequence[LabeledEpoch]) -> dict[str, int]:
    counts = {s.name: 0 for s in SleepStage}
    for e in epochs:
        counts[e.stage.name] += 1
    return counts


# ---------------------------------------------------------------------------
# File-level helpers


def load_recording(
    psg_path: Path | str, channel: str, subject_id: str, night: int
) -> tuple[Recording, int]:
    """Decode one EEG channel of a PSG file into physical units.

    Returns the recording and the clamped (out-of-digital-range) sample count.
    """
    header, channels = parse_edf(psg_path)
    for sig, chan in zip(header.signals, channels):
        if sig.label == channel:
            if header.record_duration_s <= 0:
                raise MalformedHeader("record duration must be positive")
            fs = sig.samples_per_record / header.record_duration_s
            physical, clipped = to_physical(chan, sig)
            if clipped:
                logger.warning(
                    "%s: clamped %d out-of-range samples on %r",
                    psg_path,
                    clipped,
                    channel,
                )
            return (
                Recording(
                    subject_id=subject_id,
                    night=night,
                    channel=channel,
                    fs=fs,
                    samples=physical,
                ),
                clipped,
            )
    raise MalformedHeader(f"channel {channel!r} not present in {psg_path}")


def encode_tals(
    annotations: Sequence[Annotation], record_onset_s: float = 0.0
) -> bytes:
    """Encode annotations as one TAL record payload (timekeeping TAL first)."""

    def num(x: float) -> str:
        return str(int(x)) if float(x).is_integer() else repr(float(x))

    out = [f"+{num(record_onset_s)}\x14\x14\x00".encode()]
    for a in annotations:
        out.append(
            f"+{num(a.onset_s)}\x15{num(a.duration_s)}\x14{a.label}\x14\x00".encode()
        )
    return b"".join(out)


def build_hypnogram_edf(
    annotations: Sequence[Annotation],
    *,
    start_date: str = "01.01.01",
    start_time: str = "00.00.00",
    recording_id: str = "",
) -> bytes:
    """Build an EDF+ file holding only an annotation signal."""
    payload = encode_tals(annotations)
    if len(payload) % 2:
        payload += b"\x00"
    spr = len(payload) // 2
    total = max((a.onset_s + a.duration_s for a in annotations), default=1.0)
    sig = SignalHeader(
        label=_ANNOTATION_LABEL,
        physical_min=-1.0,
        physical_max=1.0,
        digital_min=-32768,
        digital_max=32767,
        samples_per_record=spr,
    )
    header = EdfHeader(
        version="0",
        patient_id="X X X X",
        recording_id=recording_id or "Startdate X X X X",
        start_date=start_date,
        start_time=start_time,
        header_bytes=_HEADER_SIZE * 2,
        reserved="EDF+C",
        num_records=1,
        record_duration_s=float(total),
        num_signals=1,
        signals=(sig,),
    )
    samples = np.frombuffer(payload, dtype="<i2")
    return write_edf(header, [samples])


def build_psg_edf(recording: Recording, physical_range: float = 250.0) -> bytes:
    """Serialize a recording as a single-channel EDF with 30 s data records."""
    per_epoch = recording.samples_per_epoch
    n_records = recording.num_epochs
    if n_records * per_epoch != len(recording.samples):
        raise ValueError("recording length is not a whole number of epochs")
    sig = SignalHeader(
        label=recording.channel,
        transducer="synthetic",
        physical_dimension="uV",
        physical_min=-physical_range,
        physical_max=physical_range,
        digital_min=-32768,
        digital_max=32767,
        samples_per_record=per_epoch,
    )
    header = EdfHeader(
        version="0",
        patient_id=f"{recording.subject_id} X X X",
        recording_id=f"Startdate X {recording.subject_id} night {recording.night}",
        start_date="01.01.01",
        start_time="22.00.00",
        header_bytes=_HEADER_SIZE * 2,
        reserved="",
        num_records=n_records,
        record_duration_s=EPOCH_SECONDS,
        num_signals=1,
        signals=(sig,),
    )
    return write_edf(header, [to_digital(recording.samples, sig)])


_SYNTH_NAME_RE = re.compile(r"^(?P<subject>.+?)n(?P<night>\d+)-PSG\.edf$")
_SLEEPEDF_NAME_RE = re.compile(r"^SC4(?P<subject>\d{2})(?P<night>\d)[A-Z0-9]*-PSG\.edf$")


class RecordingFiles(NamedTuple):
    subject_id: str
    night: int
    psg_path: Path
    hypnogram_path: Path


def find_recordings(data_dir: Path | str) -> list[RecordingFiles]:
    """Discover PSG/hypnogram file pairs under a directory.

    Recognizes the synthetic naming scheme ``<subject>n<night>-PSG.edf`` and
    Sleep-EDF style ``SC4ssN*-PSG.edf``; the hypnogram is the sibling
    ``*-Hypnogram.edf`` (or ``.csv``) sharing the subject/night prefix.
    """
    data_dir = Path(data_dir)
    found = []
    for psg in sorted(data_dir.glob("*-PSG.edf")):
        m = _SLEEPEDF_NAME_RE.match(psg.name) or _SYNTH_NAME_RE.match(psg.name)
        if not m:
            logger.warning("skipping unrecognized PSG file name: %s", psg.name)
            continue
        subject, night = m.group("subject"), int(m.group("night"))
        stem = psg.name[: -len("-PSG.edf")]
        candidates = [
            data_dir / f"{stem}-Hypnogram.edf",
            data_dir / f"{stem}-Hypnogram.csv",
        ]
        candidates += sorted(data_dir.glob(f"{stem[:-1]}?-Hypnogram.edf"))
        hyp = next((c for c in candidates if c.exists()), None)
        if hyp is None:
            logger.warning("no hypnogram found for %s", psg.name)
            continue
        found.append(RecordingFiles(subject, night, psg, hyp))
    return found
