"""Pipeline orchestration CLI.

Subcommands mirror the pipeline stages (synth, ingest, render, split, train,
predict, evaluate, sensitivity) over a JSON config; expensive stages cache
their artifacts so runs resume. Exit codes: 0 success, 1 domain error,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from sleepspec import edf, imaging, metrics, sensitivity
from sleepspec.backend import (
    BackendFailed,
    invoke_input_grad,
    invoke_predict,
    invoke_train,
)
from sleepspec.config import ConfigError, PipelineConfig, load_config, save_config
from sleepspec.dataset import (
    FoldSpec,
    ManifestEntry,
    build_synthetic_corpus,
    class_histogram,
    entry_for,
    make_folds,
    read_manifest,
    split_manifest,
    write_manifest,
)
from sleepspec.multitaper import epoch_spectrogram
from sleepspec.stages import STAGE_NAMES, SleepStage
from sleepspec.tensorfile import write_tensor

logger = logging.getLogger(__name__)


class DomainError(RuntimeError):
    """Pipeline-level failure (missing prerequisite, bad data); exit code 1."""


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DomainError(f"missing {hint}: {path} (run the earlier stage first)")
    return path


def _log_effective_config(cfg: PipelineConfig, command: str) -> None:
    log_dir = Path(cfg.output_dir) / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, log_dir / f"effective_config_{command}.json")


# ---------------------------------------------------------------------------
# Stage implementations


def cmd_synth(cfg: PipelineConfig, seed: int | None, subjects: int, nights: int) -> None:
    description = build_synthetic_corpus(
        cfg.data_dir,
        num_subjects=subjects,
        nights=nights,
        seed=cfg.fold_seed if seed is None else seed,
        fs=cfg.multitaper.fs,
        channel=cfg.channel,
    )
    logger.info("wrote %d synthetic recordings", len(description["recordings"]))


def _ingest_one(cfg: PipelineConfig, files: edf.RecordingFiles) -> dict:
    recording, clipped = edf.load_recording(
        files.psg_path, cfg.channel, files.subject_id, files.night
    )
    annotations = edf.parse_hypnogram(files.hypnogram_path)
    trimmed = edf.trim_sleeping_time(recording, annotations)
    epochs = edf.label_epochs(trimmed, annotations)
    counts = edf.count_stages(epochs)
    return {
        "subject": files.subject_id,
        "night": files.night,
        "channel": cfg.channel,
        "fs": trimmed.fs,
        "trimmed_start_s": trimmed.start_epoch_offset,
        "trimmed_end_s": trimmed.start_epoch_offset + trimmed.duration_s,
        "n_epochs": trimmed.num_epochs,
        "stage_counts": counts,
        "excluded": trimmed.num_epochs - len(epochs),
        "clipped_samples": clipped,
        "psg_path": str(files.psg_path),
        "hypnogram_path": str(files.hypnogram_path),
    }


def cmd_ingest(cfg: PipelineConfig) -> None:
    pairs = edf.find_recordings(cfg.data_dir)
    if not pairs:
        raise DomainError(f"no PSG/hypnogram pairs found under {cfg.data_dir}")
    rec_dir = Path(cfg.output_dir) / "recordings"
    rec_dir.mkdir(parents=True, exist_ok=True)
    for files in pairs:
        manifest = _ingest_one(cfg, files)
        out = rec_dir / f"{files.subject_id}_n{files.night}.json"
        with open(out, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        logger.info(
            "%s night %d: %d epochs %s",
            files.subject_id,
            files.night,
            manifest["n_epochs"],
            manifest["stage_counts"],
        )


def _render_recording(args: tuple) -> list[dict]:
    cfg, rec_manifest = args
    recording, _ = edf.load_recording(
        rec_manifest["psg_path"],
        cfg.channel,
        rec_manifest["subject"],
        rec_manifest["night"],
    )
    annotations = edf.parse_hypnogram(rec_manifest["hypnogram_path"])
    trimmed = edf.trim_sleeping_time(recording, annotations)
    epochs = edf.label_epochs(trimmed, annotations)
    spectrograms = {
        e.epoch_index: epoch_spectrogram(trimmed, e.epoch_index, cfg.multitaper)
        for e in epochs
    }
    stats = None
    if cfg.imaging_mode == "percentile":
        all_power = np.stack([s.power for s in spectrograms.values()])
        stats = imaging.power_percentiles(all_power)
    image_dir = Path(cfg.output_dir) / "images"
    records = []
    for e in epochs:
        image = imaging.spectrogram_to_image(
            spectrograms[e.epoch_index],
            e.stage,
            e.subject_id,
            e.night,
            e.epoch_index,
            mode=cfg.imaging_mode,
            stats=stats,
        )
        path = image_dir / imaging.image_filename(
            e.subject_id, e.night, e.epoch_index, e.stage
        )
        imaging.encode_png(image, path)
        records.append(entry_for(e, str(path)).to_dict())
    return records


def cmd_render(cfg: PipelineConfig, jobs: int = 1) -> None:
    rec_dir = _require(Path(cfg.output_dir) / "recordings", "recording manifests")
    rec_manifests = []
    for path in sorted(rec_dir.glob("*.json")):
        with open(path) as fh:
            rec_manifests.append(json.load(fh))
    if not rec_manifests:
        raise DomainError(f"no recording manifests under {rec_dir}")
    (Path(cfg.output_dir) / "images").mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, m) for m in rec_manifests]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            all_records = list(pool.map(_render_recording, tasks))
    else:
        all_records = [_render_recording(t) for t in tasks]
    entries = [ManifestEntry(**r) for records in all_records for r in records]
    write_manifest(entries, Path(cfg.output_dir) / "images_manifest.jsonl")
    logger.info("rendered %d images (%s)", len(entries), class_histogram(entries))


def cmd_split(cfg: PipelineConfig) -> None:
    manifest_path = _require(
        Path(cfg.output_dir) / "images_manifest.jsonl", "image manifest"
    )
    entries = read_manifest(manifest_path)
    subjects = sorted({e.subject for e in entries})
    folds = make_folds(subjects, cfg.fold_seed)
    out = Path(cfg.output_dir) / "folds.json"
    with open(out, "w") as fh:
        json.dump(
            {"seed": cfg.fold_seed, "folds": [f.to_dict() for f in folds]},
            fh,
            indent=2,
            sort_keys=True,
        )
    logger.info("wrote %d folds for %d subjects", len(folds), len(subjects))


def _load_folds(cfg: PipelineConfig) -> list[FoldSpec]:
    folds_path = _require(Path(cfg.output_dir) / "folds.json", "fold file")
    with open(folds_path) as fh:
        data = json.load(fh)
    return [FoldSpec.from_dict(d) for d in data["folds"]]


def _fold_dir(cfg: PipelineConfig, fold_index: int) -> Path:
    return Path(cfg.output_dir) / "folds" / f"fold_{fold_index}"


def _prepare_fold(cfg: PipelineConfig, fold_index: int) -> tuple[FoldSpec, Path]:
    folds = _load_folds(cfg)
    if not 0 <= fold_index < len(folds):
        raise DomainError(f"fold {fold_index} out of range (have {len(folds)})")
    fold = folds[fold_index]
    entries = read_manifest(
        _require(Path(cfg.output_dir) / "images_manifest.jsonl", "image manifest")
    )
    fold_dir = _fold_dir(cfg, fold_index)
    fold_dir.mkdir(parents=True, exist_ok=True)
    train, val, test = split_manifest(entries, fold)
    if not train or not val or not test:
        raise DomainError(
            f"fold {fold_index} has an empty partition "
            f"(train={len(train)}, val={len(val)}, test={len(test)})"
        )
    write_manifest(train, fold_dir / "train_manifest.jsonl")
    write_manifest(val, fold_dir / "val_manifest.jsonl")
    write_manifest(test, fold_dir / "test_manifest.jsonl")
    return fold, fold_dir


def cmd_train(cfg: PipelineConfig, fold_index: int) -> None:
    fold, fold_dir = _prepare_fold(cfg, fold_index)
    invoke_train(
        cfg.backend(),
        fold_dir / "train_manifest.jsonl",
        fold_dir / "val_manifest.jsonl",
        fold_dir / "model",
    )
    logger.info("fold %d (test %s): model trained", fold_index, fold.test_subject)


def cmd_predict(cfg: PipelineConfig, fold_index: int) -> None:
    fold, fold_dir = _prepare_fold(cfg, fold_index)
    model_dir = fold_dir / "model"
    _require(model_dir / "model.meta.json", "trained model")
    test_manifest = fold_dir / "test_manifest.jsonl"
    probs = invoke_predict(
        cfg.backend(), model_dir, test_manifest, fold_dir / "probs.tnsr"
    )
    entries = read_manifest(test_manifest)
    true_idx = [STAGE_NAMES.index(e.label) for e in entries]
    pred_idx = probs.argmax(axis=1)
    cm = metrics.ConfusionMatrix.from_predictions(
        true_idx, pred_idx, model_tag=cfg.backend_mode, subject=fold.test_subject
    )
    with open(fold_dir / "confusion.json", "w") as fh:
        json.dump(
            {
                "model_tag": cm.model_tag,
                "subject": cm.subject,
                "stage_order": list(STAGE_NAMES),
                "counts": cm.counts.tolist(),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
    accuracy = float(np.mean(np.asarray(true_idx) == pred_idx))
    logger.info("fold %d (test %s): accuracy %.3f", fold_index, fold.test_subject, accuracy)


def cmd_evaluate(cfg: PipelineConfig, seed: int | None) -> None:
    folds_root = _require(Path(cfg.output_dir) / "folds", "fold predictions")
    matrices = []
    for confusion_path in sorted(folds_root.glob("fold_*/confusion.json")):
        with open(confusion_path) as fh:
            data = json.load(fh)
        matrices.append(
            metrics.ConfusionMatrix(
                counts=np.asarray(data["counts"]),
                model_tag=data["model_tag"],
                subject=data["subject"],
            )
        )
    if not matrices:
        raise DomainError(f"no per-fold confusion matrices under {folds_root}")
    report = metrics.build_report(
        matrices, seed=cfg.fold_seed if seed is None else seed
    )
    with open(Path(cfg.output_dir) / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    text = metrics.format_report(report)
    (Path(cfg.output_dir) / "report.txt").write_text(text)
    print(text, end="")


def cmd_sensitivity(cfg: PipelineConfig, subject: str, stage_name: str) -> None:
    folds = _load_folds(cfg)
    fold_index = next(
        (i for i, f in enumerate(folds) if f.test_subject == subject), None
    )
    if fold_index is None:
        raise DomainError(f"no fold has test subject {subject!r}")
    fold_dir = _fold_dir(cfg, fold_index)
    model_dir = fold_dir / "model"
    _require(model_dir / "model.meta.json", "trained model")
    entries = read_manifest(
        _require(Path(cfg.output_dir) / "images_manifest.jsonl", "image manifest")
    )
    if stage_name != "all" and stage_name not in STAGE_NAMES:
        raise DomainError(
            f"unknown stage {stage_name!r}; use one of {', '.join(STAGE_NAMES)} or 'all'"
        )
    stages = (
        list(SleepStage) if stage_name == "all" else [SleepStage[stage_name]]
    )
    maps_dir = Path(cfg.output_dir) / "sensmaps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    for stage in stages:
        rows = sensitivity.select_rows(entries, stage, subject)
        if not rows:
            raise DomainError(f"no {stage.name} epochs for subject {subject}")
        selected = [entries[i] for i in rows]
        sel_manifest = fold_dir / f"sens_{subject}_{stage.name}_manifest.jsonl"
        write_manifest(selected, sel_manifest)
        grads = invoke_input_grad(
            cfg.backend(),
            model_dir,
            sel_manifest,
            fold_dir / f"sens_{subject}_{stage.name}_grads.tnsr",
        )
        smap = sensitivity.sensitivity_map(grads, stage, subject)
        sensitivity.render_map(smap, maps_dir / sensitivity.map_filename(smap))
        write_tensor(
            maps_dir / f"sensmap_{subject}_{stage.name}.tnsr",
            smap.values.astype(np.float32),
        )
        logger.info(
            "sensitivity map for %s/%s over %d examples%s",
            subject,
            stage.name,
            smap.n_examples,
            " (degenerate)" if smap.degenerate else "",
        )


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sleepspec",
        description="EEG multitaper imaging and sleep-stage classification pipeline.",
    )
    parser.add_argument("--config", required=True, help="pipeline config JSON")
    parser.add_argument("--jobs", type=int, default=1, help="parallelism of pure stages")
    parser.add_argument("--seed", type=int, default=None, help="stage-specific seed override")
    parser.add_argument(
        "--backend",
        default=None,
        help="'builtin' or the path of an external backend executable",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a synthetic EDF corpus")
    p_synth.add_argument("--subjects", type=int, default=3)
    p_synth.add_argument("--nights", type=int, default=2)

    sub.add_parser("ingest", help="parse EDFs, trim, label epochs")
    sub.add_parser("render", help="render epoch images and the manifest")
    sub.add_parser("split", help="build leave-one-subject-out folds")

    p_train = sub.add_parser("train", help="train one fold")
    p_train.add_argument("--fold", type=int, required=True)
    p_predict = sub.add_parser("predict", help="predict one fold's test set")
    p_predict.add_argument("--fold", type=int, required=True)

    sub.add_parser("evaluate", help="aggregate report over all folds")

    p_sens = sub.add_parser("sensitivity", help="render sensitivity maps")
    p_sens.add_argument("--subject", required=True)
    p_sens.add_argument(
        "--stage", required=True, help="stage name (W, N1, N2, N3, R) or 'all'"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.backend is not None:
            overrides = cfg.to_dict()
            if args.backend == "builtin":
                overrides["backend_mode"] = "builtin"
                overrides["backend_executable"] = []
            else:
                overrides["backend_mode"] = "external"
                overrides["backend_executable"] = [args.backend]
            cfg = PipelineConfig.from_dict(overrides)
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        _log_effective_config(cfg, args.command)
        if args.command == "synth":
            cmd_synth(cfg, args.seed, args.subjects, args.nights)
        elif args.command == "ingest":
            cmd_ingest(cfg)
        elif args.command == "render":
            cmd_render(cfg, jobs=args.jobs)
        elif args.command == "split":
            cmd_split(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.fold)
        elif args.command == "predict":
            cmd_predict(cfg, args.fold)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.seed)
        elif args.command == "sensitivity":
            cmd_sensitivity(cfg, args.subject, args.stage)
    except (
        DomainError,
        ConfigError,
        BackendFailed,
        ValueError,
        RuntimeError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
