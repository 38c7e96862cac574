"""Pipeline configuration: JSON schema, defaults, round-trip serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from sleepspec.backend import ALL_CAPABILITIES, BackendDescriptor
from sleepspec.multitaper import MultitaperConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    data_dir: str
    output_dir: str
    channel: str = "EEG Fpz-Cz"
    multitaper: MultitaperConfig = field(default_factory=MultitaperConfig)
    imaging_mode: str = "percentile"
    fold_seed: int = 20
    backend_mode: str = "builtin"
    backend_executable: tuple[str, ...] = ()
    training: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {self.schema_version}; "
                f"this build reads version {SCHEMA_VERSION}"
            )
        if self.imaging_mode not in ("percentile", "paper"):
            raise ConfigError(f"imaging_mode must be percentile|paper, got {self.imaging_mode!r}")

    def backend(self) -> BackendDescriptor:
        return BackendDescriptor(
            mode=self.backend_mode,
            executable=self.backend_executable,
            capabilities=ALL_CAPABILITIES,
            config=self.training or None,
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "data_dir": self.data_dir,
            "output_dir": self.output_dir,
            "channel": self.channel,
            "multitaper": self.multitaper.to_dict(),
            "imaging_mode": self.imaging_mode,
            "fold_seed": self.fold_seed,
            "backend_mode": self.backend_mode,
            "backend_executable": list(self.backend_executable),
            "training": dict(self.training),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        required = {"data_dir", "output_dir"}
        missing = required - d.keys()
        if missing:
            raise ConfigError(f"config missing required field(s): {sorted(missing)}")
        if "multitaper" in d:
            d["multitaper"] = MultitaperConfig.from_dict(d["multitaper"])
        if "backend_executable" in d:
            d["backend_executable"] = tuple(d["backend_executable"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad config field: {exc}") from None


def load_config(path: Path | str) -> PipelineConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    return PipelineConfig.from_dict(data)


def save_config(cfg: PipelineConfig, path: Path | str) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
