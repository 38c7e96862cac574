"""Multitaper EEG spectrogram imaging and sleep-stage classification toolkit."""

from sleepspec.stages import SleepStage

__version__ = "0.1.0"

__all__ = ["SleepStage", "__version__"]
