"""Multimodal (EEG + eye tracking) reading-confusion detection pipeline."""

from .core import (ConditionLabel, EpochSet, FeatureTable, GazeStream,
                   PipelineConfig, Recording, StimulusTrial)
from .errors import ConfuseqError, DataError, NumericalError, ParseError

__version__ = "0.1.0"

__all__ = [
    "ConditionLabel", "EpochSet", "FeatureTable", "GazeStream",
    "PipelineConfig", "Recording", "StimulusTrial", "ConfuseqError",
    "DataError", "NumericalError", "ParseError", "__version__",
]
