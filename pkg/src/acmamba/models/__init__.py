"""Configuration and report models for acmamba."""

from .config import (
    SamplingMode,
    MaskStrategy,
    EncoderPath,
    SceneSpec,
    SegmentationConfig,
    TrainConfig,
    DetectionConfig,
    RunConfig,
)

from .reports import (
    EpochReport,
    LossReport,
    BenchReport,
)

__all__ = [
    # Configuration
    "SamplingMode",
    "MaskStrategy",
    "EncoderPath",
    "SceneSpec",
    "SegmentationConfig",
    "TrainConfig",
    "DetectionConfig",
    "RunConfig",
    # Reports
    "EpochReport",
    "LossReport",
    "BenchReport",
]
