"""Configuration models for acmamba."""

import math
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class SamplingMode(str, Enum):
    """How training samples are drawn from the cube."""
    REGION = "region"
    DENSE = "dense"


class MaskStrategy(str, Enum):
    """How regions are chosen for masking."""
    DIFFICULTY = "difficulty"
    RANDOM = "random"


class EncoderPath(str, Enum):
    """Which encoder feeds the shared decoder."""
    ORIGINAL = "original"
    MASKED = "masked"


class SceneSpec(BaseModel):
    """Parameters of a synthetic hyperspectral scene."""

    model_config = ConfigDict(extra="forbid")

    height: int = Field(100, ge=2, description="Scene height in pixels")
    width: int = Field(100, ge=2, description="Scene width in pixels")
    bands: int = Field(50, ge=1, description="Number of spectral bands")
    n_endmembers: int = Field(3, ge=2, description="Background materials mixed per pixel")
    n_anomalies: int = Field(5, ge=0, description="Maximum number of implanted anomaly blobs")
    anomaly_fraction: float = Field(0.01, gt=0.0, le=0.1, description="Target fraction of anomalous pixels")
    noise_sigma: float = Field(0.01, ge=0.0, description="Additive Gaussian noise scale")
    seed: int = Field(42, ge=0, description="RNG seed")


class SegmentationConfig(BaseModel):
    """SLIC parameters; the region count target is derived from TrainConfig.psi."""

    model_config = ConfigDict(extra="forbid")

    compactness: float = Field(0.1, gt=0.0, description="Spatial weight relative to spectral distance")
    iters: int = Field(10, ge=1, description="SLIC assignment/update rounds")
    min_regions: int = Field(4, ge=1, description="Abort the run below this many regions")


class TrainConfig(BaseModel):
    """Hyperparameters of region-based training."""

    model_config = ConfigDict(extra="forbid", use_enum_values=True)

    epochs: int = Field(100, ge=0, description="Optimization steps (one per epoch)")
    lr: float = Field(5e-4, gt=0.0, description="AdamW learning rate")
    psi: float = Field(150.0, gt=0.0, description="Compression ratio: pixels per region")
    beta_max: float = Field(2.0, ge=0.0, description="Bound of the representative-sample diversity factor")
    eta: float = Field(0.01, ge=0.0, lt=1.0, description="Fraction of regions masked each epoch")
    k: float = Field(2.0, gt=0.0, description="Norm order of reconstruction errors")
    seed: int = Field(42, ge=0, description="Seed for initialization, sampling and masking")

    hidden_dim: int = Field(256, ge=1, description="Encoder output width D")
    state_dim: int = Field(16, ge=1, description="SSM state size N")
    weight_decay: float = Field(0.01, ge=0.0, description="AdamW decoupled weight decay")
    beta1: float = Field(0.9, gt=0.0, lt=1.0, description="AdamW first-moment decay")
    beta2: float = Field(0.999, gt=0.0, lt=1.0, description="AdamW second-moment decay")
    adam_eps: float = Field(1e-8, gt=0.0, description="AdamW denominator epsilon")
    dtype: str = Field("float32", description="Parameter precision (float32 or float64)")

    sampling: SamplingMode = Field(SamplingMode.REGION, description="Region-based or dense pixel training")
    consensus: bool = Field(True, description="Train both encoder paths with gradient calibration")
    mask_strategy: MaskStrategy = Field(MaskStrategy.DIFFICULTY, description="Difficulty-aware or uniform masking")

    @field_validator("dtype")
    @classmethod
    def dtype_must_be_float(cls, v):
        if v not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {v}")
        return v

    def n_regions_target(self, height: int, width: int) -> int:
        """Region count target ceil(H*W / psi), clamped to [1, H*W]."""
        n_pixels = height * width
        return max(1, min(n_pixels, math.ceil(n_pixels / self.psi)))


class DetectionConfig(BaseModel):
    """Options of pixel-based detection."""

    model_config = ConfigDict(extra="forbid", use_enum_values=True)

    k: float = Field(2.0, gt=0.0, description="Norm order of the detail error map")
    full_covariance: bool = Field(False, description="Use a full covariance in the holistic Mahalanobis map")
    encoder: EncoderPath = Field(EncoderPath.ORIGINAL, description="Encoder used at inference")
    chunk_length: Optional[int] = Field(None, ge=1, description="Split the pixel sequence into chunks of this length")
    threshold: Optional[float] = Field(None, description="Binarization threshold for the fused map")


class RunConfig(BaseModel):
    """Root configuration for a pipeline run."""

    model_config = ConfigDict(extra="forbid")

    scene: SceneSpec = Field(default_factory=SceneSpec, description="Synthetic scene parameters")
    segmentation: SegmentationConfig = Field(default_factory=SegmentationConfig, description="Segmentation parameters")
    train: TrainConfig = Field(default_factory=TrainConfig, description="Training hyperparameters")
    detection: DetectionConfig = Field(default_factory=DetectionConfig, description="Detection options")

    output_dir: str = Field("acmamba_output", description="Directory for all artefacts")
    cube_path: Optional[str] = Field(None, description="Input cube (defaults to <output_dir>/cube.hsc)")
    mask_path: Optional[str] = Field(None, description="Ground truth mask (defaults to <output_dir>/mask.hsc)")
    evaluate: bool = Field(True, description="Compute ROC/AUC against the mask")
    log_level: str = Field("INFO", description="Logging level")
    bench_repetitions: int = Field(1, ge=1, description="Timed runs of the train and detect stages; the median is reported")

    @model_validator(mode="before")
    @classmethod
    def accept_flat_train_keys(cls, data):
        """A flat mapping of TrainConfig keys is read as the train section."""
        if isinstance(data, dict) and data and set(data) <= set(TrainConfig.model_fields):
            return {"train": data}
        return data

    @field_validator("log_level")
    @classmethod
    def log_level_must_be_valid(cls, v):
        if v.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"Invalid log level: {v}")
        return v.upper()
