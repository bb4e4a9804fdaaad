"""Report models emitted by training and benchmarking."""

import math
from typing import List

from pydantic import BaseModel, Field, model_validator


class EpochReport(BaseModel):
    """Losses and calibration outcome of one training epoch."""

    epoch: int = Field(..., ge=0, description="Zero-based epoch index")
    loss_ori: float = Field(..., ge=0.0, description="Original-path consensus loss")
    loss_mask: float = Field(..., ge=0.0, description="Masked-path consensus loss")
    theta: float = Field(..., ge=0.0, le=math.pi, description="Angle between the two path gradients")
    applied: bool = Field(..., description="Whether gradient projection was applied")
    n_masked: int = Field(0, ge=0, description="Regions masked this epoch")
    region_errors: List[float] = Field(default_factory=list, description="Unmasked per-region errors in scan order")


class LossReport(BaseModel):
    """Per-epoch training history."""

    epochs: List[EpochReport] = Field(default_factory=list, description="One entry per epoch")

    def __len__(self) -> int:
        return len(self.epochs)

    def append(self, report: EpochReport) -> None:
        self.epochs.append(report)

    @property
    def final(self) -> EpochReport:
        if not self.epochs:
            raise IndexError("Loss report is empty")
        return self.epochs[-1]

    def rows(self) -> List[List]:
        """CSV rows: epoch, loss_ori, loss_mask, theta, applied."""
        return [[e.epoch, e.loss_ori, e.loss_mask, e.theta, int(e.applied)] for e in self.epochs]


class BenchReport(BaseModel):
    """Wall-clock timing of the train and detect stages."""

    train_seconds: float = Field(..., ge=0.0, description="Median training time")
    infer_seconds: float = Field(..., ge=0.0, description="Median detection time")
    samples_per_epoch: int = Field(..., ge=0, description="Sequence length seen per training step")
    n_regions: int = Field(..., ge=0, description="Regions after segmentation")
    n_pixels: int = Field(..., ge=0, description="Pixels in the scene")
    repetitions: int = Field(1, ge=1, description="Timed runs per stage")

    @model_validator(mode="after")
    def regions_within_pixels(self):
        if self.n_regions > self.n_pixels:
            raise ValueError(f"n_regions ({self.n_regions}) exceeds n_pixels ({self.n_pixels})")
        return self
