"""
Hyperspectral cube representation.

HsiCube and GroundTruthMask are immutable wrappers around numpy rasters with
pixel-major, band-innermost layout (H x W x C).
"""

from dataclasses import dataclass
import logging

import numpy as np

from acmamba.core.exceptions import DimMismatch

logger = logging.getLogger(__name__)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class HsiCube:
    """H x W x C reflectance raster stored as 32-bit floats."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise DimMismatch(f"Cube values must be 3-D (H, W, C), got shape {values.shape}")
        if min(values.shape) < 1:
            raise DimMismatch(f"Cube dimensions must be positive, got {values.shape}")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def pixels(self) -> np.ndarray:
        """Pixel spectra as an (H*W) x C matrix in row-major pixel order."""
        return self.values.reshape(self.n_pixels, self.bands)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HsiCube):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(
            np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32))
        )


@dataclass(frozen=True, eq=False)
class GroundTruthMask:
    """H x W binary raster, 1 marks an anomalous pixel."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DimMismatch(f"Mask labels must be 2-D (H, W), got shape {labels.shape}")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ValueError("Mask labels must be binary (0 or 1)")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def anomaly_count(self) -> int:
        return int(self.labels.sum())

    @property
    def anomaly_fraction(self) -> float:
        return self.anomaly_count / self.labels.size

    def has_both_classes(self) -> bool:
        return 0 < self.anomaly_count < self.labels.size

    def matches(self, cube: HsiCube) -> bool:
        return (self.height, self.width) == (cube.height, cube.width)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroundTruthMask):
            return NotImplemented
        return bool(np.array_equal(self.labels, other.labels))


def normalize(cube: HsiCube) -> HsiCube:
    """Per-band min-max scaling to [0, 1]; zero-range bands map to 0.

    Args:
        cube: Input cube

    Returns:
        HsiCube: Normalized cube
    """
    values = cube.values.astype(np.float64)
    low = values.min(axis=(0, 1))
    high = values.max(axis=(0, 1))
    span = high - low
    flat = span == 0
    scaled = (values - low) / np.where(flat, 1.0, span)
    scaled[..., flat] = 0.0
    if flat.any():
        logger.debug(f"normalize: {int(flat.sum())} constant band(s) mapped to 0")
    return HsiCube(np.clip(scaled, 0.0, 1.0).astype(np.float32))
