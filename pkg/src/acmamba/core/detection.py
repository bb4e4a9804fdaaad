"""
Pixel-level detection maps.

The holistic map scores each region by the Mahalanobis distance of its
reconstruction error from the mean error; the detail map is the per-pixel
reconstruction error; the final map is their elementwise product.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from acmamba.core.cube import HsiCube
from acmamba.core.exceptions import DimMismatch, UntrainedModel
from acmamba.core.segmentation import AttributeRepository, RegionMap, mean_sequence, project_regions_to_pixels
from acmamba.core.ssm import RsalAutoencoder
from acmamba.models.config import EncoderPath

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
RX_RIDGE = 1e-6


@dataclass(frozen=True, eq=False)
class DetectionMap:
    """Nonnegative H x W anomaly scores with an optional threshold."""

    scores: np.ndarray
    threshold: Optional[float] = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            raise DimMismatch(f"Detection scores must be 2-D, got shape {scores.shape}")
        if (scores < 0).any():
            raise ValueError("Detection scores must be nonnegative")
        object.__setattr__(self, "scores", scores)

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    def binarize(self, threshold: Optional[float] = None) -> np.ndarray:
        """Indicator of scores strictly above the threshold."""
        tau = self.threshold if threshold is None else threshold
        if tau is None:
            raise ValueError("No threshold given")
        return (self.scores > tau).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class HolisticStats:
    """Mean regional error and its per-band variance (floored at 1e-6)."""

    gamma: np.ndarray
    sigma_diag: np.ndarray


def _require_trained(model: RsalAutoencoder) -> None:
    if not model.initialized:
        raise UntrainedModel("Model parameters have not been initialized or loaded")


def holistic_stats(errors: np.ndarray) -> HolisticStats:
    errors = np.asarray(errors, dtype=np.float64)
    # max(var, eps), not var + eps: bands with real spread keep their exact variance
    return HolisticStats(gamma=errors.mean(axis=0), sigma_diag=np.maximum(errors.var(axis=0), VARIANCE_FLOOR))


def holistic_scores(errors: np.ndarray, full_covariance: bool = False) -> np.ndarray:
    """Mahalanobis distance of each regional error vector from the mean error.

    Args:
        errors: N_r x C regional error vectors
        full_covariance: Use the full error covariance (plus 1e-6 I) instead of the diagonal

    Returns:
        np.ndarray: N_r nonnegative scores
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 2:
        raise DimMismatch(f"Errors must be N_r x C, got shape {errors.shape}")
    stats = holistic_stats(errors)
    centered = errors - stats.gamma
    if not full_covariance:
        return (centered ** 2 / stats.sigma_diag).sum(axis=1)

    cov = np.atleast_2d(np.cov(centered, rowvar=False, bias=True)) + VARIANCE_FLOOR * np.eye(errors.shape[1])
    solved = cho_solve(cho_factor(cov), centered.T)
    return np.maximum((centered.T * solved).sum(axis=0), 0.0)


def holistic_map(
    model: RsalAutoencoder,
    repo: AttributeRepository,
    region_map: RegionMap,
    full_covariance: bool = False,
) -> np.ndarray:
    """Score every region from its mean spectrum and paint the scores onto pixels."""
    _require_trained(model)
    seq = mean_sequence(repo)
    recon = model.reconstruct(seq.values, EncoderPath.ORIGINAL)
    scores_in_order = holistic_scores(seq.values - recon, full_covariance)

    scores = np.empty(repo.n_regions)
    scores[seq.order] = scores_in_order
    logger.info(f"Holistic map over {repo.n_regions} regions (max score {scores.max():.4f})")
    return project_regions_to_pixels(scores, region_map)


def detail_map(
    model: RsalAutoencoder,
    cube: HsiCube,
    k: float = 2.0,
    encoder: str = EncoderPath.ORIGINAL,
    chunk_length: Optional[int] = None,
) -> np.ndarray:
    """Per-pixel reconstruction error over the row-major pixel sequence.

    Args:
        model: Trained autoencoder
        cube: Cube to score (normalized like the training data)
        k: Norm order over bands
        encoder: Which encoder path reconstructs the pixels
        chunk_length: Scan the sequence in independent chunks of this length

    Returns:
        np.ndarray: H x W error map
    """
    _require_trained(model)
    if cube.bands != model.bands:
        raise DimMismatch(f"Cube has {cube.bands} bands but the model expects {model.bands}")
    pixels = cube.pixels().astype(np.float64)
    step = chunk_length or pixels.shape[0]
    recon = np.concatenate(
        [model.reconstruct(pixels[i:i + step], encoder) for i in range(0, pixels.shape[0], step)]
    )
    errors = np.linalg.norm(pixels - recon, ord=k, axis=1)
    return errors.reshape(cube.height, cube.width)


def fuse(holistic: np.ndarray, detail: np.ndarray, threshold: Optional[float] = None) -> DetectionMap:
    """Elementwise product of the holistic and detail maps."""
    holistic, detail = np.asarray(holistic, dtype=np.float64), np.asarray(detail, dtype=np.float64)
    if holistic.shape != detail.shape:
        raise DimMismatch(f"Cannot fuse maps of shape {holistic.shape} and {detail.shape}")
    return DetectionMap(holistic * detail, threshold=threshold)


def rx_baseline(cube: HsiCube) -> DetectionMap:
    """Global RX: squared Mahalanobis distance of each pixel from the scene mean."""
    pixels = cube.pixels().astype(np.float64)
    centered = pixels - pixels.mean(axis=0)
    if pixels.shape[0] > 1:
        cov = np.atleast_2d(np.cov(pixels, rowvar=False))
    else:
        cov = np.zeros((cube.bands, cube.bands))
    cov = cov + RX_RIDGE * np.eye(cube.bands)
    solved = cho_solve(cho_factor(cov), centered.T)
    scores = np.maximum((centered.T * solved).sum(axis=0), 0.0)
    logger.info(f"RX baseline over {pixels.shape[0]} pixels x {cube.bands} bands")
    return DetectionMap(scores.reshape(cube.height, cube.width))
