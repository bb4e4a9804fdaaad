"""
Synthetic hyperspectral scenes with implanted anomalies.

Background pixels are convex mixtures of a few smooth endmember spectra with
spatially smooth abundances; anomaly pixels add s * anomaly_spectrum on top
of the background (A = B + S).
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from acmamba.core.cube import GroundTruthMask, HsiCube
from acmamba.core.exceptions import PlacementFailure
from acmamba.models.config import SceneSpec

logger = logging.getLogger(__name__)

MIN_SIDE = 2
MAX_SIDE = 6
MAX_ATTEMPTS = 1000
# Endmembers stay in [0.05, 0.45] and anomaly spectra in [0.1, 0.7], so
# B + s*S never exceeds 1 for s <= 0.7 and clipping leaves the model intact.
ENDMEMBER_RANGE = (0.05, 0.45)
ANOMALY_RANGE = (0.1, 0.7)
STRENGTH_RANGE = (0.3, 0.7)


@dataclass(frozen=True)
class Blob:
    """Axis-aligned anomaly rectangle."""
    row: int
    col: int
    height: int
    width: int
    strength: float


def _smooth_spectra(rng: np.random.Generator, count: int, bands: int, low: float, high: float) -> np.ndarray:
    raw = rng.uniform(0.0, 1.0, size=(count, bands))
    if bands > 1:
        raw = gaussian_filter1d(raw, sigma=max(1.0, bands / 10.0), axis=1, mode="nearest")
    lo = raw.min(axis=1, keepdims=True)
    hi = raw.max(axis=1, keepdims=True)
    unit = (raw - lo) / np.where(hi - lo > 0, hi - lo, 1.0)
    return low + (high - low) * unit


def _abundances(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    sigma = max(spec.height, spec.width) / 8.0
    fields = np.stack([
        gaussian_filter(rng.standard_normal((spec.height, spec.width)), sigma=sigma, mode="reflect")
        for _ in range(spec.n_endmembers)
    ], axis=-1)
    fields = fields - fields.min(axis=(0, 1), keepdims=True) + 1e-3
    return fields / fields.sum(axis=-1, keepdims=True)


def _place_blobs(rng: np.random.Generator, spec: SceneSpec) -> List[Blob]:
    target = int(round(spec.anomaly_fraction * spec.height * spec.width))
    occupied = np.zeros((spec.height, spec.width), dtype=bool)
    blobs: List[Blob] = []
    placed = 0

    while len(blobs) < spec.n_anomalies and placed < target:
        remaining_blobs = spec.n_anomalies - len(blobs)
        side = int(np.clip(round(np.sqrt((target - placed) / remaining_blobs)), MIN_SIDE, MAX_SIDE))
        bh = int(np.clip(side + rng.integers(-1, 2), MIN_SIDE, MAX_SIDE))
        bw = int(np.clip(side + rng.integers(-1, 2), MIN_SIDE, MAX_SIDE))
        if bh > spec.height or bw > spec.width:
            raise PlacementFailure(f"Blob of {bh}x{bw} px does not fit a {spec.height}x{spec.width} scene")

        for _ in range(MAX_ATTEMPTS):
            row = int(rng.integers(0, spec.height - bh + 1))
            col = int(rng.integers(0, spec.width - bw + 1))
            # one pixel of clearance keeps blobs from touching
            window = occupied[max(row - 1, 0):row + bh + 1, max(col - 1, 0):col + bw + 1]
            if not window.any():
                break
        else:
            raise PlacementFailure(
                f"Could not place blob {len(blobs) + 1} without overlap after {MAX_ATTEMPTS} attempts"
            )

        occupied[row:row + bh, col:col + bw] = True
        blobs.append(Blob(row, col, bh, bw, float(rng.uniform(*STRENGTH_RANGE))))
        placed += bh * bw

    return blobs


def synth_scene(spec: SceneSpec) -> Tuple[HsiCube, GroundTruthMask]:
    """Generate a synthetic cube and its ground-truth mask.

    Args:
        spec: Scene parameters (the seed makes the result reproducible)

    Returns:
        Tuple of the cube and the mask of implanted pixels
    """
    rng = np.random.default_rng(spec.seed)
    endmembers = _smooth_spectra(rng, spec.n_endmembers, spec.bands, *ENDMEMBER_RANGE)
    anomaly_spectrum = _smooth_spectra(rng, 1, spec.bands, *ANOMALY_RANGE)[0]

    background = _abundances(rng, spec) @ endmembers
    values = background.copy()
    labels = np.zeros((spec.height, spec.width), dtype=np.uint8)

    blobs = _place_blobs(rng, spec) if spec.n_anomalies > 0 else []
    for blob in blobs:
        rows = slice(blob.row, blob.row + blob.height)
        cols = slice(blob.col, blob.col + blob.width)
        values[rows, cols] = background[rows, cols] + blob.strength * anomaly_spectrum
        labels[rows, cols] = 1

    if spec.noise_sigma > 0:
        values = values + rng.normal(0.0, spec.noise_sigma, size=values.shape)

    mask = GroundTruthMask(labels)
    logger.info(
        f"Synthesized {spec.height}x{spec.width}x{spec.bands} scene with {len(blobs)} blob(s), "
        f"anomaly fraction {mask.anomaly_fraction:.4f}"
    )
    return HsiCube(np.clip(values, 0.0, 1.0).astype(np.float32)), mask
