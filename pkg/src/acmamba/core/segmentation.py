"""
Region splitting, attribute repository and representative sampling.

The cube is clustered into homogeneous regions with SLIC, per-region spectral
statistics are stored in an attribute repository, and each training epoch
draws one representative spectrum per region in a fixed scan order.
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage
from skimage.segmentation import relabel_sequential, slic

from acmamba.core.container import read_raster, write_raster
from acmamba.core.cube import HsiCube, normalize
from acmamba.core.exceptions import CorruptHeader, DimMismatch, InvalidTarget, LengthMismatch

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class RegionMap:
    """Partition of the pixel grid into regions plus the scan sequence."""

    region_of: np.ndarray
    n_regions: int
    order: np.ndarray

    def __post_init__(self):
        region_of = np.ascontiguousarray(self.region_of, dtype=np.int64)
        order = np.ascontiguousarray(self.order, dtype=np.int64)
        if region_of.ndim != 2:
            raise DimMismatch(f"region_of must be 2-D, got shape {region_of.shape}")
        if region_of.min() < 0 or region_of.max() >= self.n_regions:
            raise ValueError("Region indices must lie in [0, n_regions)")
        if np.bincount(region_of.ravel(), minlength=self.n_regions).min() == 0:
            raise ValueError("Every region must own at least one pixel")
        if not np.array_equal(np.sort(order), np.arange(self.n_regions)):
            raise ValueError("order must be a permutation of the region indices")
        region_of.setflags(write=False)
        order.setflags(write=False)
        object.__setattr__(self, "region_of", region_of)
        object.__setattr__(self, "order", order)

    @property
    def height(self) -> int:
        return self.region_of.shape[0]

    @property
    def width(self) -> int:
        return self.region_of.shape[1]

    def sizes(self) -> np.ndarray:
        """Pixel count of every region."""
        return np.bincount(self.region_of.ravel(), minlength=self.n_regions)

    def with_order(self, order: np.ndarray) -> "RegionMap":
        return replace(self, order=order)


@dataclass(frozen=True, eq=False)
class AttributeRepository:
    """Per-region mean, population std, min and max spectra (N_r x C each)."""

    mean: np.ndarray
    std: np.ndarray
    min: np.ndarray
    max: np.ndarray
    region_map: RegionMap

    @property
    def n_regions(self) -> int:
        return self.mean.shape[0]

    @property
    def bands(self) -> int:
        return self.mean.shape[1]


@dataclass(frozen=True, eq=False)
class RegionSequence:
    """Representative spectra in scan order (row j belongs to region order[j])."""

    values: np.ndarray
    beta_used: np.ndarray
    order: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]


def _as_region_map(labels: np.ndarray) -> RegionMap:
    labels, _, _ = relabel_sequential(labels.astype(np.int64) + 1)
    labels = labels - 1
    n_regions = int(labels.max()) + 1
    provisional = RegionMap(labels, n_regions, np.arange(n_regions))
    return provisional.with_order(region_scan_order(provisional))


def identity_region_map(height: int, width: int) -> RegionMap:
    """Map in which every pixel is its own region (row-major indices)."""
    n_pixels = height * width
    return RegionMap(np.arange(n_pixels).reshape(height, width), n_pixels, np.arange(n_pixels))


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Merge every non-largest connected component of a label into its largest neighbour region."""
    labels = labels.copy()
    structure = ndimage.generate_binary_structure(2, 1)
    merged = 0
    for label in np.unique(labels):
        components, count = ndimage.label(labels == label, structure=structure)
        if count <= 1:
            continue
        sizes = np.bincount(components.ravel())
        sizes[0] = 0
        keep = int(sizes.argmax())
        for component in range(1, count + 1):
            if component == keep:
                continue
            orphan = components == component
            ring = ndimage.binary_dilation(orphan, structure=structure) & ~orphan
            neighbours = labels[ring]
            neighbours = neighbours[neighbours != label]
            if neighbours.size == 0:
                continue
            region_sizes = {int(n): int((labels == n).sum()) for n in np.unique(neighbours)}
            # largest adjacent region, lowest index on ties
            target = min(region_sizes, key=lambda n: (-region_sizes[n], n))
            labels[orphan] = target
            merged += 1
    if merged:
        logger.debug(f"Connectivity enforcement merged {merged} orphan component(s)")
    return labels


def segment_regions(
    cube: HsiCube,
    n_regions_target: int,
    compactness: float = 0.1,
    iters: int = 10,
) -> RegionMap:
    """Split the cube into homogeneous regions with SLIC.

    The joint feature is the full min-max normalized spectrum plus pixel
    coordinates weighted by compactness / S, S = sqrt(H*W / n_regions_target).

    Args:
        cube: Input cube
        n_regions_target: Desired number of regions
        compactness: Spatial weight
        iters: Assignment/update rounds

    Returns:
        RegionMap: Partition with its scan order; n_regions may differ from the target
    """
    n_pixels = cube.n_pixels
    if n_regions_target < 1 or n_regions_target > n_pixels:
        raise InvalidTarget(f"Region target {n_regions_target} outside [1, {n_pixels}]")
    if cube.height < 2 or cube.width < 2:
        raise DimMismatch(f"Segmentation needs at least a 2x2 cube, got {cube.height}x{cube.width}")

    if n_regions_target == n_pixels:
        region_map = identity_region_map(cube.height, cube.width)
        logger.info(f"Region target equals pixel count; {n_pixels} single-pixel regions")
        return region_map

    features = normalize(cube).values.astype(np.float64)
    labels = slic(
        features,
        n_segments=n_regions_target,
        compactness=compactness,
        max_num_iter=iters,
        convert2lab=False,
        enforce_connectivity=False,
        channel_axis=-1,
        start_label=0,
    )
    labels = _enforce_connectivity(labels)
    region_map = _as_region_map(labels)
    logger.info(f"SLIC produced {region_map.n_regions} regions (target {n_regions_target})")
    return region_map


def region_scan_order(region_map: RegionMap) -> np.ndarray:
    """Regions sorted by centroid row, then centroid column, then index."""
    rows, cols = np.indices(region_map.region_of.shape)
    flat = region_map.region_of.ravel()
    counts = np.bincount(flat, minlength=region_map.n_regions).astype(np.float64)
    centroid_row = np.bincount(flat, weights=rows.ravel(), minlength=region_map.n_regions) / counts
    centroid_col = np.bincount(flat, weights=cols.ravel(), minlength=region_map.n_regions) / counts
    index = np.arange(region_map.n_regions)
    return np.lexsort((index, centroid_col, centroid_row))


def build_repository(cube: HsiCube, region_map: RegionMap) -> AttributeRepository:
    """Per-region mean, population std, min and max over member pixels.

    Args:
        cube: Cube the statistics are taken from
        region_map: Partition of the cube's pixel grid

    Returns:
        AttributeRepository: N_r x C statistics
    """
    if (cube.height, cube.width) != (region_map.height, region_map.width):
        raise DimMismatch(
            f"Cube is {cube.height}x{cube.width} but region map is {region_map.height}x{region_map.width}"
        )
    pixels = cube.pixels().astype(np.float64)
    flat = region_map.region_of.ravel()
    n_regions, bands = region_map.n_regions, cube.bands
    counts = np.bincount(flat, minlength=n_regions).astype(np.float64)

    sums = np.zeros((n_regions, bands))
    np.add.at(sums, flat, pixels)
    low = np.full((n_regions, bands), np.inf)
    high = np.full((n_regions, bands), -np.inf)
    np.minimum.at(low, flat, pixels)
    np.maximum.at(high, flat, pixels)
    # rounding in the sum can push the mean a ulp outside the member range
    mean = np.clip(sums / counts[:, None], low, high)

    squares = np.zeros((n_regions, bands))
    np.add.at(squares, flat, (pixels - mean[flat]) ** 2)
    std = np.sqrt(squares / counts[:, None])

    return AttributeRepository(mean=mean, std=std, min=low, max=high, region_map=region_map)


def representative_rows(repo: AttributeRepository, betas: np.ndarray) -> np.ndarray:
    """Representative spectra for explicit per-region betas, indexed by region (not scan order).

    A candidate mu + beta * sigma is kept only if it lies within [min, max] in
    every band; otherwise the whole region falls back to mu.
    """
    betas = np.asarray(betas, dtype=np.float64)
    if betas.shape != (repo.n_regions,):
        raise LengthMismatch(f"Expected {repo.n_regions} betas, got shape {betas.shape}")
    candidate = repo.mean + betas[:, None] * repo.std
    inside = ((candidate >= repo.min) & (candidate <= repo.max)).all(axis=1)
    return np.where(inside[:, None], candidate, repo.mean)


def draw_representative(
    repo: AttributeRepository,
    beta_max: float,
    rng: np.random.Generator,
) -> RegionSequence:
    """Draw one representative spectrum per region, beta ~ U[-beta_max, beta_max].

    Args:
        repo: Attribute repository
        beta_max: Diversity bound
        rng: Seeded generator (one beta per region per call)

    Returns:
        RegionSequence: Rows in the region map's scan order
    """
    betas = rng.uniform(-beta_max, beta_max, size=repo.n_regions) if beta_max > 0 else np.zeros(repo.n_regions)
    values = representative_rows(repo, betas)
    order = repo.region_map.order
    return RegionSequence(values=values[order], beta_used=betas[order], order=order)


def mean_sequence(repo: AttributeRepository) -> RegionSequence:
    """Deterministic beta = 0 sequence of region means in scan order."""
    order = repo.region_map.order
    return RegionSequence(values=repo.mean[order], beta_used=np.zeros(repo.n_regions), order=order)


def project_regions_to_pixels(region_values: np.ndarray, region_map: RegionMap) -> np.ndarray:
    """Give every pixel its region's scalar (values indexed by region)."""
    region_values = np.asarray(region_values)
    if region_values.shape != (region_map.n_regions,):
        raise LengthMismatch(f"Expected {region_map.n_regions} region values, got shape {region_values.shape}")
    return region_values[region_map.region_of]


def _order_path(path: Path) -> Path:
    return path.with_name(f"{path.stem}.order.json")


def save_region_map(region_map: RegionMap, path: PathLike) -> None:
    """Write region_of as a u32 HSC1 raster and the scan order as a JSON sidecar."""
    path = Path(path)
    write_raster(path, region_map.region_of.astype(np.uint32), "u32")
    _order_path(path).write_text(json.dumps([int(i) for i in region_map.order]))


def load_region_map(path: PathLike, order: Optional[np.ndarray] = None) -> RegionMap:
    """Read a region map written by save_region_map."""
    path = Path(path)
    header, array = read_raster(path)
    if header["dtype"] != "u32" or header["bands"] != 1:
        raise CorruptHeader(f"{path}: region map must be u32 with one band")
    labels = array[:, :, 0].astype(np.int64)
    if order is None:
        sidecar = _order_path(path)
        order = np.array(json.loads(sidecar.read_text())) if sidecar.exists() else None
    provisional = RegionMap(labels, int(labels.max()) + 1, np.arange(int(labels.max()) + 1))
    return provisional.with_order(order if order is not None else region_scan_order(provisional))
