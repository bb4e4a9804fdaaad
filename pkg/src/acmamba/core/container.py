"""
HSC1 raster container.

Layout: 4-byte magic ``HSC1``, little-endian u32 header length L, L bytes of
UTF-8 JSON header, then the raster payload in little-endian order,
pixel-major with the band axis innermost.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from acmamba.core.cube import GroundTruthMask, HsiCube
from acmamba.core.exceptions import CorruptHeader, IoFailure, MissingFile, SizeMismatch

logger = logging.getLogger(__name__)

MAGIC = b"HSC1"
LAYOUT = "bip"

# Container dtype tag -> on-disk numpy dtype
DTYPES: Dict[str, np.dtype] = {
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
    "u32": np.dtype("<u4"),
}

PathLike = Union[str, Path]


def encode_header(height: int, width: int, bands: int, dtype: str) -> bytes:
    header = {"height": height, "width": width, "bands": bands, "dtype": dtype, "layout": LAYOUT}
    return json.dumps(header, separators=(",", ":")).encode("utf-8")


def write_raster(path: PathLike, array: np.ndarray, dtype: str) -> None:
    """Write an H x W (x C) array as an HSC1 container.

    Args:
        path: Destination file
        array: 2-D or 3-D raster
        dtype: Container dtype tag ("f32", "u8" or "u32")
    """
    if dtype not in DTYPES:
        raise ValueError(f"Unsupported container dtype: {dtype}")
    raster = np.asarray(array)
    if raster.ndim == 2:
        raster = raster[:, :, np.newaxis]
    if raster.ndim != 3:
        raise ValueError(f"Raster must be 2-D or 3-D, got shape {raster.shape}")

    height, width, bands = raster.shape
    header = encode_header(height, width, bands, dtype)
    payload = np.ascontiguousarray(raster, dtype=DTYPES[dtype]).tobytes()
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(payload)
    except OSError as e:
        raise IoFailure(f"Failed to write {path}: {e}") from e
    logger.debug(f"Wrote {dtype} raster {height}x{width}x{bands} to {path}")


def read_raster(path: PathLike) -> Tuple[Dict[str, Any], np.ndarray]:
    """Read an HSC1 container.

    Args:
        path: Container file

    Returns:
        Tuple of the parsed header and an H x W x C array in the on-disk dtype
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"File not found: {path}")
    data = path.read_bytes()

    if len(data) < 8 or data[:4] != MAGIC:
        raise CorruptHeader(f"{path}: missing HSC1 magic")
    (header_len,) = struct.unpack("<I", data[4:8])
    if 8 + header_len > len(data):
        raise CorruptHeader(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(data[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptHeader(f"{path}: header is not valid JSON ({e})") from e
    if not isinstance(header, dict):
        raise CorruptHeader(f"{path}: header must be a JSON object")

    for key in ("height", "width", "bands", "dtype", "layout"):
        if key not in header:
            raise CorruptHeader(f"{path}: header field '{key}' is absent")
    dims = [header["height"], header["width"], header["bands"]]
    if not all(isinstance(d, int) and not isinstance(d, bool) and d > 0 for d in dims):
        raise CorruptHeader(f"{path}: dimensions must be positive integers, got {dims}")
    if header["dtype"] not in DTYPES:
        raise CorruptHeader(f"{path}: unsupported dtype '{header['dtype']}'")
    if header["layout"] != LAYOUT:
        raise CorruptHeader(f"{path}: unsupported layout '{header['layout']}'")

    dtype = DTYPES[header["dtype"]]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = data[8 + header_len:]
    if len(payload) != expected:
        raise SizeMismatch(f"{path}: payload is {len(payload)} bytes, header declares {expected}")
    array = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return header, array


def save_cube(cube: HsiCube, path: PathLike) -> None:
    """Save a cube as f32 HSC1."""
    write_raster(path, cube.values, "f32")


def load_cube(path: PathLike) -> HsiCube:
    """Load a cube exactly as stored (no normalization)."""
    header, array = read_raster(path)
    if header["dtype"] != "f32":
        raise CorruptHeader(f"{path}: cube dtype must be f32, got {header['dtype']}")
    return HsiCube(array.astype(np.float32))


def save_mask(mask: GroundTruthMask, path: PathLike) -> None:
    """Save a ground-truth mask as u8 HSC1 with one band."""
    write_raster(path, mask.labels, "u8")


def load_mask(path: PathLike) -> GroundTruthMask:
    """Load a ground-truth mask."""
    header, array = read_raster(path)
    if header["dtype"] != "u8" or header["bands"] != 1:
        raise CorruptHeader(f"{path}: mask must be u8 with one band")
    labels = array[:, :, 0]
    if not np.isin(labels, (0, 1)).all():
        raise CorruptHeader(f"{path}: mask values must be 0 or 1")
    return GroundTruthMask(labels)


def save_score_map(scores: np.ndarray, path: PathLike) -> None:
    """Save an H x W score raster as f32 HSC1 with one band."""
    write_raster(path, np.asarray(scores, dtype=np.float32), "f32")


def load_score_map(path: PathLike) -> np.ndarray:
    """Load an H x W score raster."""
    header, array = read_raster(path)
    if header["dtype"] != "f32" or header["bands"] != 1:
        raise CorruptHeader(f"{path}: score map must be f32 with one band")
    return array[:, :, 0].astype(np.float64)
