"""
Tabular and image exports: ROC and loss CSVs, bench JSON, PNG previews.
"""

import csv
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np
from skimage import io as skio

from acmamba.core.evaluation import RocCurve
from acmamba.core.exceptions import IoFailure
from acmamba.models.reports import BenchReport, LossReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ROC_HEADER = ["threshold", "fpr", "tpr"]
LOSS_HEADER = ["epoch", "loss_ori", "loss_mask", "theta", "applied"]
SWEEP_HEADER = ["param", "value", "auc", "train_seconds"]
ABLATION_HEADER = ["variant", "auc", "train_seconds", "n_regions"]


def write_rows_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write a header plus rows; floats keep full repr precision."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise IoFailure(f"Failed to write {path}: {e}") from e
    return path


def read_rows_csv(path: PathLike) -> List[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_roc_csv(curve: RocCurve, path: PathLike) -> Path:
    return write_rows_csv(path, ROC_HEADER, curve.rows())


def write_loss_csv(report: LossReport, path: PathLike) -> Path:
    return write_rows_csv(path, LOSS_HEADER, report.rows())


def write_bench_json(report: BenchReport, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.write_text(report.model_dump_json(indent=2))
    except OSError as e:
        raise IoFailure(f"Failed to write {path}: {e}") from e
    return path


def stretch_to_uint8(scores: np.ndarray) -> np.ndarray:
    """Min-max stretch to 0..255; a constant map becomes all zeros."""
    scores = np.asarray(scores, dtype=np.float64)
    low, high = scores.min(), scores.max()
    if high <= low:
        return np.zeros(scores.shape, dtype=np.uint8)
    return np.round((scores - low) / (high - low) * 255.0).astype(np.uint8)


def save_preview(scores: np.ndarray, path: PathLike) -> Path:
    """8-bit grayscale PNG of a score map."""
    path = Path(path)
    try:
        skio.imsave(str(path), stretch_to_uint8(scores), check_contrast=False)
    except OSError as e:
        raise IoFailure(f"Failed to write {path}: {e}") from e
    logger.info(f"Wrote preview {path}")
    return path
