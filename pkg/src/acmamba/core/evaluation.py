"""
ROC/AUC scoring and stage timing.
"""

import logging
import statistics
import time
from dataclasses import dataclass
from typing import Any, Callable, List, Tuple, Union

import numpy as np
from sklearn import metrics

from acmamba.core.cube import GroundTruthMask
from acmamba.core.exceptions import DimMismatch, SingleClassLabels
from acmamba.models.reports import BenchReport

logger = logging.getLogger(__name__)

Labels = Union[GroundTruthMask, np.ndarray]


@dataclass(frozen=True, eq=False)
class RocCurve:
    """ROC vertices from the highest threshold down, with the trapezoid AUC."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def rows(self) -> List[List[float]]:
        """CSV rows: threshold, fpr, tpr."""
        return [[float(t), float(f), float(p)] for t, f, p in zip(self.thresholds, self.fpr, self.tpr)]


def _flatten(scores: np.ndarray, labels: Labels) -> Tuple[np.ndarray, np.ndarray]:
    truth = labels.labels if isinstance(labels, GroundTruthMask) else np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != truth.shape:
        raise DimMismatch(f"Scores of shape {scores.shape} do not match labels of shape {truth.shape}")
    truth = truth.ravel().astype(np.int64)
    if np.unique(truth).size < 2:
        raise SingleClassLabels("Labels must contain both anomaly and background pixels")
    return scores.ravel(), truth


def roc_curve(scores: np.ndarray, labels: Labels) -> RocCurve:
    """One ROC vertex per distinct score; tied pixels enter together."""
    flat_scores, truth = _flatten(scores, labels)
    fpr, tpr, thresholds = metrics.roc_curve(truth, flat_scores, pos_label=1, drop_intermediate=False)
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=float(metrics.auc(fpr, tpr)))


def auc(scores: np.ndarray, labels: Labels) -> float:
    """Area under the ROC curve (ties count one half)."""
    return roc_curve(scores, labels).auc


def timed(stage: Callable[[], Any], repetitions: int = 1) -> Tuple[float, Any]:
    """Median wall time of ``stage`` over repetitions, plus the last result."""
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    durations, result = [], None
    for _ in range(repetitions):
        start = time.perf_counter()
        result = stage()
        durations.append(time.perf_counter() - start)
    return statistics.median(durations), result


def bench(
    train_stage: Callable[[], Any],
    detect_stage: Callable[[Any], Any],
    samples_per_epoch: int,
    n_regions: int,
    n_pixels: int,
    repetitions: int = 1,
) -> Tuple[BenchReport, Any, Any]:
    """Time the train and detect stages.

    Args:
        train_stage: Zero-argument callable running training
        detect_stage: Callable running detection on the training result
        samples_per_epoch: Training sequence length (N_r, or H*W when dense)
        n_regions: Regions after segmentation
        n_pixels: Pixels in the scene
        repetitions: Timed runs per stage; the median is reported

    Returns:
        Tuple of (BenchReport, last training result, last detection result)
    """
    train_seconds, trained = timed(train_stage, repetitions)
    infer_seconds, detected = timed(lambda: detect_stage(trained), repetitions)
    report = BenchReport(
        train_seconds=train_seconds,
        infer_seconds=infer_seconds,
        samples_per_epoch=samples_per_epoch,
        n_regions=n_regions,
        n_pixels=n_pixels,
        repetitions=repetitions,
    )
    logger.info(f"Bench: train {train_seconds:.3f}s, detect {infer_seconds:.3f}s over {repetitions} run(s)")
    return report, trained, detected
