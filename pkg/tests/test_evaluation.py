"""
Unit tests for ROC/AUC and benchmarking.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from acmamba.core.cube import GroundTruthMask
from acmamba.core.evaluation import auc, bench, roc_curve, timed
from acmamba.core.exceptions import DimMismatch, SingleClassLabels
from acmamba.models.reports import BenchReport


def pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney statistic over every anomaly/background pair, ties counted one half."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


@pytest.mark.unit
class TestRocCurve:
    """Test cases for ROC construction."""

    def test_perfect_separation(self):
        labels = np.array([[0, 0, 1], [0, 1, 0]], dtype=np.uint8)
        scores = np.where(labels == 1, 10.0, 1.0) + np.arange(6).reshape(2, 3) * 0.01
        assert auc(scores, labels) == 1.0

    def test_perfect_inversion(self):
        labels = np.array([[0, 0, 1], [0, 1, 0]], dtype=np.uint8)
        assert auc(-labels.astype(float), labels) == 0.0

    def test_all_ties(self):
        labels = np.array([[0, 1], [0, 0]], dtype=np.uint8)
        assert auc(np.full((2, 2), 3.0), labels) == 0.5

    def test_single_top_anomaly(self):
        labels = np.zeros((5, 5), dtype=np.uint8)
        labels[2, 3] = 1
        scores = np.zeros((5, 5))
        scores[2, 3] = 1.0
        assert auc(scores, labels) == 1.0

    def test_endpoints_and_monotone(self, rng):
        labels = (rng.uniform(size=(10, 10)) < 0.2).astype(np.uint8)
        curve = roc_curve(rng.uniform(size=(10, 10)), labels)
        assert curve.points[0] == (0.0, 0.0)
        assert curve.points[-1] == (1.0, 1.0)
        assert (np.diff(curve.fpr) >= 0).all() and (np.diff(curve.tpr) >= 0).all()
        assert 0.0 <= curve.auc <= 1.0

    def test_one_vertex_per_distinct_score(self):
        labels = np.array([[1, 0, 0, 1]], dtype=np.uint8)
        curve = roc_curve(np.array([[2.0, 2.0, 1.0, 1.0]]), labels)
        assert len(curve.points) == 3

    def test_matches_pairwise_oracle(self):
        """200 pixels with rounded (tied) scores; 50 instances."""
        rng = np.random.default_rng(99)
        for _ in range(50):
            labels = (rng.uniform(size=200) < 0.3).astype(np.uint8)
            labels[:2] = (0, 1)
            scores = np.round(rng.uniform(size=200) + 0.3 * labels, 1)
            assert auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_invariant_under_monotone_transform(self, rng):
        labels = (rng.uniform(size=(8, 8)) < 0.25).astype(np.uint8)
        scores = rng.uniform(size=(8, 8))
        assert auc(np.exp(3 * scores), labels) == pytest.approx(auc(scores, labels), abs=1e-12)

    def test_accepts_ground_truth_mask(self):
        mask = GroundTruthMask(np.array([[0, 1], [0, 0]], dtype=np.uint8))
        assert auc(np.array([[0.0, 1.0], [0.2, 0.1]]), mask) == 1.0

    def test_rows(self):
        curve = roc_curve(np.array([[0.1, 0.9]]), np.array([[0, 1]], dtype=np.uint8))
        assert all(len(row) == 3 for row in curve.rows())

    def test_single_class(self):
        with pytest.raises(SingleClassLabels):
            auc(np.ones((3, 3)), np.zeros((3, 3), dtype=np.uint8))

    def test_shape_mismatch(self):
        with pytest.raises(DimMismatch):
            auc(np.ones((3, 3)), np.eye(2, dtype=np.uint8))


@pytest.mark.unit
class TestBench:
    """Test cases for stage timing."""

    def test_timed_returns_last_result(self):
        calls = []
        seconds, result = timed(lambda: calls.append(1) or len(calls), repetitions=3)
        assert result == 3 and seconds >= 0.0

    def test_timed_rejects_zero_repetitions(self):
        with pytest.raises(ValueError):
            timed(lambda: None, repetitions=0)

    def test_bench_report(self):
        """Each stage runs once per repetition; detection sees the training result."""
        calls = {"train": 0, "detect": []}

        def train_stage():
            calls["train"] += 1
            return "model"

        def detect_stage(trained):
            calls["detect"].append(trained)
            return "scores"

        report, trained, detected = bench(
            train_stage, detect_stage, samples_per_epoch=67, n_regions=67, n_pixels=10_000, repetitions=2
        )
        assert (trained, detected) == ("model", "scores")
        assert calls == {"train": 2, "detect": ["model", "model"]}
        assert report.train_seconds >= 0.0 and report.infer_seconds >= 0.0
        assert (report.n_regions, report.n_pixels, report.repetitions) == (67, 10_000, 2)

    def test_regions_cannot_exceed_pixels(self):
        with pytest.raises(ValidationError):
            BenchReport(train_seconds=0, infer_seconds=0, samples_per_epoch=1, n_regions=5, n_pixels=4)
