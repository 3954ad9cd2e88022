"""Evaluation metrics and the synthetic-ensemble experiment harness.

The synthetic generator stands in for real partition-trained classifiers at
desk scale: each simulated classifier votes the true label with a configured
per-class accuracy and otherwise a uniformly random wrong class, and feature
vectors exist only to drive partition hashing. Everything is deterministic
under the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .certify import CertificateGrid, certificate_grid
from .conformal import CalibrationData, MajorityPredictor, predict_majority
from .errors import InvalidConfigError, InvalidInputError
from .scoring import VoteMatrix


@dataclass(frozen=True)
class SyntheticEnsembleSpec:
    class_count: int
    classifier_count: int
    calibration_size: int
    test_size: int
    accuracy: float | tuple[float, ...] = 0.9
    class_priors: tuple[float, ...] | None = None
    feature_dim: int = 3
    seed: int = 0

    def per_class_accuracy(self) -> np.ndarray:
        acc = np.broadcast_to(np.asarray(self.accuracy, dtype=np.float64),
                              (self.class_count,)).copy()
        if acc.min() < 0 or acc.max() > 1:
            raise InvalidConfigError("accuracies must lie in [0, 1]")
        return acc

    def priors(self) -> np.ndarray:
        if self.class_priors is None:
            return np.full(self.class_count, 1.0 / self.class_count)
        p = np.asarray(self.class_priors, dtype=np.float64)
        if p.shape != (self.class_count,) or abs(p.sum() - 1.0) > 1e-9 or p.min() < 0:
            raise InvalidConfigError("class priors must be a distribution over the classes")
        return p


@dataclass(frozen=True)
class SyntheticDataset:
    calib_features: np.ndarray
    calib_labels: np.ndarray
    calib_votes: VoteMatrix
    test_features: np.ndarray
    test_labels: np.ndarray
    test_votes: VoteMatrix


def _draw_votes(rng: np.random.Generator, labels: np.ndarray, spec: SyntheticEnsembleSpec) -> np.ndarray:
    n, k, K = labels.shape[0], spec.classifier_count, spec.class_count
    acc = spec.per_class_accuracy()
    correct = rng.random((n, k)) < acc[labels][:, None]
    # Wrong votes land uniformly on the K-1 other classes.
    offsets = rng.integers(1, K, size=(n, k))
    votes = np.where(correct, labels[:, None], (labels[:, None] + offsets) % K)
    return votes.astype(np.int64)


def generate_synthetic(spec: SyntheticEnsembleSpec) -> SyntheticDataset:
    """Draw an i.i.d. synthetic dataset with ensemble votes on every point."""
    rng = np.random.default_rng(spec.seed)
    priors = spec.priors()

    def part(n: int):
        labels = rng.choice(spec.class_count, size=n, p=priors).astype(np.int64)
        features = rng.standard_normal((n, spec.feature_dim))
        votes = VoteMatrix(_draw_votes(rng, labels, spec), spec.class_count)
        return features, labels, votes

    calib = part(spec.calibration_size)
    test = part(spec.test_size)
    return SyntheticDataset(*calib, *test)


@dataclass
class EvalReport:
    alpha: float
    test_size: int
    empirical_coverage: float
    average_set_size: float
    empty_ratio: float
    full_ratio: float
    singleton_ratio: float
    singleton_hit_ratio: float | None
    reliability: list[dict] = field(default_factory=list)
    aucrc: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "test_size": self.test_size,
            "empirical_coverage": self.empirical_coverage,
            "average_set_size": self.average_set_size,
            "empty_ratio": self.empty_ratio,
            "full_ratio": self.full_ratio,
            "singleton_ratio": self.singleton_ratio,
            "singleton_hit_ratio": self.singleton_hit_ratio,
            "reliability": self.reliability,
            "aucrc": self.aucrc,
        }


def set_statistics(sets: Sequence[set[int]], labels: Sequence[int], class_count: int) -> dict:
    """Coverage and size statistics of a batch of prediction sets."""
    n = len(sets)
    if n == 0:
        raise InvalidInputError("empty test set")
    labels = [int(y) for y in labels]
    if len(labels) != n:
        raise InvalidInputError("label count does not match the number of prediction sets")
    hits = [y in s for s, y in zip(sets, labels)]
    singles = [len(s) == 1 for s in sets]
    single_hits = [hit for single, hit in zip(singles, hits) if single]
    return {
        "empirical_coverage": sum(hits) / n,
        "average_set_size": sum(len(s) for s in sets) / n,
        "empty_ratio": sum(len(s) == 0 for s in sets) / n,
        "full_ratio": sum(len(s) == class_count for s in sets) / n,
        "singleton_ratio": sum(singles) / n,
        "singleton_hit_ratio": (sum(single_hits) / len(single_hits)) if single_hits else None,
    }


def aucrc_from_ratios(ratios: Sequence[dict]) -> dict:
    """Area under the certified-reliability curve: the mean certified ratio
    over the evaluated radius grid, one value per reliability type."""
    n = len(ratios)
    return {
        "coverage": sum(r["coverage_ratio"] for r in ratios) / n,
        "size": sum(r["size_ratio"] for r in ratios) / n,
        "robust": sum(r["robust_ratio"] for r in ratios) / n,
    }


def evaluate(predictor: MajorityPredictor, calib: CalibrationData,
             test_scores: np.ndarray, test_labels: Sequence[int],
             radius_pairs: Sequence[tuple[int, int]],
             test_count_matrix: np.ndarray | None = None,
             classifier_count: int | None = None) -> tuple[EvalReport, CertificateGrid]:
    """Full evaluation: clean-set metrics plus reliability ratios over the grid."""
    test_scores = np.asarray(test_scores, dtype=np.float64)
    if test_scores.shape[0] == 0:
        raise InvalidInputError("empty test set")
    sets = [predict_majority(predictor, row) for row in test_scores]
    stats = set_statistics(sets, test_labels, predictor.class_count)

    grid = certificate_grid(predictor, calib, test_scores, radius_pairs,
                            test_count_matrix=test_count_matrix,
                            classifier_count=classifier_count)
    ratios = grid.ratios()
    report = EvalReport(
        alpha=predictor.config.alpha,
        test_size=test_scores.shape[0],
        reliability=ratios,
        aucrc=aucrc_from_ratios(ratios),
        **stats,
    )
    return report, grid
