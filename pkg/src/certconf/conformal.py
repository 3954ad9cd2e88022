"""Split-conformal calibration and majority prediction sets.

Quantile convention: the calibration threshold is the k-th smallest score with
k = floor(alpha * (n + 1)), the standard split-conformal lower quantile under
the finite-sample correction. The index is computed in exact rational
arithmetic on the binary value of ``alpha`` so that feasibility checks,
minimum-size bounds, and thresholds can never disagree by a floating-point
rounding.

A majority predictor calibrates one threshold per calibration partition and
keeps a class in the merged set only when more than a binomial-quantile number
of the per-partition sets contain it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import InfeasibleCalibrationError, InvalidConfigError, InvalidInputError
from .partitioning import HASH_MODES, assign_partitions
from .scoring import SCORE_MODES, VoteMatrix, calibration_scores


def quantile_index(n: int, alpha: float) -> int:
    """1-based order-statistic index of the corrected calibration quantile.

    Raises when the index would be zero, i.e. when n < 1/alpha - 1 and no
    valid threshold exists.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 1:
        raise InfeasibleCalibrationError("cannot calibrate on an empty score set", size=n)
    k = math.floor(Fraction(alpha) * (n + 1))
    if k < 1:
        raise InfeasibleCalibrationError(
            f"calibration set of size {n} is too small for alpha={alpha} "
            f"(needs n >= 1/alpha - 1)", size=n)
    return k


def is_feasible_size(n: int, alpha: float) -> bool:
    return n >= 1 and math.floor(Fraction(alpha) * (n + 1)) >= 1


def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    """Finite-sample corrected lower quantile of a calibration score set."""
    k = quantile_index(len(scores), alpha)
    return sorted(float(s) for s in scores)[k - 1]


def min_calibration_size(alpha: float, partition_count: int, equal_partitions: bool = True) -> int:
    """Smallest workable calibration size (total under equal partitioning,
    otherwise the per-partition minimum)."""
    if not 0.0 < alpha < 1.0:
        raise InvalidConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if partition_count < 1:
        raise InvalidConfigError("partition count must be >= 1")
    per_partition = 1 / Fraction(alpha) - 1
    if equal_partitions:
        return math.ceil(partition_count * per_partition)
    return math.ceil(per_partition)


@lru_cache(maxsize=None)
def binomial_majority_threshold(alpha: float, partition_count: int) -> int:
    """Largest x in {0..partition_count} with Bin(partition_count, 1-alpha) CDF(x) <= alpha.

    Evaluated in exact integer arithmetic on the binary value of alpha: an
    off-by-one here would silently change every majority set and certificate.
    Always >= 0 because CDF(0) = alpha**partition_count <= alpha.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if partition_count < 1:
        raise InvalidConfigError("partition count must be >= 1")
    frac = Fraction(alpha)
    num, den = frac.numerator, frac.denominator
    # CDF(x) <= alpha  <=>  den * sum_{i<=x} C(k,i) (den-num)^i num^(k-i) <= num * den^k
    rhs = num * den ** partition_count
    acc = 0
    best = -1
    for x in range(partition_count + 1):
        acc += math.comb(partition_count, x) * (den - num) ** x * num ** (partition_count - x)
        if den * acc <= rhs:
            best = x
        else:
            break
    assert best >= 0, "binomial CDF at 0 must not exceed alpha"
    return best


@dataclass(frozen=True)
class CalibrationConfig:
    alpha: float
    partition_count: int
    score_mode: str = "smoothed"
    hash_mode: str = "byte-hash"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.partition_count < 1:
            raise InvalidConfigError("partition count must be >= 1")
        if self.score_mode not in SCORE_MODES:
            raise InvalidConfigError(f"unknown score mode {self.score_mode!r}")
        if self.hash_mode not in HASH_MODES:
            raise InvalidConfigError(f"unknown hash mode {self.hash_mode!r}")


@dataclass(frozen=True)
class MajorityPredictor:
    """Calibrated state: per-partition thresholds plus the majority threshold."""

    thresholds: tuple[float, ...]
    majority_threshold: int
    class_count: int
    config: CalibrationConfig

    @property
    def partition_count(self) -> int:
        return len(self.thresholds)


@dataclass(frozen=True)
class CalibrationData:
    """Calibration-set state retained for worst-case certification."""

    scores: np.ndarray
    labels: np.ndarray
    partition_ids: np.ndarray
    partition_sizes: tuple[int, ...]
    count_matrix: np.ndarray | None = None  # smoothed mode only
    classifier_count: int | None = None


@dataclass(frozen=True)
class CalibrationResult:
    predictor: MajorityPredictor
    data: CalibrationData


def calibrate(features, labels, config: CalibrationConfig, *,
              votes: VoteMatrix | None = None,
              probs: np.ndarray | None = None) -> CalibrationResult:
    """Calibrate a majority predictor on hash-partitioned calibration data.

    Every partition must be large enough for the corrected quantile; an
    undersized (or empty) partition raises with its index and size rather than
    being skipped silently.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2:
        raise InvalidInputError("features must be a 2-D array")
    if features.shape[0] != labels.shape[0]:
        raise InvalidInputError("feature and label counts differ")

    if config.score_mode == "smoothed":
        if votes is None:
            raise InvalidInputError("smoothed calibration needs a vote matrix")
        if votes.votes.shape[0] != labels.shape[0]:
            raise InvalidInputError("vote matrix and label counts differ")
        if votes.classifier_count < 4:
            warnings.warn(
                f"only {votes.classifier_count} ensemble classifiers; smoothed-score "
                "calibration is unstable below 4", UserWarning, stacklevel=2)
        class_count = votes.class_count
    else:
        if probs is None:
            raise InvalidInputError(f"{config.score_mode} calibration needs a probability matrix")
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape[0] != labels.shape[0]:
            raise InvalidInputError("probability matrix and label counts differ")
        class_count = int(probs.shape[1])

    scores = calibration_scores(config.score_mode, labels, votes=votes, probs=probs,
                                features=features, hash_mode=config.hash_mode)
    partition_ids = assign_partitions(features, config.partition_count, config.hash_mode)
    sizes = np.bincount(partition_ids, minlength=config.partition_count)

    thresholds = []
    for i in range(config.partition_count):
        size = int(sizes[i])
        if not is_feasible_size(size, config.alpha):
            raise InfeasibleCalibrationError(
                f"partition {i} has {size} points but alpha={config.alpha} needs at least "
                f"{min_calibration_size(config.alpha, 1)} per partition",
                partition=i, size=size)
        thresholds.append(conformal_quantile(scores[partition_ids == i], config.alpha))

    predictor = MajorityPredictor(
        thresholds=tuple(thresholds),
        majority_threshold=binomial_majority_threshold(config.alpha, config.partition_count),
        class_count=class_count,
        config=config,
    )
    data = CalibrationData(
        scores=scores,
        labels=labels,
        partition_ids=partition_ids,
        partition_sizes=tuple(int(s) for s in sizes),
        count_matrix=votes.count_matrix() if config.score_mode == "smoothed" else None,
        classifier_count=votes.classifier_count if config.score_mode == "smoothed" else None,
    )
    return CalibrationResult(predictor, data)


def prediction_set(threshold: float, score_vector: Sequence[float]) -> set[int]:
    """Classes whose score reaches the threshold (membership uses >=)."""
    return {y for y, s in enumerate(score_vector) if s >= threshold}


def support_counts(predictor: MajorityPredictor, score_vector: Sequence[float]) -> list[int]:
    """Per class, how many per-partition prediction sets contain it."""
    if len(score_vector) != predictor.class_count:
        raise InvalidInputError(
            f"score vector has {len(score_vector)} entries, predictor expects {predictor.class_count}")
    return [sum(1 for t in predictor.thresholds if s >= t) for s in score_vector]


def partition_sets(predictor: MajorityPredictor, score_vector: Sequence[float]) -> list[set[int]]:
    if len(score_vector) != predictor.class_count:
        raise InvalidInputError(
            f"score vector has {len(score_vector)} entries, predictor expects {predictor.class_count}")
    return [prediction_set(t, score_vector) for t in predictor.thresholds]


def majority_set_from_supports(supports: Sequence[int], majority_threshold: int) -> set[int]:
    return {y for y, m in enumerate(supports) if m > majority_threshold}


def predict_majority(predictor: MajorityPredictor, score_vector: Sequence[float]) -> set[int]:
    """Majority prediction set for one test point's score vector."""
    return majority_set_from_supports(support_counts(predictor, score_vector),
                                      predictor.majority_threshold)
