"""Worst-case reliability certificates under training and calibration edits.

Training edits (insert/delete/label-flip of up to ``train_radius`` training
points) corrupt at most ``train_radius`` of the partition-trained classifiers,
so each vote-count vector can lose/gain at most that many votes. The greedy
routines here compute the exact extrema of the smoothed score over all such
reassignments; they operate on integer vote counts and evaluate the shared
softmax only at the end, so bounds are bitwise-reproducible and certificate
comparisons can be exact.

Calibration edits (up to ``calib_radius``) corrupt at most that many
calibration partitions, bounding how far any class's support in the majority
vote can move. Joint certificates combine both: a class is guaranteed inside
a partition's set when its worst-case lowest test score still clears that
partition's worst-case highest threshold, and guaranteed outside when its
worst-case highest score stays below the worst-case lowest threshold.

All verdicts are sufficient conditions: a False flag means "not certified",
not "attack exists".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .conformal import (CalibrationData, MajorityPredictor, conformal_quantile,
                        majority_set_from_supports, support_counts)
from .errors import InvalidInputError, InvalidRadiusError, UnsupportedModeError
from .scoring import softmax_over_votes


class OpCounter:
    """Counts elementary vote-vector visits along the certification path."""

    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def add(self, units: int) -> None:
        self.count += units


def _check_radius(counts: Sequence[int], classifier_count: int, train_radius: int) -> None:
    if train_radius < 0:
        raise InvalidRadiusError("training radius must be non-negative")
    if train_radius > classifier_count:
        raise InvalidRadiusError(
            f"training radius {train_radius} exceeds the classifier count {classifier_count}")
    if sum(counts) != classifier_count or any(c < 0 for c in counts):
        raise InvalidInputError("vote counts must be non-negative and sum to the classifier count")
    if len(counts) < 2:
        raise InvalidInputError("need at least 2 classes")


def _argmax_excluding(counts: Sequence[int], excluded: int) -> int:
    best, best_count = -1, -1
    for j, c in enumerate(counts):
        if j != excluded and c > best_count:
            best, best_count = j, c
    return best


def _argmin_positive(counts: Sequence[int]) -> int:
    best, best_count = -1, None
    for j, c in enumerate(counts):
        if c > 0 and (best_count is None or c < best_count):
            best, best_count = j, c
    return best


def upper_bound_counts(counts: Sequence[int], label: int, train_radius: int,
                       ops: OpCounter | None = None) -> list[int]:
    """Vote counts after greedily reassigning votes toward the label.

    Each step moves one vote from the largest other class (lowest index on
    ties) to the label; steps are no-ops once all votes sit on the label.
    """
    out = [int(c) for c in counts]
    k = len(out)
    for _ in range(train_radius):
        if ops is not None:
            ops.add(k)
        donor = _argmax_excluding(out, label)
        if out[donor] == 0:
            break
        out[donor] -= 1
        out[label] += 1
    return out


def lower_bound_counts(counts: Sequence[int], label: int, train_radius: int,
                       ops: OpCounter | None = None) -> list[int]:
    """Vote counts after greedily reassigning votes away from the label.

    Each step removes one vote from the label (from the smallest strictly
    positive class once the label is empty) and hands it to the largest other
    class, recomputed after the removal.
    """
    out = [int(c) for c in counts]
    k = len(out)
    for _ in range(train_radius):
        if ops is not None:
            ops.add(2 * k)
        donor = label if out[label] > 0 else _argmin_positive(out)
        out[donor] -= 1
        out[_argmax_excluding(out, label)] += 1
    return out


def upper_bound_score(counts: Sequence[int], classifier_count: int, label: int,
                      train_radius: int, ops: OpCounter | None = None) -> float:
    """Exact maximum of the smoothed score under the training-edit budget."""
    _check_radius(counts, classifier_count, train_radius)
    moved = upper_bound_counts(counts, label, train_radius, ops)
    if ops is not None:
        ops.add(len(moved))
    return softmax_over_votes(moved, classifier_count)[label]


def lower_bound_score(counts: Sequence[int], classifier_count: int, label: int,
                      train_radius: int, ops: OpCounter | None = None) -> float:
    """Exact minimum of the smoothed score under the training-edit budget."""
    _check_radius(counts, classifier_count, train_radius)
    moved = lower_bound_counts(counts, label, train_radius, ops)
    if ops is not None:
        ops.add(len(moved))
    return softmax_over_votes(moved, classifier_count)[label]


def score_bounds(counts: Sequence[int], classifier_count: int, label: int,
                 train_radius: int, ops: OpCounter | None = None) -> tuple[float, float]:
    return (lower_bound_score(counts, classifier_count, label, train_radius, ops),
            upper_bound_score(counts, classifier_count, label, train_radius, ops))


def calibration_score_bounds(count_matrix: np.ndarray, labels: Sequence[int],
                             classifier_count: int, train_radius: int,
                             ops: OpCounter | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per calibration point, bounds on its own-label score under training edits."""
    lows, highs = [], []
    for counts, label in zip(count_matrix, labels):
        lows.append(lower_bound_score(counts, classifier_count, int(label), train_radius, ops))
        highs.append(upper_bound_score(counts, classifier_count, int(label), train_radius, ops))
    return np.array(lows), np.array(highs)


def worst_case_quantiles(score_lows: Sequence[float], score_highs: Sequence[float],
                         alpha: float, ops: OpCounter | None = None) -> tuple[float, float]:
    """Calibration quantile range induced by per-point score bounds."""
    if ops is not None:
        ops.add(2 * len(score_lows))
    return conformal_quantile(score_lows, alpha), conformal_quantile(score_highs, alpha)


def partition_threshold_bounds(calib: CalibrationData, alpha: float, train_radius: int,
                               ops: OpCounter | None = None) -> list[tuple[float, float]]:
    """Per-partition (lowest, highest) achievable threshold under training edits.

    The full training budget is applied within every partition independently,
    a conservative over-approximation: certificates built on these bounds can
    only refuse, never falsely grant.
    """
    if calib.count_matrix is None or calib.classifier_count is None:
        raise UnsupportedModeError("training-edit certificates need smoothed-mode calibration votes")
    lows, highs = calibration_score_bounds(calib.count_matrix, calib.labels,
                                           calib.classifier_count, train_radius, ops)
    bounds = []
    for i in range(len(calib.partition_sizes)):
        mask = calib.partition_ids == i
        bounds.append(worst_case_quantiles(lows[mask], highs[mask], alpha, ops))
    return bounds


def _deletion_feasible(partition_sizes: Sequence[int], calib_radius: int, alpha: float) -> bool:
    # Adversaries may spend the whole calibration budget deleting from the
    # smallest partition; certification requires it to survive that.
    need = 1 / Fraction(alpha) - 1
    return min(partition_sizes) - calib_radius >= need


def certify_training(pred_set: set[int], test_counts: Sequence[int], classifier_count: int,
                     train_radius: int, score_lows: Sequence[float], score_highs: Sequence[float],
                     alpha: float, ops: OpCounter | None = None) -> tuple[bool, bool]:
    """Reliability of a single (non-majority) prediction set under training edits.

    Coverage holds when the weakest in-set class (fewest votes) cannot fall
    below the worst-case highest quantile; size holds when the strongest
    out-of-set class cannot reach the worst-case lowest quantile. Empty sets
    are vacuously coverage-reliable, full sets vacuously size-reliable.
    """
    class_count = len(test_counts)
    tau_low, tau_high = worst_case_quantiles(score_lows, score_highs, alpha, ops)

    if pred_set:
        weakest = min(sorted(pred_set), key=lambda y: test_counts[y])
        coverage = lower_bound_score(test_counts, classifier_count, weakest, train_radius, ops) >= tau_high
    else:
        coverage = True

    outside = sorted(set(range(class_count)) - pred_set)
    if outside:
        strongest = max(outside, key=lambda y: test_counts[y])
        size = upper_bound_score(test_counts, classifier_count, strongest, train_radius, ops) < tau_low
    else:
        size = True
    return coverage, size


def certify_calibration(supports: Sequence[int], majority_set: set[int], majority_threshold: int,
                        calib_radius: int, partition_sizes: Sequence[int],
                        alpha: float) -> tuple[bool, bool]:
    """Reliability of a majority set under calibration edits only.

    At most ``calib_radius`` partitions can be corrupted, so each class's
    support moves by at most that much. Both flags additionally require that
    no partition can be deleted below the feasible calibration size.
    """
    if not _deletion_feasible(partition_sizes, calib_radius, alpha):
        return False, False
    class_count = len(supports)

    if majority_set:
        min_support = min(supports[y] for y in majority_set)
        coverage = min_support - calib_radius > majority_threshold
    else:
        coverage = True

    outside = [y for y in range(class_count) if y not in majority_set]
    if outside:
        max_support = max(supports[y] for y in outside)
        size = max_support + calib_radius <= majority_threshold
    else:
        size = True
    return coverage, size


def certify_joint(test_counts: Sequence[int], classifier_count: int, majority_set: set[int],
                  threshold_bounds: Sequence[tuple[float, float]], majority_threshold: int,
                  train_radius: int, calib_radius: int, partition_sizes: Sequence[int],
                  alpha: float, ops: OpCounter | None = None) -> tuple[bool, bool, bool]:
    """Reliability of a majority set under simultaneous training and calibration edits.

    For each in-set class, counts the partitions guaranteed to keep it under
    training edits (worst-case lowest score still clears the partition's
    worst-case highest threshold); calibration edits can only strip
    ``calib_radius`` more. Symmetrically for out-of-set classes with the
    partitions guaranteed to exclude them.
    """
    if not _deletion_feasible(partition_sizes, calib_radius, alpha):
        return False, False, False
    class_count = len(test_counts)
    partition_count = len(threshold_bounds)

    coverage = True
    for y in sorted(majority_set):
        low = lower_bound_score(test_counts, classifier_count, y, train_radius, ops)
        guaranteed_in = sum(1 for _, tau_high in threshold_bounds if low >= tau_high)
        if ops is not None:
            ops.add(partition_count)
        if not guaranteed_in - calib_radius > majority_threshold:
            coverage = False
            break

    size = True
    for y in range(class_count):
        if y in majority_set:
            continue
        high = upper_bound_score(test_counts, classifier_count, y, train_radius, ops)
        guaranteed_out = sum(1 for tau_low, _ in threshold_bounds if high < tau_low)
        if ops is not None:
            ops.add(partition_count)
        if not partition_count - guaranteed_out + calib_radius <= majority_threshold:
            size = False
            break

    return coverage, size, coverage and size


@dataclass(frozen=True)
class CertificateRecord:
    point_index: int
    train_radius: int
    calib_radius: int
    coverage_reliable: bool
    size_reliable: bool
    robust: bool


@dataclass
class CertificateGrid:
    radius_pairs: list[tuple[int, int]]
    records: list[CertificateRecord] = field(default_factory=list)

    def ratios(self) -> list[dict]:
        """Reliability ratios per radius pair, in grid order."""
        out = []
        for r_t, r_c in self.radius_pairs:
            rows = [r for r in self.records if r.train_radius == r_t and r.calib_radius == r_c]
            n = len(rows)
            out.append({
                "train_radius": r_t,
                "calib_radius": r_c,
                "coverage_ratio": sum(r.coverage_reliable for r in rows) / n,
                "size_ratio": sum(r.size_reliable for r in rows) / n,
                "robust_ratio": sum(r.robust for r in rows) / n,
            })
        return out


def certificate_grid(predictor: MajorityPredictor, calib: CalibrationData,
                     test_scores: np.ndarray, radius_pairs: Sequence[tuple[int, int]],
                     test_count_matrix: np.ndarray | None = None,
                     classifier_count: int | None = None,
                     ops: OpCounter | None = None) -> CertificateGrid:
    """Certify every test point at every radius pair.

    ``test_scores`` is the clean score matrix (defines the majority sets being
    certified); vote counts are only needed when some pair has a positive
    training radius, which requires the smoothed score mode.
    """
    radius_pairs = [(int(r_t), int(r_c)) for r_t, r_c in radius_pairs]
    if not radius_pairs:
        raise InvalidInputError("radius grid is empty")
    alpha = predictor.config.alpha
    train_radii = sorted({r_t for r_t, _ in radius_pairs})

    needs_votes = any(r_t > 0 for r_t in train_radii)
    if needs_votes:
        if predictor.config.score_mode != "smoothed":
            raise UnsupportedModeError(
                "training-edit certificates are defined only for the smoothed score mode")
        if test_count_matrix is None or classifier_count is None:
            raise InvalidInputError("positive training radii need test vote counts")

    bounds_by_radius = {
        r_t: partition_threshold_bounds(calib, alpha, r_t, ops)
        for r_t in train_radii if r_t > 0
    }

    grid = CertificateGrid(radius_pairs=radius_pairs)
    for idx, score_vector in enumerate(np.asarray(test_scores, dtype=np.float64)):
        supports = support_counts(predictor, score_vector)
        majority = majority_set_from_supports(supports, predictor.majority_threshold)
        for r_t, r_c in radius_pairs:
            if r_t == 0:
                cov, size = certify_calibration(supports, majority, predictor.majority_threshold,
                                                r_c, calib.partition_sizes, alpha)
                robust = cov and size
            else:
                cov, size, robust = certify_joint(
                    test_count_matrix[idx], classifier_count, majority,
                    bounds_by_radius[r_t], predictor.majority_threshold,
                    r_t, r_c, calib.partition_sizes, alpha, ops)
            grid.records.append(CertificateRecord(idx, r_t, r_c, cov, size, robust))
    return grid
