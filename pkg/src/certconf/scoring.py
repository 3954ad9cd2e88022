"""Conformal score functions.

Three modes:

``smoothed``
    Softmax over the fraction of ensemble classifiers voting for each class.
    The vote fractions live on the grid {0, 1/k, ..., 1} for an ensemble of k
    classifiers, which is what makes worst-case analysis under training-data
    edits a discrete optimization problem.

``hps``
    The plain class probability of a soft classifier.

``aps``
    Cumulative-probability score with a reproducible pseudo-random tie
    breaker: the uniform draw is seeded by the feature hash, so identical
    inputs always receive identical scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .partitioning import hash_feature

SCORE_MODES = ("smoothed", "hps", "aps")

# Name and version of the pseudo-random generator behind the aps tie breaker.
# Pinned in manifests; changing it changes every aps score.
APS_RNG = "numpy-pcg64"

_EXP_TABLES: dict[int, tuple[float, ...]] = {}


def _exp_table(classifier_count: int) -> tuple[float, ...]:
    table = _EXP_TABLES.get(classifier_count)
    if table is None:
        table = tuple(math.exp(-j / classifier_count) for j in range(classifier_count + 1))
        _EXP_TABLES[classifier_count] = table
    return table


def softmax_over_votes(counts: Sequence[int], classifier_count: int) -> list[float]:
    """Softmax of the vote-fraction vector, evaluated exactly on the vote grid.

    Every score path in the package (calibration, prediction, certification
    bounds, brute-force oracles) funnels through this one routine, so equal
    vote-count vectors always produce bitwise-equal floats. Certificate
    comparisons rely on that: no epsilon slack is needed anywhere. The
    max-shifted exponentials are cached per ensemble size since the shifted
    exponents are always integers divided by the ensemble size, and the
    denominator uses exactly-rounded summation so that count vectors equal up
    to a permutation of the other classes score bitwise-identically.
    """
    table = _exp_table(classifier_count)
    top = max(counts)
    weights = [table[top - int(c)] for c in counts]
    total = math.fsum(weights)
    return [w / total for w in weights]


@dataclass(frozen=True)
class VoteDistribution:
    """Per-class vote counts of an ensemble for one datapoint."""

    counts: tuple[int, ...]
    classifier_count: int

    def __post_init__(self):
        if len(self.counts) < 2:
            raise InvalidInputError("need at least 2 classes")
        if any(c < 0 for c in self.counts) or sum(self.counts) != self.classifier_count:
            raise InvalidInputError("vote counts must be non-negative and sum to the classifier count")

    @property
    def fractions(self) -> list[float]:
        return [c / self.classifier_count for c in self.counts]


@dataclass(frozen=True)
class VoteMatrix:
    """Predicted class per datapoint (rows) and per classifier (columns)."""

    votes: np.ndarray
    class_count: int

    def __post_init__(self):
        votes = np.asarray(self.votes, dtype=np.int64)
        object.__setattr__(self, "votes", votes)
        if votes.ndim != 2 or votes.shape[1] < 1:
            raise InvalidInputError("vote matrix must be 2-D with at least one classifier column")
        if self.class_count < 2:
            raise InvalidInputError("need at least 2 classes")
        if votes.size and (votes.min() < 0 or votes.max() >= self.class_count):
            raise InvalidInputError(f"votes must lie in [0, {self.class_count - 1}]")

    @property
    def classifier_count(self) -> int:
        return int(self.votes.shape[1])

    def count_matrix(self) -> np.ndarray:
        """Per-point vote counts, shape (n, class_count)."""
        n = self.votes.shape[0]
        counts = np.zeros((n, self.class_count), dtype=np.int64)
        np.add.at(counts, (np.repeat(np.arange(n), self.classifier_count), self.votes.ravel()), 1)
        return counts


def vote_distribution(votes_row: Sequence[int], class_count: int) -> VoteDistribution:
    """Count classifier votes for one datapoint."""
    row = [int(v) for v in votes_row]
    if not row:
        raise InvalidInputError("vote row is empty")
    if any(v < 0 or v >= class_count for v in row):
        raise InvalidInputError(f"votes must lie in [0, {class_count - 1}]")
    counts = [0] * class_count
    for v in row:
        counts[v] += 1
    return VoteDistribution(tuple(counts), len(row))


def smoothed_scores(dist: VoteDistribution) -> list[float]:
    """Smoothed conformal scores for all classes at once (they share a denominator)."""
    return softmax_over_votes(dist.counts, dist.classifier_count)


def smoothed_score(dist: VoteDistribution, label: int) -> float:
    if not 0 <= label < len(dist.counts):
        raise InvalidInputError(f"class index {label} out of range")
    return smoothed_scores(dist)[label]


def validate_probability_row(probs_row: Sequence[float], tol: float = 1e-9) -> list[float]:
    row = [float(p) for p in probs_row]
    if not row:
        raise InvalidInputError("probability row is empty")
    if any(p < 0 or not math.isfinite(p) for p in row):
        raise InvalidInputError("probabilities must be finite and non-negative")
    if abs(sum(row) - 1.0) > tol:
        raise InvalidInputError("probability row must sum to 1")
    return row


def hps_score(probs_row: Sequence[float], label: int) -> float:
    """Class-probability score: the soft classifier's output for the label."""
    row = validate_probability_row(probs_row)
    if not 0 <= label < len(row):
        raise InvalidInputError(f"class index {label} out of range")
    return row[label]


def aps_uniform_draw(x: Sequence[float], hash_mode: str = "byte-hash") -> float:
    """One deterministic uniform draw in [0, 1) seeded by the feature hash."""
    return float(np.random.Generator(np.random.PCG64(hash_feature(x, hash_mode))).random())


def reproducible_aps_score(probs_row: Sequence[float], label: int,
                           x: Sequence[float] | None = None, *,
                           u: float | None = None,
                           hash_mode: str = "byte-hash") -> float:
    """Cumulative-probability score with a reproducible tie breaker.

    Negated sum of all class probabilities strictly above the label's, plus
    ``u`` times the label's own probability. ``u`` is derived from the feature
    hash; pass it explicitly to pin the draw in tests (``u=1`` recovers the
    deterministic cumulative score).
    """
    row = validate_probability_row(probs_row)
    if not 0 <= label < len(row):
        raise InvalidInputError(f"class index {label} out of range")
    if u is None:
        if x is None:
            raise InvalidInputError("reproducible aps needs the feature vector (or an explicit u)")
        u = aps_uniform_draw(x, hash_mode)
    p_label = row[label]
    above = sum(p for p in row if p > p_label)
    return -(above + u * p_label)


def score_rows(score_mode: str, *, votes: VoteMatrix | None = None,
               probs: np.ndarray | None = None,
               features: np.ndarray | None = None,
               hash_mode: str = "byte-hash") -> np.ndarray:
    """Score matrix (n, class_count) for a batch of points in the given mode."""
    if score_mode == "smoothed":
        if votes is None:
            raise InvalidInputError("smoothed scoring needs a vote matrix")
        k = votes.classifier_count
        return np.array([softmax_over_votes(c, k) for c in votes.count_matrix()], dtype=np.float64)
    if probs is None:
        raise InvalidInputError(f"{score_mode} scoring needs a probability matrix")
    probs = np.asarray(probs, dtype=np.float64)
    if score_mode == "hps":
        return np.array([[hps_score(row, y) for y in range(len(row))] for row in probs])
    if score_mode == "aps":
        if features is None:
            raise InvalidInputError("aps scoring needs feature vectors for the tie breaker")
        out = []
        for row, x in zip(probs, features):
            u = aps_uniform_draw(x, hash_mode)
            out.append([reproducible_aps_score(row, y, u=u) for y in range(len(row))])
        return np.array(out, dtype=np.float64)
    raise InvalidInputError(f"unknown score mode {score_mode!r}; expected one of {SCORE_MODES}")


def calibration_scores(score_mode: str, labels: Sequence[int], *,
                       votes: VoteMatrix | None = None,
                       probs: np.ndarray | None = None,
                       features: np.ndarray | None = None,
                       hash_mode: str = "byte-hash") -> np.ndarray:
    """Own-label conformal score for each calibration point."""
    matrix = score_rows(score_mode, votes=votes, probs=probs, features=features, hash_mode=hash_mode)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != matrix.shape[0]:
        raise InvalidInputError("label count does not match the number of scored points")
    if labels.size and (labels.min() < 0 or labels.max() >= matrix.shape[1]):
        raise InvalidInputError("calibration label out of class range")
    return matrix[np.arange(matrix.shape[0]), labels]
