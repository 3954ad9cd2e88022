"""Thin array-in, array-out bindings around the certconf library.

Everything numeric delegates to certconf itself: these wrappers only convert
in-memory arrays to the library's canonical representations at the boundary,
so every output is bit-identical to what the certconf CLI produces on the
same data. The file-format versions are re-exported and tracked in lockstep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from certconf import dataio
from certconf.certify import certificate_grid
from certconf.conformal import (CalibrationConfig, CalibrationResult, MajorityPredictor,
                                calibrate, predict_majority)
from certconf.errors import InvalidInputError
from certconf.evaluation import evaluate
from certconf.scoring import VoteMatrix, score_rows

__version__ = "0.1.0"

FORMAT_VERSIONS = dataio.FORMAT_VERSIONS


@dataclass(frozen=True)
class BoundPredictorHandle:
    """Opaque, immutable handle to a calibrated predictor.

    Retains the calibration-set state needed for certification; all reads are
    side-effect-free and the handle can be shared across threads.
    """

    _result: CalibrationResult
    _classifier_count: int | None

    @property
    def predictor(self) -> MajorityPredictor:
        return self._result.predictor

    @property
    def thresholds(self) -> tuple[float, ...]:
        return self._result.predictor.thresholds

    @property
    def majority_threshold(self) -> int:
        return self._result.predictor.majority_threshold

    def to_dict(self) -> dict:
        """Predictor bundle in the versioned JSON layout the CLI writes."""
        return dataio.predictor_to_dict(self._result.predictor)

    def save(self, path) -> None:
        dataio.write_json(path, self.to_dict())


def _as_vote_matrix(votes, class_count: int) -> VoteMatrix:
    return VoteMatrix(np.asarray(votes, dtype=np.int64), class_count)


def py_calibrate(votes, labels, features, alpha: float, k_c: int,
                 score_mode: str = "smoothed", *, class_count: int | None = None,
                 probs=None, hash_mode: str = "byte-hash") -> BoundPredictorHandle:
    """Calibrate a majority predictor from in-memory arrays.

    ``votes`` is an (n, k_t) integer array of per-classifier predicted classes
    (smoothed mode); probability modes take ``probs`` instead. Raises the
    library's error taxonomy unchanged (infeasible partitions, bad config).
    """
    labels = np.asarray(labels, dtype=np.int64)
    features = np.asarray(features, dtype=np.float64)
    config = CalibrationConfig(alpha=alpha, partition_count=k_c,
                               score_mode=score_mode, hash_mode=hash_mode)
    if score_mode == "smoothed":
        if votes is None:
            raise InvalidInputError("smoothed calibration needs a vote array")
        if class_count is None:
            class_count = int(np.asarray(votes).max()) + 1
        matrix = _as_vote_matrix(votes, class_count)
        result = calibrate(features, labels, config, votes=matrix)
        return BoundPredictorHandle(result, matrix.classifier_count)
    result = calibrate(features, labels, config, probs=np.asarray(probs, dtype=np.float64))
    return BoundPredictorHandle(result, None)


def _test_scores(handle: BoundPredictorHandle, test_votes=None, test_probs=None,
                 test_features=None):
    config = handle.predictor.config
    if config.score_mode == "smoothed":
        if test_votes is None:
            raise InvalidInputError("smoothed prediction needs test votes")
        matrix = _as_vote_matrix(test_votes, handle.predictor.class_count)
        return score_rows("smoothed", votes=matrix), matrix
    probs = np.asarray(test_probs, dtype=np.float64)
    features = None if test_features is None else np.asarray(test_features, dtype=np.float64)
    return score_rows(config.score_mode, probs=probs, features=features,
                      hash_mode=config.hash_mode), None


def py_predict(handle: BoundPredictorHandle, test_votes=None, *, test_probs=None,
               test_features=None) -> list[set[int]]:
    """Majority prediction sets for a batch of test points."""
    scores, _ = _test_scores(handle, test_votes, test_probs, test_features)
    return [predict_majority(handle.predictor, row) for row in scores]


def py_certify(handle: BoundPredictorHandle, test_votes, r_t: int, r_c: int, *,
               radius_pairs=None, test_probs=None, test_features=None) -> list[dict]:
    """Per-point reliability flags at the given radii (or an explicit grid).

    Returns one record per (point, radius pair) in the same order the CLI
    writes its certificate rows.
    """
    pairs = radius_pairs if radius_pairs is not None else [(r_t, r_c)]
    scores, matrix = _test_scores(handle, test_votes, test_probs, test_features)
    grid = certificate_grid(
        handle.predictor, handle._result.data, scores, pairs,
        test_count_matrix=matrix.count_matrix() if matrix is not None else None,
        classifier_count=matrix.classifier_count if matrix is not None else None)
    return [{"point_index": rec.point_index,
             "train_radius": rec.train_radius,
             "calib_radius": rec.calib_radius,
             "coverage_reliable": rec.coverage_reliable,
             "size_reliable": rec.size_reliable,
             "robust": rec.robust} for rec in grid.records]


def py_evaluate(handle: BoundPredictorHandle, test_votes, test_labels, *,
                radius_pairs=((0, 0),), test_probs=None, test_features=None) -> dict:
    """Evaluation report (coverage, sizes, reliability ratios) as a plain dict."""
    scores, matrix = _test_scores(handle, test_votes, test_probs, test_features)
    report, _ = evaluate(
        handle.predictor, handle._result.data, scores, np.asarray(test_labels),
        list(radius_pairs),
        test_count_matrix=matrix.count_matrix() if matrix is not None else None,
        classifier_count=matrix.classifier_count if matrix is not None else None)
    return report.to_dict()


def export_vote_matrix(per_classifier_votes, labels, path, *, class_count=None,
                       point_ids=None) -> None:
    """Write per-classifier predicted-class arrays as a vote-matrix CSV.

    ``per_classifier_votes`` is a sequence of k_t arrays, one per classifier,
    each holding that classifier's predicted class for every point.
    """
    columns = [np.asarray(col, dtype=np.int64) for col in per_classifier_votes]
    if not columns:
        raise InvalidInputError("need at least one classifier vote array")
    n = columns[0].shape[0]
    if any(col.shape != (n,) for col in columns):
        raise InvalidInputError("classifier vote arrays must all have the same length")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise InvalidInputError(f"labels have shape {labels.shape}, expected ({n},)")
    votes = np.stack(columns, axis=1)
    if class_count is None:
        class_count = int(max(votes.max(), labels.max())) + 1
    if point_ids is None:
        point_ids = [f"p{i}" for i in range(n)]
    dataio.write_vote_matrix(path, point_ids, VoteMatrix(votes, class_count), labels=labels)
