"""File formats: CSV matrices, the predictor bundle, reports, and run manifests.

All numeric CSV fields use shortest round-trip decimal serialization (Python
``repr``), so re-reading a file reproduces the exact floats that were written.
Formats are versioned; the versions travel in predictor bundles and run
manifests.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .conformal import CalibrationConfig, MajorityPredictor
from .errors import InvalidInputError
from .scoring import APS_RNG, VoteMatrix

FORMAT_VERSIONS = {
    "predictor": 1,
    "vote_csv": 1,
    "probability_csv": 1,
    "feature_csv": 1,
    "certificate_csv": 1,
    "aps_rng": APS_RNG,
}


def _write_rows(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty file")
        return header, [row for row in reader if row]


def write_vote_matrix(path, point_ids: Sequence[str], votes: VoteMatrix,
                      labels: Sequence[int] | None = None) -> None:
    k = votes.classifier_count
    header = (["point_id", "label"] if labels is not None else ["point_id"]) + \
        [f"vote_{i}" for i in range(k)]
    rows = []
    for i, pid in enumerate(point_ids):
        row = [pid] + ([int(labels[i])] if labels is not None else []) + [int(v) for v in votes.votes[i]]
        rows.append(row)
    _write_rows(path, header, rows)


def read_vote_matrix(path, class_count: int) -> tuple[list[str], np.ndarray | None, VoteMatrix]:
    header, rows = _read_rows(path)
    has_labels = len(header) > 1 and header[1] == "label"
    first_vote = 2 if has_labels else 1
    if header[0] != "point_id" or not all(h.startswith("vote_") for h in header[first_vote:]):
        raise InvalidInputError(f"{path}: not a vote matrix (header {header[:3]}...)")
    point_ids = [r[0] for r in rows]
    labels = np.array([int(r[1]) for r in rows], dtype=np.int64) if has_labels else None
    votes = np.array([[int(v) for v in r[first_vote:]] for r in rows], dtype=np.int64)
    return point_ids, labels, VoteMatrix(votes, class_count)


def write_probability_matrix(path, point_ids: Sequence[str], probs: np.ndarray,
                             labels: Sequence[int] | None = None) -> None:
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[1]
    header = (["point_id", "label"] if labels is not None else ["point_id"]) + \
        [f"p_{i}" for i in range(k)]
    rows = []
    for i, pid in enumerate(point_ids):
        row = [pid] + ([int(labels[i])] if labels is not None else []) + [repr(float(p)) for p in probs[i]]
        rows.append(row)
    _write_rows(path, header, rows)


def read_probability_matrix(path) -> tuple[list[str], np.ndarray | None, np.ndarray]:
    header, rows = _read_rows(path)
    has_labels = len(header) > 1 and header[1] == "label"
    first = 2 if has_labels else 1
    if header[0] != "point_id" or not all(h.startswith("p_") for h in header[first:]):
        raise InvalidInputError(f"{path}: not a probability matrix")
    point_ids = [r[0] for r in rows]
    labels = np.array([int(r[1]) for r in rows], dtype=np.int64) if has_labels else None
    probs = np.array([[float(v) for v in r[first:]] for r in rows], dtype=np.float64)
    return point_ids, labels, probs


def write_features(path, point_ids: Sequence[str], features: np.ndarray) -> None:
    features = np.asarray(features, dtype=np.float64)
    header = ["point_id"] + [f"x_{i}" for i in range(features.shape[1])]
    rows = [[pid] + [repr(float(v)) for v in features[i]] for i, pid in enumerate(point_ids)]
    _write_rows(path, header, rows)


def read_features(path) -> tuple[list[str], np.ndarray]:
    header, rows = _read_rows(path)
    if header[0] != "point_id" or not all(h.startswith("x_") for h in header[1:]):
        raise InvalidInputError(f"{path}: not a feature matrix")
    point_ids = [r[0] for r in rows]
    features = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    return point_ids, features


def write_labels(path, point_ids: Sequence[str], labels: Sequence[int]) -> None:
    _write_rows(path, ["point_id", "label"], [[pid, int(y)] for pid, y in zip(point_ids, labels)])


def read_labels(path) -> tuple[list[str], np.ndarray]:
    header, rows = _read_rows(path)
    if header[:2] != ["point_id", "label"]:
        raise InvalidInputError(f"{path}: not a label file")
    return [r[0] for r in rows], np.array([int(r[1]) for r in rows], dtype=np.int64)


def predictor_to_dict(predictor: MajorityPredictor) -> dict:
    return {
        "format_version": FORMAT_VERSIONS["predictor"],
        "score_mode": predictor.config.score_mode,
        "alpha": predictor.config.alpha,
        "k_c": predictor.config.partition_count,
        "thresholds": [float(t) for t in predictor.thresholds],
        "majority_threshold": predictor.majority_threshold,
        "hash_mode": predictor.config.hash_mode,
        "K": predictor.class_count,
    }


def predictor_from_dict(payload: dict) -> MajorityPredictor:
    if payload.get("format_version") != FORMAT_VERSIONS["predictor"]:
        raise InvalidInputError(
            f"unsupported predictor format version {payload.get('format_version')!r}")
    config = CalibrationConfig(alpha=payload["alpha"], partition_count=payload["k_c"],
                               score_mode=payload["score_mode"], hash_mode=payload["hash_mode"])
    return MajorityPredictor(thresholds=tuple(payload["thresholds"]),
                             majority_threshold=int(payload["majority_threshold"]),
                             class_count=int(payload["K"]), config=config)


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_prediction_sets(path, point_ids: Sequence[str], sets: Sequence[set[int]]) -> None:
    rows = [[pid, ";".join(str(y) for y in sorted(s)), len(s)]
            for pid, s in zip(point_ids, sets)]
    _write_rows(path, ["point_id", "set_members", "set_size"], rows)


def read_prediction_sets(path) -> tuple[list[str], list[set[int]]]:
    header, rows = _read_rows(path)
    if header != ["point_id", "set_members", "set_size"]:
        raise InvalidInputError(f"{path}: not a prediction-set file")
    sets = [set(int(v) for v in r[1].split(";")) if r[1] else set() for r in rows]
    return [r[0] for r in rows], sets


def write_certificates(path, point_ids: Sequence[str], records) -> None:
    rows = [[point_ids[r.point_index], r.train_radius, r.calib_radius,
             int(r.coverage_reliable), int(r.size_reliable), int(r.robust)]
            for r in records]
    _write_rows(path, ["point_id", "r_t", "r_c", "coverage_reliable", "size_reliable", "robust"],
                rows)


def write_reliability_csv(path, ratios: Sequence[dict]) -> None:
    rows = [[r["train_radius"], r["calib_radius"], repr(r["coverage_ratio"]),
             repr(r["size_ratio"]), repr(r["robust_ratio"])] for r in ratios]
    _write_rows(path, ["r_t", "r_c", "coverage_ratio", "size_ratio", "robust_ratio"], rows)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir, config: dict, seed: int | None = None) -> Path:
    """Record everything needed to reproduce a run bit-exactly (no timestamps,
    no absolute output paths)."""
    manifest = {
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "format_versions": FORMAT_VERSIONS,
    }
    path = Path(out_dir) / "manifest.json"
    write_json(path, manifest)
    return path


def load_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)
