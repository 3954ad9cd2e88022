"""Binding-fidelity suite: outputs must be bit-identical to the CLI path."""

import subprocess
import sys

import numpy as np
import pytest

import certconf_bindings as cb
from certconf import dataio
from certconf.certify import CertificateRecord
from certconf.errors import InfeasibleCalibrationError, InvalidInputError

# Three shared fixtures: (classes, classifiers, calib_size, test_size, k_c, alpha, seed)
FIXTURES = [
    (3, 5, 60, 12, 2, 0.2, 101),
    (4, 8, 120, 20, 3, 0.1, 202),
    (5, 6, 90, 15, 1, 0.25, 303),
]


def run_cli(*argv):
    proc = subprocess.run([sys.executable, "-m", "certconf.cli"] + [str(a) for a in argv],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="module", params=FIXTURES, ids=lambda f: f"fixture-seed{f[-1]}")
def fixture_run(request, tmp_path_factory):
    """One shared fixture: synthetic data plus a full CLI run over it."""
    K, k_t, n, m, k_c, alpha, seed = request.param
    base = tmp_path_factory.mktemp(f"fix{seed}")
    data = base / "data"
    run_cli("synth", "--out", data, "--classes", K, "--classifiers", k_t,
            "--calib-size", n, "--test-size", m, "--accuracy", 0.85, "--seed", seed)
    run_cli("calibrate", "--out", base / "cal", "--alpha", alpha, "--k-c", k_c,
            "--classes", K,
            "--calib-votes", data / "calib_votes.csv",
            "--calib-features", data / "calib_features.csv")
    run_cli("predict", "--out", base / "pred",
            "--predictor", base / "cal" / "predictor.json",
            "--test-votes", data / "test_votes.csv")
    run_cli("certify", "--out", base / "cert",
            "--predictor", base / "cal" / "predictor.json",
            "--calib-votes", data / "calib_votes.csv",
            "--calib-features", data / "calib_features.csv",
            "--test-votes", data / "test_votes.csv",
            "--max-rt", 1, "--max-rc", 1)
    return request.param, base


def _load_arrays(base, K):
    ids, labels, votes = dataio.read_vote_matrix(base / "data" / "calib_votes.csv", K)
    _, features = dataio.read_features(base / "data" / "calib_features.csv")
    test_ids, test_labels, test_votes = dataio.read_vote_matrix(
        base / "data" / "test_votes.csv", K)
    return ids, labels, votes, features, test_ids, test_labels, test_votes


def test_calibrate_bit_identical_to_cli(fixture_run, tmp_path):
    (K, k_t, n, m, k_c, alpha, seed), base = fixture_run
    _, labels, votes, features, *_ = _load_arrays(base, K)
    handle = cb.py_calibrate(votes.votes, labels, features, alpha, k_c, class_count=K)
    out = tmp_path / "predictor.json"
    handle.save(out)
    assert out.read_bytes() == (base / "cal" / "predictor.json").read_bytes()


def test_predict_bit_identical_to_cli(fixture_run, tmp_path):
    (K, k_t, n, m, k_c, alpha, seed), base = fixture_run
    _, labels, votes, features, test_ids, _, test_votes = _load_arrays(base, K)
    handle = cb.py_calibrate(votes.votes, labels, features, alpha, k_c, class_count=K)
    sets = cb.py_predict(handle, test_votes.votes)
    out = tmp_path / "prediction_sets.csv"
    dataio.write_prediction_sets(out, test_ids, sets)
    assert out.read_bytes() == (base / "pred" / "prediction_sets.csv").read_bytes()


def test_certify_bit_identical_to_cli(fixture_run, tmp_path):
    (K, k_t, n, m, k_c, alpha, seed), base = fixture_run
    _, labels, votes, features, test_ids, _, test_votes = _load_arrays(base, K)
    handle = cb.py_calibrate(votes.votes, labels, features, alpha, k_c, class_count=K)
    pairs = [(r_t, r_c) for r_t in (0, 1) for r_c in (0, 1)]
    flags = cb.py_certify(handle, test_votes.votes, 1, 1, radius_pairs=pairs)
    records = [CertificateRecord(f["point_index"], f["train_radius"], f["calib_radius"],
                                 f["coverage_reliable"], f["size_reliable"], f["robust"])
               for f in flags]
    out = tmp_path / "certificates.csv"
    dataio.write_certificates(out, test_ids, records)
    assert out.read_bytes() == (base / "cert" / "certificates.csv").read_bytes()


def test_certify_trivial_and_monotone(fixture_run):
    (K, k_t, n, m, k_c, alpha, seed), base = fixture_run
    _, labels, votes, features, _, _, test_votes = _load_arrays(base, K)
    handle = cb.py_calibrate(votes.votes, labels, features, alpha, k_c, class_count=K)
    zero = cb.py_certify(handle, test_votes.votes, 0, 0)
    assert all(f["coverage_reliable"] and f["size_reliable"] and f["robust"] for f in zero)
    pairs = [(r, r) for r in range(3)]
    flags = cb.py_certify(handle, test_votes.votes, 0, 0, radius_pairs=pairs)
    by_point = {}
    for f in flags:
        by_point.setdefault(f["point_index"], []).append(f)
    for rows in by_point.values():
        rows.sort(key=lambda f: f["train_radius"])
        for a, b in zip(rows, rows[1:]):
            for key in ("coverage_reliable", "size_reliable", "robust"):
                assert (not b[key]) or a[key]


def test_evaluate_matches_cli_report(fixture_run, tmp_path):
    (K, k_t, n, m, k_c, alpha, seed), base = fixture_run
    run_cli("evaluate", "--out", base / "eval",
            "--predictor", base / "cal" / "predictor.json",
            "--calib-votes", base / "data" / "calib_votes.csv",
            "--calib-features", base / "data" / "calib_features.csv",
            "--test-votes", base / "data" / "test_votes.csv",
            "--max-rt", 1, "--max-rc", 1)
    _, labels, votes, features, _, test_labels, test_votes = _load_arrays(base, K)
    handle = cb.py_calibrate(votes.votes, labels, features, alpha, k_c, class_count=K)
    pairs = [(r_t, r_c) for r_t in (0, 1) for r_c in (0, 1)]
    report = cb.py_evaluate(handle, test_votes.votes, test_labels, radius_pairs=pairs)
    out = tmp_path / "report.json"
    dataio.write_json(out, report)
    assert out.read_bytes() == (base / "eval" / "report.json").read_bytes()


def test_single_partition_is_vanilla(rng_seed=5):
    rng = np.random.default_rng(rng_seed)
    labels = rng.integers(0, 3, size=40)
    votes = np.where(rng.random((40, 6)) < 0.85, labels[:, None],
                     (labels[:, None] + 1) % 3)
    features = rng.standard_normal((40, 3))
    handle = cb.py_calibrate(votes, labels, features, 0.2, 1, class_count=3)
    assert handle.majority_threshold == 0
    test_votes = rng.integers(0, 3, size=(10, 6))
    from certconf.scoring import VoteMatrix, score_rows
    scores = score_rows("smoothed", votes=VoteMatrix(test_votes, 3))
    tau = handle.thresholds[0]
    expected = [{y for y in range(3) if row[y] >= tau} for row in scores]
    assert cb.py_predict(handle, test_votes) == expected


def test_infeasible_calibration_raises(rng_seed=6):
    rng = np.random.default_rng(rng_seed)
    labels = rng.integers(0, 3, size=10)
    votes = rng.integers(0, 3, size=(10, 4))
    features = rng.standard_normal((10, 3))
    with pytest.raises(InfeasibleCalibrationError):
        cb.py_calibrate(votes, labels, features, 0.1, 2, class_count=3)


class TestExportVoteMatrix:
    def test_round_trip(self, tmp_path, rng_seed=7):
        rng = np.random.default_rng(rng_seed)
        columns = [rng.integers(0, 4, size=25) for _ in range(6)]
        labels = rng.integers(0, 4, size=25)
        path = tmp_path / "votes.csv"
        cb.export_vote_matrix(columns, labels, path, class_count=4)
        ids, got_labels, got = dataio.read_vote_matrix(path, 4)
        assert np.array_equal(got_labels, labels)
        for j, col in enumerate(columns):
            assert np.array_equal(got.votes[:, j], col)

    def test_golden_byte_equality(self, tmp_path):
        columns = [np.array([0, 1, 2]), np.array([1, 1, 0])]
        labels = np.array([0, 1, 2])
        path = tmp_path / "votes.csv"
        cb.export_vote_matrix(columns, labels, path, class_count=3)
        assert path.read_bytes() == (
            b"point_id,label,vote_0,vote_1\r\n"
            b"p0,0,0,1\r\n"
            b"p1,1,1,1\r\n"
            b"p2,2,2,0\r\n")

    def test_shape_mismatch_raises(self, tmp_path):
        with pytest.raises(InvalidInputError):
            cb.export_vote_matrix([np.zeros(3, dtype=int), np.zeros(4, dtype=int)],
                                  np.zeros(3, dtype=int), tmp_path / "x.csv")
        with pytest.raises(InvalidInputError):
            cb.export_vote_matrix([np.zeros(3, dtype=int)], np.zeros(5, dtype=int),
                                  tmp_path / "x.csv")
        with pytest.raises(InvalidInputError):
            cb.export_vote_matrix([], np.zeros(0, dtype=int), tmp_path / "x.csv")


def test_format_versions_in_lockstep():
    assert cb.FORMAT_VERSIONS is dataio.FORMAT_VERSIONS
    assert cb.__version__ == "0.1.0"
