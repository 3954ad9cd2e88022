"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
"""

import itertools
import math
import time
from fractions import Fraction

import numpy as np

import certconf as cc
from certconf.certify import OpCounter, certificate_grid
from certconf.cli import main as cli_main
from certconf.conformal import CalibrationConfig, calibrate
from certconf.errors import InfeasibleCalibrationError
from certconf.evaluation import SyntheticEnsembleSpec, generate_synthetic
from certconf.oracle import (AttackBudget, attack_search, brute_force_score_bounds,
                             certify_instance)
from certconf.scoring import VoteMatrix, score_rows
from tests.conftest import balanced_features, random_instance


VERDICTS: list[str] = []


def _verdict(name: str, ok: bool, detail: str = ""):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}{' (' + detail + ')' if detail else ''}"
    VERDICTS.append(line)
    print("\n" + line)
    assert ok, f"{name} failed: {detail}"


def _grid_distributions(k_t, K):
    for combo in itertools.combinations_with_replacement(range(K), k_t):
        counts = [0] * K
        for c in combo:
            counts[c] += 1
        yield counts


def test_a1_greedy_bound_exactness():
    """Greedy bounds equal brute-force extrema exactly on the full grid sweep."""
    start = time.monotonic()
    checked = 0
    for K in (2, 3, 4):
        for k_t in range(1, 6):
            for counts in _grid_distributions(k_t, K):
                for y in range(K):
                    for r_t in range(k_t + 1):
                        lo, hi = brute_force_score_bounds(counts, k_t, y, r_t)
                        assert cc.lower_bound_score(counts, k_t, y, r_t) == lo, \
                            (counts, k_t, y, r_t)
                        assert cc.upper_bound_score(counts, k_t, y, r_t) == hi, \
                            (counts, k_t, y, r_t)
                        checked += 1
    elapsed = time.monotonic() - start
    _verdict("greedy-bound-exactness", elapsed < 60.0,
             f"{checked} cases, 0 tolerance, {elapsed:.1f}s")


def test_a2_certificate_soundness():
    """Exhaustive attack search never falsifies a certified flag: 100 seeded
    instances per cell of the (r_t <= 2, r_c <= 2) grid."""
    violations = []
    certified = 0
    for r_t in range(3):
        for r_c in range(3):
            rng = np.random.default_rng(7000 + 10 * r_t + r_c)
            for i in range(100):
                instance = random_instance(rng)
                cov, size, _ = certify_instance(instance, r_t, r_c)
                budget = AttackBudget(r_t, r_c)
                if cov:
                    certified += 1
                    result = attack_search(instance, budget, "remove_class",
                                           require_exhaustive=True)
                    if result.found:
                        violations.append(("coverage", r_t, r_c, i))
                if size:
                    certified += 1
                    result = attack_search(instance, budget, "add_class",
                                           require_exhaustive=True)
                    if result.found:
                        violations.append(("size", r_t, r_c, i))
    _verdict("certificate-soundness", not violations,
             f"{certified} certified flags across 900 instances, "
             f"{len(violations)} falsified")


def _coverage_trial(seed, k_c, alpha=0.1, n=200, K=10, k_t=20):
    """One fresh calibration plus one test point; infeasible hash splits are
    redrawn (the split depends only on features, never on scores or labels,
    so coverage conditional on a feasible split is unaffected)."""
    config = CalibrationConfig(alpha=alpha, partition_count=k_c)
    attempt = seed
    while True:
        spec = SyntheticEnsembleSpec(class_count=K, classifier_count=k_t,
                                     calibration_size=n, test_size=1,
                                     accuracy=0.9, seed=attempt)
        data = generate_synthetic(spec)
        try:
            result = calibrate(data.calib_features, data.calib_labels, config,
                               votes=data.calib_votes)
            break
        except InfeasibleCalibrationError:
            attempt += 1_000_003
    scores = score_rows("smoothed", votes=data.test_votes)[0]
    supports = cc.support_counts(result.predictor, scores)
    label = int(data.test_labels[0])
    majority = cc.majority_set_from_supports(supports, result.predictor.majority_threshold)
    variant = cc.majority_set_from_supports(supports, result.predictor.majority_threshold + 1)
    vanilla_equal = True
    if k_c == 1:
        tau = result.predictor.thresholds[0]
        vanilla_equal = majority == {y for y, s in enumerate(scores) if s >= tau}
    return label in majority, label in variant, vanilla_equal


TRIALS = 2000
SIGMA3 = 3 * math.sqrt(0.9 * 0.1 / TRIALS)

_coverage_cache = {}


def _coverage_run(k_c):
    if k_c not in _coverage_cache:
        hits = variant_hits = 0
        vanilla_all = True
        for t in range(TRIALS):
            covered, covered_variant, vanilla_equal = _coverage_trial(
                seed=13_000_000 * k_c + t, k_c=k_c)
            hits += covered
            variant_hits += covered_variant
            vanilla_all = vanilla_all and vanilla_equal
        _coverage_cache[k_c] = (hits / TRIALS, variant_hits / TRIALS, vanilla_all)
    return _coverage_cache[k_c]


def test_a3_marginal_coverage():
    """Majority sets keep the coverage guarantee: >= 0.9 - 3 sigma over 2000
    trials for every partition count; the single-partition configuration
    matches plain split-conformal sets exactly per point."""
    details = []
    ok = True
    for k_c in (1, 4, 10):
        coverage, _, vanilla_all = _coverage_run(k_c)
        details.append(f"k_c={k_c}: {coverage:.4f}")
        ok = ok and coverage >= 0.9 - SIGMA3
        if k_c == 1:
            ok = ok and vanilla_all
            details.append("vanilla-match=exact" if vanilla_all else "vanilla-match=FAILED")
    _verdict("marginal-coverage", ok,
             f"{'; '.join(details)}; bound {0.9 - SIGMA3:.4f}")


def test_a4_majority_threshold_correction():
    """Raising the majority threshold by one (the supremum construction)
    breaks the coverage guarantee for at least one configuration."""
    results = {k_c: _coverage_run(k_c)[1] for k_c in (1, 10)}
    violated = {k_c: cov for k_c, cov in results.items() if cov < 0.9 - SIGMA3}
    _verdict("majority-threshold-correction", len(violated) >= 1,
             "; ".join(f"k_c={k}: {v:.4f}" for k, v in results.items()))


def test_a5_minimal_calibration_boundary():
    """Calibration succeeds at the minimal equal-partition size and fails with
    a partition diagnostic one point per partition below it."""
    rng = np.random.default_rng(99)
    ok = True
    details = []
    for alpha in (0.1, 0.05):
        for k_c in (1, 4, 22):
            per = cc.min_calibration_size(alpha, 1)
            features, parts = balanced_features(rng, k_c, per)
            n = len(features)
            assert n == cc.min_calibration_size(alpha, k_c)
            labels = rng.integers(0, 3, size=n)
            correct = rng.random((n, 6)) < 0.8
            offsets = rng.integers(1, 3, size=(n, 6))
            votes = VoteMatrix(np.where(correct, labels[:, None],
                                        (labels[:, None] + offsets) % 3), 3)
            config = CalibrationConfig(alpha=alpha, partition_count=k_c)
            try:
                result = calibrate(features, labels, config, votes=votes)
                boundary_ok = result.data.partition_sizes == (per,) * k_c
            except InfeasibleCalibrationError:
                boundary_ok = False
            keep = np.ones(n, dtype=bool)
            for i in range(k_c):
                keep[np.flatnonzero(parts == i)[0]] = False
            try:
                calibrate(features[keep], labels[keep], config,
                          votes=VoteMatrix(votes.votes[keep], 3))
                below_ok = False
            except InfeasibleCalibrationError as err:
                below_ok = err.partition is not None and err.size == per - 1
            ok = ok and boundary_ok and below_ok
            details.append(f"alpha={alpha},k_c={k_c}:{'ok' if boundary_ok and below_ok else 'FAIL'}")
    _verdict("minimal-calibration-boundary", ok, "; ".join(details))


def test_a6_majority_threshold_table():
    """Binomial majority threshold matches an exact-rational oracle for every
    partition count up to 64."""
    def oracle(alpha, k_c):
        a = Fraction(alpha)
        best = -1
        cdf = Fraction(0)
        for x in range(k_c + 1):
            cdf += Fraction(math.comb(k_c, x)) * (1 - a) ** x * a ** (k_c - x)
            if cdf <= a:
                best = x
        return best

    mismatches = []
    for k_c in range(1, 65):
        for alpha in (0.01, 0.05, 0.1, 0.2):
            got = cc.binomial_majority_threshold(alpha, k_c)
            want = oracle(alpha, k_c)
            if got != want:
                mismatches.append((k_c, alpha, got, want))
    single_ok = all(cc.binomial_majority_threshold(a, 1) == 0
                    for a in (0.01, 0.05, 0.1, 0.2))
    _verdict("majority-threshold-table", not mismatches and single_ok,
             f"256 cells, {len(mismatches)} mismatches, k_c=1 all zero: {single_ok}")


def test_a7_monotonicity_grid():
    """Certificate flags and reliability ratios are monotone non-increasing in
    both radii over a 5x5 grid on synthetic data."""
    spec = SyntheticEnsembleSpec(class_count=6, classifier_count=8,
                                 calibration_size=240, test_size=60,
                                 accuracy=0.85, seed=17)
    data = generate_synthetic(spec)
    result = calibrate(data.calib_features, data.calib_labels,
                       CalibrationConfig(alpha=0.1, partition_count=3),
                       votes=data.calib_votes)
    pairs = [(r_t, r_c) for r_t in range(5) for r_c in range(5)]
    scores = score_rows("smoothed", votes=data.test_votes)
    grid = certificate_grid(result.predictor, result.data, scores, pairs,
                            data.test_votes.count_matrix(), 8)
    flags = {}
    for rec in grid.records:
        flags[(rec.point_index, rec.train_radius, rec.calib_radius)] = (
            rec.coverage_reliable, rec.size_reliable, rec.robust)
    flag_ok = True
    for (idx, r_t, r_c), f in flags.items():
        for nxt in ((idx, r_t + 1, r_c), (idx, r_t, r_c + 1)):
            if nxt in flags:
                flag_ok = flag_ok and all(not g or f_ for f_, g in zip(f, flags[nxt]))
    by_pair = {(r["train_radius"], r["calib_radius"]): r for r in grid.ratios()}
    ratio_ok = True
    for (r_t, r_c), row in by_pair.items():
        for nxt in ((r_t + 1, r_c), (r_t, r_c + 1)):
            if nxt in by_pair:
                for key in ("coverage_ratio", "size_ratio", "robust_ratio"):
                    ratio_ok = ratio_ok and by_pair[nxt][key] <= row[key] + 1e-15
    _verdict("monotonicity-grid", flag_ok and ratio_ok,
             f"{len(flags)} flag triples, flags {'ok' if flag_ok else 'FAIL'}, "
             f"ratios {'ok' if ratio_ok else 'FAIL'}")


def test_a8_complexity_envelope():
    """Instrumented operation count of the joint certification of one test
    point stays within c * K^2 * n * r_t for a fixed constant c."""
    C_ENVELOPE = 2.0
    K, k_t = 10, 12
    results = []
    ok = True
    for n in (100, 1000):
        spec = SyntheticEnsembleSpec(class_count=K, classifier_count=k_t,
                                     calibration_size=n, test_size=1,
                                     accuracy=0.9, seed=23)
        data = generate_synthetic(spec)
        result = calibrate(data.calib_features, data.calib_labels,
                           CalibrationConfig(alpha=0.1, partition_count=2),
                           votes=data.calib_votes)
        scores = score_rows("smoothed", votes=data.test_votes)
        for r_t in (1, 4):
            ops = OpCounter()
            certificate_grid(result.predictor, result.data, scores, [(r_t, 1)],
                             data.test_votes.count_matrix(), k_t, ops=ops)
            budget = C_ENVELOPE * K * K * n * r_t
            results.append(f"n={n},r_t={r_t}: {ops.count} <= {budget:.0f}")
            ok = ok and ops.count <= budget
    _verdict("complexity-envelope", ok, "; ".join(results))


def test_a9_cli_reproducibility(tmp_path):
    """Two independent end-to-end CLI runs with identical configs produce
    byte-identical output files."""
    outputs = []
    for tag in ("run1", "run2"):
        base = tmp_path / tag

        def run(*argv):
            assert cli_main([str(a) for a in argv]) == 0

        run("synth", "--out", base / "data", "--classes", 4, "--classifiers", 8,
            "--calib-size", 120, "--test-size", 30, "--accuracy", 0.85, "--seed", 11)
        run("calibrate", "--out", base / "cal", "--alpha", 0.2, "--k-c", 3,
            "--classes", 4,
            "--calib-votes", base / "data" / "calib_votes.csv",
            "--calib-features", base / "data" / "calib_features.csv")
        run("predict", "--out", base / "pred",
            "--predictor", base / "cal" / "predictor.json",
            "--test-votes", base / "data" / "test_votes.csv")
        run("certify", "--out", base / "cert",
            "--predictor", base / "cal" / "predictor.json",
            "--calib-votes", base / "data" / "calib_votes.csv",
            "--calib-features", base / "data" / "calib_features.csv",
            "--test-votes", base / "data" / "test_votes.csv",
            "--max-rt", 2, "--max-rc", 2)
        run("evaluate", "--out", base / "eval",
            "--predictor", base / "cal" / "predictor.json",
            "--calib-votes", base / "data" / "calib_votes.csv",
            "--calib-features", base / "data" / "calib_features.csv",
            "--test-votes", base / "data" / "test_votes.csv",
            "--max-rt", 1, "--max-rc", 1)
        blob = {}
        for sub in ("data", "cal", "pred", "cert", "eval"):
            for f in sorted((base / sub).iterdir()):
                blob[f"{sub}/{f.name}"] = f.read_bytes()
        outputs.append(blob)
    same_names = outputs[0].keys() == outputs[1].keys()
    diffs = [name for name in outputs[0] if outputs[0][name] != outputs[1].get(name)]
    _verdict("cli-reproducibility", same_names and not diffs,
             f"{len(outputs[0])} files compared, {len(diffs)} differ")
