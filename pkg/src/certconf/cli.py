"""Command-line entry point: synth, calibrate, predict, certify, oracle-check, evaluate.

Every run writes a ``manifest.json`` (semantic config, its hash, the seed, and
format versions) into the output directory; two runs with identical configs
produce byte-identical outputs. All randomness flows from the explicit seed;
environment variables override nothing.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, figures
from .certify import (CertificateGrid, certificate_grid, lower_bound_score,
                      upper_bound_score)
from .conformal import (CalibrationConfig, CalibrationData, calibrate, min_calibration_size,
                        predict_majority)
from .errors import (EXIT_SOUNDNESS, CertconfError, InvalidConfigError, InvalidInputError,
                     UnsupportedModeError)
from .evaluation import SyntheticEnsembleSpec, evaluate, generate_synthetic
from .oracle import (AttackBudget, PipelineInstance, attack_search, brute_force_score_bounds,
                     certify_instance)
from .scoring import VoteMatrix, score_rows
from .partitioning import assign_partitions


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _radius_pairs(args) -> list[tuple[int, int]]:
    if getattr(args, "radii", None):
        pairs = []
        for token in args.radii.split(","):
            r_t, r_c = token.split(":")
            pairs.append((int(r_t), int(r_c)))
        return pairs
    return [(r_t, r_c)
            for r_t in range(args.max_rt + 1)
            for r_c in range(args.max_rc + 1)]


def _manifest_config(args, keys: list[str]) -> dict:
    """Semantic run config for the manifest. Input files are recorded by
    content digest rather than by path, so identically-configured runs from
    different working directories produce byte-identical manifests."""
    config = {"subcommand": args.command}
    for key in keys:
        value = getattr(args, key.replace("-", "_"))
        if isinstance(value, (str, Path)) and Path(value).is_file():
            digest = hashlib.sha256(Path(value).read_bytes()).hexdigest()
            value = f"sha256:{digest}"
        config[key] = value
    return config


def _load_calibration(args, config: CalibrationConfig, class_count: int):
    """Read calibration inputs and calibrate; shared by certify and evaluate."""
    if not args.calib_features:
        raise InvalidInputError("missing --calib-features")
    _, features = dataio.read_features(args.calib_features)
    if config.score_mode == "smoothed":
        if not args.calib_votes:
            raise InvalidInputError("smoothed score mode needs --calib-votes")
        _, labels, votes = dataio.read_vote_matrix(args.calib_votes, class_count)
        if labels is None:
            raise InvalidInputError("calibration vote matrix must carry a label column")
        return calibrate(features, labels, config, votes=votes), votes
    if not args.calib_probs:
        raise InvalidInputError(f"{config.score_mode} score mode needs --calib-probs")
    _, labels, probs = dataio.read_probability_matrix(args.calib_probs)
    if labels is None:
        raise InvalidInputError("calibration probability matrix must carry a label column")
    return calibrate(features, labels, config, probs=probs), None


def _load_test_scores(args, config: CalibrationConfig, class_count: int):
    """Read test inputs; returns (point_ids, labels_or_None, scores, votes_or_None)."""
    if config.score_mode == "smoothed":
        if not args.test_votes:
            raise InvalidInputError("smoothed score mode needs --test-votes")
        point_ids, labels, votes = dataio.read_vote_matrix(args.test_votes, class_count)
        scores = score_rows("smoothed", votes=votes)
        return point_ids, labels, scores, votes
    if not args.test_probs:
        raise InvalidInputError(f"{config.score_mode} score mode needs --test-probs")
    point_ids, labels, probs = dataio.read_probability_matrix(args.test_probs)
    if probs.shape[1] != class_count:
        raise InvalidConfigError(
            f"test probabilities have {probs.shape[1]} classes, predictor expects {class_count}")
    features = None
    if config.score_mode == "aps":
        if not args.test_features:
            raise InvalidInputError("aps scoring needs --test-features")
        _, features = dataio.read_features(args.test_features)
    scores = score_rows(config.score_mode, probs=probs, features=features,
                        hash_mode=config.hash_mode)
    return point_ids, labels, scores, None


def cmd_synth(args) -> int:
    out = _out_dir(args)
    spec = SyntheticEnsembleSpec(
        class_count=args.classes, classifier_count=args.classifiers,
        calibration_size=args.calib_size, test_size=args.test_size,
        accuracy=args.accuracy, feature_dim=args.feature_dim, seed=args.seed)
    data = generate_synthetic(spec)
    calib_ids = [f"c{i}" for i in range(args.calib_size)]
    test_ids = [f"t{i}" for i in range(args.test_size)]
    dataio.write_features(out / "calib_features.csv", calib_ids, data.calib_features)
    dataio.write_vote_matrix(out / "calib_votes.csv", calib_ids, data.calib_votes,
                             labels=data.calib_labels)
    dataio.write_features(out / "test_features.csv", test_ids, data.test_features)
    dataio.write_vote_matrix(out / "test_votes.csv", test_ids, data.test_votes,
                             labels=data.test_labels)
    dataio.write_manifest(out, _manifest_config(
        args, ["classes", "classifiers", "calib_size", "test_size", "accuracy",
               "feature_dim"]), seed=args.seed)
    print(f"wrote synthetic dataset ({args.calib_size} calibration, "
          f"{args.test_size} test points) to {out}")
    return 0


def cmd_calibrate(args) -> int:
    out = _out_dir(args)
    config = CalibrationConfig(alpha=args.alpha, partition_count=args.k_c,
                               score_mode=args.score_mode, hash_mode=args.hash_mode)
    result, _ = _load_calibration(args, config, args.classes)
    dataio.write_json(out / "predictor.json", dataio.predictor_to_dict(result.predictor))
    dataio.write_manifest(out, _manifest_config(
        args, ["alpha", "k_c", "score_mode", "hash_mode", "classes",
               "calib_votes", "calib_probs", "calib_features"]))
    per_partition_min = min_calibration_size(args.alpha, 1)
    print(f"calibrated {args.k_c} partition(s); majority threshold "
          f"{result.predictor.majority_threshold}")
    for i, size in enumerate(result.data.partition_sizes):
        print(f"  partition {i}: {size} points (feasibility margin {size - per_partition_min})")
    return 0


def cmd_predict(args) -> int:
    out = _out_dir(args)
    predictor = dataio.predictor_from_dict(dataio.read_json(args.predictor))
    point_ids, _, scores, _ = _load_test_scores(args, predictor.config, predictor.class_count)
    sets = [predict_majority(predictor, row) for row in scores]
    dataio.write_prediction_sets(out / "prediction_sets.csv", point_ids, sets)
    dataio.write_manifest(out, _manifest_config(
        args, ["predictor", "test_votes", "test_probs", "test_features"]))
    print(f"wrote {len(sets)} prediction sets to {out / 'prediction_sets.csv'}")
    return 0


def _grid_chunk(payload):
    predictor, calib, scores, pairs, counts, classifier_count, offset = payload
    grid = certificate_grid(predictor, calib, scores, pairs,
                            test_count_matrix=counts, classifier_count=classifier_count)
    return offset, grid.records


def _run_certificates(predictor, calib: CalibrationData, scores, votes: VoteMatrix | None,
                      pairs, workers: int) -> CertificateGrid:
    counts = votes.count_matrix() if votes is not None else None
    classifier_count = votes.classifier_count if votes is not None else None
    if workers <= 1 or scores.shape[0] < 2 * workers:
        return certificate_grid(predictor, calib, scores, pairs,
                                test_count_matrix=counts, classifier_count=classifier_count)
    chunks = np.array_split(np.arange(scores.shape[0]), workers)
    payloads = [(predictor, calib, scores[idx], pairs,
                 counts[idx] if counts is not None else None, classifier_count, int(idx[0]))
                for idx in chunks if len(idx)]
    grid = CertificateGrid(radius_pairs=list(pairs))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for offset, records in sorted(pool.map(_grid_chunk, payloads)):
            for r in records:
                grid.records.append(type(r)(r.point_index + offset, r.train_radius,
                                            r.calib_radius, r.coverage_reliable,
                                            r.size_reliable, r.robust))
    grid.records.sort(key=lambda r: (r.point_index, r.train_radius, r.calib_radius))
    return grid


def cmd_certify(args) -> int:
    out = _out_dir(args)
    predictor = dataio.predictor_from_dict(dataio.read_json(args.predictor))
    pairs = _radius_pairs(args)
    if any(r_t > 0 for r_t, _ in pairs) and predictor.config.score_mode != "smoothed":
        raise UnsupportedModeError(
            "training-edit certificates are defined only for the smoothed score mode")
    result, _ = _load_calibration(args, predictor.config, predictor.class_count)
    point_ids, _, scores, votes = _load_test_scores(args, predictor.config, predictor.class_count)
    grid = _run_certificates(predictor, result.data, scores, votes, pairs, args.workers)
    dataio.write_certificates(out / "certificates.csv", point_ids, grid.records)
    ratios = grid.ratios()
    dataio.write_json(out / "summary.json", {
        "alpha": predictor.config.alpha,
        "test_size": len(point_ids),
        "reliability_ratios": ratios,
    })
    if args.figures:
        figures.reliability_heatmaps(ratios, out / "reliability_heatmap.png")
    dataio.write_manifest(out, _manifest_config(
        args, ["predictor", "calib_votes", "calib_probs", "calib_features",
               "test_votes", "test_probs", "max_rt", "max_rc", "radii"]))
    print(f"certified {len(point_ids)} points over {len(pairs)} radius pairs")
    return 0


def cmd_evaluate(args) -> int:
    if args.config:
        loaded = dataio.load_toml(args.config)
        for key, value in loaded.items():
            setattr(args, key.replace("-", "_"), value)
    out = _out_dir(args)
    predictor = dataio.predictor_from_dict(dataio.read_json(args.predictor))
    pairs = _radius_pairs(args)
    result, _ = _load_calibration(args, predictor.config, predictor.class_count)
    point_ids, labels, scores, votes = _load_test_scores(args, predictor.config,
                                                         predictor.class_count)
    if labels is None:
        raise InvalidInputError("evaluation needs test labels in the test input file")
    report, grid = evaluate(
        predictor, result.data, scores, labels, pairs,
        test_count_matrix=votes.count_matrix() if votes is not None else None,
        classifier_count=votes.classifier_count if votes is not None else None)
    dataio.write_json(out / "report.json", report.to_dict())
    dataio.write_reliability_csv(out / "reliability.csv", report.reliability)
    if args.figures:
        figures.reliability_heatmaps(report.reliability, out / "reliability_heatmap.png")
        figures.reliability_curves(report.reliability, out / "reliability_curves.png")
    dataio.write_manifest(out, _manifest_config(
        args, ["predictor", "calib_votes", "calib_probs", "calib_features",
               "test_votes", "test_probs", "max_rt", "max_rc", "radii"]))
    print(f"coverage {report.empirical_coverage:.4f}, "
          f"average set size {report.average_set_size:.4f}")
    return 0


def cmd_oracle_check(args) -> int:
    out = _out_dir(args)
    config = CalibrationConfig(alpha=args.alpha, partition_count=args.k_c,
                               score_mode="smoothed", hash_mode=args.hash_mode)
    _, calib_labels, calib_votes = dataio.read_vote_matrix(args.calib_votes, args.classes)
    if calib_labels is None:
        raise InvalidInputError("calibration vote matrix must carry a label column")
    _, calib_features = dataio.read_features(args.calib_features)
    test_ids, _, test_votes = dataio.read_vote_matrix(args.test_votes, args.classes)
    partitions = assign_partitions(calib_features, args.k_c, args.hash_mode)

    pairs = _radius_pairs(args)
    violations = []
    attacks_found = []
    bound_checks = 0
    for idx, row in enumerate(test_votes.votes):
        instance = PipelineInstance(
            calib_votes=calib_votes.votes, calib_labels=calib_labels,
            calib_partitions=partitions, test_votes=row,
            class_count=args.classes, partition_count=args.k_c, alpha=args.alpha)
        counts = [0] * args.classes
        for v in row:
            counts[int(v)] += 1
        for y in range(args.classes):
            for r_t in sorted({r for r, _ in pairs}):
                lo, hi = brute_force_score_bounds(counts, test_votes.classifier_count, y, r_t)
                bound_checks += 1
                if lo != lower_bound_score(counts, test_votes.classifier_count, y, r_t) or \
                        hi != upper_bound_score(counts, test_votes.classifier_count, y, r_t):
                    violations.append({"point": test_ids[idx], "class": y, "r_t": r_t,
                                       "kind": "bound-mismatch"})
        for r_t, r_c in pairs:
            flags = certify_instance(instance, r_t, r_c)
            budget = AttackBudget(train_radius=r_t, calib_radius=r_c,
                                  seed=args.seed, max_trials=args.max_trials)
            for certified, objective, kind in (
                    (flags[0], "remove_class", "coverage-falsified"),
                    (flags[1], "add_class", "size-falsified")):
                res = attack_search(instance, budget, objective)
                if res.found and certified:
                    # a certified flag with a working attack is a soundness bug
                    violations.append({"point": test_ids[idx], "r_t": r_t, "r_c": r_c,
                                       "kind": kind, "report": res.report()})
                elif res.found:
                    # attacks on uncertified points are expected; reported for
                    # inspection only
                    attacks_found.append({"point": test_ids[idx], "r_t": r_t, "r_c": r_c,
                                          "report": res.report()})

    dataio.write_json(out / "oracle_report.json", {
        "bound_checks": bound_checks,
        "radius_pairs": [list(p) for p in pairs],
        "violations": violations,
        "attacks_found": attacks_found,
        "passed": not violations,
    })
    dataio.write_manifest(out, _manifest_config(
        args, ["alpha", "k_c", "classes", "hash_mode", "calib_votes", "calib_features",
               "test_votes", "max_rt", "max_rc", "radii", "max_trials"]), seed=args.seed)
    if violations:
        print(f"SOUNDNESS VIOLATIONS: {len(violations)} (see oracle_report.json)",
              file=sys.stderr)
        return EXIT_SOUNDNESS
    print(f"oracle check passed ({bound_checks} bound checks, {len(pairs)} radius pairs)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="certconf",
        description="Conformal prediction sets with poisoning-reliability certificates")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic ensemble dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--classes", type=int, required=True)
    synth.add_argument("--classifiers", type=int, required=True)
    synth.add_argument("--calib-size", type=int, required=True)
    synth.add_argument("--test-size", type=int, required=True)
    synth.add_argument("--accuracy", type=float, default=0.9)
    synth.add_argument("--feature-dim", type=int, default=3)
    synth.add_argument("--seed", type=int, default=0)
    synth.set_defaults(func=cmd_synth)

    cal = sub.add_parser("calibrate", help="calibrate a majority predictor")
    cal.add_argument("--out", required=True)
    cal.add_argument("--alpha", type=float, required=True)
    cal.add_argument("--k-c", type=int, required=True, help="number of calibration partitions")
    cal.add_argument("--classes", type=int, required=True)
    cal.add_argument("--score-mode", choices=["smoothed", "hps", "aps"], default="smoothed")
    cal.add_argument("--hash-mode", choices=["byte-hash", "integer-sum"], default="byte-hash")
    cal.add_argument("--calib-votes", default=None)
    cal.add_argument("--calib-probs", default=None)
    cal.add_argument("--calib-features", required=True)
    cal.set_defaults(func=cmd_calibrate)

    pred = sub.add_parser("predict", help="majority prediction sets for test points")
    pred.add_argument("--out", required=True)
    pred.add_argument("--predictor", required=True)
    pred.add_argument("--test-votes", default=None)
    pred.add_argument("--test-probs", default=None)
    pred.add_argument("--test-features", default=None)
    pred.set_defaults(func=cmd_predict)

    cert = sub.add_parser("certify", help="worst-case reliability certificates")
    cert.add_argument("--out", required=True)
    cert.add_argument("--predictor", required=True)
    cert.add_argument("--calib-votes", default=None)
    cert.add_argument("--calib-probs", default=None)
    cert.add_argument("--calib-features", required=True)
    cert.add_argument("--test-votes", default=None)
    cert.add_argument("--test-probs", default=None)
    cert.add_argument("--test-features", default=None)
    cert.add_argument("--max-rt", type=int, default=0)
    cert.add_argument("--max-rc", type=int, default=0)
    cert.add_argument("--radii", default=None, help="explicit grid, e.g. 0:0,1:1,2:1")
    cert.add_argument("--workers", type=int, default=1)
    cert.add_argument("--figures", action="store_true")
    cert.set_defaults(func=cmd_certify)

    ev = sub.add_parser("evaluate", help="metrics and reliability ratios on labeled test data")
    ev.add_argument("--out", required=True)
    ev.add_argument("--config", default=None, help="TOML file supplying any of the flags")
    ev.add_argument("--predictor", default=None)
    ev.add_argument("--calib-votes", default=None)
    ev.add_argument("--calib-probs", default=None)
    ev.add_argument("--calib-features", default=None)
    ev.add_argument("--test-votes", default=None)
    ev.add_argument("--test-probs", default=None)
    ev.add_argument("--test-features", default=None)
    ev.add_argument("--max-rt", type=int, default=0)
    ev.add_argument("--max-rc", type=int, default=0)
    ev.add_argument("--radii", default=None)
    ev.add_argument("--figures", action="store_true")
    ev.set_defaults(func=cmd_evaluate)

    oc = sub.add_parser("oracle-check", help="brute-force and attack-search soundness checks")
    oc.add_argument("--out", required=True)
    oc.add_argument("--alpha", type=float, required=True)
    oc.add_argument("--k-c", type=int, required=True)
    oc.add_argument("--classes", type=int, required=True)
    oc.add_argument("--hash-mode", choices=["byte-hash", "integer-sum"], default="byte-hash")
    oc.add_argument("--calib-votes", required=True)
    oc.add_argument("--calib-features", required=True)
    oc.add_argument("--test-votes", required=True)
    oc.add_argument("--max-rt", type=int, default=1)
    oc.add_argument("--max-rc", type=int, default=1)
    oc.add_argument("--radii", default=None)
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--max-trials", type=int, default=2000)
    oc.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except CertconfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
