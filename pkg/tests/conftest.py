import numpy as np
import pytest

import certconf as cc
from certconf.errors import InfeasibleCalibrationError
from certconf.oracle import PipelineInstance, instance_pipeline


def random_instance(rng, n=12, k_t=3, k_c=3, K=3, alpha=0.35, accuracy=0.75):
    """Small feasible oracle instance with roughly accurate ensemble votes."""
    while True:
        labels = rng.integers(K, size=n)
        correct = rng.random((n, k_t)) < accuracy
        offsets = rng.integers(1, K, size=(n, k_t))
        votes = np.where(correct, labels[:, None], (labels[:, None] + offsets) % K)
        partitions = rng.integers(k_c, size=n)
        test_label = int(rng.integers(K))
        t_correct = rng.random(k_t) < accuracy
        t_offsets = rng.integers(1, K, size=k_t)
        test_votes = np.where(t_correct, test_label, (test_label + t_offsets) % K)
        instance = PipelineInstance(votes, labels, partitions, test_votes, K, k_c, alpha)
        try:
            instance_pipeline(instance)
        except InfeasibleCalibrationError:
            continue
        return instance


def balanced_features(rng, partition_count, per_partition, dim=3):
    """Features crafted (by rejection) so every hash partition holds exactly
    ``per_partition`` points. Returns (features, partition indices)."""
    buckets = {i: [] for i in range(partition_count)}
    while any(len(v) < per_partition for v in buckets.values()):
        x = rng.standard_normal(dim)
        idx = cc.assign_partition(x, partition_count).index
        if len(buckets[idx]) < per_partition:
            buckets[idx].append(x)
    features = np.array([x for i in range(partition_count) for x in buckets[i]])
    parts = np.array([i for i in range(partition_count) for _ in range(per_partition)])
    return features, parts


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter):
    """Surface the acceptance verdict lines even under output capture."""
    try:
        from tests.test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
