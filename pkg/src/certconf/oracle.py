"""Independent verification oracles: exact score-bound extrema and attack search.

Two falsifiers for the certification path:

* :func:`brute_force_score_bounds` enumerates every vote-count vector
  reachable by reassigning up to the training budget of votes and takes exact
  extrema of the smoothed score, validating the greedy bounds.

* :func:`attack_search` realizes the threat model on small instances:
  training edits appear as arbitrary reassignment of up to ``train_radius``
  classifiers' votes on every point, calibration edits as delete / label-flip
  / insert operations (each costing one edit; replacing a point's features is
  a delete plus an insert, costing two). It either finds an edit sequence
  achieving the objective or reports that none exists within the budget.

The exhaustive search exploits monotonicity rather than enumerating raw vote
assignments: removing a class from the majority set only ever benefits from
lowering that class's test score and raising per-partition thresholds (and
symmetrically for adding a class), and per-point vote reassignments are
independent given the attacked classifiers. Optimizing each point separately
and enumerating edit plans per partition therefore finds an attack if and
only if one exists in the model above. Inserted calibration points carry an
arbitrary score value; since thresholds are monotone in each inserted value,
the extremes of the candidate grid dominate. Every reported attack is
re-applied and the full pipeline recomputed as a self-check.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conformal import (CalibrationConfig, CalibrationData, MajorityPredictor,
                        binomial_majority_threshold, conformal_quantile, is_feasible_size,
                        majority_set_from_supports, min_calibration_size, quantile_index,
                        support_counts)
from .certify import (certify_calibration, certify_joint, partition_threshold_bounds,
                      _check_radius)
from .errors import InfeasibleCalibrationError, InstanceTooLargeError, InvalidInputError
from .scoring import softmax_over_votes

BRUTE_FORCE_MAX_CLASSIFIERS = 6
BRUTE_FORCE_MAX_CLASSES = 5

EXHAUSTIVE_CAPS = dict(calib_size=30, classifiers=4, classes=5, partitions=6, calib_radius=3)

OBJECTIVES = ("remove_class", "add_class")

EDIT_KINDS = ("insert", "delete", "flip")


def edit_cost(edits: Sequence[dict]) -> int:
    """Total edit cost; every insert, delete, or flip costs one."""
    for e in edits:
        if e.get("kind") not in EDIT_KINDS:
            raise InvalidInputError(f"unknown edit kind {e.get('kind')!r}")
    return len(edits)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def brute_force_score_bounds(counts: Sequence[int], classifier_count: int, label: int,
                             train_radius: int) -> tuple[float, float]:
    """Exact extrema of the smoothed score over all reassignments of up to
    ``train_radius`` votes. Exhaustive; guarded to small ensembles."""
    counts = [int(c) for c in counts]
    if classifier_count > BRUTE_FORCE_MAX_CLASSIFIERS or len(counts) > BRUTE_FORCE_MAX_CLASSES:
        raise InstanceTooLargeError(
            f"brute force guarded to <= {BRUTE_FORCE_MAX_CLASSIFIERS} classifiers "
            f"and <= {BRUTE_FORCE_MAX_CLASSES} classes")
    _check_radius(counts, classifier_count, train_radius)
    lo = hi = None
    for candidate in _compositions(classifier_count, len(counts)):
        moved = sum(max(c - d, 0) for c, d in zip(counts, candidate))
        if moved > train_radius:
            continue
        s = softmax_over_votes(candidate, classifier_count)[label]
        if lo is None or s < lo:
            lo = s
        if hi is None or s > hi:
            hi = s
    return lo, hi


@dataclass(frozen=True)
class PipelineInstance:
    """A complete small problem instance: calibration votes/labels/partitions
    plus one test point's votes."""

    calib_votes: np.ndarray
    calib_labels: np.ndarray
    calib_partitions: np.ndarray
    test_votes: np.ndarray
    class_count: int
    partition_count: int
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "calib_votes", np.asarray(self.calib_votes, dtype=np.int64))
        object.__setattr__(self, "calib_labels", np.asarray(self.calib_labels, dtype=np.int64))
        object.__setattr__(self, "calib_partitions", np.asarray(self.calib_partitions, dtype=np.int64))
        object.__setattr__(self, "test_votes", np.asarray(self.test_votes, dtype=np.int64))

    @property
    def calib_size(self) -> int:
        return int(self.calib_votes.shape[0])

    @property
    def classifier_count(self) -> int:
        return int(self.calib_votes.shape[1])


def instance_hash(instance: PipelineInstance) -> str:
    h = hashlib.sha256()
    for arr in (instance.calib_votes, instance.calib_labels,
                instance.calib_partitions, instance.test_votes):
        h.update(arr.tobytes())
    h.update(json.dumps([instance.class_count, instance.partition_count,
                         repr(instance.alpha)]).encode())
    return h.hexdigest()


@dataclass(frozen=True)
class AttackBudget:
    train_radius: int
    calib_radius: int
    seed: int = 0
    max_trials: int = 2000


def _row_counts(votes_row: Sequence[int], class_count: int) -> list[int]:
    counts = [0] * class_count
    for v in votes_row:
        counts[int(v)] += 1
    return counts


def instance_pipeline(instance: PipelineInstance):
    """Clean pipeline state: predictor, retained calibration data, test scores,
    supports, and the clean majority set."""
    k, K = instance.classifier_count, instance.class_count
    count_matrix = np.array([_row_counts(r, K) for r in instance.calib_votes], dtype=np.int64)
    scores = np.array([softmax_over_votes(c, k)[int(y)]
                       for c, y in zip(count_matrix, instance.calib_labels)])
    sizes = np.bincount(instance.calib_partitions, minlength=instance.partition_count)
    thresholds = []
    for i in range(instance.partition_count):
        size = int(sizes[i])
        if not is_feasible_size(size, instance.alpha):
            raise InfeasibleCalibrationError(
                f"partition {i} of the oracle instance has {size} points", partition=i, size=size)
        thresholds.append(conformal_quantile(scores[instance.calib_partitions == i], instance.alpha))
    config = CalibrationConfig(alpha=instance.alpha, partition_count=instance.partition_count)
    predictor = MajorityPredictor(
        thresholds=tuple(thresholds),
        majority_threshold=binomial_majority_threshold(instance.alpha, instance.partition_count),
        class_count=K, config=config)
    calib = CalibrationData(
        scores=scores, labels=instance.calib_labels,
        partition_ids=instance.calib_partitions,
        partition_sizes=tuple(int(s) for s in sizes),
        count_matrix=count_matrix, classifier_count=k)
    test_scores = softmax_over_votes(_row_counts(instance.test_votes, K), k)
    supports = support_counts(predictor, test_scores)
    majority = majority_set_from_supports(supports, predictor.majority_threshold)
    return predictor, calib, test_scores, supports, majority


def certify_instance(instance: PipelineInstance, train_radius: int,
                     calib_radius: int) -> tuple[bool, bool, bool]:
    """Certificate flags for the instance's single test point."""
    predictor, calib, test_scores, supports, majority = instance_pipeline(instance)
    if train_radius == 0:
        cov, size = certify_calibration(supports, majority, predictor.majority_threshold,
                                        calib_radius, calib.partition_sizes, instance.alpha)
        return cov, size, cov and size
    bounds = partition_threshold_bounds(calib, instance.alpha, train_radius)
    test_counts = _row_counts(instance.test_votes, instance.class_count)
    return certify_joint(test_counts, instance.classifier_count, majority, bounds,
                         predictor.majority_threshold, train_radius, calib_radius,
                         calib.partition_sizes, instance.alpha)


@dataclass
class Attack:
    """A concrete realization of the threat model."""

    attacked_classifiers: tuple[int, ...] = ()
    calib_overrides: dict = field(default_factory=dict)   # (point, classifier) -> class
    test_overrides: dict = field(default_factory=dict)    # classifier -> class
    deletions: tuple[int, ...] = ()
    flips: dict = field(default_factory=dict)             # point -> new label
    insertions: tuple = ()                                # (partition, score) pairs

    def edits(self) -> list[dict]:
        out = [{"kind": "delete", "target": int(p)} for p in sorted(self.deletions)]
        out += [{"kind": "flip", "target": int(p), "new_label": int(l)}
                for p, l in sorted(self.flips.items())]
        out += [{"kind": "insert", "partition": int(p), "score": float(s)}
                for p, s in self.insertions]
        return out


def apply_attack(instance: PipelineInstance, attack: Attack) -> set[int] | None:
    """Recompute the full pipeline under an attack.

    Returns the attacked majority set, or None when the attack destroys a
    calibration partition (leaves it below the feasible size).
    """
    k, K = instance.classifier_count, instance.class_count
    votes = instance.calib_votes.copy()
    for (point, clf), cls in attack.calib_overrides.items():
        votes[point, clf] = cls
    labels = instance.calib_labels.copy()
    for point, new_label in attack.flips.items():
        labels[point] = new_label
    entries = []
    deleted = set(attack.deletions)
    for j in range(instance.calib_size):
        if j in deleted:
            continue
        score = softmax_over_votes(_row_counts(votes[j], K), k)[int(labels[j])]
        entries.append((int(instance.calib_partitions[j]), score))
    entries.extend((int(p), float(s)) for p, s in attack.insertions)

    thresholds = []
    for i in range(instance.partition_count):
        values = [s for p, s in entries if p == i]
        if not is_feasible_size(len(values), instance.alpha):
            return None
        thresholds.append(conformal_quantile(values, instance.alpha))

    test_votes = instance.test_votes.copy()
    for clf, cls in attack.test_overrides.items():
        test_votes[clf] = cls
    test_scores = softmax_over_votes(_row_counts(test_votes, K), k)
    tau_hat = binomial_majority_threshold(instance.alpha, instance.partition_count)
    supports = [sum(1 for t in thresholds if s >= t) for s in test_scores]
    return majority_set_from_supports(supports, tau_hat)


@dataclass
class AttackSearchResult:
    found: bool
    objective: str
    mode: str
    budget: AttackBudget
    instance_digest: str
    target_class: int | None = None
    attack: Attack | None = None
    resulting_set: set[int] | None = None
    destroyed: bool = False
    trials: int = 0

    def report(self) -> dict:
        return {
            "instance_hash": self.instance_digest,
            "budget": {"train_radius": self.budget.train_radius,
                       "calib_radius": self.budget.calib_radius,
                       "seed": self.budget.seed, "max_trials": self.budget.max_trials},
            "objective": self.objective,
            "mode": self.mode,
            "found": self.found,
            "target_class": self.target_class,
            "destroyed": self.destroyed,
            "edits": self.attack.edits() if self.attack else [],
            "attacked_classifiers": list(self.attack.attacked_classifiers) if self.attack else [],
            "resulting_set": sorted(self.resulting_set) if self.resulting_set is not None else None,
            "trials": self.trials,
        }


def insertion_score_candidates(existing: Sequence[float]) -> list[float]:
    """Score values covering every order-distinct placement of an inserted point:
    the extremes 0 and 1, the existing scores, and midpoints between neighbours."""
    values = sorted(set(float(s) for s in existing))
    cands = {0.0, 1.0}
    cands.update(values)
    cands.update((a + b) / 2 for a, b in zip(values, values[1:]))
    return sorted(cands)


def _within_exhaustive_caps(instance: PipelineInstance, budget: AttackBudget) -> bool:
    caps = EXHAUSTIVE_CAPS
    return (instance.calib_size <= caps["calib_size"]
            and instance.classifier_count <= caps["classifiers"]
            and instance.class_count <= caps["classes"]
            and instance.partition_count <= caps["partitions"]
            and budget.calib_radius <= caps["calib_radius"])


def _reachable_row_variants(votes_row, attacked, class_count):
    """Deduplicated vote-count vectors reachable by reassigning the attacked
    classifiers' votes on this row, with one witness assignment each."""
    base = _row_counts(votes_row, class_count)
    for v in attacked:
        base[int(votes_row[v])] -= 1
    seen = {}
    for assignment in itertools.product(range(class_count), repeat=len(attacked)):
        counts = list(base)
        for cls in assignment:
            counts[cls] += 1
        key = tuple(counts)
        if key not in seen:
            seen[key] = assignment
    return seen  # counts tuple -> witness assignment


def _point_value_options(votes_row, label, attacked, class_count, classifier_count, maximize):
    """Extreme achievable own-label score of one calibration point (kept and
    label-flipped), together with witnesses."""
    better = (lambda a, b: a > b) if maximize else (lambda a, b: a < b)
    kept = flip = None
    for counts, assignment in _reachable_row_variants(votes_row, attacked, class_count).items():
        scores = softmax_over_votes(counts, classifier_count)
        if kept is None or better(scores[label], kept[0]):
            kept = (scores[label], assignment)
        for new_label in range(class_count):
            if new_label == label:
                continue
            if flip is None or better(scores[new_label], flip[0]):
                flip = (scores[new_label], assignment, new_label)
    return kept, flip


def _test_score_extreme(test_votes, target, attacked, class_count, classifier_count, maximize):
    better = (lambda a, b: a > b) if maximize else (lambda a, b: a < b)
    best = None
    for counts, assignment in _reachable_row_variants(test_votes, attacked, class_count).items():
        s = softmax_over_votes(counts, classifier_count)[target]
        if best is None or better(s, best[0]):
            best = (s, assignment)
    return best


def _partition_plans(member_ids, kept, flips, alpha, budget, maximize, insert_value):
    """Best achievable threshold per edit budget within one partition.

    Returns ``plans[b] = (threshold, delete_ids, flip_ids, insert_count)`` for
    b in 0..budget; plans that would leave the partition infeasible are skipped
    (partition destruction is handled as a separate global attack).
    """
    better = (lambda a, b: a > b) if maximize else (lambda a, b: a < b)
    plans: list[tuple | None] = [None] * (budget + 1)
    n = len(member_ids)
    for del_count in range(min(budget, n) + 1):
        for del_idx in itertools.combinations(range(n), del_count):
            remaining = [member_ids[j] for j in range(n) if j not in del_idx]
            for flip_count in range(min(budget - del_count, len(remaining)) + 1):
                for flip_ids in itertools.combinations(remaining, flip_count):
                    flip_set = set(flip_ids)
                    base_vals = [flips[p][0] if p in flip_set else kept[p][0] for p in remaining]
                    for ins in range(budget - del_count - flip_count + 1):
                        vals = base_vals + [insert_value] * ins
                        if not is_feasible_size(len(vals), alpha):
                            continue
                        q = sorted(vals)[quantile_index(len(vals), alpha) - 1]
                        cost = del_count + flip_count + ins
                        if plans[cost] is None or better(q, plans[cost][0]):
                            plans[cost] = (q, tuple(member_ids[j] for j in del_idx),
                                           flip_ids, ins)
    # Unused budget is allowed: carry the best plan forward.
    for b in range(1, budget + 1):
        if plans[b] is None or (plans[b - 1] is not None and better(plans[b - 1][0], plans[b][0])):
            plans[b] = plans[b - 1]
    return plans


def _materialize(instance, attacked, kept, flips, test_witness, plan_choice, insert_value):
    attack = Attack(attacked_classifiers=tuple(attacked))
    flip_map, deletions, insertions = {}, [], []
    for i, plan in plan_choice.items():
        _, delete_ids, flip_ids, ins = plan
        deletions.extend(delete_ids)
        for j in flip_ids:
            flip_map[j] = flips[j][2]
        insertions.extend((i, insert_value) for _ in range(ins))
    attack.deletions = tuple(sorted(deletions))
    attack.flips = flip_map
    attack.insertions = tuple(insertions)
    for j in range(instance.calib_size):
        if j in attack.deletions:
            continue
        witness = flips[j][1] if j in flip_map else kept[j][1]
        for v, cls in zip(attacked, witness):
            attack.calib_overrides[(j, v)] = cls
    if test_witness is not None:
        for v, cls in zip(attacked, test_witness):
            attack.test_overrides[v] = cls
    return attack


def _verified_result(instance, budget, objective, target, attack, digest, mode, trials=0):
    result_set = apply_attack(instance, attack)
    destroyed = result_set is None
    if destroyed:
        ok = True
    elif objective == "remove_class":
        ok = target is not None and target not in result_set
    else:
        ok = target is not None and target in result_set
    if not ok:
        raise RuntimeError("oracle internal error: materialized attack does not achieve its objective")
    return AttackSearchResult(found=True, objective=objective, mode=mode, budget=budget,
                              instance_digest=digest, target_class=target, attack=attack,
                              resulting_set=result_set, destroyed=destroyed, trials=trials)


def _destruction_attack(instance, budget):
    """Deleting points until some partition is infeasible breaks the whole
    pipeline; that counts as a successful attack for either objective."""
    min_size = min_calibration_size(instance.alpha, 1)
    sizes = np.bincount(instance.calib_partitions, minlength=instance.partition_count)
    for i in range(instance.partition_count):
        need = int(sizes[i]) - min_size + 1
        if 0 < need <= budget.calib_radius:
            victims = [j for j in range(instance.calib_size)
                       if instance.calib_partitions[j] == i][:need]
            return Attack(deletions=tuple(victims))
    return None


def _exhaustive_search(instance, budget, objective, digest):
    maximize_probe = objective == "add_class"
    K, k = instance.class_count, instance.classifier_count
    predictor, _, _, _, clean_majority = instance_pipeline(instance)
    tau_hat = predictor.majority_threshold

    destruction = _destruction_attack(instance, budget)
    if destruction is not None:
        return _verified_result(instance, budget, objective, None, destruction,
                                digest, "exhaustive")

    if objective == "remove_class":
        targets = sorted(clean_majority)
    else:
        targets = sorted(set(range(K)) - clean_majority)

    insert_value = 0.0 if maximize_probe else 1.0
    members = [[j for j in range(instance.calib_size) if instance.calib_partitions[j] == i]
               for i in range(instance.partition_count)]

    for t_size in range(budget.train_radius + 1):
        for attacked in itertools.combinations(range(k), t_size):
            kept, flips = {}, {}
            for j in range(instance.calib_size):
                # Removal wants thresholds as high as possible, addition as low.
                kept[j], flips[j] = _point_value_options(
                    instance.calib_votes[j], int(instance.calib_labels[j]),
                    attacked, K, k, maximize=not maximize_probe)
            plans = [_partition_plans(members[i], kept, flips, instance.alpha,
                                      budget.calib_radius, maximize=not maximize_probe,
                                      insert_value=insert_value)
                     for i in range(instance.partition_count)]
            for target in targets:
                probe = _test_score_extreme(instance.test_votes, target, attacked, K, k,
                                            maximize=maximize_probe)
                for alloc in itertools.product(range(budget.calib_radius + 1),
                                               repeat=instance.partition_count):
                    if sum(alloc) > budget.calib_radius:
                        continue
                    support = sum(1 for i in range(instance.partition_count)
                                  if probe[0] >= plans[i][alloc[i]][0])
                    hit = support <= tau_hat if objective == "remove_class" else support > tau_hat
                    if hit:
                        choice = {i: plans[i][alloc[i]] for i in range(instance.partition_count)}
                        attack = _materialize(instance, attacked, kept, flips, probe[1],
                                              choice, insert_value)
                        return _verified_result(instance, budget, objective, target,
                                                attack, digest, "exhaustive")
    return AttackSearchResult(found=False, objective=objective, mode="exhaustive",
                              budget=budget, instance_digest=digest)


def _randomized_search(instance, budget, objective, digest):
    rng = np.random.default_rng(budget.seed)
    K, k = instance.class_count, instance.classifier_count
    _, calib, _, _, clean_majority = instance_pipeline(instance)
    candidates = insertion_score_candidates(calib.scores)
    if objective == "remove_class":
        targets = sorted(clean_majority)
    else:
        targets = sorted(set(range(K)) - clean_majority)

    for trial in range(budget.max_trials):
        attack = Attack()
        t_size = int(rng.integers(0, budget.train_radius + 1))
        attack.attacked_classifiers = tuple(
            sorted(rng.choice(k, size=t_size, replace=False))) if t_size else ()
        for v in attack.attacked_classifiers:
            for j in range(instance.calib_size):
                attack.calib_overrides[(j, v)] = int(rng.integers(K))
            attack.test_overrides[v] = int(rng.integers(K))
        n_edits = int(rng.integers(0, budget.calib_radius + 1))
        alive = list(range(instance.calib_size))
        deletions, flips, insertions = [], {}, []
        for _ in range(n_edits):
            kind = EDIT_KINDS[int(rng.integers(3))]
            if kind == "delete" and alive:
                victim = alive.pop(int(rng.integers(len(alive))))
                deletions.append(victim)
            elif kind == "flip" and alive:
                point = alive[int(rng.integers(len(alive)))]
                label = int(instance.calib_labels[point])
                flips[point] = int((label + 1 + rng.integers(K - 1)) % K)
            else:
                insertions.append((int(rng.integers(instance.partition_count)),
                                   float(candidates[int(rng.integers(len(candidates)))])))
        attack.deletions = tuple(sorted(deletions))
        attack.flips = flips
        attack.insertions = tuple(insertions)
        result_set = apply_attack(instance, attack)
        if result_set is None:
            return _verified_result(instance, budget, objective, None, attack,
                                    digest, "randomized", trials=trial + 1)
        for target in targets:
            hit = (target not in result_set) if objective == "remove_class" else (target in result_set)
            if hit:
                return _verified_result(instance, budget, objective, target, attack,
                                        digest, "randomized", trials=trial + 1)
    return AttackSearchResult(found=False, objective=objective, mode="randomized",
                              budget=budget, instance_digest=digest, trials=budget.max_trials)


def attack_search(instance: PipelineInstance, budget: AttackBudget, objective: str,
                  require_exhaustive: bool = False) -> AttackSearchResult:
    """Search for an edit sequence within the budget achieving the objective.

    Exhaustive (over the threat model described in the module docstring) when
    the instance is under the hard caps, otherwise a seeded randomized search.
    A found attack is always re-verified by recomputing the full pipeline.
    """
    if objective not in OBJECTIVES:
        raise InvalidInputError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    if budget.train_radius > instance.classifier_count:
        raise InvalidInputError("training radius exceeds the classifier count")
    digest = instance_hash(instance)
    if _within_exhaustive_caps(instance, budget):
        return _exhaustive_search(instance, budget, objective, digest)
    if require_exhaustive:
        raise InstanceTooLargeError(
            f"instance exceeds exhaustive-search caps {EXHAUSTIVE_CAPS}")
    return _randomized_search(instance, budget, objective, digest)
