"""certconf: conformal prediction sets with worst-case reliability certificates
under training- and calibration-data poisoning."""

from .certify import (CertificateGrid, CertificateRecord, OpCounter, certificate_grid,
                      certify_calibration, certify_joint, certify_training,
                      lower_bound_score, partition_threshold_bounds, score_bounds,
                      upper_bound_score, worst_case_quantiles)
from .conformal import (CalibrationConfig, CalibrationData, CalibrationResult,
                        MajorityPredictor, binomial_majority_threshold, calibrate,
                        conformal_quantile, majority_set_from_supports, min_calibration_size,
                        partition_sets, predict_majority, prediction_set, quantile_index,
                        support_counts)
from .errors import (CertconfError, InfeasibleCalibrationError, InstanceTooLargeError,
                     InvalidConfigError, InvalidInputError, InvalidRadiusError,
                     UnsupportedModeError)
from .evaluation import (EvalReport, SyntheticDataset, SyntheticEnsembleSpec, evaluate,
                         generate_synthetic, set_statistics)
from .oracle import (AttackBudget, AttackSearchResult, PipelineInstance, attack_search,
                     brute_force_score_bounds, certify_instance, edit_cost, instance_hash)
from .partitioning import PartitionAssignment, assign_partition, assign_partitions, hash_feature
from .scoring import (VoteDistribution, VoteMatrix, hps_score, reproducible_aps_score,
                      smoothed_score, smoothed_scores, softmax_over_votes, vote_distribution)

__version__ = "0.1.0"
