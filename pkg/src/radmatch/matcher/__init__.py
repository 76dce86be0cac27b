"""Keypoint-graph matchers: brute-force ratio test and attentional GNN."""

from .bruteforce import MatchSet, match_bruteforce, normalized_descriptors
from .gnn import (
    MatcherConfig,
    MatcherNet,
    MatcherTrainConfig,
    MatcherTrainLog,
    MatcherTrainPair,
    fit_feature_normalization,
    gnn_match,
    matcher_nll,
    train_matcher,
    write_matcher_log,
)
from .metrics import MatchMetrics, correspondences_from_labels, match_metrics
from .sinkhorn import (
    AssignmentMatrix,
    ScoreMatrix,
    marginal_residual,
    sinkhorn,
    sinkhorn_log_plan,
)

__all__ = [
    "AssignmentMatrix",
    "MatchMetrics",
    "MatchSet",
    "MatcherConfig",
    "MatcherNet",
    "MatcherTrainConfig",
    "MatcherTrainLog",
    "MatcherTrainPair",
    "ScoreMatrix",
    "correspondences_from_labels",
    "fit_feature_normalization",
    "gnn_match",
    "marginal_residual",
    "match_bruteforce",
    "match_metrics",
    "matcher_nll",
    "normalized_descriptors",
    "sinkhorn",
    "sinkhorn_log_plan",
    "train_matcher",
    "write_matcher_log",
]
