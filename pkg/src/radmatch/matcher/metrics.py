"""Match-quality metrics against ground-truth correspondences."""
from __future__ import annotations

from dataclasses import dataclass

from .bruteforce import MatchSet


@dataclass(frozen=True)
class MatchMetrics:
    good_count: int
    mean_confidence: float
    precision: float
    recall: float


def match_metrics(ms: MatchSet, gt_pairs) -> MatchMetrics:
    """Precision = correct/predicted (empty -> 1), recall = correct/GT."""
    gt = {(int(i), int(j)) for i, j in gt_pairs}
    predicted = [(i, j) for i, j, _ in ms.pairs]
    correct = sum(1 for p in predicted if p in gt)
    precision = correct / len(predicted) if predicted else 1.0
    recall = correct / len(gt) if gt else 0.0
    return MatchMetrics(ms.good_count, ms.mean_confidence, precision, recall)


def correspondences_from_labels(graph_a, graph_b):
    """GT matches by shared label id, plus each side's unmatched indices."""
    la = {k.label_id: i for i, k in enumerate(graph_a.keypoints) if k.label_id is not None}
    lb = {k.label_id: j for j, k in enumerate(graph_b.keypoints) if k.label_id is not None}
    shared = sorted(set(la) & set(lb))
    gt = [(la[s], lb[s]) for s in shared]
    unmatched_a = sorted(set(range(len(graph_a))) - {i for i, _ in gt})
    unmatched_b = sorted(set(range(len(graph_b))) - {j for _, j in gt})
    return gt, unmatched_a, unmatched_b
