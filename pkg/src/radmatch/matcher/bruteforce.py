"""Brute-force descriptor matching with Lowe's ratio test.

A pair is a good match when it is mutually nearest and the
nearest/second-nearest distance ratio is below the threshold; confidence
is 1 - ratio. Descriptors are L2-normalized before comparison.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..keypoints import KeypointGraph


@dataclass(frozen=True)
class MatchSet:
    """One-to-one keypoint correspondences with per-pair confidence."""

    pairs: tuple  # of (index_a, index_b, confidence)
    good_count: int
    mean_confidence: float

    def __post_init__(self):
        ia = [p[0] for p in self.pairs]
        ib = [p[1] for p in self.pairs]
        if len(set(ia)) != len(ia) or len(set(ib)) != len(ib):
            raise ContractError("match set is not one-to-one")
        for _, _, c in self.pairs:
            if not (0.0 <= c <= 1.0):
                raise ContractError(f"confidence {c} outside [0, 1]")

    @classmethod
    def from_pairs(cls, pairs) -> "MatchSet":
        pairs = tuple((int(i), int(j), float(c)) for i, j, c in pairs)
        mean_conf = float(np.mean([c for _, _, c in pairs])) if pairs else 0.0
        return cls(pairs, len(pairs), mean_conf)

    def to_json(self) -> str:
        return json.dumps({
            "pairs": [[i, j, c] for i, j, c in self.pairs],
            "metrics": {"good_count": self.good_count, "mean_confidence": self.mean_confidence},
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MatchSet":
        obj = json.loads(text)
        return cls.from_pairs(obj["pairs"])


def normalized_descriptors(graph: KeypointGraph) -> np.ndarray:
    d = graph.descriptors()
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    return d / np.maximum(norms, 1e-12)


def match_bruteforce(a: KeypointGraph, b: KeypointGraph, ratio: float = 0.75) -> MatchSet:
    """Mutual nearest neighbours passing the ratio test d1/d2 < ratio."""
    if len(a) < 2 or len(b) < 2:
        raise ContractError("ratio test needs at least 2 keypoints per graph")
    da = normalized_descriptors(a)
    db = normalized_descriptors(b)
    diff = da[:, None, :] - db[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))

    nearest_in_b = np.argmin(dist, axis=1)
    nearest_in_a = np.argmin(dist, axis=0)
    pairs = []
    for i in range(len(a)):
        j = int(nearest_in_b[i])
        if int(nearest_in_a[j]) != i:
            continue  # not mutual
        row = dist[i]
        d1 = row[j]
        d2 = np.min(np.delete(row, j))
        r = d1 / d2 if d2 > 0 else 1.0
        if r < ratio:
            pairs.append((i, j, 1.0 - r))
    return MatchSet.from_pairs(pairs)
