"""Keypoint graphs: one keypoint per segmentation label at the region center.

Centers are intensity-unweighted mask centroids by default (an
intensity-weighted variant sits behind ``intensity_weighted=True``). A
centroid that falls outside its own non-convex region snaps to the nearest
in-region pixel center so every keypoint stays anatomically inside its
structure.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, FormatError
from .imaging import AffineTransform, Image2D, LabelMask
from .radiomics import RegionOfInterest, extract_descriptor


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    score: float = 1.0
    label_id: Optional[int] = None
    descriptor: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ContractError(f"keypoint score {self.score} outside [0, 1]")
        if self.descriptor is not None:
            object.__setattr__(self, "descriptor",
                               np.asarray(self.descriptor, dtype=np.float64))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class KeypointGraph:
    keypoints: tuple
    width: int
    height: int
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        labels = [k.label_id for k in self.keypoints if k.label_id is not None]
        if len(labels) != len(set(labels)):
            raise ContractError("duplicate label ids in keypoint graph")
        for k in self.keypoints:
            if not (-0.5 <= k.x <= self.width - 0.5 and -0.5 <= k.y <= self.height - 0.5):
                raise ContractError(f"keypoint ({k.x}, {k.y}) outside image bounds")

    def __len__(self) -> int:
        return len(self.keypoints)

    def positions(self) -> np.ndarray:
        return np.array([[k.x, k.y] for k in self.keypoints], dtype=np.float64).reshape(-1, 2)

    def descriptors(self) -> np.ndarray:
        if any(k.descriptor is None for k in self.keypoints):
            raise ContractError("graph has keypoints without descriptors")
        return np.stack([k.descriptor for k in self.keypoints])

    def scores(self) -> np.ndarray:
        return np.array([k.score for k in self.keypoints], dtype=np.float64)


def extract_radiomic_keypoints(
    img: Image2D,
    mask: LabelMask,
    bins: int = 32,
    min_area: int = 4,
    intensity_weighted: bool = False,
    source_id: str = "",
) -> KeypointGraph:
    """One keypoint per nonzero label at its region center, with the 53-feature descriptor.

    Regions smaller than ``min_area`` pixels are skipped. Output order is
    ascending label id.
    """
    if (mask.width, mask.height) != (img.width, img.height):
        raise ContractError("image and mask dimensions differ")
    labels = mask.label_ids()
    if not labels:
        raise ContractError("no regions: mask is all background")
    kps = []
    for label in labels:
        px = mask.pixels_of(label)
        if len(px) < min_area:
            continue
        if intensity_weighted:
            w = img.pixels[px[:, 1], px[:, 0]]
            total = w.sum()
            if total > 0:
                cx, cy = (px[:, 0] * w).sum() / total, (px[:, 1] * w).sum() / total
            else:
                cx, cy = px[:, 0].mean(), px[:, 1].mean()
        else:
            cx, cy = px[:, 0].mean(), px[:, 1].mean()
        # snap to the nearest in-region pixel center when the centroid
        # falls outside the (possibly non-convex) region
        rx, ry = int(np.rint(cx)), int(np.rint(cy))
        if not ((px[:, 0] == rx) & (px[:, 1] == ry)).any():
            d2 = (px[:, 0] - cx) ** 2 + (px[:, 1] - cy) ** 2
            best = int(np.argmin(d2))
            cx, cy = float(px[best, 0]), float(px[best, 1])
        roi = RegionOfInterest(img, px, label)
        kps.append(Keypoint(float(cx), float(cy), 1.0, label, extract_descriptor(roi, bins).values))
    return KeypointGraph(tuple(kps), img.width, img.height, source_id)


def repeatability(
    graph_a: KeypointGraph,
    graph_b: KeypointGraph,
    t: AffineTransform,
    epsilon: float,
) -> float:
    """Fraction of A keypoints whose transformed position lands within
    ``epsilon`` of some B keypoint; greedy one-to-one by ascending distance."""
    if epsilon <= 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    if len(graph_a) == 0:
        raise ContractError("graph A is empty")
    if len(graph_b) == 0:
        return 0.0
    pa = t.apply_many(graph_a.positions())
    pb = graph_b.positions()
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    candidates = np.argwhere(d <= epsilon)
    order = sorted(map(tuple, candidates), key=lambda ij: (d[ij], ij[0], ij[1]))
    used_a: set = set()
    used_b: set = set()
    matched = 0
    for i, j in order:
        if i not in used_a and j not in used_b:
            used_a.add(i)
            used_b.add(j)
            matched += 1
    return matched / len(graph_a)


# ---------------------------------------------------------------------------
# keypoint file format: one JSON object per line

def save_keypoints(graph: KeypointGraph, path) -> None:
    with open(path, "w") as fh:
        for k in graph.keypoints:
            rec = {"x": k.x, "y": k.y, "score": k.score, "label": k.label_id}
            if k.descriptor is not None:
                rec["desc"] = [float(v) for v in k.descriptor]
            fh.write(json.dumps(rec) + "\n")


def load_keypoints(path, width: int, height: int, source_id: str = "") -> KeypointGraph:
    kps = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON ({exc})") from None
            desc = rec.get("desc")
            kps.append(Keypoint(
                float(rec["x"]), float(rec["y"]), float(rec.get("score", 1.0)),
                rec.get("label"), None if desc is None else np.asarray(desc, dtype=np.float64),
            ))
    return KeypointGraph(tuple(kps), width, height, source_id)
