"""Synthetic labelled images: Voronoi regions inside an elliptical boundary.

Stands in for real segmented scans at desk scale. Each region gets a
distinct base intensity, smooth low-frequency texture, and pixel noise, so
regions are separable by intensity statistics and the background outside
the ellipse is empty (label 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .imaging import Image2D, LabelMask


@dataclass(frozen=True)
class SynthSpec:
    width: int = 160
    height: int = 192
    regions: int = 24
    seed: int = 0
    noise_sigma: float = 0.02
    texture_scale: float = 0.08
    margin_frac: float = 0.72  # ellipse semi-axes as a fraction of the half-dims
    min_region_area: int = 25

    def __post_init__(self):
        if self.regions < 2:
            raise ContractError("need at least 2 regions")
        if self.width < 32 or self.height < 32:
            raise ContractError("dims must be at least 32x32")


def synth_generate(spec: SynthSpec) -> tuple[Image2D, LabelMask]:
    """Deterministic K-region image/mask pair for ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    w, h, k = spec.width, spec.height, spec.regions
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ax, ay = spec.margin_frac * w / 2.0, spec.margin_frac * h / 2.0

    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    inside = ((gx - cx) / ax) ** 2 + ((gy - cy) / ay) ** 2 <= 1.0
    capacity = int(inside.sum())
    if k * spec.min_region_area > capacity:
        raise ContractError(f"{k} regions do not fit: ellipse holds {capacity} px")

    labels = None
    for _ in range(50):  # reseed until every Voronoi cell is large enough
        seeds = _place_seeds(rng, k, cx, cy, ax, ay)
        d2 = (gx[..., None] - seeds[:, 0]) ** 2 + (gy[..., None] - seeds[:, 1]) ** 2
        cand = (np.argmin(d2, axis=-1) + 1) * inside
        areas = np.bincount(cand.reshape(-1), minlength=k + 1)[1:]
        if (areas >= spec.min_region_area).all():
            labels = cand
            break
    if labels is None:
        raise ContractError(f"could not place {k} regions of >= {spec.min_region_area} px")

    # distinct base intensities, shuffled so neighbours differ
    palette = np.linspace(0.25, 0.92, k)
    rng.shuffle(palette)
    base = np.zeros((h, w))
    for label in range(1, k + 1):
        base[labels == label] = palette[label - 1]

    # smooth low-frequency texture: a few random 2D cosines
    texture = np.zeros((h, w))
    for _ in range(4):
        fx = rng.uniform(0.5, 2.5) / w
        fy = rng.uniform(0.5, 2.5) / h
        phase = rng.uniform(0, 2 * math.pi)
        texture += np.cos(2 * math.pi * (fx * gx + fy * gy) + phase)
    texture *= spec.texture_scale / 4.0

    noise = rng.normal(0.0, spec.noise_sigma, size=(h, w))
    img = np.where(inside, base + texture + noise, 0.0)
    return Image2D(np.clip(img, 0.0, 1.0)), LabelMask(labels.astype(np.int64))


def _place_seeds(rng, k, cx, cy, ax, ay) -> np.ndarray:
    """Rejection-sample k seeds inside the ellipse with a minimum spacing."""
    min_dist = 0.8 * math.sqrt(math.pi * ax * ay / k)
    seeds: list = []
    attempts = 0
    while len(seeds) < k and attempts < 20000:
        attempts += 1
        r = math.sqrt(rng.uniform(0, 0.92))
        th = rng.uniform(0, 2 * math.pi)
        p = (cx + ax * r * math.cos(th), cy + ay * r * math.sin(th))
        if all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= min_dist ** 2 for q in seeds):
            seeds.append(p)
    if len(seeds) < k:
        # fall back to unconstrained placement for the remainder
        while len(seeds) < k:
            r = math.sqrt(rng.uniform(0, 0.92))
            th = rng.uniform(0, 2 * math.pi)
            seeds.append((cx + ax * r * math.cos(th), cy + ay * r * math.sin(th)))
    return np.array(seeds)


def perturb_intensity(img: Image2D, gamma: float, noise_sigma: float, seed: int) -> Image2D:
    """Gamma shift plus pixel noise; used to decouple intensity from geometry."""
    rng = np.random.default_rng(seed)
    out = np.clip(img.pixels, 0.0, 1.0) ** gamma
    out = out + rng.normal(0.0, noise_sigma, size=out.shape)
    return Image2D(np.clip(out, 0.0, 1.0))
