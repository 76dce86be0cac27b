"""53-dimensional radiomic region descriptor.

The descriptor stacks three families computed over one labelled region:
19 first-order intensity statistics, 10 2D shape features, and 24
gray-level co-occurrence (GLCM) texture features. Names, order, and the
exact formulas are frozen in ``FEATURE_REGISTRY`` (version ``rk53-v1``);
``write_registry`` ships that table as a plain-text file.

Conventions baked into the registry version:
  * intensities are discretized into a fixed COUNT of equal-width bins
    spanning [region min, region max] (single-valued regions collapse to
    bin 0); entropy, uniformity, and all GLCM features use these bins;
  * GLCM gray levels are 1-based bin indices, co-occurrences counted at
    distance 1 over the four undirected axes, symmetrized, normalized;
  * degenerate regions produce defined values instead of NaN: skewness
    and excess kurtosis 0, correlation-type features 1, Imc1/Imc2 0;
  * the perimeter is the exposed unit-edge count of the pixel polygon
    and the mesh surface its enclosed area, so both are exact integers
    on the pixel grid;
  * percentiles interpolate linearly between order statistics;
  * axis lengths come from the population covariance of the pixel
    coordinates (4*sqrt of its eigenvalues).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .imaging import Image2D

REGISTRY_VERSION = "rk53-v1"

FIRST_ORDER_NAMES = [
    "Energy",
    "TotalEnergy",
    "Entropy",
    "Minimum",
    "Percentile10",
    "Percentile90",
    "Maximum",
    "Mean",
    "Median",
    "InterquartileRange",
    "Range",
    "MeanAbsoluteDeviation",
    "RobustMeanAbsoluteDeviation",
    "RootMeanSquared",
    "Skewness",
    "Kurtosis",
    "Variance",
    "StandardDeviation",
    "Uniformity",
]

SHAPE_NAMES = [
    "PixelSurface",
    "Perimeter",
    "MeshSurface",
    "PerimeterSurfaceRatio",
    "Sphericity",
    "SphericalDisproportion",
    "MaximumDiameter",
    "MajorAxisLength",
    "MinorAxisLength",
    "Elongation",
]

GLCM_NAMES = [
    "Autocorrelation",
    "JointAverage",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "JointEnergy",
    "JointEntropy",
    "Imc1",
    "Imc2",
    "Idm",
    "Idmn",
    "Id",
    "Idn",
    "InverseVariance",
    "MaximumProbability",
    "SumAverage",
    "SumEntropy",
    "SumSquares",
    "MCC",
]

FEATURE_REGISTRY: list[tuple[int, str, str]] = (
    [(i, "firstorder", n) for i, n in enumerate(FIRST_ORDER_NAMES)]
    + [(19 + i, "shape2d", n) for i, n in enumerate(SHAPE_NAMES)]
    + [(29 + i, "glcm", n) for i, n in enumerate(GLCM_NAMES)]
)

FEATURE_COUNT = 53

FEATURE_INDEX = {name: idx for idx, _, name in FEATURE_REGISTRY}


def write_registry(path) -> None:
    """Plain-text registry: one line per feature 'index,family,name'."""
    lines = [f"{i},{family},{name}" for i, family, name in FEATURE_REGISTRY]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class RegionOfInterest:
    """One labelled region: the image plus the (x, y) pixels of a single label."""

    image: Image2D
    pixels: np.ndarray
    label_id: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64)
        if px.ndim != 2 or px.shape[1] != 2 or px.shape[0] == 0:
            raise ContractError("roi needs a non-empty (N, 2) pixel array")
        if (px[:, 0].min() < 0 or px[:, 0].max() >= self.image.width
                or px[:, 1].min() < 0 or px[:, 1].max() >= self.image.height):
            raise ContractError("roi pixel outside image bounds")
        object.__setattr__(self, "pixels", px)

    @property
    def intensities(self) -> np.ndarray:
        return self.image.pixels[self.pixels[:, 1], self.pixels[:, 0]]

    @classmethod
    def from_mask(cls, image: Image2D, mask, label: int) -> "RegionOfInterest":
        if (mask.width, mask.height) != (image.width, image.height):
            raise ContractError("image and mask dimensions differ")
        px = mask.pixels_of(label)
        if len(px) == 0:
            raise ContractError(f"label {label} has no pixels")
        return cls(image, px, label)


@dataclass(frozen=True)
class RadiomicDescriptor:
    """Ordered 53-vector of region features."""

    values: np.ndarray
    registry_version: str = REGISTRY_VERSION

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (FEATURE_COUNT,):
            raise ContractError(f"descriptor must have {FEATURE_COUNT} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise ContractError(f"descriptor value {FEATURE_REGISTRY[bad][2]} is not finite")
        object.__setattr__(self, "values", v)

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_INDEX[name]])


@dataclass(frozen=True)
class GlcmMatrix:
    """Symmetric, normalized co-occurrence matrix over ``bins`` gray levels."""

    bins: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (self.bins, self.bins):
            raise ContractError("glcm matrix shape does not match bin count")
        if abs(m.sum() - 1.0) > 1e-9:
            raise ContractError("glcm matrix must sum to 1")
        if np.abs(m - m.T).max() > 1e-12:
            raise ContractError("glcm matrix must be symmetric")
        object.__setattr__(self, "matrix", m)


def discretize(intensities: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width bin index per value over [min, max]; constant input -> bin 0."""
    if bins < 2:
        raise ContractError(f"bins must be >= 2, got {bins}")
    v = np.asarray(intensities, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.int64)
    idx = np.floor((v - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


# ---------------------------------------------------------------------------
# first order

def _histogram_probabilities(bin_idx: np.ndarray, bins: int) -> np.ndarray:
    counts = np.bincount(bin_idx, minlength=bins).astype(np.float64)
    return counts / counts.sum()


def first_order_features(intensities: np.ndarray, bins: int = 32) -> np.ndarray:
    v = np.asarray(intensities, dtype=np.float64)
    if v.size == 0:
        raise ContractError("empty intensity set")
    n = v.size
    mean = v.mean()
    dev = v - mean
    m2 = float((dev ** 2).mean())
    m3 = float((dev ** 3).mean())
    m4 = float((dev ** 4).mean())
    p10, p25, p50, p75, p90 = np.percentile(v, [10, 25, 50, 75, 90])
    robust = v[(v >= p10) & (v <= p90)]
    if robust.size:
        robust_mad = float(np.abs(robust - robust.mean()).mean())
    else:
        robust_mad = 0.0
    p = _histogram_probabilities(discretize(v, bins), bins)
    pz = p[p > 0]
    entropy = float(-(pz * np.log2(pz)).sum())
    uniformity = float((p ** 2).sum())
    skewness = m3 / m2 ** 1.5 if m2 > 0 else 0.0
    kurtosis = m4 / m2 ** 2 - 3.0 if m2 > 0 else 0.0  # excess convention
    energy = float((v ** 2).sum())
    out = np.array([
        energy,
        energy,  # TotalEnergy with unit pixel area
        entropy,
        v.min(),
        p10,
        p90,
        v.max(),
        mean,
        p50,
        p75 - p25,
        v.max() - v.min(),
        float(np.abs(dev).mean()),
        robust_mad,
        math.sqrt(energy / n),
        skewness,
        kurtosis,
        m2,
        math.sqrt(m2),
        uniformity,
    ])
    return out


# ---------------------------------------------------------------------------
# shape

def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices (possibly collinear-reduced)."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def shape_features(pixels: np.ndarray) -> np.ndarray:
    px = np.asarray(pixels, dtype=np.int64)
    if px.ndim != 2 or px.shape[1] != 2 or len(px) == 0:
        raise ContractError("shape features need a non-empty (N, 2) pixel array")
    n = len(px)
    occupied = set(map(tuple, px))

    perimeter = 0
    for x, y in occupied:
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if (nx, ny) not in occupied:
                perimeter += 1

    pixel_surface = float(n)
    mesh_surface = float(n)  # area of the union-of-unit-squares polygon
    sphericity = 2.0 * math.sqrt(math.pi * mesh_surface) / perimeter
    hull = _convex_hull(px)
    if len(hull) == 1:
        max_diam = 0.0
    else:
        diff = hull[:, None, :] - hull[None, :, :]
        max_diam = float(np.sqrt((diff.astype(np.float64) ** 2).sum(-1)).max())

    centered = px.astype(np.float64) - px.mean(axis=0)
    cov = centered.T @ centered / n  # population covariance
    eigvals = np.linalg.eigvalsh(cov)
    lam_minor, lam_major = max(eigvals[0], 0.0), max(eigvals[1], 0.0)
    major_axis = 4.0 * math.sqrt(lam_major)
    minor_axis = 4.0 * math.sqrt(lam_minor)
    elongation = math.sqrt(lam_minor / lam_major) if lam_major > 1e-12 else 1.0

    return np.array([
        pixel_surface,
        float(perimeter),
        mesh_surface,
        perimeter / mesh_surface,
        sphericity,
        1.0 / sphericity,
        max_diam,
        major_axis,
        minor_axis,
        elongation,
    ])


# ---------------------------------------------------------------------------
# GLCM

_GLCM_OFFSETS = ((1, 0), (1, 1), (0, 1), (-1, 1))  # 0, 45, 90, 135 degrees


def glcm(roi: RegionOfInterest, bins: int) -> GlcmMatrix:
    """Distance-1 co-occurrences over 4 directions, symmetrized and normalized."""
    bin_vals = discretize(roi.intensities, bins)
    xs, ys = roi.pixels[:, 0], roi.pixels[:, 1]
    x0, y0 = xs.min(), ys.min()
    grid = np.full((ys.max() - y0 + 1, xs.max() - x0 + 1), -1, dtype=np.int64)
    grid[ys - y0, xs - x0] = bin_vals

    counts = np.zeros((bins, bins), dtype=np.float64)
    h, w = grid.shape
    for dx, dy in _GLCM_OFFSETS:
        if dy >= h or abs(dx) >= w:
            continue
        if dx >= 0:
            a = grid[: h - dy, : w - dx]
            b = grid[dy:, dx:]
        else:
            a = grid[: h - dy, -dx:]
            b = grid[dy:, : w + dx]
        valid = (a >= 0) & (b >= 0)
        if valid.any():
            np.add.at(counts, (a[valid], b[valid]), 1.0)

    total = counts.sum()
    if total == 0:
        raise ContractError("region too small for texture")
    counts = counts + counts.T
    return GlcmMatrix(bins, counts / counts.sum())


def glcm_features(gm: GlcmMatrix) -> np.ndarray:
    p = gm.matrix
    b = gm.bins
    levels = np.arange(1, b + 1, dtype=np.float64)
    i = levels[:, None]
    j = levels[None, :]
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mu_x = float((levels * px).sum())
    mu_y = float((levels * py).sum())
    sig_x = math.sqrt(max(float(((levels - mu_x) ** 2 * px).sum()), 0.0))
    sig_y = math.sqrt(max(float(((levels - mu_y) ** 2 * py).sum()), 0.0))

    # diagonal-band marginals
    p_sum = np.zeros(2 * b - 1)  # k = i + j in [2, 2b]
    p_diff = np.zeros(b)  # k = |i - j| in [0, b-1]
    for a_idx in range(b):
        for b_idx in range(b):
            p_sum[a_idx + b_idx] += p[a_idx, b_idx]
            p_diff[abs(a_idx - b_idx)] += p[a_idx, b_idx]
    k_sum = np.arange(2, 2 * b + 1, dtype=np.float64)
    k_diff = np.arange(0, b, dtype=np.float64)

    def ent(q):
        qz = q[q > 0]
        return float(-(qz * np.log2(qz)).sum())

    hxy = ent(p)
    hx = ent(px)
    hy = ent(py)
    outer = px[:, None] * py[None, :]
    mask_p = p > 0
    hxy1 = float(-(p[mask_p] * np.log2(outer[mask_p])).sum()) if mask_p.any() else 0.0
    mask_o = outer > 0
    hxy2 = float(-(outer[mask_o] * np.log2(outer[mask_o])).sum()) if mask_o.any() else 0.0

    autocorr = float((p * i * j).sum())
    contrast = float((p * (i - j) ** 2).sum())
    if sig_x * sig_y > 1e-14:
        correlation = (autocorr - mu_x * mu_y) / (sig_x * sig_y)
    else:
        correlation = 1.0  # degenerate rule: constant region correlates perfectly
    diff_avg = float((k_diff * p_diff).sum())
    diff_ent = ent(p_diff)
    diff_var = float(((k_diff - diff_avg) ** 2 * p_diff).sum())
    joint_energy = float((p ** 2).sum())
    denom = max(hx, hy)
    imc1 = (hxy - hxy1) / denom if denom > 1e-14 else 0.0
    imc2_arg = 1.0 - math.exp(-2.0 * (hxy2 - hxy))
    imc2 = math.sqrt(imc2_arg) if imc2_arg > 0 else 0.0
    idm = float((p_diff / (1.0 + k_diff ** 2)).sum())
    idmn = float((p_diff / (1.0 + (k_diff / b) ** 2)).sum())
    id_ = float((p_diff / (1.0 + k_diff)).sum())
    idn = float((p_diff / (1.0 + k_diff / b)).sum())
    inv_var = float((p_diff[1:] / k_diff[1:] ** 2).sum()) if b > 1 else 0.0
    max_prob = float(p.max())
    sum_avg = float((k_sum * p_sum).sum())
    sum_ent = ent(p_sum)
    sum_squares = float(((i - mu_x) ** 2 * p).sum())
    mcc = _mcc(p, px, py)

    return np.array([
        autocorr,
        mu_x,
        float(((i + j - mu_x - mu_y) ** 4 * p).sum()),
        float(((i + j - mu_x - mu_y) ** 3 * p).sum()),
        float(((i + j - mu_x - mu_y) ** 2 * p).sum()),
        contrast,
        correlation,
        diff_avg,
        diff_ent,
        diff_var,
        joint_energy,
        hxy,
        imc1,
        imc2,
        idm,
        idmn,
        id_,
        idn,
        inv_var,
        max_prob,
        sum_avg,
        sum_ent,
        sum_squares,
        mcc,
    ])


def _mcc(p: np.ndarray, px: np.ndarray, py: np.ndarray) -> float:
    """sqrt of the second-largest eigenvalue of Q, over occupied gray levels."""
    occ = np.flatnonzero(px > 0)
    if len(occ) < 2:
        return 1.0  # degenerate rule, like Correlation
    ps = p[np.ix_(occ, occ)]
    pxs = px[occ]
    pys = py[occ]
    q = (ps / pxs[:, None]) @ (ps / pys[:, None])
    eig = np.sort(np.real(np.linalg.eigvals(q)))
    second = float(np.clip(eig[-2], 0.0, 1.0))
    return math.sqrt(second)


# ---------------------------------------------------------------------------
# full descriptor

def extract_descriptor(roi: RegionOfInterest, bins: int = 32) -> RadiomicDescriptor:
    """All 53 features of one region, in registry order."""
    if bins < 2:
        raise ContractError(f"bins must be >= 2, got {bins}")
    fo = first_order_features(roi.intensities, bins)
    sh = shape_features(roi.pixels)
    tex = glcm_features(glcm(roi, bins))
    return RadiomicDescriptor(np.concatenate([fo, sh, tex]))


# ---------------------------------------------------------------------------
# descriptor file format: one-line text header + packed float32 records

def save_descriptors(descriptors, path) -> None:
    recs = [np.asarray(d.values, dtype="<f4") for d in descriptors]
    with open(path, "wb") as fh:
        fh.write(f"RKD1 count={len(recs)}\n".encode("ascii"))
        for r in recs:
            fh.write(r.tobytes())


def load_descriptors(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        if not header.startswith("RKD1 count="):
            raise ContractError(f"bad descriptor header: {header!r}")
        count = int(header.split("=", 1)[1])
        out = []
        for _ in range(count):
            buf = fh.read(FEATURE_COUNT * 4)
            if len(buf) < FEATURE_COUNT * 4:
                raise ContractError("descriptor file truncated")
            out.append(np.frombuffer(buf, dtype="<f4").astype(np.float64))
    return out
