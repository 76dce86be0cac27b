"""Image and mask containers, PGM I/O, Gaussian smoothing, and 2D affine warps.

Border policy is fixed so that results are bit-stable across runs:
Gaussian blur reflects at the borders, affine warps fill out-of-bounds
samples with zero, and label masks are always warped with nearest-neighbour
interpolation so labels are never blended.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError, InputError

_SINGULAR_EPS = 1e-12


def _check_raster(a: np.ndarray, name: str) -> None:
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractError(f"{name} must be a non-empty 2D array, got shape {a.shape}")


@dataclass(frozen=True)
class Image2D:
    """Grayscale raster; ``pixels`` is (height, width) float64 in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.pixels, dtype=np.float64)
        _check_raster(p, "Image2D")
        if not np.all(np.isfinite(p)):
            raise ContractError("Image2D contains non-finite values")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ContractError("Image2D values must lie in [0, 1]")
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the pixel values."""
        return self.pixels.reshape(-1)


@dataclass(frozen=True)
class LabelMask:
    """Integer-labelled raster; 0 is background."""

    labels: np.ndarray

    def __post_init__(self):
        lb = np.asarray(self.labels)
        if not np.issubdtype(lb.dtype, np.integer):
            raise ContractError("LabelMask requires an integer dtype")
        lb = np.ascontiguousarray(lb, dtype=np.int64)
        _check_raster(lb, "LabelMask")
        if lb.min() < 0:
            raise ContractError("LabelMask labels must be non-negative")
        object.__setattr__(self, "labels", lb)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def label_ids(self) -> list[int]:
        """Sorted nonzero labels present in the mask."""
        ids = np.unique(self.labels)
        return [int(v) for v in ids if v != 0]

    def pixels_of(self, label: int) -> np.ndarray:
        """(N, 2) integer (x, y) coordinates of one label."""
        ys, xs = np.nonzero(self.labels == label)
        return np.stack([xs, ys], axis=1)


@dataclass(frozen=True)
class Heatmap:
    """Continuous response map; ``values`` is (height, width) float64 in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        _check_raster(v, "Heatmap")
        if not np.all(np.isfinite(v)):
            raise ContractError("Heatmap contains non-finite values")
        if v.min() < -1e-12 or v.max() > 1.0 + 1e-12:
            raise ContractError("Heatmap values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix [[a, b, tx], [c, d, ty]] mapping source (x, y) to target."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ContractError(f"affine matrix must be 2x3, got {m.shape}")
        det = float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
        if abs(det) < _SINGULAR_EPS:
            raise ContractError("affine transform is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty]]))

    def det(self) -> float:
        m = self.matrix
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    def apply(self, point) -> tuple[float, float]:
        x, y = float(point[0]), float(point[1])
        m = self.matrix
        return (m[0, 0] * x + m[0, 1] * y + m[0, 2],
                m[1, 0] * x + m[1, 1] * y + m[1, 2])

    def apply_many(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (N, 2) array of (x, y) points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def inverse(self) -> "AffineTransform":
        m = self.matrix
        d = self.det()
        ia, ib = m[1, 1] / d, -m[0, 1] / d
        ic, id_ = -m[1, 0] / d, m[0, 0] / d
        itx = -(ia * m[0, 2] + ib * m[1, 2])
        ity = -(ic * m[0, 2] + id_ * m[1, 2])
        return AffineTransform(np.array([[ia, ib, itx], [ic, id_, ity]]))

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """self after other: (self @ other)(p) = self(other(p))."""
        a, b = self.matrix, other.matrix
        lin = a[:, :2] @ b[:, :2]
        off = a[:, :2] @ b[:, 2] + a[:, 2]
        return AffineTransform(np.hstack([lin, off[:, None]]))

    def to_text(self) -> str:
        """Six decimal numbers, row-major, one line."""
        return " ".join(repr(float(v)) for v in self.matrix.reshape(-1))

    @classmethod
    def from_text(cls, text: str) -> "AffineTransform":
        parts = text.split()
        if len(parts) != 6:
            raise FormatError(f"affine text needs 6 numbers, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise FormatError(f"bad affine number: {exc}") from None
        return cls(np.array(vals, dtype=np.float64).reshape(2, 3))


def apply_to_point(t: AffineTransform, p) -> tuple[float, float]:
    return t.apply(p)


# ---------------------------------------------------------------------------
# PGM (P5) I/O

def _parse_pgm_header(buf: bytes):
    """Return (width, height, maxval, payload_offset)."""
    n = len(buf)
    if n < 2 or buf[0:2] != b"P5":
        raise FormatError("not a binary PGM (expected magic 'P5' at byte 0)")
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and '#' comment lines
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        token = buf[start:pos]
        if not token:
            raise FormatError(f"malformed PGM header at byte {start}: unexpected end of header")
        if not token.isdigit():
            raise FormatError(f"malformed PGM header at byte {start}: expected integer, got {token!r}")
        fields.append(int(token))
    if pos >= n:
        raise FormatError(f"malformed PGM header at byte {pos}: missing delimiter before pixel data")
    pos += 1  # single whitespace byte separates header from payload
    width, height, maxval = fields
    if width == 0 or height == 0:
        raise FormatError(f"PGM dimensions must be nonzero, got {width}x{height}")
    if maxval < 1 or maxval > 65535:
        raise FormatError(f"PGM maxval {maxval} outside [1, 65535]")
    return width, height, maxval, pos


def _read_pgm(path) -> tuple[np.ndarray, int]:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    width, height, maxval, off = _parse_pgm_header(buf)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    payload = buf[off : off + need]
    if len(payload) < need:
        raise FormatError(f"unexpected end of data in {path}: need {need} payload bytes, have {len(payload)}")
    raw = np.frombuffer(payload, dtype=dtype).astype(np.int64).reshape(height, width)
    return raw, maxval


def load_pgm(path, kind: str = "image"):
    """Load a binary PGM; images normalize to [0,1], masks keep literal values."""
    raw, maxval = _read_pgm(path)
    if kind == "image":
        return Image2D(raw.astype(np.float64) / float(maxval))
    if kind == "mask":
        return LabelMask(raw)
    raise ContractError(f"unknown PGM kind {kind!r}")


def save_pgm(obj, path, maxval: int = 65535) -> None:
    """Write an Image2D (quantised by ``maxval``) or LabelMask (literal) as P5."""
    if isinstance(obj, Image2D):
        vals = np.rint(obj.pixels * maxval).astype(np.int64)
    elif isinstance(obj, Heatmap):
        vals = np.rint(obj.values * maxval).astype(np.int64)
    elif isinstance(obj, LabelMask):
        vals = obj.labels
        maxval = max(int(vals.max()), 1)
        if maxval > 65535:
            raise ContractError(f"mask label {maxval} exceeds 16-bit PGM range")
    else:
        raise ContractError(f"cannot save {type(obj).__name__} as PGM")
    h, w = vals.shape
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(vals.astype(dtype).tobytes())


# ---------------------------------------------------------------------------
# Gaussian smoothing

def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalised 1D kernel with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur_axis(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(kernel) - 1) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(a, pad, mode="reflect")
    out = np.zeros_like(a)
    for i, kv in enumerate(kernel):
        if axis == 0:
            out += kv * padded[i : i + a.shape[0], :]
        else:
            out += kv * padded[:, i : i + a.shape[1]]
    return out


def gaussian_blur_array(a: np.ndarray, sigma: float) -> np.ndarray:
    kernel = gaussian_kernel1d(sigma)
    out = _blur_axis(_blur_axis(np.asarray(a, dtype=np.float64), kernel, 0), kernel, 1)
    # convex combination of in-range values; clip float dust only
    return np.clip(out, 0.0, 1.0)


def gaussian_blur(img, sigma: float):
    """Separable Gaussian blur with reflect padding; preserves the input type."""
    if isinstance(img, Image2D):
        return Image2D(gaussian_blur_array(img.pixels, sigma))
    if isinstance(img, Heatmap):
        return Heatmap(gaussian_blur_array(img.values, sigma))
    raise ContractError(f"cannot blur {type(img).__name__}")


# ---------------------------------------------------------------------------
# Affine warping

def _source_coords(t: AffineTransform, height: int, width: int):
    inv = t.inverse().matrix
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    sx = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]
    sy = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]
    return sx, sy


def _sample_nearest(a: np.ndarray, sx: np.ndarray, sy: np.ndarray, fill):
    h, w = a.shape
    rx = np.rint(sx).astype(np.int64)
    ry = np.rint(sy).astype(np.int64)
    inside = (rx >= 0) & (rx < w) & (ry >= 0) & (ry < h)
    out = np.full(sx.shape, fill, dtype=a.dtype)
    out[inside] = a[ry[inside], rx[inside]]
    return out

def _sample_bilinear(a: np.ndarray, sx: np.ndarray, sy: np.ndarray):
    h, w = a.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros(sx.shape, dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            if np.any(inside):
                vals = np.zeros(sx.shape, dtype=np.float64)
                vals[inside] = a[yi[inside], xi[inside]]
                out += wx * wy * vals
    return out


def warp_affine(img: Image2D, t: AffineTransform, interpolation: str = "bilinear") -> Image2D:
    """output(x, y) = input(t^-1(x, y)); out-of-bounds samples are 0."""
    sx, sy = _source_coords(t, img.height, img.width)
    if interpolation == "bilinear":
        out = _sample_bilinear(img.pixels, sx, sy)
    elif interpolation == "nearest":
        out = _sample_nearest(img.pixels, sx, sy, 0.0)
    else:
        raise ContractError(f"unknown interpolation {interpolation!r}")
    return Image2D(np.clip(out, 0.0, 1.0))


def warp_mask(mask: LabelMask, t: AffineTransform) -> LabelMask:
    """Masks always warp with nearest-neighbour sampling so labels stay literal."""
    sx, sy = _source_coords(t, mask.height, mask.width)
    return LabelMask(_sample_nearest(mask.labels, sx, sy, 0))


def warp_heatmap(hm: Heatmap, t: AffineTransform) -> Heatmap:
    sx, sy = _source_coords(t, hm.height, hm.width)
    return Heatmap(np.clip(_sample_bilinear(hm.values, sx, sy), 0.0, 1.0))


# ---------------------------------------------------------------------------
# Random deformations

@dataclass(frozen=True)
class DeformationLimits:
    """Uniform sampling bounds for random affine deformations."""

    max_rotation_deg: float = 15.0
    max_translation_px: float = 10.0
    max_scale_dev: float = 0.10
    max_shear: float = 0.0

    def __post_init__(self):
        for name in ("max_rotation_deg", "max_translation_px", "max_scale_dev", "max_shear"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")


def random_affine(seed: int, limits: DeformationLimits, center: tuple[float, float]) -> AffineTransform:
    """Deterministic random affine: scale*shear*rotation about ``center``, then translation.

    Draw order is fixed (rotation, tx, ty, scale, shear) so a seed always
    yields the same transform.
    """
    rng = np.random.default_rng(seed)
    r = limits.max_rotation_deg
    t = limits.max_translation_px
    s = limits.max_scale_dev
    h = limits.max_shear
    theta = math.radians(rng.uniform(-r, r)) if r > 0 else 0.0
    tx = rng.uniform(-t, t) if t > 0 else 0.0
    ty = rng.uniform(-t, t) if t > 0 else 0.0
    scale = 1.0 + (rng.uniform(-s, s) if s > 0 else 0.0)
    shear = rng.uniform(-h, h) if h > 0 else 0.0

    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    sh = np.array([[1.0, shear], [0.0, 1.0]])
    sc = np.array([[scale, 0.0], [0.0, scale]])
    lin = sc @ sh @ rot
    cx, cy = center
    c = np.array([cx, cy])
    offset = c - lin @ c + np.array([tx, ty])
    return AffineTransform(np.hstack([lin, offset[:, None]]))


# ---------------------------------------------------------------------------
# Keypoint heatmap splatting (shared by the detector and registration losses)

def splat_heatmap(points, width: int, height: int, sigma: float) -> Heatmap:
    """Bilinear-splat subpixel points as impulses, blur, renormalise peak to 1."""
    acc = np.zeros((height, width), dtype=np.float64)
    for p in points:
        x, y = float(p[0]), float(p[1])
        x0, y0 = math.floor(x), math.floor(y)
        fx, fy = x - x0, y - y0
        for dy, wy in ((0, 1.0 - fy), (1, fy)):
            for dx, wx in ((0, 1.0 - fx), (1, fx)):
                xi, yi = x0 + dx, y0 + dy
                if 0 <= xi < width and 0 <= yi < height:
                    acc[yi, xi] += wx * wy
    blurred = gaussian_blur_array(np.clip(acc, 0.0, 1.0), sigma)
    peak = blurred.max()
    if peak > 0:
        blurred = blurred / peak
    return Heatmap(blurred)
