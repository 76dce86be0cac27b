"""Differentiable layers: convolution, pooling, upsampling, attention,
normalisation, and the image-sampling ops used by the losses and the
registration optimizer.

Spatial tensors are (channels, height, width); feature matrices are
(nodes, dim). Convolutions are stride-1 with zero same-padding, the only
configuration the networks here need.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, concat, softmax


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """(C_in, H, W) * (C_out, C_in, kh, kw) -> (C_out, H, W); stride 1, zero same-pad.

    im2col + one GEMM; the column matrix is kept alive for the backward pass.
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise ContractError(f"conv2d expects (C,H,W) and (Co,Ci,kh,kw), got {x.shape} and {weight.shape}")
    cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ContractError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractError("conv2d kernels must have odd size for same-padding")
    ph, pw = kh // 2, kw // 2
    xpad = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((cin, kh, kw, h * w))
    for dy in range(kh):
        for dx in range(kw):
            cols[:, dy, dx] = xpad[:, dy : dy + h, dx : dx + w].reshape(cin, -1)
    cols = cols.reshape(cin * kh * kw, h * w)
    wflat = weight.data.reshape(cout, cin * kh * kw)
    out = wflat @ cols
    if bias is not None:
        out = out + bias.data.reshape(cout, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gf = g.reshape(cout, h * w)
        if bias is not None and bias.requires_grad:
            bias._accumulate(gf.sum(axis=1).reshape(bias.shape))
        if weight.requires_grad:
            weight._accumulate((gf @ cols.T).reshape(weight.shape))
        if x.requires_grad:
            gcols = (wflat.T @ gf).reshape(cin, kh, kw, h, w)
            gpad = np.zeros_like(xpad)
            for dy in range(kh):
                for dx in range(kw):
                    gpad[:, dy : dy + h, dx : dx + w] += gcols[:, dy, dx]
            x._accumulate(gpad[:, ph : ph + h, pw : pw + w])

    return Tensor._result(out.reshape(cout, h, w), parents, bwd)


def maxpool2x2(x: Tensor) -> Tensor:
    """(C, H, W) -> (C, H/2, W/2); ties route to the first window element."""
    if x.ndim != 3:
        raise ContractError(f"maxpool2x2 expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    windows = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(
        c, h // 2, w // 2, 4)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        if x.requires_grad:
            gw = np.zeros((c, h // 2, w // 2, 4))
            np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
            x._accumulate(gw.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4)
                          .reshape(c, h, w))

    return Tensor._result(out, (x,), bwd)


def _upsample_indices(n_out: int, n_in: int):
    src = (np.arange(n_out) + 0.5) / 2.0 - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i1 = np.clip(i0 + 1, 0, n_in - 1)
    i0 = np.clip(i0, 0, n_in - 1)
    return i0, i1, frac


def upsample_bilinear2x(x: Tensor) -> Tensor:
    """(C, H, W) -> (C, 2H, 2W), half-pixel-centre bilinear interpolation."""
    if x.ndim != 3:
        raise ContractError(f"upsample expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    y0, y1, fy = _upsample_indices(2 * h, h)
    x0, x1, fx = _upsample_indices(2 * w, w)
    rows = (1 - fy)[None, :, None] * x.data[:, y0, :] + fy[None, :, None] * x.data[:, y1, :]
    out = (1 - fx)[None, None, :] * rows[:, :, x0] + fx[None, None, :] * rows[:, :, x1]

    def bwd(g):
        if x.requires_grad:
            grows = np.zeros((c, 2 * h, w))
            np.add.at(grows.transpose(2, 0, 1), x0, ((1 - fx)[None, None, :] * g).transpose(2, 0, 1))
            np.add.at(grows.transpose(2, 0, 1), x1, (fx[None, None, :] * g).transpose(2, 0, 1))
            gx = np.zeros_like(x.data)
            np.add.at(gx.transpose(1, 0, 2), y0, ((1 - fy)[None, :, None] * grows).transpose(1, 0, 2))
            np.add.at(gx.transpose(1, 0, 2), y1, (fy[None, :, None] * grows).transpose(1, 0, 2))
            x._accumulate(gx)

    return Tensor._result(out, (x,), bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """(N, d_in) @ (d_in, d_out) + bias."""
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gain + bias


def attention(q: Tensor, k: Tensor, v: Tensor, num_heads: int = 1,
              w_out: Tensor | None = None) -> Tensor:
    """softmax(QK^T/sqrt(d_head))V per head; heads concatenated, optionally mixed.

    q is (N, d); k and v are (M, d); d must divide evenly into heads.
    """
    n, d = q.shape
    if k.shape != v.shape or k.shape[1] != d:
        raise ContractError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    if d % num_heads:
        raise ContractError(f"dim {d} not divisible by {num_heads} heads")
    dh = d // num_heads
    scale = 1.0 / math.sqrt(dh)
    heads = []
    for i in range(num_heads):
        qh = q.narrow(1, i * dh, dh)
        kh = k.narrow(1, i * dh, dh)
        vh = v.narrow(1, i * dh, dh)
        weights = softmax((qh @ kh.T) * scale, axis=-1)
        heads.append(weights @ vh)
    out = concat(heads, axis=1) if num_heads > 1 else heads[0]
    if w_out is not None:
        out = out @ w_out
    return out


def take_pixels(feature_map: Tensor, xs: np.ndarray, ys: np.ndarray) -> Tensor:
    """Gather per-pixel feature vectors: (C, H, W) at integer (x, y) -> (N, C)."""
    c = feature_map.shape[0]
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    out = feature_map.data[:, ys, xs].T.copy()

    def bwd(g):
        if feature_map.requires_grad:
            gm = np.zeros_like(feature_map.data)
            for ch in range(c):
                np.add.at(gm[ch], (ys, xs), g[:, ch])
            feature_map._accumulate(gm)

    return Tensor._result(out, (feature_map,), bwd)


def sample_bilinear(feature_map: Tensor, points: np.ndarray) -> Tensor:
    """Subpixel gather: (C, H, W) at float (x, y) points -> (N, C); outside = 0."""
    c, h, w = feature_map.shape
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x0 = np.floor(pts[:, 0]).astype(np.int64)
    y0 = np.floor(pts[:, 1]).astype(np.int64)
    fx = pts[:, 0] - x0
    fy = pts[:, 1] - y0
    corners = []
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            corners.append((np.clip(xi, 0, w - 1), np.clip(yi, 0, h - 1), wx * wy * inside))
    out = np.zeros((len(pts), c))
    for xi, yi, wgt in corners:
        out += wgt[:, None] * feature_map.data[:, yi, xi].T

    def bwd(g):
        if feature_map.requires_grad:
            gm = np.zeros_like(feature_map.data)
            for xi, yi, wgt in corners:
                contrib = g * wgt[:, None]
                for ch in range(c):
                    np.add.at(gm[ch], (yi, xi), contrib[:, ch])
            feature_map._accumulate(gm)

    return Tensor._result(out, (feature_map,), bwd)


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm = ((x * x).sum(axis=-1, keepdims=True) + eps).sqrt()
    return x / norm


def affine_sample(img: Tensor, theta: Tensor, center: tuple[float, float]) -> Tensor:
    """Warp an (H, W) image by the sampling transform theta, differentiably.

    theta = (l00, l01, l10, l11, tx, ty) defines the SOURCE coordinate of
    each output pixel p as L(p - c) + c + t, so theta plays the role of the
    inverse of a conventional forward warp. Gradients flow to both the image
    and theta. Out-of-bounds samples are 0.
    """
    if img.ndim != 2:
        raise ContractError(f"affine_sample expects (H,W), got {img.shape}")
    if theta.shape != (6,):
        raise ContractError(f"theta must have 6 parameters, got {theta.shape}")
    h, w = img.shape
    cx, cy = center
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    ux, uy = gx - cx, gy - cy
    l00, l01, l10, l11, tx, ty = theta.data
    sx = l00 * ux + l01 * uy + cx + tx
    sy = l10 * ux + l11 * uy + cy + ty

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    corner_vals = {}
    for dy in (0, 1):
        for dx in (0, 1):
            xi, yi = x0 + dx, y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.where(inside, img.data[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)], 0.0)
            corner_vals[(dy, dx)] = (np.clip(xi, 0, w - 1), np.clip(yi, 0, h - 1), inside, vals)
    wx = {0: 1 - fx, 1: fx}
    wy = {0: 1 - fy, 1: fy}
    out = np.zeros((h, w))
    for (dy, dx), (_, _, _, vals) in corner_vals.items():
        out += wy[dy] * wx[dx] * vals

    def bwd(g):
        if img.requires_grad:
            gm = np.zeros_like(img.data)
            for (dy, dx), (xi, yi, inside, _) in corner_vals.items():
                np.add.at(gm, (yi, xi), g * wy[dy] * wx[dx] * inside)
            img._accumulate(gm)
        if theta.requires_grad:
            v00 = corner_vals[(0, 0)][3]
            v01 = corner_vals[(0, 1)][3]
            v10 = corner_vals[(1, 0)][3]
            v11 = corner_vals[(1, 1)][3]
            dout_dsx = wy[0] * (v01 - v00) + wy[1] * (v11 - v10)
            dout_dsy = wx[0] * (v10 - v00) + wx[1] * (v11 - v01)
            gx_ = g * dout_dsx
            gy_ = g * dout_dsy
            theta._accumulate(np.array([
                (gx_ * ux).sum(),
                (gx_ * uy).sum(),
                (gy_ * ux).sum(),
                (gy_ * uy).sum(),
                gx_.sum(),
                gy_.sum(),
            ]))

    return Tensor._result(out, (img, theta), bwd)
