"""Keypoint detector/descriptor network with its losses, NMS, and training.

The network is a shallow U-Net: one stem convolution, three encoder blocks
(two convs, 2x2 max-pool, ReLU), and two mirrored decoders fed by skip
connections — one ending in a sigmoid detection map, the other in a
per-pixel L2-normalized descriptor map.

The training objective combines the detection loss (soft Dice against the
splatted ground-truth heatmap, plus the same term on a warped copy for
equivariance) with the descriptor triplet-style hinge loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Adam,
    ParameterStore,
    Tensor,
    conv2d,
    l2_normalize_rows,
    maxpool2x2,
    no_grad,
    sample_bilinear,
    take_pixels,
    upsample_bilinear2x,
)
from .autodiff.tensor import concat
from .errors import ContractError
from .imaging import (
    AffineTransform,
    DeformationLimits,
    Heatmap,
    Image2D,
    random_affine,
    splat_heatmap,
    warp_affine,
    warp_heatmap,
)
from .keypoints import Keypoint, KeypointGraph, repeatability


@dataclass(frozen=True)
class DetectorConfig:
    channels: tuple = (8, 16, 32, 64)
    descriptor_dim: int = 64
    heatmap_sigma: float = 2.0
    margin: float = 0.8
    exclusion_radius: float = 4.0
    seed: int = 0


class DetectorNet:
    """Forward pass produces the detection map P (H, W) and descriptor map D (d, H, W)."""

    def __init__(self, config: DetectorConfig = DetectorConfig(), store: ParameterStore | None = None):
        self.config = config
        c0, c1, c2, c3 = config.channels
        d = config.descriptor_dim
        self.store = store if store is not None else ParameterStore(
            seed=config.seed,
            hyper={"channels": list(config.channels), "descriptor_dim": d},
        )
        p = self._conv_param
        p("stem", 1, c0)
        enc = [(c0, c1), (c1, c2), (c2, c3)]
        for i, (ci, co) in enumerate(enc):
            p(f"enc{i}.a", ci, co)
            p(f"enc{i}.b", co, co)
        for head in ("kp", "desc"):
            dec = [(c3, c2), (c2 + c3, c1), (c1 + c2, c0)]
            for i, (ci, co) in enumerate(dec):
                p(f"{head}.dec{i}.a", ci, co)
                p(f"{head}.dec{i}.b", co, co)
            head_in = c0 + c1
            p(f"{head}.head0", head_in, c0)
            p(f"{head}.head1", c0, c0)
            # random bias on the final descriptor conv: featureless (dead-relu)
            # pixels then share a fixed nonzero direction, keeping the map
            # unit-normalizable everywhere
            p(f"{head}.head2", c0, 1 if head == "kp" else d,
              bias_kind="zeros" if head == "kp" else "xavier")

    def _conv_param(self, name: str, cin: int, cout: int, k: int = 3, bias_kind: str = "zeros"):
        self.store.parameter(f"{name}.w", (cout, cin, k, k), kind="kaiming", fan_in=cin * k * k)
        self.store.parameter(f"{name}.b", (cout,), kind=bias_kind, fan_in=cin * k * k)

    def _conv(self, name: str, x: Tensor) -> Tensor:
        return conv2d(x, self.store[f"{name}.w"], self.store[f"{name}.b"])

    def forward(self, img) -> tuple[Tensor, Tensor]:
        x = img.pixels if isinstance(img, Image2D) else np.asarray(img, dtype=np.float64)
        if x.ndim != 2:
            raise ContractError(f"detector expects a 2D image, got shape {x.shape}")
        h, w = x.shape
        if h % 8 or w % 8:
            raise ContractError(f"image dims must be divisible by 8, got {h}x{w}")
        t = Tensor(x.reshape(1, h, w))
        x0 = self._conv("stem", t).relu()
        skips = []
        cur = x0
        for i in range(3):
            cur = self._conv(f"enc{i}.a", cur).relu()
            cur = self._conv(f"enc{i}.b", cur).relu()
            skips.append(cur)
            cur = maxpool2x2(cur)
        bottleneck = cur

        def decode(head: str, final_channels: int) -> Tensor:
            y = bottleneck
            for i in range(3):
                y = self._conv(f"{head}.dec{i}.a", y).relu()
                y = self._conv(f"{head}.dec{i}.b", y).relu()
                y = upsample_bilinear2x(y)
                y = concat([y, skips[2 - i]], axis=0)
            y = self._conv(f"{head}.head0", y).relu()
            y = self._conv(f"{head}.head1", y).relu()
            return self._conv(f"{head}.head2", y)

        p_map = decode("kp", 1).sigmoid().reshape(h, w)
        d_map = decode("desc", self.config.descriptor_dim)
        # per-pixel unit norm over channels
        dn = d_map.reshape(self.config.descriptor_dim, h * w).T
        d_map = l2_normalize_rows(dn).T.reshape(self.config.descriptor_dim, h, w)
        return p_map, d_map

    def detect(self, img, threshold: float = 0.5, window: int = 5) -> KeypointGraph:
        """NMS keypoints with descriptors bilinearly sampled from the descriptor map."""
        with no_grad():
            p_map, d_map = self.forward(img)
        kps = nms(p_map.data, threshold, window)
        if kps:
            pts = np.array([[k.x, k.y] for k in kps])
            descs = sample_bilinear(Tensor(d_map.data), pts).data
            norms = np.linalg.norm(descs, axis=1, keepdims=True)
            descs = descs / np.maximum(norms, 1e-12)
            kps = [Keypoint(k.x, k.y, k.score, None, desc) for k, desc in zip(kps, descs)]
        h, w = (img.height, img.width) if isinstance(img, Image2D) else np.asarray(img).shape
        return KeypointGraph(tuple(kps), w, h)

    def save(self, path, dtype: str = "f32") -> None:
        self.store.save(path, dtype=dtype)

    @classmethod
    def load(cls, path) -> "DetectorNet":
        store = ParameterStore.load(path)
        cfg = DetectorConfig(
            channels=tuple(store.hyper.get("channels", (8, 16, 32, 64))),
            descriptor_dim=int(store.hyper.get("descriptor_dim", 64)),
        )
        return cls(cfg, store=store)


# ---------------------------------------------------------------------------
# losses

def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Heatmap):
        return Tensor(x.values)
    return Tensor(np.asarray(x, dtype=np.float64))


def loss_clf(p, target) -> Tensor:
    """Soft Dice loss 1 - 2*sum(P*Y) / (sum(P^2) + sum(Y^2)); both-empty -> 0."""
    pt, yt = _as_tensor(p), _as_tensor(target)
    if pt.shape != yt.shape:
        raise ContractError(f"loss_clf dims differ: {pt.shape} vs {yt.shape}")
    denom = float((pt.data ** 2).sum() + (yt.data ** 2).sum())
    if denom == 0.0:
        return Tensor(0.0)
    return 1.0 - (2.0 * (pt * yt).sum()) / ((pt * pt).sum() + (yt * yt).sum())


def ground_truth_heatmap(points, width: int, height: int, sigma: float) -> Heatmap:
    """Splat keypoints as impulses and Gaussian-blur; peak renormalised to 1."""
    return splat_heatmap(points, width, height, sigma)


def loss_des(
    d_map: Tensor,
    d_map_prime: Tensor,
    keypoints: np.ndarray,
    t: AffineTransform,
    margin: float = 0.8,
    exclusion_radius: float = 4.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Hinge descriptor loss over keypoint positives and random/hardest negatives.

    For each keypoint p: the positive distance pairs D[p] with D'[t(p)];
    negatives are drawn from D' outside a radius-``exclusion_radius`` disc
    around t(p) — one uniformly at random and one as the globally hardest
    (minimum-distance) candidate. Each term is
    max(0, margin + pos - (rand + hard)/2).
    """
    rng = rng or np.random.default_rng(0)
    c, h, w = d_map.shape
    pts = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    warped = t.apply_many(pts)
    in_a = (pts[:, 0] >= 0) & (pts[:, 0] <= w - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1)
    in_b = (warped[:, 0] >= 0) & (warped[:, 0] <= w - 1) & (warped[:, 1] >= 0) & (warped[:, 1] <= h - 1)
    keep = in_a & in_b
    if not keep.any():
        raise ContractError("no keypoints remain in bounds under the transform")
    pts, warped = pts[keep], warped[keep]
    n = len(pts)

    anchors = l2_normalize_rows(take_pixels(d_map, np.rint(pts[:, 0]).astype(int),
                                            np.rint(pts[:, 1]).astype(int)))
    positives = l2_normalize_rows(sample_bilinear(d_map_prime, warped))

    # negative candidate search runs outside the graph; only the chosen
    # pixels re-enter it below
    gxs, gys = np.meshgrid(np.arange(w), np.arange(h))
    flat_x, flat_y = gxs.reshape(-1), gys.reshape(-1)
    with no_grad():
        dn = d_map_prime.data.reshape(c, h * w)
        dn = dn / np.maximum(np.linalg.norm(dn, axis=0, keepdims=True), 1e-12)
        dots = anchors.data @ dn  # (n, h*w); dist^2 = 2 - 2*dot on unit vectors
    hard_idx = np.empty(n, dtype=np.int64)
    rand_idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        d2 = (flat_x - warped[i, 0]) ** 2 + (flat_y - warped[i, 1]) ** 2
        valid = d2 > exclusion_radius ** 2
        if not valid.any():
            raise ContractError("image too small for margin sampling")
        cand = np.flatnonzero(valid)
        hard_idx[i] = cand[np.argmax(dots[i, cand])]
        rand_idx[i] = cand[rng.integers(len(cand))]

    def dist_rows(a: Tensor, b: Tensor) -> Tensor:
        diff = a - b
        return (diff * diff).sum(axis=1).sqrt()

    hard = l2_normalize_rows(take_pixels(d_map_prime, flat_x[hard_idx], flat_y[hard_idx]))
    rand = l2_normalize_rows(take_pixels(d_map_prime, flat_x[rand_idx], flat_y[rand_idx]))
    phi_pos = dist_rows(anchors, positives)
    phi_hard = dist_rows(anchors, hard)
    phi_rand = dist_rows(anchors, rand)
    hinge = (phi_pos - (phi_rand + phi_hard) * 0.5 + margin).relu()
    return hinge.sum()


def loss_det(net: DetectorNet, img: Image2D, img_prime: Image2D, keypoints,
             t: AffineTransform, sigma: float | None = None):
    """Detection loss triple (total, clf, geo) on an augmented image pair."""
    sigma = sigma if sigma is not None else net.config.heatmap_sigma
    gt = ground_truth_heatmap(keypoints, img.width, img.height, sigma)
    p_map, _ = net.forward(img)
    clf = loss_clf(p_map, gt)
    p_prime, _ = net.forward(img_prime)
    geo = loss_clf(p_prime, warp_heatmap(gt, t))
    return clf + geo, clf, geo


# ---------------------------------------------------------------------------
# non-maximum suppression

def nms(p_map, threshold: float, window: int = 5) -> list[Keypoint]:
    """Window-strict maxima >= threshold, lexicographic tie-break, subpixel 3x3 fit."""
    if window < 3 or window % 2 == 0:
        raise ContractError(f"window must be odd and >= 3, got {window}")
    a = p_map.values if isinstance(p_map, Heatmap) else np.asarray(p_map, dtype=np.float64)
    h, w = a.shape
    r = window // 2
    out = []
    ys, xs = np.nonzero(a >= threshold)
    for y, x in sorted(zip(ys.tolist(), xs.tolist())):
        v = a[y, x]
        win = a[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1]
        if (win > v).any():
            continue
        ties = np.argwhere(win == v)
        ties[:, 0] += max(0, y - r)
        ties[:, 1] += max(0, x - r)
        if any((ty, tx) < (y, x) for ty, tx in ties):
            continue
        sx, sy = _refine_subpixel(a, x, y)
        out.append(Keypoint(sx, sy, float(np.clip(v, 0.0, 1.0))))
    return out


def _refine_subpixel(a: np.ndarray, x: int, y: int) -> tuple[float, float]:
    h, w = a.shape
    if not (0 < x < w - 1 and 0 < y < h - 1):
        return float(x), float(y)
    dx = (a[y, x + 1] - a[y, x - 1]) / 2.0
    dy = (a[y + 1, x] - a[y - 1, x]) / 2.0
    dxx = a[y, x + 1] - 2 * a[y, x] + a[y, x - 1]
    dyy = a[y + 1, x] - 2 * a[y, x] + a[y - 1, x]
    dxy = (a[y + 1, x + 1] - a[y + 1, x - 1] - a[y - 1, x + 1] + a[y - 1, x - 1]) / 4.0
    det = dxx * dyy - dxy * dxy
    if abs(det) < 1e-12:
        return float(x), float(y)
    ox = -(dyy * dx - dxy * dy) / det
    oy = -(dxx * dy - dxy * dx) / det
    return float(x + np.clip(ox, -0.5, 0.5)), float(y + np.clip(oy, -0.5, 0.5))


# ---------------------------------------------------------------------------
# training

@dataclass
class DetectorTrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    seed: int = 0
    limits: DeformationLimits = field(default_factory=lambda: DeformationLimits(15, 6, 0.05, 0.0))
    descriptor_weight: float = 1.0
    eval_epsilon: float = 3.0
    nms_threshold: float = 0.2
    nms_window: int = 5
    eval_transforms: int = 3
    stop_repeatability: float | None = None
    stop_clf_ratio: float | None = None


@dataclass
class EpochMetrics:
    epoch: int
    loss_clf: float
    loss_geo: float
    loss_des: float
    repeatability: float


def train_detector(
    dataset: list[tuple[Image2D, KeypointGraph]],
    config: DetectorTrainConfig = DetectorTrainConfig(),
    net: DetectorNet | None = None,
    eval_pair: tuple[Image2D, KeypointGraph] | None = None,
) -> tuple[DetectorNet, list[EpochMetrics]]:
    """Adam over augmented pairs; deterministic for a given seed.

    Per step one training image is deformed by a fresh random affine; the
    objective is loss_det plus ``descriptor_weight`` * loss_des. Divergence
    (NaN loss) aborts and restores the last finished epoch's weights.
    """
    if not dataset:
        raise ContractError("empty training dataset")
    net = net or DetectorNet(DetectorConfig(seed=config.seed))
    opt = Adam(dict(net.store.trainable_items()), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    metrics: list[EpochMetrics] = []
    snapshot = {n: net.store[n].data.copy() for n in net.store.names()}

    for epoch in range(config.epochs):
        sums = np.zeros(3)
        for img, graph in dataset:
            center = ((img.width - 1) / 2.0, (img.height - 1) / 2.0)
            t = random_affine(int(rng.integers(2 ** 62)), config.limits, center)
            img_prime = warp_affine(img, t, "bilinear")
            gt = ground_truth_heatmap(graph.positions(), img.width, img.height,
                                      net.config.heatmap_sigma)
            p_self, d_self = net.forward(img)
            p_prime, d_prime = net.forward(img_prime)
            clf = loss_clf(p_self, gt)
            geo = loss_clf(p_prime, warp_heatmap(gt, t))
            ldes = loss_des(d_self, d_prime, graph.positions(), t,
                            margin=net.config.margin,
                            exclusion_radius=net.config.exclusion_radius, rng=rng)
            objective = clf + geo + config.descriptor_weight * ldes
            if not math.isfinite(objective.item()):
                for name, data in snapshot.items():
                    net.store[name].data = data.copy()
                raise ContractError(f"training diverged at epoch {epoch}; restored last checkpoint")
            opt.zero_grad()
            objective.backward()
            opt.step()
            sums += (clf.item(), geo.item(), ldes.item())
        snapshot = {n: net.store[n].data.copy() for n in net.store.names()}

        rep = float("nan")
        if eval_pair is not None:
            rep = _eval_repeatability(net, eval_pair, config, seed=config.seed + 7919)
        m = EpochMetrics(epoch, *(sums / len(dataset)), rep)
        metrics.append(m)
        if _should_stop(metrics, config):
            break
    return net, metrics


def _eval_repeatability(net, eval_pair, config, seed: int) -> float:
    """Mean repeatability over a few fixed transforms (single draws are noisy)."""
    img, _ = eval_pair
    center = ((img.width - 1) / 2.0, (img.height - 1) / 2.0)
    ga = net.detect(img, config.nms_threshold, config.nms_window)
    if len(ga) == 0:
        return 0.0
    reps = []
    for k in range(config.eval_transforms):
        t = random_affine(seed + k, config.limits, center)
        gb = net.detect(warp_affine(img, t, "bilinear"), config.nms_threshold, config.nms_window)
        reps.append(0.0 if len(gb) == 0 else repeatability(ga, gb, t, config.eval_epsilon))
    return float(np.mean(reps))


def _should_stop(metrics: list[EpochMetrics], config: DetectorTrainConfig) -> bool:
    if config.stop_repeatability is None and config.stop_clf_ratio is None:
        return False
    m = metrics[-1]
    ok = True
    if config.stop_repeatability is not None:
        ok &= m.repeatability >= config.stop_repeatability
    if config.stop_clf_ratio is not None:
        ok &= m.loss_clf <= config.stop_clf_ratio * metrics[0].loss_clf
    return bool(ok)


def write_training_log(metrics: list[EpochMetrics], path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss_clf,loss_geo,loss_des,repeatability\n")
        for m in metrics:
            fh.write(f"{m.epoch},{m.loss_clf:.9g},{m.loss_geo:.9g},{m.loss_des:.9g},{m.repeatability:.9g}\n")
