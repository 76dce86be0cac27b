"""Attentional graph matcher: keypoint encoder, alternating self/cross
attention, inner-product scores, and Sinkhorn assignment with dustbins.

Weights are shared between the two graphs, so matching is symmetric and
permutation-equivariant. Raw descriptors are standardized per dimension
with statistics frozen at training time (stored as non-trainable buffers)
before projection, because radiomic features span wildly different scales.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import (
    Adam,
    ParameterStore,
    Tensor,
    attention,
    concat,
    layer_norm,
    linear,
    no_grad,
)
from ..errors import ContractError
from ..keypoints import KeypointGraph
from .bruteforce import MatchSet
from .metrics import MatchMetrics, correspondences_from_labels, match_metrics
from .sinkhorn import sinkhorn_log_plan


@dataclass(frozen=True)
class MatcherConfig:
    descriptor_dim: int = 53
    dim: int = 64
    heads: int = 4
    layers: int = 3
    sinkhorn_iterations: int = 100
    pos_hidden: int = 32
    seed: int = 0


class MatcherNet:
    def __init__(self, config: MatcherConfig = MatcherConfig(), store: ParameterStore | None = None):
        self.config = config
        d, dd = config.dim, config.descriptor_dim
        self.store = store if store is not None else ParameterStore(
            seed=config.seed,
            hyper={
                "descriptor_dim": dd, "dim": d, "heads": config.heads,
                "layers": config.layers, "sinkhorn_iterations": config.sinkhorn_iterations,
                "pos_hidden": config.pos_hidden,
            },
        )
        s = self.store
        if "feat.mean" not in s:
            s.put("feat.mean", np.zeros(dd))
        if "feat.std" not in s:
            s.put("feat.std", np.ones(dd))
        s.parameter("proj.w", (dd, d), kind="xavier", fan_in=dd)
        s.parameter("proj.b", (d,), kind="zeros")
        ph = config.pos_hidden
        s.parameter("pos.w1", (3, ph), kind="xavier", fan_in=3)
        s.parameter("pos.b1", (ph,), kind="zeros")
        s.parameter("pos.w2", (ph, d), kind="xavier", fan_in=ph)
        s.parameter("pos.b2", (d,), kind="zeros")
        for layer in range(config.layers):
            for mode in ("self", "cross"):
                pre = f"l{layer}.{mode}"
                for name in ("wq", "wk", "wv", "wo"):
                    s.parameter(f"{pre}.{name}", (d, d), kind="xavier", fan_in=d)
                s.parameter(f"{pre}.ln.g", (2 * d,), kind="ones")
                s.parameter(f"{pre}.ln.b", (2 * d,), kind="zeros")
                s.parameter(f"{pre}.mlp.w1", (2 * d, 2 * d), kind="xavier", fan_in=2 * d)
                s.parameter(f"{pre}.mlp.b1", (2 * d,), kind="zeros")
                s.parameter(f"{pre}.mlp.w2", (2 * d, d), kind="xavier", fan_in=2 * d)
                s.parameter(f"{pre}.mlp.b2", (d,), kind="zeros")
        if "alpha" not in s:
            s.put("alpha", np.array([1.0]), trainable=True)

    # -- encoding

    def _encode(self, graph: KeypointGraph) -> Tensor:
        if len(graph) == 0:
            raise ContractError("cannot encode an empty keypoint graph")
        desc = graph.descriptors()
        if desc.shape[1] != self.config.descriptor_dim:
            raise ContractError(
                f"descriptor dim {desc.shape[1]} does not match net config {self.config.descriptor_dim}")
        s = self.store
        z = (desc - s["feat.mean"].data) / s["feat.std"].data
        feats = linear(Tensor(z), s["proj.w"], s["proj.b"])
        pos = graph.positions()
        geo = np.stack([
            2.0 * pos[:, 0] / max(graph.width - 1, 1) - 1.0,
            2.0 * pos[:, 1] / max(graph.height - 1, 1) - 1.0,
            graph.scores(),
        ], axis=1)
        h = linear(Tensor(geo), s["pos.w1"], s["pos.b1"]).relu()
        return feats + linear(h, s["pos.w2"], s["pos.b2"])

    def _block(self, pre: str, x: Tensor, source: Tensor) -> Tensor:
        s = self.store
        q = x @ s[f"{pre}.wq"]
        k = source @ s[f"{pre}.wk"]
        v = source @ s[f"{pre}.wv"]
        msg = attention(q, k, v, num_heads=self.config.heads, w_out=s[f"{pre}.wo"])
        h = layer_norm(concat([x, msg], axis=1), s[f"{pre}.ln.g"], s[f"{pre}.ln.b"])
        h = linear(h, s[f"{pre}.mlp.w1"], s[f"{pre}.mlp.b1"]).relu()
        return x + linear(h, s[f"{pre}.mlp.w2"], s[f"{pre}.mlp.b2"])

    def log_plan(self, graph_a: KeypointGraph, graph_b: KeypointGraph) -> Tensor:
        """Log assignment plan (M+1, N+1) after attention and Sinkhorn."""
        xa = self._encode(graph_a)
        xb = self._encode(graph_b)
        for layer in range(self.config.layers):
            pre = f"l{layer}.self"
            xa = self._block(pre, xa, xa)
            xb = self._block(pre, xb, xb)
            pre = f"l{layer}.cross"
            xa_new = self._block(pre, xa, xb)
            xb = self._block(pre, xb, xa)
            xa = xa_new
        scores = (xa @ xb.T) * (1.0 / math.sqrt(self.config.dim))
        return sinkhorn_log_plan(scores, self.store["alpha"],
                                 self.config.sinkhorn_iterations)

    def save(self, path, dtype: str = "f32") -> None:
        self.store.save(path, dtype=dtype)

    @classmethod
    def load(cls, path) -> "MatcherNet":
        store = ParameterStore.load(path)
        hy = store.hyper
        cfg = MatcherConfig(
            descriptor_dim=int(hy.get("descriptor_dim", 53)),
            dim=int(hy.get("dim", 64)),
            heads=int(hy.get("heads", 4)),
            layers=int(hy.get("layers", 3)),
            sinkhorn_iterations=int(hy.get("sinkhorn_iterations", 100)),
            pos_hidden=int(hy.get("pos_hidden", 32)),
        )
        return cls(cfg, store=store)


def gnn_match(graph_a: KeypointGraph, graph_b: KeypointGraph, net: MatcherNet,
              threshold: float = 0.2) -> MatchSet:
    """Mutual-argmax pairs of the assignment plan with confidence >= threshold."""
    with no_grad():
        plan = np.exp(net.log_plan(graph_a, graph_b).data)
    inner = plan[:-1, :-1]
    m, n = inner.shape
    best_j = inner.argmax(axis=1)
    best_i = inner.argmax(axis=0)
    pairs = []
    for i in range(m):
        j = int(best_j[i])
        conf = float(inner[i, j])
        if int(best_i[j]) == i and conf >= threshold:
            pairs.append((i, j, min(conf, 1.0)))
    return MatchSet.from_pairs(pairs)


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class MatcherTrainPair:
    graph_a: KeypointGraph
    graph_b: KeypointGraph
    gt: tuple  # (i, j) index pairs
    unmatched_a: tuple
    unmatched_b: tuple

    @classmethod
    def from_label_ids(cls, graph_a: KeypointGraph, graph_b: KeypointGraph) -> "MatcherTrainPair":
        gt, ua, ub = correspondences_from_labels(graph_a, graph_b)
        return cls(graph_a, graph_b, tuple(gt), tuple(ua), tuple(ub))


@dataclass
class MatcherTrainConfig:
    steps: int = 600
    lr: float = 5e-4
    seed: int = 0
    threshold: float = 0.2
    log_every: int = 50


@dataclass
class MatcherTrainLog:
    step: int
    loss: float
    precision: float
    recall: float


def matcher_nll(log_plan: Tensor, pair: MatcherTrainPair) -> Tensor:
    """-sum log P at GT cells and at the dustbin cells of unmatched keypoints."""
    m1, n1 = log_plan.shape
    terms = []
    for i, j in pair.gt:
        terms.append(log_plan.narrow(0, i, 1).narrow(1, j, 1))
    for i in pair.unmatched_a:
        terms.append(log_plan.narrow(0, i, 1).narrow(1, n1 - 1, 1))
    for j in pair.unmatched_b:
        terms.append(log_plan.narrow(0, m1 - 1, 1).narrow(1, j, 1))
    return -concat(terms, axis=0).sum()


def fit_feature_normalization(net: MatcherNet, pairs) -> None:
    """Freeze per-dimension descriptor statistics from the training pairs."""
    all_desc = np.concatenate(
        [p.graph_a.descriptors() for p in pairs] + [p.graph_b.descriptors() for p in pairs])
    net.store["feat.mean"].data = all_desc.mean(axis=0)
    net.store["feat.std"].data = np.maximum(all_desc.std(axis=0), 1e-6)


def train_matcher(
    pairs: list[MatcherTrainPair],
    config: MatcherTrainConfig = MatcherTrainConfig(),
    net: MatcherNet | None = None,
) -> tuple[MatcherNet, list[MatcherTrainLog]]:
    """Adam on the assignment NLL, cycling over pairs; deterministic per seed.

    Pairs without ground-truth matches are skipped with a warning entry in
    the log (loss NaN would otherwise poison the run).
    """
    usable = [p for p in pairs if len(p.gt) > 0]
    skipped = len(pairs) - len(usable)
    if skipped:
        import warnings
        warnings.warn(f"skipped {skipped} training pair(s) with zero GT matches")
    if not usable:
        raise ContractError("no usable training pairs")
    net = net or MatcherNet(MatcherConfig(seed=config.seed))
    if np.array_equal(net.store["feat.std"].data, np.ones(net.config.descriptor_dim)):
        fit_feature_normalization(net, usable)
    opt = Adam(dict(net.store.trainable_items()), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(usable))
    logs: list[MatcherTrainLog] = []
    for step in range(config.steps):
        pair = usable[order[step % len(usable)]]
        if step % len(usable) == len(usable) - 1:
            order = rng.permutation(len(usable))
        log_plan = net.log_plan(pair.graph_a, pair.graph_b)
        loss = matcher_nll(log_plan, pair)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % config.log_every == 0 or step == config.steps - 1:
            prec, rec = _train_metrics(net, usable[: min(len(usable), 8)], config.threshold)
            logs.append(MatcherTrainLog(step, loss.item(), prec, rec))
    return net, logs


def _train_metrics(net, pairs, threshold) -> tuple[float, float]:
    ps, rs = [], []
    for p in pairs:
        ms = gnn_match(p.graph_a, p.graph_b, net, threshold)
        mm = match_metrics(ms, p.gt)
        ps.append(mm.precision)
        rs.append(mm.recall)
    return float(np.mean(ps)), float(np.mean(rs))


def write_matcher_log(logs: list[MatcherTrainLog], path) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss,precision,recall\n")
        for l in logs:
            fh.write(f"{l.step},{l.loss:.9g},{l.precision:.9g},{l.recall:.9g}\n")
