"""Log-domain Sinkhorn optimal transport with dustbin row/column.

The (M, N) score matrix is augmented with a dustbin row and column holding
the learnable scalar alpha; marginals are (1,...,1,N) over rows and
(1,...,1,M) over columns, so every real keypoint carries unit mass and the
dustbins absorb whatever stays unmatched. Iterations run on log potentials,
which keeps the unrolled loop differentiable and immune to overflow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, concat, logsumexp, no_grad
from ..errors import ContractError


@dataclass(frozen=True)
class ScoreMatrix:
    """Pre-transport pairwise scores plus the dustbin parameter."""

    scores: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2 or s.size == 0:
            raise ContractError(f"score matrix must be non-empty 2D, got shape {s.shape}")
        if not np.all(np.isfinite(s)) or not np.isfinite(self.alpha):
            raise ContractError("non-finite scores")
        object.__setattr__(self, "scores", s)


@dataclass(frozen=True)
class AssignmentMatrix:
    """(M+1) x (N+1) transport plan from Sinkhorn."""

    plan: np.ndarray
    iterations: int
    residual: float
    residual_history: tuple = ()

    def __post_init__(self):
        p = np.asarray(self.plan, dtype=np.float64)
        if p.min() < 0:
            raise ContractError("assignment plan has negative entries")
        object.__setattr__(self, "plan", p)

    @property
    def inner(self) -> np.ndarray:
        """The real-to-real block without dustbins."""
        return self.plan[:-1, :-1]


def augmented_scores(scores: Tensor, alpha: Tensor) -> Tensor:
    """Append the dustbin row and column filled with alpha."""
    m, n = scores.shape
    a = alpha.reshape(1, 1)
    col = a * Tensor(np.ones((m, 1)))
    row = a * Tensor(np.ones((1, n + 1)))
    return concat([concat([scores, col], axis=1), row], axis=0)


def log_marginals(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.ones(m + 1)
    a[m] = n
    b = np.ones(n + 1)
    b[n] = m
    return np.log(a), np.log(b)


def sinkhorn_log_plan(scores: Tensor, alpha: Tensor, iterations: int = 100) -> Tensor:
    """Differentiable log-plan; exp of it satisfies the marginals at convergence."""
    if iterations < 1:
        raise ContractError(f"iterations must be >= 1, got {iterations}")
    m, n = scores.shape
    log_a, log_b = log_marginals(m, n)
    la = Tensor(log_a.reshape(m + 1, 1))
    lb = Tensor(log_b.reshape(1, n + 1))
    aug = augmented_scores(scores, alpha)
    f = Tensor(np.zeros((m + 1, 1)))
    g = Tensor(np.zeros((1, n + 1)))
    for _ in range(iterations):
        f = la - logsumexp(aug + g, axis=1, keepdims=True)
        g = lb - logsumexp(aug + f, axis=0, keepdims=True)
    return aug + f + g


def marginal_residual(plan: np.ndarray) -> float:
    """max |marginal - target| over all rows and columns."""
    m1, n1 = plan.shape
    a = np.ones(m1)
    a[-1] = n1 - 1
    b = np.ones(n1)
    b[-1] = m1 - 1
    return float(max(np.abs(plan.sum(axis=1) - a).max(),
                     np.abs(plan.sum(axis=0) - b).max()))


def sinkhorn(s: ScoreMatrix, iterations: int = 100,
             track_history: bool = False) -> AssignmentMatrix:
    """Run Sinkhorn on a score matrix; reports the final marginal residual."""
    if iterations < 1:
        raise ContractError(f"iterations must be >= 1, got {iterations}")
    m, n = s.scores.shape
    log_a, log_b = log_marginals(m, n)
    with no_grad():
        aug = augmented_scores(Tensor(s.scores), Tensor(s.alpha)).data
    f = np.zeros((m + 1, 1))
    g = np.zeros((1, n + 1))
    history = []
    for _ in range(iterations):
        f = log_a.reshape(-1, 1) - _lse(aug + g, axis=1, keepdims=True)
        g = log_b.reshape(1, -1) - _lse(aug + f, axis=0, keepdims=True)
        if track_history:
            history.append(marginal_residual(np.exp(aug + f + g)))
    plan = np.exp(aug + f + g)
    return AssignmentMatrix(plan, iterations, marginal_residual(plan), tuple(history))


def _lse(x: np.ndarray, axis: int, keepdims: bool) -> np.ndarray:
    hi = x.max(axis=axis, keepdims=True)
    out = np.log(np.exp(x - hi).sum(axis=axis, keepdims=True)) + hi
    return out if keepdims else np.squeeze(out, axis=axis)
