"""SGD and Adam over named parameter collections.

Parameters are visited in sorted-name order and all state lives in plain
float64 arrays, so optimisation is deterministic and checkpointable.
"""
from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


class Sgd:
    def __init__(self, params: dict[str, Tensor] | list[tuple[str, Tensor]],
                 lr: float = 0.01, momentum: float = 0.0):
        self.params = sorted(dict(params).items())
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.params}

    def zero_grad(self) -> None:
        for _, t in self.params:
            t.zero_grad()

    def step(self) -> None:
        for name, t in self.params:
            if t.grad is None:
                continue
            if self.momentum > 0:
                v = self.velocity[name]
                v *= self.momentum
                v += t.grad
                t.data -= self.lr * v
            else:
                t.data -= self.lr * t.grad


class Adam:
    def __init__(self, params: dict[str, Tensor] | list[tuple[str, Tensor]],
                 lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.params = sorted(dict(params).items())
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    # -- checkpointing

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"_adam.t": np.array([float(self.t)])}
        for name, _ in self.params:
            out[f"_adam.m.{name}"] = self.m[name].copy()
            out[f"_adam.v.{name}"] = self.v[name].copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if "_adam.t" not in arrays:
            raise ContractError("missing Adam step counter in state")
        self.t = int(arrays["_adam.t"][0])
        for name, _ in self.params:
            self.m[name] = np.array(arrays[f"_adam.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"_adam.v.{name}"], dtype=np.float64)
