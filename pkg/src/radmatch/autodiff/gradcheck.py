"""Central-difference gradient verification for scalar tensor functions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_input: str
    worst_index: tuple
    n_coordinates: int
    failures: list = field(default_factory=list)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance


def grad_check(f, inputs: dict[str, Tensor], tolerance: float = 1e-4,
               h: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f(**inputs)`` against central differences.

    Relative error per coordinate is |analytic - numeric| / (|analytic| + 1e-6).
    The report carries every coordinate above ``tolerance``.
    """
    for t in inputs.values():
        if not np.all(np.isfinite(t.data)):
            raise ContractError("grad_check inputs must be finite")
    out = f(**inputs)
    if out.size != 1:
        raise ContractError("grad_check target must be scalar-valued")
    for t in inputs.values():
        t.zero_grad()
    out = f(**inputs)
    out.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in inputs.items()}

    max_rel = 0.0
    worst_input = ""
    worst_index: tuple = ()
    failures = []
    n_coords = 0
    for name, t in inputs.items():
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            n_coords += 1
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f(**inputs).item()
            flat[i] = orig - h
            f_minus = f(**inputs).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - numeric) / (abs(a) + 1e-6)
            idx = np.unravel_index(i, t.shape) if t.ndim else ()
            if rel > max_rel:
                max_rel = rel
                worst_input = name
                worst_index = idx
            if rel > tolerance:
                failures.append((name, idx, float(a), float(numeric), float(rel)))
    return GradCheckReport(max_rel, worst_input, worst_index, n_coords, failures)
