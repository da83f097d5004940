"""Central-difference verification of autograd gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from ..errors import NonFiniteError
from .params import ParamStore

# gradients whose norm is below this are compared in absolute terms
GRAD_FLOOR = 1e-6


@dataclass
class GradReport:
    max_rel_error: float
    worst_entry: str | None
    per_entry: dict[str, float] = field(default_factory=dict)
    n_coords: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _relative_error(a: np.ndarray, n: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(n), GRAD_FLOOR)
    return float(np.linalg.norm(a - n) / denom)


def grad_check(f: Callable[[], torch.Tensor], store: ParamStore, eps: float = 1e-4,
               max_coords_per_entry: int | None = None, seed: int = 0) -> GradReport:
    """Compare ``f``'s autograd gradient against central differences.

    The error of an entry is ``|g_auto - g_fd| / max(|g_auto|, |g_fd|, 1e-6)``
    in the Euclidean norm; the report carries the maximum over all
    non-frozen entries. ``max_coords_per_entry`` restricts the finite
    differences to a random subset of coordinates in each entry.
    """
    store.zero_grad()
    out = f()
    if not torch.isfinite(out):
        raise NonFiniteError("objective is not finite at the check point")
    out.backward()
    rng = np.random.default_rng(seed)
    report = GradReport(0.0, None)
    for name, entry in store.items(trainable_only=True):
        analytic = entry.grad.detach().reshape(-1).cpu().numpy().copy()
        flat = entry.values.data.view(-1)
        coords = np.arange(flat.numel())
        if max_coords_per_entry is not None and flat.numel() > max_coords_per_entry:
            coords = np.sort(rng.choice(flat.numel(), max_coords_per_entry, replace=False))
        numeric = np.empty(len(coords))
        with torch.no_grad():
            for j, c in enumerate(coords):
                orig = flat[c].item()
                flat[c] = orig + eps
                up = f().item()
                flat[c] = orig - eps
                down = f().item()
                flat[c] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NonFiniteError(f"objective not finite when perturbing {name}[{c}]")
                numeric[j] = (up - down) / (2 * eps)
        err = _relative_error(analytic[coords], numeric)
        report.per_entry[name] = err
        report.n_coords += len(coords)
        if err >= report.max_rel_error:
            report.max_rel_error, report.worst_entry = err, name
    store.zero_grad()
    return report
