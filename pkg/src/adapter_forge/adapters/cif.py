"""Continuous integrate-and-fire over frame sequences."""
from __future__ import annotations

import torch

from ..errors import ConfigError, ShapeError
from ..numkernel import Linear
from ..sequence import FeatureSequence
from .config import CifConfig

# fires when the accumulator is within this of the threshold (float slack)
FIRE_SLACK = 1e-9


def cif_weights(h: FeatureSequence, head: Linear) -> torch.Tensor:
    """Per-frame firing weights in (0, 1); padded frames get exactly 0."""
    alpha = torch.sigmoid(head(h.data)[..., 0])
    return alpha * h.mask().to(alpha.dtype)


def cif_integrate_fire(h: FeatureSequence, alpha: torch.Tensor, cfg: CifConfig,
                       target_len=None) -> tuple[FeatureSequence, torch.Tensor]:
    """Integrate ``alpha`` left to right and emit a weighted frame sum per firing.

    Each emitted vector k is ``sum_t W[k, t] * h_t`` where ``W[k, t]`` is the
    overlap of frame t's weight interval ``[c_{t-1}, c_t]`` (cumulative sums)
    with ``[k*beta, (k+1)*beta]``; the boundary frame is thereby split between
    adjacent firings. With ``cfg.scale_to_target`` the weights are first
    rescaled to sum to ``target_len * beta`` and the last group absorbs any
    rounding residue. Without scaling a trailing residue below ``beta`` is
    dropped, except that an item always emits at least one vector.
    """
    if alpha.shape != h.data.shape[:2]:
        raise ShapeError("alpha must be (B, T) aligned with h")
    beta = cfg.beta
    alpha = alpha * h.mask().to(alpha.dtype)
    if cfg.scale_to_target:
        if target_len is None:
            raise ConfigError("target_len is required when scale_to_target is set")
        target = torch.as_tensor(target_len, dtype=torch.long).reshape(-1)
        total = alpha.sum(dim=1)
        if bool((total <= 0).any()):
            raise ConfigError("cannot rescale CIF weights that sum to zero")
        alpha = alpha * (target.to(alpha.dtype) * beta / total)[:, None]
        counts = target
    else:
        total = alpha.sum(dim=1).detach()
        counts = torch.floor(total / beta + FIRE_SLACK).long()
    forced = counts < 1
    counts = counts.clamp(min=1)
    k_max = int(counts.max())
    c = torch.cumsum(alpha, dim=1)
    c_prev = c - alpha
    k = torch.arange(k_max, dtype=alpha.dtype)
    lower = (k * beta)[None, :].expand(len(counts), -1)
    upper = ((k + 1) * beta)[None, :].repeat(len(counts), 1)
    is_last = torch.arange(k_max)[None, :] == (counts - 1)[:, None]
    open_end = is_last & (forced | torch.tensor(bool(cfg.scale_to_target)))[:, None]
    upper = torch.where(open_end, torch.full_like(upper, float("inf")), upper)
    w = torch.minimum(c[:, None, :], upper[..., None]) - torch.maximum(c_prev[:, None, :], lower[..., None])
    w = w.clamp(min=0.0)
    w = w * (torch.arange(k_max)[None, :] < counts[:, None]).to(w.dtype)[..., None]
    fired = w @ h.data
    ratio = float(counts.sum()) / max(float(h.lengths.sum()), 1.0)
    return h.replace(fired, counts, h.frame_rate_hz * ratio), counts
