"""Averaging of consecutive frames that share a CTC argmax label."""
from __future__ import annotations

import torch

from ..errors import ShapeError
from ..sequence import FeatureSequence


def label_runs(labels: torch.Tensor, lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Run index of every frame (-1 on padding) and the run count per item."""
    change = torch.zeros_like(labels, dtype=torch.long)
    change[:, 1:] = (labels[:, 1:] != labels[:, :-1]).long()
    run = torch.cumsum(change, dim=1)
    valid = torch.arange(labels.shape[1])[None, :] < lengths[:, None]
    run = torch.where(valid, run, torch.full_like(run, -1))
    counts = run.max(dim=1).values + 1
    return run, counts


def ctc_collapse(h: FeatureSequence, logprobs: torch.Tensor) -> FeatureSequence:
    """One output per maximal run of equal argmax labels, the mean of its frames.

    Blank runs are kept. The labels are constants for autograd; gradients
    reach ``h`` through the averaging only.
    """
    if logprobs.shape[:2] != h.data.shape[:2]:
        raise ShapeError("logprobs must be aligned with h")
    labels = logprobs.detach().argmax(dim=-1)
    run, counts = label_runs(labels, h.lengths)
    k_max = int(counts.max())
    member = (run[:, None, :] == torch.arange(k_max)[None, :, None]).to(h.data.dtype)
    sizes = member.sum(dim=2, keepdim=True).clamp(min=1.0)
    pooled = (member / sizes) @ h.data
    ratio = float(counts.sum()) / max(float(h.lengths.sum()), 1.0)
    return h.replace(pooled, counts, h.frame_rate_hz * ratio)
