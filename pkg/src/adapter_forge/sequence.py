"""Padded batches of variable-length frame sequences."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import ShapeError


def lengths_to_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    """Boolean ``(B, max_len)`` mask, True on valid frames."""
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


@dataclass
class FeatureSequence:
    """A batch ``data`` of shape (B, T, D) with per-item ``lengths``.

    Frames past an item's length are kept at exactly zero.
    """

    data: torch.Tensor
    lengths: torch.Tensor
    frame_rate_hz: float

    def __post_init__(self):
        if self.data.dim() != 3:
            raise ShapeError(f"expected (B, T, D) data, got shape {tuple(self.data.shape)}")
        self.lengths = torch.as_tensor(self.lengths, dtype=torch.long)
        if self.lengths.shape != (self.data.shape[0],):
            raise ShapeError("one length per batch item required")
        if len(self.lengths) and int(self.lengths.max()) > self.data.shape[1]:
            raise ShapeError("a length exceeds the time dimension")
        if not self.frame_rate_hz > 0:
            raise ShapeError("frame_rate_hz must be positive")

    @property
    def batch_size(self) -> int:
        return self.data.shape[0]

    @property
    def max_len(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def mask(self) -> torch.Tensor:
        return lengths_to_mask(self.lengths, self.max_len)

    def replace(self, data: torch.Tensor, lengths=None, frame_rate_hz=None) -> "FeatureSequence":
        """New sequence with ``data`` re-zeroed outside the valid frames."""
        lengths = self.lengths if lengths is None else torch.as_tensor(lengths, dtype=torch.long)
        rate = self.frame_rate_hz if frame_rate_hz is None else frame_rate_hz
        mask = lengths_to_mask(lengths, data.shape[1])
        return FeatureSequence(data * mask[..., None].to(data.dtype), lengths, rate)

    def item(self, i: int) -> torch.Tensor:
        return self.data[i, : int(self.lengths[i])]

    @classmethod
    def from_list(
        cls,
        frames: Sequence[np.ndarray | torch.Tensor],
        frame_rate_hz: float,
        dtype: torch.dtype = torch.float32,
    ) -> "FeatureSequence":
        if not frames:
            raise ShapeError("empty batch")
        items = [torch.as_tensor(np.asarray(f), dtype=dtype) for f in frames]
        dims = {f.shape[1] for f in items}
        if len(dims) != 1:
            raise ShapeError(f"inconsistent feature dims {sorted(dims)}")
        lengths = torch.tensor([f.shape[0] for f in items], dtype=torch.long)
        data = torch.zeros(len(items), int(lengths.max()), dims.pop(), dtype=dtype)
        for i, f in enumerate(items):
            data[i, : f.shape[0]] = f
        return cls(data, lengths, frame_rate_hz)
