"""Compression ratio and output sampling-rate accounting."""
from __future__ import annotations

from ..errors import ShapeError
from .config import AdapterConfig, AdapterKind
from .wlq import window_length


def compression_stats(in_len: int, out_len: int, in_rate_hz: float) -> tuple[float, float]:
    """``(in_len / out_len, in_rate_hz * out_len / in_len)``."""
    if out_len <= 0:
        raise ShapeError("out_len must be >= 1")
    if in_len <= 0:
        raise ShapeError("in_len must be >= 1")
    return in_len / out_len, in_rate_hz * out_len / in_len


def nominal_compression(kind: AdapterKind, cfg: AdapterConfig, in_rate_hz: float) -> float | None:
    """Structural ratio of fixed-rate kinds (stride/window law); ``None`` if content-based."""
    if kind is AdapterKind.BASE:
        return 1.0
    if kind is AdapterKind.CONV:
        return float(cfg.conv_stride**cfg.n_convs)
    if kind is AdapterKind.WLQ:
        return window_length(in_rate_hz, cfg.wlq.window_seconds) / cfg.wlq.n_queries
    return None
