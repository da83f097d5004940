"""Window-level Q-Former: learnable queries cross-attending to fixed windows."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from ..numkernel import EncoderStackConfig, LayerNorm, Linear
from ..numkernel.layers import FeedForward, MultiHeadAttention, trunc_normal
from ..sequence import FeatureSequence
from .config import WlqConfig


def window_length(frame_rate_hz: float, window_seconds: float) -> int:
    return max(1, math.floor(frame_rate_hz * window_seconds + 1e-9))


class QFormerLayer:
    def __init__(self, store, name, cfg: EncoderStackConfig, gen):
        self.ln_self = LayerNorm(store, f"{name}.ln_self", cfg.hidden)
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", cfg.hidden, cfg.n_heads, gen)
        self.ln_cross = LayerNorm(store, f"{name}.ln_cross", cfg.hidden)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross_attn", cfg.hidden, cfg.n_heads, gen)
        self.ln_ffn = LayerNorm(store, f"{name}.ln_ffn", cfg.hidden)
        self.ffn = FeedForward(store, f"{name}.ffn", cfg.hidden, cfg.intermediate, gen)

    def __call__(self, q, window, window_mask):
        q = q + self.self_attn(self.ln_self(q))
        q = q + self.cross_attn(self.ln_cross(q), context=window, key_mask=window_mask)
        return q + self.ffn(self.ln_ffn(q))


class WlqFormer:
    """Query transformer applied independently to each window of frames."""

    def __init__(self, store, name, cfg: WlqConfig, stack: EncoderStackConfig, gen):
        self.cfg = cfg
        self.queries = store.register(f"{name}.queries", trunc_normal((cfg.n_queries, stack.hidden), gen))
        self.layers = [QFormerLayer(store, f"{name}.layer{i}", stack, gen) for i in range(cfg.n_layers)]

    def __call__(self, x: FeatureSequence) -> FeatureSequence:
        return wlq_forward(self.cfg, x, self)


def wlq_forward(cfg: WlqConfig, x: FeatureSequence, params: WlqFormer) -> FeatureSequence:
    """Summarise every non-overlapping window by ``n_queries`` vectors.

    The last window of an item may be short; its missing frames are masked.
    """
    w = window_length(x.frame_rate_hz, cfg.window_seconds)
    b, t, d = x.data.shape
    n_win = -(-t // w)
    data = F.pad(x.data, (0, 0, 0, n_win * w - t))
    windows = data.reshape(b * n_win, w, d)
    frame_ok = torch.arange(n_win * w)[None, :] < x.lengths[:, None]
    win_mask = frame_ok.reshape(b * n_win, w)
    q = params.queries[None].expand(b * n_win, -1, -1)
    for layer in params.layers:
        q = layer(q, windows, win_mask)
    out = q.reshape(b, n_win * cfg.n_queries, d)
    lengths = torch.div(x.lengths + w - 1, w, rounding_mode="floor") * cfg.n_queries
    return x.replace(out, lengths, x.frame_rate_hz * cfg.n_queries / w)
