"""The five adapters behind one construction and forward interface."""
from __future__ import annotations

from dataclasses import replace as dc_replace
from typing import Sequence

import torch
import torch.nn.functional as F

from ..errors import ConfigError, ShapeError
from ..numkernel import (
    UNINITIALISED,
    Conv1d,
    EncoderStack,
    Linear,
    ParamStore,
    build_encoder_stack,
    make_generator,
    sinusoidal_positions,
)
from ..sequence import FeatureSequence
from .cif import cif_integrate_fire, cif_weights
from .config import AdapterConfig, AdapterKind, AdapterOutput
from .ctc_compress import ctc_collapse
from .wlq import WlqFormer


class Adapter:
    """Frames from the speech encoder in, LM-space vectors out.

    Parameters live in the shared ``store`` under ``name``:
    ``in_proj``, ``core`` (the modality adapter), ``length`` (the length
    adapter, if any) and ``out_proj``. The WLQ-Former keeps everything
    under ``wlq`` because it does both jobs in one block.
    """

    def __init__(self, kind: AdapterKind, in_dim: int, lm_dim: int, store: ParamStore,
                 cfg: AdapterConfig, name: str, seed: int | None):
        if min(in_dim, lm_dim) < 1:
            raise ConfigError("adapter dims must be >= 1")
        self.kind, self.in_dim, self.lm_dim, self.cfg, self.name = kind, in_dim, lm_dim, cfg, name
        self.store = store
        gen = UNINITIALISED if seed is None else make_generator(seed)
        hid = cfg.core.hidden
        self.core: EncoderStack | None = None
        self.convs: list[Conv1d] = []
        self.alpha_head = self.ctc_head = None
        if kind is AdapterKind.WLQ:
            self.in_proj = Linear(store, f"{name}.wlq.in_proj", in_dim, hid, gen)
            self.wlq = WlqFormer(store, f"{name}.wlq", cfg.wlq, cfg.core, gen)
            self.out_proj = Linear(store, f"{name}.wlq.out_proj", hid, lm_dim, gen)
            return
        self.in_proj = Linear(store, f"{name}.in_proj", in_dim, hid, gen)
        self.core = build_encoder_stack(cfg.core, store, f"{name}.core", gen)
        if kind is AdapterKind.CONV:
            self.convs = [
                Conv1d(store, f"{name}.length.conv{i}", hid, hid, cfg.conv_kernel, cfg.conv_stride, gen)
                for i in range(cfg.n_convs)
            ]
        if kind is AdapterKind.CIF:
            self.alpha_head = Linear(store, f"{name}.length.alpha", hid, 1, gen)
        if kind.has_ctc_head:
            self.ctc_head = Linear(store, f"{name}.length.ctc_head", hid, cfg.ctc_labels + 1, gen)
        self.out_proj = Linear(store, f"{name}.out_proj", hid, lm_dim, gen)

    @property
    def prefix(self) -> str:
        return self.name

    def param_breakdown(self) -> dict[str, int]:
        """Parameter counts split the way adapter tables report them."""
        s, n = self.store, self.name
        if self.kind is AdapterKind.WLQ:
            total = s.count(f"{n}.wlq")
            return {"length": 0, "modality": 0, "projections": 0, "wlq": total, "total": total}
        proj = s.count(f"{n}.in_proj") + s.count(f"{n}.out_proj")
        out = {"length": s.count(f"{n}.length"), "modality": s.count(f"{n}.core"), "projections": proj}
        out["total"] = sum(out.values())
        return out

    def _embed(self, x: FeatureSequence) -> FeatureSequence:
        if x.dim != self.in_dim:
            raise ShapeError(f"adapter expects dim {self.in_dim}, got {x.dim}")
        h = self.in_proj(x.data)
        if self.cfg.positional:
            h = h + sinusoidal_positions(x.max_len, h.shape[-1], h.dtype)[None]
        return x.replace(h)

    def forward(self, x: FeatureSequence, transcripts: Sequence[Sequence[int]] | None = None,
                training: bool = False) -> AdapterOutput:
        kind = self.kind
        if training and kind.content_based and transcripts is None:
            raise ConfigError(f"{kind.value} adapter needs transcripts in training mode")
        h = self._embed(x)
        if kind is AdapterKind.WLQ:
            y = self.wlq(h)
            return AdapterOutput(y.replace(self.out_proj(y.data)), y.lengths)

        split = self.cfg.split_layer
        h = h.replace(self.core.run(h.data, h.mask(), 0, split))
        ctc_logprobs = ctc_lengths = alpha = None
        if self.ctc_head is not None:
            ctc_logprobs = F.log_softmax(self.ctc_head(h.data), dim=-1)
            ctc_lengths = h.lengths.clone()
        if kind is AdapterKind.CONV:
            for i, conv in enumerate(self.convs):
                h = conv(h)
                if i + 1 < len(self.convs):
                    h = h.replace(F.gelu(h.data))
        elif kind is AdapterKind.CIF:
            alpha = cif_weights(h, self.alpha_head)
            scale = training and self.cfg.cif.scale_to_target
            cfg = dc_replace(self.cfg.cif, scale_to_target=scale)
            target = [len(t) for t in transcripts] if scale else None
            h, _ = cif_integrate_fire(h, alpha, cfg, target)
        elif kind is AdapterKind.CTC:
            h = ctc_collapse(h, ctc_logprobs)
        h = h.replace(self.core.run(h.data, h.mask(), split, None))
        out = h.replace(self.out_proj(h.data))
        return AdapterOutput(out, out.lengths, ctc_logprobs, ctc_lengths, alpha)

    __call__ = forward


def build_adapter(kind, in_dim: int, lm_dim: int, store: ParamStore, cfg: AdapterConfig | None = None,
                  name: str = "adapter", seed: int | None = 0) -> Adapter:
    """``seed=None`` allocates parameters without initialising them (counting only)."""
    return Adapter(AdapterKind.parse(kind), in_dim, lm_dim, store, cfg or AdapterConfig(), name, seed)


def adapter_forward(adapter: Adapter, x: FeatureSequence, transcripts=None, training: bool = False) -> AdapterOutput:
    return adapter.forward(x, transcripts, training)


def output_length_law(kind: AdapterKind, cfg: AdapterConfig, in_len: int, frame_rate_hz: float) -> int | None:
    """Output length implied by a fixed-rate kind, ``None`` for content-based ones."""
    from .wlq import window_length

    if kind is AdapterKind.BASE:
        return in_len
    if kind is AdapterKind.CONV:
        n = in_len
        for _ in range(cfg.n_convs):
            n = -(-n // cfg.conv_stride)
        return n
    if kind is AdapterKind.WLQ:
        w = window_length(frame_rate_hz, cfg.wlq.window_seconds)
        return -(-in_len // w) * cfg.wlq.n_queries
    return None
