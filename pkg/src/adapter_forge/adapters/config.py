"""Adapter kinds, per-kind settings and the forward-pass result type."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import torch

from ..errors import ConfigError
from ..numkernel import FULL_STACK, EncoderStackConfig
from ..sequence import FeatureSequence


class AdapterKind(enum.Enum):
    BASE = "base"
    CONV = "convbased"
    CIF = "cifbased"
    CTC = "ctcbased"
    WLQ = "wlqformer"

    @classmethod
    def parse(cls, text: "str | AdapterKind") -> "AdapterKind":
        if isinstance(text, AdapterKind):
            return text
        key = text.strip().lower().replace("-", "").replace("_", "")
        aliases = {"conv": cls.CONV, "cif": cls.CIF, "ctc": cls.CTC, "wlq": cls.WLQ}
        if key in aliases:
            return aliases[key]
        for kind in cls:
            if kind.value == key:
                return kind
        raise ConfigError(f"unknown adapter kind {text!r}")

    @property
    def content_based(self) -> bool:
        return self in (AdapterKind.CIF, AdapterKind.CTC)

    @property
    def has_ctc_head(self) -> bool:
        return self.content_based


ALL_KINDS = list(AdapterKind)


@dataclass(frozen=True)
class CifConfig:
    beta: float = 1.0
    scale_to_target: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError("CIF threshold beta must be positive")


@dataclass(frozen=True)
class WlqConfig:
    window_seconds: float = 0.33
    n_queries: int = 1
    n_layers: int = 2

    def __post_init__(self):
        if not self.window_seconds > 0:
            raise ConfigError("window_seconds must be positive")
        if self.n_queries < 1 or self.n_layers < 1:
            raise ConfigError("n_queries and n_layers must be >= 1")


@dataclass(frozen=True)
class AdapterConfig:
    """Shape of an adapter; the defaults are the full-size modality core."""

    core: EncoderStackConfig = FULL_STACK
    split_layer: int = 2
    conv_kernel: int = 3
    conv_stride: int = 2
    n_convs: int = 2
    cif: CifConfig = field(default_factory=CifConfig)
    wlq: WlqConfig = field(default_factory=WlqConfig)
    ctc_labels: int = 32
    positional: bool = True

    def __post_init__(self):
        if not 0 <= self.split_layer <= self.core.n_layers:
            raise ConfigError("split_layer must lie within the modality core")
        if self.ctc_labels < 1:
            raise ConfigError("the CTC head needs at least one label")


@dataclass
class AdapterOutput:
    features: FeatureSequence
    out_lengths: torch.Tensor
    ctc_logprobs: torch.Tensor | None = None
    ctc_lengths: torch.Tensor | None = None
    alpha: torch.Tensor | None = None
