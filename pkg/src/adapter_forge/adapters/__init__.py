"""Length and modality adapters between a speech encoder and an LM."""
from .cif import cif_integrate_fire, cif_weights
from .config import ALL_KINDS, AdapterConfig, AdapterKind, AdapterOutput, CifConfig, WlqConfig
from .ctc_compress import ctc_collapse, label_runs
from .model import Adapter, adapter_forward, build_adapter, output_length_law
from .stats import compression_stats, nominal_compression
from .wlq import WlqFormer, window_length, wlq_forward

__all__ = [
    "ALL_KINDS", "Adapter", "AdapterConfig", "AdapterKind", "AdapterOutput", "CifConfig", "WlqConfig",
    "WlqFormer", "adapter_forward", "build_adapter", "cif_integrate_fire", "cif_weights",
    "compression_stats", "ctc_collapse", "label_runs", "nominal_compression", "output_length_law",
    "window_length", "wlq_forward",
]
