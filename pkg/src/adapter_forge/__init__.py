"""Adapters that plug a frozen speech encoder into a frozen decoder-only LM.

Subpackages: :mod:`numkernel` (parameters, transformer kernels, AdamW),
:mod:`adapters`, :mod:`losses`, :mod:`toystack` (toy encoder and LM),
:mod:`datasynth` (synthetic corpora and feature files) and :mod:`harness`
(training, metrics, grids, reports).
"""
from . import adapters, datasynth, harness, losses, numkernel, toystack
from .errors import AdapterForgeError

__version__ = "0.1.0"

__all__ = ["AdapterForgeError", "adapters", "datasynth", "harness", "losses", "numkernel", "toystack"]
