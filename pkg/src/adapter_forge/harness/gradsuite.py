"""Finite-difference check of the complete adapter training objective.

A miniature system (tiny encoder, tiny randomly initialised LM, tiny
adapter) is built in float64 and the composite loss of one random batch is
differentiated both ways.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..adapters import AdapterKind
from ..numkernel import GradReport, ParamStore, grad_check
from ..sequence import FeatureSequence
from ..toystack import SFM_PRESETS, Tokenizer, ToyLM, ToyLMConfig, build_sfm, sfm_encode
from .config import RunConfig
from .train import AdapterSystem, Example

TINY_LM = ToyLMConfig(n_layers=1, n_heads=2, dim=8, intermediate=16, max_len=64)


@dataclass
class TinyCase:
    system: AdapterSystem
    batch: list[Example]


def tiny_case(kind: str | AdapterKind, seed: int, preset: str = "seamless-like", batch: int = 2,
              in_dim: int = 6, vocab_size: int = 4, init_scale: float = 0.4) -> TinyCase:
    """A random float64 system plus one batch, all derived from ``seed``."""
    kind = AdapterKind.parse(kind)
    rng = np.random.default_rng([seed, 0x6AD])
    cfg = RunConfig(adapter_kind=kind.value, sfm_preset=preset, seed=seed, adapter_layers=2,
                    adapter_hidden=8, adapter_intermediate=16, adapter_heads=2, wlq_layers=1)
    store = ParamStore(torch.float64)
    tok = Tokenizer.for_synthetic(vocab_size)
    lm = ToyLM(tok, TINY_LM, store=store, seed=seed + 1)
    lm.freeze()
    sfm = build_sfm(preset, in_dim, seed=seed, store=store)
    system = AdapterSystem(cfg, in_dim, lm=lm, sfm=sfm, store=store)
    # at the 0.02 init attention is nearly uniform and some gradients sit
    # below finite-difference noise; a wider draw keeps every entry well-conditioned
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, entry in store.items(system.adapter.prefix, trainable_only=True):
            entry.values.add_(torch.randn(entry.values.shape, generator=gen, dtype=torch.float64) * init_scale)
    rate = SFM_PRESETS[preset]
    # CTC needs enough frames for every label plus separating blanks
    per_word = max(3, int(round(rate * 0.16)))
    examples = []
    for _ in range(batch):
        n_words = int(rng.integers(1, 4))
        words = rng.integers(0, vocab_size, size=n_words)
        n_frames = int(n_words * per_word + rng.integers(0, per_word))
        raw = torch.as_tensor(rng.standard_normal((n_frames, in_dim)), dtype=torch.float64)
        feats = sfm_encode(sfm, FeatureSequence.from_list([raw], rate, torch.float64)).item(0)
        text = " ".join(f"w{w}" for w in words)
        resp = tok.encode(text) + [tok.eos_id]
        examples.append(Example(feats, system.ctc_labels(text), resp, text, text, n_frames / rate))
    return TinyCase(system, examples)


def check_training_gradients(kind: str | AdapterKind, seed: int, eps: float = 1e-4,
                             preset: str = "seamless-like", max_coords: int | None = 8) -> GradReport:
    """Max relative error between autograd and central differences for ``kind``."""
    case = tiny_case(kind, seed, preset)
    return grad_check(lambda: case.system.batch_loss(case.batch).total, case.system.store, eps=eps,
                      max_coords_per_entry=max_coords, seed=seed)
