"""Pretrain and save the frozen toy LM a run plugs its adapter into."""
from __future__ import annotations

import logging
import time
from pathlib import Path

from ..datasynth import SynthSpec, lm_corpus
from ..toystack import SFM_PRESETS, PretrainReport, ToyLMConfig, pretrain_toy_lm, save_toy_lm

log = logging.getLogger(__name__)

# smaller than ToyLMConfig() so a whole adapter grid trains in minutes on one core
DESK_LM = ToyLMConfig(n_layers=2, n_heads=4, dim=64, intermediate=256, max_len=512)


def prepare_lm(path, synth: SynthSpec | None = None, steps: int = 4000, seed: int = 0,
               cfg: ToyLMConfig = DESK_LM, audio_position: str = "before_prompt",
               corpus_size: int = 20000, max_repeat: float | None = None) -> PretrainReport:
    """Pretrain on the copy/translate corpus and write ``path`` plus its sidecar.

    ``max_repeat`` defaults to the frames-per-word of the fastest encoder
    preset, so the audio slot is covered at every length a run will feed it.
    """
    synth = synth or SynthSpec()
    if max_repeat is None:
        max_repeat = max(synth.frames_per_token(rate) for rate in SFM_PRESETS.values())
    t0 = time.time()
    corpus = lm_corpus(synth, corpus_size, seed + 1, audio_position, max_repeat=max_repeat)
    heldout = lm_corpus(synth, 500, seed + 2, audio_position, max_repeat=max_repeat)
    lm, report = pretrain_toy_lm(corpus, steps, seed, synth.tokenizer(), cfg, heldout)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_toy_lm(lm, path, {"audio_position": audio_position, "untrained_ppl": report.untrained_ppl,
                           "trained_ppl": report.trained_ppl, "steps": steps, "seed": seed,
                           "max_repeat": max_repeat})
    log.info("LM ppl %.2f -> %.2f in %.1fs", report.untrained_ppl, report.trained_ppl, time.time() - t0)
    return report
