"""Paired bootstrap resampling over sentences."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError
from .metrics import bleu_from_stats, bleu_stats, wer_from_stats, wer_stats

SIGNIFICANCE_LEVEL = 0.05


@dataclass(frozen=True)
class Metric:
    name: str
    stats: Callable[[Sequence[str], Sequence[str]], np.ndarray]
    score: Callable[[np.ndarray], np.ndarray]
    higher_is_better: bool


METRICS = {
    "wer": Metric("wer", wer_stats, wer_from_stats, higher_is_better=False),
    "bleu": Metric("bleu", bleu_stats, bleu_from_stats, higher_is_better=True),
}


def bootstrap_significance(refs: Sequence[str], hyps_a: Sequence[str], hyps_b: Sequence[str],
                           metric: str | Metric = "wer", n_resamples: int = 1000, seed: int = 0) -> float:
    """p-value that the corpus-level winner does not actually win.

    Sentence indices are resampled with replacement (the same indices for
    both systems); p is the fraction of resamples in which the system that
    wins on the full corpus fails to score strictly better. Identical
    full-corpus scores give p = 1.
    """
    if n_resamples < 100:
        raise ConfigError("use at least 100 bootstrap resamples")
    if not (len(refs) == len(hyps_a) == len(hyps_b)) or not refs:
        raise ConfigError("bootstrap needs aligned, non-empty corpora")
    m = METRICS[metric] if isinstance(metric, str) else metric
    sa, sb = m.stats(refs, hyps_a), m.stats(refs, hyps_b)
    score_a, score_b = float(m.score(sa.sum(0))), float(m.score(sb.sum(0)))
    if score_a == score_b:
        return 1.0
    a_wins = (score_a > score_b) == m.higher_is_better
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(refs), size=(n_resamples, len(refs)))
    ra, rb = m.score(sa[idx].sum(axis=1)), m.score(sb[idx].sum(axis=1))
    diff = ra - rb if m.higher_is_better else rb - ra
    winner_better = diff > 0 if a_wins else diff < 0
    return float(1.0 - winner_better.mean())


def significant(p_value: float, level: float = SIGNIFICANCE_LEVEL) -> bool:
    return p_value < level
