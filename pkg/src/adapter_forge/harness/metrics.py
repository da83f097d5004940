"""Corpus WER and BLEU, plus per-sentence sufficient statistics for resampling."""
from __future__ import annotations

import math
import warnings
from collections import Counter
from typing import Sequence

import numpy as np

from ..errors import ConfigError

MAX_ORDER = 4


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> int:
    """Levenshtein distance with unit-cost substitution, insertion and deletion."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer_stats(refs: Sequence[str], hyps: Sequence[str]) -> np.ndarray:
    """Rows of ``(word errors, reference words)`` per sentence."""
    if len(refs) != len(hyps):
        raise ConfigError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    return np.array([[edit_distance(r.split(), h.split()), len(r.split())] for r, h in zip(refs, hyps)],
                    dtype=np.float64).reshape(-1, 2)


def wer_from_stats(stats: np.ndarray) -> np.ndarray | float:
    errors, words = stats[..., 0], stats[..., 1]
    return errors / words


def wer(refs: Sequence[str], hyps: Sequence[str]) -> float:
    stats = wer_stats(refs, hyps)
    total = stats.sum(axis=0)
    if total[1] == 0:
        raise ConfigError("reference corpus has no words")
    return float(total[0] / total[1])


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def bleu_stats(refs: Sequence[str], hyps: Sequence[str]) -> np.ndarray:
    """Rows of clipped matches (n=1..4), candidate n-gram totals, hyp length, ref length."""
    if len(refs) != len(hyps):
        raise ConfigError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    rows = []
    for r, h in zip(refs, hyps):
        rw, hw = r.split(), h.split()
        match, total = [], []
        for n in range(1, MAX_ORDER + 1):
            hc, rc = _ngrams(hw, n), _ngrams(rw, n)
            match.append(sum(min(c, rc[g]) for g, c in hc.items()))
            total.append(max(len(hw) - n + 1, 0))
        rows.append(match + total + [len(hw), len(rw)])
    return np.array(rows, dtype=np.float64).reshape(-1, 2 * MAX_ORDER + 2)


def bleu_from_stats(stats: np.ndarray) -> np.ndarray | float:
    """Corpus BLEU (0-100) from summed statistics; works on stacked resamples."""
    match = stats[..., :MAX_ORDER]
    total = stats[..., MAX_ORDER : 2 * MAX_ORDER]
    hyp_len, ref_len = stats[..., -2], stats[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_prec = np.where(match > 0, np.log(match) - np.log(np.where(total > 0, total, 1)), -np.inf)
        geo = np.exp(log_prec.mean(axis=-1))
        bp = np.where(hyp_len > ref_len, 1.0, np.exp(1.0 - ref_len / np.where(hyp_len > 0, hyp_len, 1)))
    score = np.where(hyp_len > 0, 100.0 * bp * geo, 0.0)
    return score


def bleu(refs: Sequence[str], hyps: Sequence[str]) -> float:
    if not refs:
        raise ConfigError("BLEU needs a non-empty corpus")
    stats = bleu_stats(refs, hyps).sum(axis=0)
    if stats[-2] == 0:
        warnings.warn("hypothesis corpus is empty; BLEU is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(bleu_from_stats(stats))


def tokens_per_second(texts: Sequence[str], durations: Sequence[float]) -> float:
    words = sum(len(t.split()) for t in texts)
    seconds = float(sum(durations))
    return words / seconds if seconds > 0 else math.nan
