"""Synthetic paired frame/text corpora and the FSEQ feature-file format.

Each token of a sentence is rendered as a run of noisy copies of its
prototype vector; the run length is a shifted Poisson draw so durations
vary. Sentences follow a sparse Markov grammar, which gives the toy LM
something to learn. Translations map every word into a disjoint target
vocabulary and reverse the word order.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError
from .toystack import PromptSpec, Tokenizer, source_word, target_word

FSEQ_MAGIC = b"FSEQ1"
FSEQ_HEADER = struct.Struct("<5sIIf")
MANIFEST_NAME = "manifest.tsv"
# seconds of audio per token; 50 Hz -> 16 frames, 6.25 Hz -> 2 frames
TOKEN_SECONDS = 0.32


@dataclass(frozen=True)
class SynthSpec:
    vocab_size: int = 16
    sentence_len_range: tuple[int, int] = (2, 5)
    frames_per_token_mean: float | None = None
    noise_std: float = 0.25
    seed: int = 0
    feat_dim: int = 32
    successors: int = 3
    duration_jitter: bool = True
    source_lang: str = "en"
    target_lang: str = "de"

    def __post_init__(self):
        lo, hi = self.sentence_len_range
        if lo < 1 or hi < lo:
            raise ConfigError("sentence_len_range must satisfy 1 <= min <= max")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.frames_per_token_mean is not None and self.frames_per_token_mean < 1:
            raise ConfigError("frames_per_token_mean must be >= 1")

    def frames_per_token(self, rate_hz: float) -> float:
        if self.frames_per_token_mean is not None:
            return self.frames_per_token_mean
        return max(1.0, rate_hz * TOKEN_SECONDS)

    def tokenizer(self) -> Tokenizer:
        return Tokenizer.for_synthetic(self.vocab_size)


def prototypes(spec: SynthSpec) -> np.ndarray:
    """Unit-norm prototype vector per source word."""
    rng = np.random.default_rng([spec.seed, 0xF00D])
    p = rng.standard_normal((spec.vocab_size, spec.feat_dim))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def grammar(spec: SynthSpec) -> np.ndarray:
    """Allowed successors of each word; a word never follows itself."""
    rng = np.random.default_rng([spec.seed, 0x6A11])
    k = min(spec.successors, spec.vocab_size - 1)
    table = np.empty((spec.vocab_size, k), dtype=np.int64)
    for w in range(spec.vocab_size):
        others = np.array([v for v in range(spec.vocab_size) if v != w])
        table[w] = rng.choice(others, size=k, replace=False)
    return table


def sample_sentence(spec: SynthSpec, rng: np.random.Generator, table: np.ndarray | None = None) -> list[int]:
    table = grammar(spec) if table is None else table
    lo, hi = spec.sentence_len_range
    n = int(rng.integers(lo, hi + 1))
    words = [int(rng.integers(spec.vocab_size))]
    while len(words) < n:
        words.append(int(rng.choice(table[words[-1]])))
    return words


def transcript_text(words: Sequence[int]) -> str:
    return " ".join(source_word(w) for w in words)


def translate_text(transcript: str) -> str:
    """Word-by-word mapping into the target vocabulary, order reversed."""
    words = transcript.split()
    return " ".join(target_word(int(w[1:])) for w in reversed(words))


def synth_sample(spec: SynthSpec, rate_hz: float, index: int) -> tuple[np.ndarray, str, str]:
    rng = np.random.default_rng([spec.seed, int(index)])
    words = sample_sentence(spec, rng)
    protos = prototypes(spec)
    mean = spec.frames_per_token(rate_hz)
    frames = []
    for w in words:
        n = 1 + int(rng.poisson(mean - 1)) if spec.duration_jitter else max(1, round(mean))
        block = np.repeat(protos[w][None], n, axis=0)
        if spec.noise_std > 0:
            block = block + spec.noise_std * rng.standard_normal(block.shape)
        frames.append(block)
    text = transcript_text(words)
    return np.concatenate(frames).astype(np.float32), text, translate_text(text)


# --- FSEQ files -----------------------------------------------------------


def write_fseq(path, features: np.ndarray, frame_rate_hz: float) -> None:
    arr = np.asarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ConfigError("FSEQ holds a (n_frames, dim) matrix")
    if arr.shape[0] == 0:
        raise ConfigError("refusing to write a zero-frame feature file")
    if not np.isfinite(arr).all():
        raise ConfigError("features contain non-finite values")
    header = FSEQ_HEADER.pack(FSEQ_MAGIC, arr.shape[0], arr.shape[1], frame_rate_hz)
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def read_fseq(path) -> tuple[np.ndarray, float]:
    """Return ``(features, frame_rate_hz)``."""
    buf = Path(path).read_bytes()
    if len(buf) < FSEQ_HEADER.size:
        raise FormatError("truncated FSEQ header", len(buf))
    magic, n_frames, dim, rate = FSEQ_HEADER.unpack_from(buf)
    if magic != FSEQ_MAGIC:
        raise FormatError("bad FSEQ magic", 0)
    if n_frames == 0:
        raise FormatError("FSEQ file has zero frames", 5)
    need = FSEQ_HEADER.size + 4 * n_frames * dim
    if len(buf) < need:
        raise FormatError(f"truncated FSEQ payload, expected {need} bytes", len(buf))
    if len(buf) > need:
        raise FormatError("trailing bytes after FSEQ payload", need)
    data = np.frombuffer(buf, dtype="<f4", count=n_frames * dim, offset=FSEQ_HEADER.size)
    return data.reshape(n_frames, dim).astype(np.float32), float(rate)


# --- manifests ------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    path: Path
    transcript: str
    translation: str
    source_lang: str
    target_lang: str
    duration_seconds: float
    split: str = "train"


@dataclass
class Manifest:
    records: list[ManifestRecord]
    root: Path

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def __len__(self) -> int:
        return len(self.records)


def hash_split(n_items: int, fractions=(0.9, 0.05, 0.05)) -> list[str]:
    """Train/dev/test labels from a hash ranking of item indices."""
    order = sorted(range(n_items), key=lambda i: hashlib.sha1(str(i).encode()).hexdigest())
    n_train = math.floor(fractions[0] * n_items)
    n_dev = math.floor(fractions[1] * n_items)
    labels = [""] * n_items
    for rank, i in enumerate(order):
        labels[i] = "train" if rank < n_train else "dev" if rank < n_train + n_dev else "test"
    return labels


def write_manifest(path, records: Sequence[ManifestRecord], comment: str | None = None) -> None:
    path = Path(path)
    lines = [f"# {comment}"] if comment else []
    lines.append("# path\ttranscript\ttranslation\tsource_lang\ttarget_lang\tduration_seconds\tsplit")
    base = path.parent.resolve()
    for r in records:
        # feature paths are stored relative to the manifest when they live under it
        full = Path(r.path).resolve()
        rel = full.relative_to(base) if full.is_relative_to(base) else full
        lines.append("\t".join([str(rel), r.transcript, r.translation, r.source_lang, r.target_lang,
                                f"{r.duration_seconds:.6f}", r.split]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> Manifest:
    """Parse a manifest; relative feature paths resolve against its directory.

    A six-column manifest (no split column) gets hash-derived splits.
    """
    path = Path(path)
    root = path.parent
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (6, 7):
            raise ConfigError(f"{path}:{lineno}: expected 6 or 7 tab-separated columns, got {len(cols)}")
        rows.append(cols)
    splits = hash_split(len(rows))
    records = []
    for i, cols in enumerate(rows):
        feat = Path(cols[0])
        feat = feat if feat.is_absolute() else root / feat
        if not feat.exists():
            raise ConfigError(f"manifest entry {i} points at missing file {feat}")
        duration = float(cols[5])
        if not duration > 0:
            raise ConfigError(f"manifest entry {i} has non-positive duration")
        split = cols[6] if len(cols) == 7 else splits[i]
        records.append(ManifestRecord(feat, cols[1], cols[2], cols[3], cols[4], duration, split))
    return Manifest(records, root)


def build_dataset(spec: SynthSpec, n_items: int, rate_hz: float, out_dir, overwrite: bool = False) -> Manifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists() and not overwrite:
        raise ConfigError(f"{manifest_path} already exists (pass overwrite=True to replace it)")
    feat_dir = out_dir / "feats"
    feat_dir.mkdir(exist_ok=True)
    splits = hash_split(n_items)
    records = []
    for i in range(n_items):
        feats, text, translation = synth_sample(spec, rate_hz, i)
        fpath = feat_dir / f"utt{i:06d}.fseq"
        write_fseq(fpath, feats, rate_hz)
        records.append(ManifestRecord(fpath, text, translation, spec.source_lang, spec.target_lang,
                                      feats.shape[0] / rate_hz, splits[i]))
    write_manifest(manifest_path, records, comment=f"synthetic corpus seed={spec.seed} rate_hz={rate_hz}")
    return read_manifest(manifest_path)


# --- LM pretraining text --------------------------------------------------


def lm_corpus(spec: SynthSpec, n: int, seed: int, audio_position: str = "before_prompt",
              tasks: Sequence[str] = ("ASR", "ST"), max_repeat: float = 1.0) -> list[list[int]]:
    """Token sequences in the joined layout with the source text standing in for audio.

    ``[BOS, prompt, source words, response, EOS]`` (source before the prompt
    for ``audio_position="before_prompt"``); the response is the transcript
    for ASR and the translation for ST.

    With ``max_repeat > 1`` each source word is repeated like a run of
    frames, ``1 + Poisson(m - 1)`` times with ``m`` drawn per sequence from
    ``[1, max_repeat]``, so the LM already reads variable-rate inputs spread
    over the positions an uncompressed audio slot occupies.
    """
    tok = spec.tokenizer()
    rng = np.random.default_rng([seed, 0xC0FF])
    table = grammar(spec)
    prompts = {
        "ASR": tok.encode(PromptSpec("ASR", spec.source_lang).text()),
        "ST": tok.encode(PromptSpec("ST", spec.source_lang, spec.target_lang).text()),
    }
    out = []
    for _ in range(n):
        task = tasks[int(rng.integers(len(tasks)))]
        text = transcript_text(sample_sentence(spec, rng, table))
        src = tok.encode(text)
        resp = src if task == "ASR" else tok.encode(translate_text(text))
        slot = src
        if max_repeat > 1:
            m = rng.uniform(1.0, max_repeat)
            slot = [t for t in src for _ in range(1 + int(rng.poisson(m - 1.0)))]
        body = prompts[task] + slot if audio_position == "after_prompt" else slot + prompts[task]
        out.append([tok.bos_id, *body, *resp, tok.eos_id])
    return out
