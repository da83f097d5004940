"""Frozen stand-ins for the speech encoder and the LM, and their composition.

Generation follows ``y = LM(J(prompt, adapter(encoder(audio))))`` where ``J``
concatenates the BOS embedding, the prompt embeddings, the adapted audio
vectors and (under teacher forcing) the response embeddings.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, NonFiniteError, ShapeError
from .numkernel import (
    AdamWState,
    EncoderStackConfig,
    LayerNorm,
    ParamStore,
    ScheduleConfig,
    adamw_step,
    load_checkpoint,
    lr_at_step,
    make_generator,
)
from .numkernel.layers import EncoderLayer, attention_bias, trunc_normal
from .sequence import FeatureSequence, lengths_to_mask

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
LANGUAGES = ("en", "de", "es", "fr", "it")
PROMPT_WORDS = ("can", "you", "transcribe", "translate", "from", "to")
SFM_PRESETS = {"whisper-like": 50.0, "seamless-like": 6.25}
AUDIO_POSITIONS = ("after_prompt", "before_prompt")


def source_word(i: int) -> str:
    return f"w{i}"


def target_word(i: int) -> str:
    return f"W{i}'"


class Tokenizer:
    """Whitespace word-level tokenizer over a closed vocabulary."""

    def __init__(self, words: Sequence[str]):
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ConfigError("duplicate vocabulary entries")
        for special in (PAD, BOS, EOS):
            if special not in self.index:
                raise ConfigError(f"vocabulary lacks {special}")

    @classmethod
    def for_synthetic(cls, vocab_size: int, languages: Sequence[str] = LANGUAGES) -> "Tokenizer":
        words = [PAD, BOS, EOS, *PROMPT_WORDS]
        for lang in languages:
            words += [lang, f"{lang}?"]
        words += [source_word(i) for i in range(vocab_size)]
        words += [target_word(i) for i in range(vocab_size)]
        return cls(words)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    def encode(self, text: str) -> list[int]:
        try:
            return [self.index[w] for w in text.split()]
        except KeyError as exc:
            raise ConfigError(f"token {exc.args[0]!r} is not in the toy vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        specials = {self.pad_id, self.bos_id, self.eos_id}
        return " ".join(self.words[i] for i in ids if i not in specials)


# --- speech encoder ---------------------------------------------------------


@dataclass
class ToySFM:
    """Fixed orthogonal per-frame mixing at a preset frame rate."""

    frame_rate_hz: float
    in_dim: int
    out_dim: int
    seed: int
    store: ParamStore
    name: str = "sfm"

    @property
    def mixing(self) -> torch.Tensor:
        return self.store[f"{self.name}.mixing"]


def orthogonal_matrix(rows: int, cols: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((max(rows, cols), max(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q[:rows, :cols]


def build_sfm(preset: str | float, in_dim: int, out_dim: int | None = None, seed: int = 0,
              store: ParamStore | None = None, identity: bool = False, name: str = "sfm") -> ToySFM:
    if isinstance(preset, str):
        if preset not in SFM_PRESETS:
            raise ConfigError(f"unknown SFM preset {preset!r}; choose from {sorted(SFM_PRESETS)}")
        rate = SFM_PRESETS[preset]
    else:
        rate = float(preset)
    out_dim = in_dim if out_dim is None else out_dim
    if identity and out_dim != in_dim:
        raise ConfigError("identity mixing needs out_dim == in_dim")
    store = ParamStore() if store is None else store
    mix = np.eye(in_dim) if identity else orthogonal_matrix(out_dim, in_dim, seed)
    store.register(f"{name}.mixing", mix, frozen=True)
    return ToySFM(rate, in_dim, out_dim, seed, store, name)


def sfm_encode(sfm: ToySFM, raw: FeatureSequence) -> FeatureSequence:
    if not math.isclose(raw.frame_rate_hz, sfm.frame_rate_hz, rel_tol=1e-6):
        raise ConfigError(f"raw frames at {raw.frame_rate_hz} Hz, encoder expects {sfm.frame_rate_hz} Hz")
    if raw.dim != sfm.in_dim:
        raise ShapeError(f"encoder expects dim {sfm.in_dim}, got {raw.dim}")
    mix = sfm.mixing.to(raw.data.dtype)
    with torch.no_grad():
        return raw.replace(raw.data @ mix.T)


# --- language model ---------------------------------------------------------


@dataclass(frozen=True)
class ToyLMConfig:
    n_layers: int = 4
    n_heads: int = 4
    dim: int = 256
    intermediate: int | None = None
    max_len: int = 512

    @property
    def stack(self) -> EncoderStackConfig:
        return EncoderStackConfig(self.n_layers, self.dim, self.intermediate or 4 * self.dim, self.n_heads)


class ToyLM:
    """Decoder-only transformer with tied input/output embeddings."""

    def __init__(self, tokenizer: Tokenizer, cfg: ToyLMConfig = ToyLMConfig(), store: ParamStore | None = None,
                 seed: int = 0, name: str = "lm"):
        self.tokenizer, self.cfg, self.name = tokenizer, cfg, name
        self.store = ParamStore() if store is None else store
        gen = make_generator(seed)
        s = self.store
        self.tok_emb = s.register(f"{name}.tok_emb", trunc_normal((len(tokenizer), cfg.dim), gen))
        self.pos_emb = s.register(f"{name}.pos_emb", trunc_normal((cfg.max_len, cfg.dim), gen))
        self.layers = [EncoderLayer(s, f"{name}.layer{i}", cfg.stack, gen) for i in range(cfg.n_layers)]
        self.ln_out = LayerNorm(s, f"{name}.ln_out", cfg.dim)

    @property
    def dim(self) -> int:
        return self.cfg.dim

    @property
    def frozen(self) -> bool:
        return all(e.frozen for _, e in self.store.items(self.name))

    def freeze(self) -> "ToyLM":
        self.store.freeze(self.name)
        return self

    def embed(self, ids) -> torch.Tensor:
        ids = torch.as_tensor(ids, dtype=torch.long)
        return self.tok_emb[ids]

    def logits(self, emb: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        b, n, d = emb.shape
        if d != self.dim:
            raise ShapeError(f"LM expects dim {self.dim}, got {d}")
        if n > self.cfg.max_len:
            raise ShapeError(f"sequence of {n} exceeds LM context {self.cfg.max_len}")
        mask = lengths_to_mask(torch.as_tensor(lengths), n)
        bias = attention_bias(mask, n, n, True, emb.dtype)
        x = emb + self.pos_emb[:n].to(emb.dtype)
        for layer in self.layers:
            x = layer(x, bias=bias)
        return self.ln_out(x) @ self.tok_emb.T.to(x.dtype)

    def sequence_logits(self, batch: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Logits, padded ids and lengths for a list of token sequences."""
        lengths = torch.tensor([len(s) for s in batch])
        ids = torch.full((len(batch), int(lengths.max())), self.tokenizer.pad_id, dtype=torch.long)
        for i, s in enumerate(batch):
            ids[i, : len(s)] = torch.as_tensor(s)
        return self.logits(self.embed(ids), lengths), ids, lengths


def _next_token_nll(lm: ToyLM, batch: Sequence[Sequence[int]]) -> tuple[torch.Tensor, int]:
    logits, ids, lengths = lm.sequence_logits(batch)
    mask = lengths_to_mask(lengths - 1, ids.shape[1] - 1)
    logp = F.log_softmax(logits[:, :-1], dim=-1).gather(-1, ids[:, 1:, None])[..., 0]
    return -(logp * mask).sum(), int(mask.sum())


def perplexity(lm: ToyLM, corpus: Sequence[Sequence[int]], batch_size: int = 64) -> float:
    total, count = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(corpus), batch_size):
            nll, n = _next_token_nll(lm, corpus[i : i + batch_size])
            total += float(nll)
            count += n
    return math.exp(total / count)


@dataclass
class PretrainReport:
    untrained_ppl: float
    trained_ppl: float
    losses: list[float] = field(default_factory=list)


def pretrain_toy_lm(corpus: Sequence[Sequence[int]], steps: int, seed: int, tokenizer: Tokenizer,
                    cfg: ToyLMConfig = ToyLMConfig(), heldout: Sequence[Sequence[int]] | None = None,
                    batch_size: int = 32, schedule: ScheduleConfig | None = None) -> tuple[ToyLM, PretrainReport]:
    """Next-token training on ``corpus``, then freeze. Returns the LM and perplexities."""
    if not corpus:
        raise ConfigError("pretraining corpus is empty")
    lm = ToyLM(tokenizer, cfg, seed=seed)
    heldout = heldout if heldout is not None else corpus[: max(1, len(corpus) // 20)]
    report = PretrainReport(perplexity(lm, heldout), float("nan"))
    schedule = schedule or ScheduleConfig(3e-3, max(1, steps // 20), max(steps, 1), 1e-4)
    rng = np.random.default_rng(seed)
    state = AdamWState()
    for step in range(1, steps + 1):
        picks = rng.integers(0, len(corpus), size=batch_size)
        lm.store.zero_grad()
        nll, n = _next_token_nll(lm, [corpus[i] for i in picks])
        loss = nll / n
        if not torch.isfinite(loss):
            raise NonFiniteError(f"LM pretraining diverged at step {step}")
        loss.backward()
        adamw_step(lm.store, state, lr_at_step(schedule, step))
        report.losses.append(loss.item())
    lm.store.zero_grad()
    lm.freeze()
    report.trained_ppl = perplexity(lm, heldout)
    return lm, report


# --- prompts, joining and decoding ------------------------------------------


@dataclass(frozen=True)
class PromptSpec:
    task: str
    source_lang: str
    target_lang: str | None = None

    def __post_init__(self):
        if self.task not in ("ASR", "ST"):
            raise ConfigError(f"task must be ASR or ST, got {self.task!r}")
        if self.task == "ST" and not self.target_lang:
            raise ConfigError("ST prompts need a target language")

    def text(self) -> str:
        if self.task == "ASR":
            return f"can you transcribe {self.source_lang}?"
        return f"can you translate from {self.source_lang} to {self.target_lang}?"


def build_prompt(spec: PromptSpec, lm_or_tokenizer) -> list[int]:
    tok = getattr(lm_or_tokenizer, "tokenizer", lm_or_tokenizer)
    return tok.encode(spec.text())


@dataclass
class JoinedBatch:
    embeddings: torch.Tensor
    lengths: torch.Tensor
    targets: torch.Tensor
    loss_mask: torch.Tensor
    response_start: torch.Tensor


def join_J(lm: ToyLM, prompts, audio: FeatureSequence, responses: Sequence[Sequence[int]] | None = None,
           audio_position: str = "after_prompt") -> JoinedBatch:
    """Assemble LM inputs ``[BOS, prompt, audio, response]`` per batch item.

    ``prompts`` is one token list shared by the batch or one list per item.
    ``loss_mask`` is True on exactly the positions whose next token is a
    response token; with no responses it is all False.
    """
    if audio_position not in AUDIO_POSITIONS:
        raise ConfigError(f"audio_position must be one of {AUDIO_POSITIONS}")
    if audio.dim != lm.dim:
        raise ShapeError(f"audio vectors have dim {audio.dim}, LM embeddings {lm.dim}")
    if int(audio.lengths.min()) < 1:
        raise ShapeError("zero-length audio cannot be joined")
    b = audio.batch_size
    if prompts and isinstance(prompts[0], int):
        prompts = [list(prompts)] * b
    if len(prompts) != b or (responses is not None and len(responses) != b):
        raise ShapeError("prompts/responses must match the audio batch size")
    bos = lm.embed([lm.tokenizer.bos_id]).to(audio.data.dtype)
    rows, lengths, starts, targets_list = [], [], [], []
    for i in range(b):
        p = lm.embed(prompts[i]).to(audio.data.dtype)
        a = audio.item(i)
        r_ids = list(responses[i]) if responses is not None else []
        r = lm.embed(r_ids).to(audio.data.dtype) if r_ids else audio.data.new_zeros(0, lm.dim)
        middle = [p, a] if audio_position == "after_prompt" else [a, p]
        row = torch.cat([bos, *middle, r], dim=0)
        rows.append(row)
        lengths.append(row.shape[0])
        starts.append(1 + p.shape[0] + a.shape[0])
        targets_list.append(r_ids)
    n = max(lengths)
    emb = torch.stack([F.pad(r, (0, 0, 0, n - r.shape[0])) for r in rows])
    targets = torch.full((b, n), -1, dtype=torch.long)
    mask = torch.zeros((b, n), dtype=torch.bool)
    for i, (s, r_ids) in enumerate(zip(starts, targets_list)):
        if r_ids:
            targets[i, s - 1 : s - 1 + len(r_ids)] = torch.as_tensor(r_ids)
            mask[i, s - 1 : s - 1 + len(r_ids)] = True
    return JoinedBatch(emb, torch.tensor(lengths), targets, mask, torch.tensor(starts))


def greedy_generate(lm: ToyLM, joined: JoinedBatch, max_len: int) -> list[list[int]]:
    """Argmax decoding until EOS or ``max_len`` tokens (EOS excluded from output)."""
    if not lm.frozen:
        raise ConfigError("greedy_generate expects a frozen LM")
    b = joined.embeddings.shape[0]
    outputs: list[list[int]] = [[] for _ in range(b)]
    if max_len <= 0:
        return outputs
    with torch.no_grad():
        lengths = joined.lengths.clone()
        cap = int(lengths.max()) + max_len
        emb = F.pad(joined.embeddings.detach(), (0, 0, 0, cap - joined.embeddings.shape[1]))
        done = torch.zeros(b, dtype=torch.bool)
        for _ in range(max_len):
            logits = lm.logits(emb, lengths)
            nxt = logits[torch.arange(b), lengths - 1].argmax(dim=-1)
            for i in range(b):
                if done[i]:
                    continue
                tok = int(nxt[i])
                if tok == lm.tokenizer.eos_id:
                    done[i] = True
                    continue
                outputs[i].append(tok)
                emb[i, lengths[i]] = lm.tok_emb[tok].to(emb.dtype)
                lengths[i] += 1
            if bool(done.all()):
                break
    return outputs


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_toy_lm(lm: ToyLM, path, extra: dict | None = None) -> None:
    """AFCK1 weights plus a JSON sidecar holding vocabulary and shape."""
    lm.store.save(path, lm.name)
    meta = {"vocab": lm.tokenizer.words, "config": asdict(lm.cfg), "name": lm.name, **(extra or {})}
    _sidecar(path).write_text(json.dumps(meta, indent=1), encoding="utf-8")


def load_toy_lm(path, store: ParamStore | None = None) -> tuple[ToyLM, dict]:
    """Rebuild a frozen LM (into ``store`` if given) from :func:`save_toy_lm` output."""
    meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
    lm = ToyLM(Tokenizer(meta["vocab"]), ToyLMConfig(**meta["config"]), store=store, name=meta["name"])
    lm.store.load_values(load_checkpoint(path), prefix=lm.name)
    lm.freeze()
    return lm, meta
