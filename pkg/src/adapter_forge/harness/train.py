"""Training and evaluation of an adapter between a frozen encoder and LM."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..adapters import AdapterKind, build_adapter, nominal_compression
from ..datasynth import Manifest, ManifestRecord, read_fseq, read_manifest
from ..errors import ConfigError, NonFiniteError
from ..losses import LossBreakdown, composite_loss, ctc_loss_batch, lm_cross_entropy, quantity_loss
from ..numkernel import AdamWState, ParamStore, adamw_step, load_checkpoint, lr_at_step
from ..sequence import FeatureSequence
from ..toystack import (
    SFM_PRESETS,
    PromptSpec,
    build_prompt,
    build_sfm,
    greedy_generate,
    join_J,
    load_toy_lm,
    sfm_encode,
)
from .config import RunConfig
from .metrics import bleu, tokens_per_second, wer

log = logging.getLogger(__name__)

ADAPTER_FILE = "adapter.afck"
LOSS_COLUMNS = ("step", "lr", "ce", "ctc", "quantity", "total")


@dataclass
class Example:
    feats: torch.Tensor
    labels: list[int]
    response: list[int]
    reference: str
    source_text: str
    duration: float


@dataclass
class RunReport:
    run: str
    adapter_kind: str
    sfm_preset: str
    task: str
    wer: float | None = None
    bleu: float | None = None
    mean_compression_ratio: float = math.nan
    out_rate_hz: float = math.nan
    measured_ratio: float = math.nan
    measured_rate_hz: float = math.nan
    ref_tokens_per_second: float = math.nan
    trainable_params: dict = field(default_factory=dict)
    loss_curve: list[dict] = field(default_factory=list)
    untrained_wer: float | None = None
    untrained_bleu: float | None = None
    p_value: float | None = None
    baseline: str | None = None
    refs: list[str] = field(default_factory=list)
    hyps: list[str] = field(default_factory=list)
    frozen_checksums_ok: bool | None = None
    error: str | None = None

    @property
    def score(self) -> float | None:
        return self.wer if self.task == "ASR" else self.bleu

    def summary(self) -> dict:
        d = asdict(self)
        for k in ("refs", "hyps", "loss_curve"):
            d.pop(k)
        return d


class AdapterSystem:
    """Frozen encoder and LM plus a trainable adapter in one ParamStore."""

    def __init__(self, cfg: RunConfig, in_dim: int, lm_path=None, dtype: torch.dtype = torch.float32,
                 lm=None, sfm=None, store: ParamStore | None = None):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore(dtype)
        if sfm is None:
            sfm = build_sfm(cfg.sfm_preset, in_dim, seed=cfg.sfm_seed, store=self.store)
        self.sfm = sfm
        if lm is None:
            if not (lm_path or cfg.lm_checkpoint):
                raise ConfigError("run needs an LM checkpoint")
            lm, meta = load_toy_lm(lm_path or cfg.lm_checkpoint, store=self.store)
            trained_order = meta.get("audio_position")
            if trained_order and trained_order != cfg.audio_position:
                raise ConfigError(f"LM was pretrained with audio {trained_order}, run asks for {cfg.audio_position}")
        self.lm = lm
        self.tokenizer = lm.tokenizer
        self.n_source_words = sum(1 for w in self.tokenizer.words if w.startswith("w") and w[1:].isdigit())
        self.adapter = build_adapter(cfg.kind, sfm.out_dim, lm.dim, self.store,
                                     cfg.adapter_config(max(self.n_source_words, 1)), seed=cfg.seed)
        self.prompt = self.prompt_spec(cfg.task)

    @staticmethod
    def prompt_spec(task: str, source_lang: str = "en", target_lang: str = "de") -> PromptSpec:
        return PromptSpec(task, source_lang, target_lang if task == "ST" else None)

    @property
    def kind(self) -> AdapterKind:
        return self.adapter.kind

    @property
    def frame_rate_hz(self) -> float:
        return self.sfm.frame_rate_hz

    def frozen_checksums(self) -> dict[str, str]:
        return {p: self.store.checksum(p) for p in (self.sfm.name, self.lm.name)}

    # -- data -------------------------------------------------------------

    def ctc_labels(self, source_text: str) -> list[int]:
        return [int(w[1:]) + 1 for w in source_text.split()]

    def make_examples(self, records: Sequence[ManifestRecord]) -> list[Example]:
        out = []
        for r in records:
            feats, rate = read_fseq(r.path)
            raw = FeatureSequence.from_list([feats], rate, dtype=self.store.dtype)
            enc = sfm_encode(self.sfm, raw).item(0)
            if self.cfg.task == "ST":
                if not r.translation:
                    raise ConfigError(f"{r.path}: ST task needs a translation column")
                ref, lang_pair = r.translation, (r.source_lang, r.target_lang)
            else:
                ref, lang_pair = r.transcript, (r.source_lang, None)
            resp = self.tokenizer.encode(ref) + [self.tokenizer.eos_id]
            out.append(Example(enc, self.ctc_labels(r.transcript), resp, ref, r.transcript, r.duration_seconds))
        return out

    def _features(self, examples: Sequence[Example]) -> FeatureSequence:
        return FeatureSequence.from_list([e.feats for e in examples], self.frame_rate_hz, self.store.dtype)

    # -- objective ----------------------------------------------------------

    def batch_loss(self, examples: Sequence[Example], ce_norm: float | None = None,
                   item_norm: float | None = None) -> LossBreakdown:
        """Composite loss of one micro-batch.

        ``ce_norm``/``item_norm`` default to this batch's response-token and
        item counts; passing the totals of a larger batch makes the sum of
        micro-batch losses equal that batch's loss.
        """
        x = self._features(examples)
        labels = [e.labels for e in examples]
        out = self.adapter(x, transcripts=labels, training=True)
        joined = join_J(self.lm, build_prompt(self.prompt, self.tokenizer), out.features,
                        [e.response for e in examples], self.cfg.audio_position)
        logits = self.lm.logits(joined.embeddings, joined.lengths)
        ce = lm_cross_entropy(logits, joined.targets, joined.loss_mask, normalizer=ce_norm)
        n_items = float(item_norm or len(examples))
        ctc = qty = None
        if out.ctc_logprobs is not None:
            ctc = ctc_loss_batch(out.ctc_logprobs, out.ctc_lengths, labels).sum() / n_items
        if out.alpha is not None:
            qty = quantity_loss(out.alpha, [len(l) for l in labels], "sum") / n_items
        return composite_loss(ce, ctc, qty, self.cfg.aux_weight)

    def accumulate(self, micro_batches: Sequence[Sequence[Example]]) -> LossBreakdown:
        """Backpropagate every micro-batch of one optimizer step into the grads."""
        ce_norm = float(sum(len(e.response) for mb in micro_batches for e in mb))
        item_norm = float(sum(len(mb) for mb in micro_batches))
        totals = {"ce": 0.0, "ctc": None, "quantity": None, "total": 0.0}
        for mb in micro_batches:
            bd = self.batch_loss(mb, ce_norm, item_norm)
            if not torch.isfinite(bd.total):
                raise NonFiniteError("non-finite loss")
            bd.total.backward()
            for k in totals:
                v = getattr(bd, k)
                if v is not None:
                    totals[k] = (totals[k] or 0.0) + float(v.detach() if torch.is_tensor(v) else v)
        return LossBreakdown(totals["ce"], totals["ctc"], totals["quantity"], totals["total"], self.cfg.aux_weight)

    # -- inference ----------------------------------------------------------

    def transcribe(self, examples: Sequence[Example], batch_size: int = 32):
        """Greedy hypotheses plus per-item encoder and adapter lengths."""
        hyps, in_lens, out_lens = [], [], []
        prompt = build_prompt(self.prompt, self.tokenizer)
        with torch.no_grad():
            for i in range(0, len(examples), batch_size):
                chunk = examples[i : i + batch_size]
                x = self._features(chunk)
                out = self.adapter(x, training=False)
                joined = join_J(self.lm, prompt, out.features, None, self.cfg.audio_position)
                ids = greedy_generate(self.lm, joined, self.cfg.max_decode_len)
                hyps += [self.tokenizer.decode(s) for s in ids]
                in_lens += x.lengths.tolist()
                out_lens += out.out_lengths.tolist()
        return hyps, np.array(in_lens), np.array(out_lens)

    def save_adapter(self, out_dir, extra: dict | None = None) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / ADAPTER_FILE
        self.store.save(path, self.adapter.prefix)
        meta = {"run_config": self.cfg.to_dict(), "in_dim": self.sfm.in_dim, **(extra or {})}
        path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
        return path


def open_system(cfg: RunConfig, manifest: Manifest, dtype=torch.float32) -> AdapterSystem:
    if not manifest.records:
        raise ConfigError("manifest is empty")
    feats, rate = read_fseq(manifest.records[0].path)
    if not math.isclose(rate, SFM_PRESETS[cfg.sfm_preset], rel_tol=1e-6):
        raise ConfigError(f"manifest frames are {rate} Hz but preset {cfg.sfm_preset} runs at "
                          f"{SFM_PRESETS[cfg.sfm_preset]} Hz")
    return AdapterSystem(cfg, feats.shape[1], dtype=dtype)


def evaluate_system(system: AdapterSystem, examples: Sequence[Example], run: str = "") -> RunReport:
    """Decode ``examples`` and fill metric and compression fields."""
    cfg = system.cfg
    hyps, in_lens, out_lens = system.transcribe(examples)
    refs = [e.reference for e in examples]
    rep = RunReport(run, cfg.adapter_kind, cfg.sfm_preset, cfg.task, refs=refs, hyps=hyps)
    if cfg.task == "ASR":
        rep.wer = wer(refs, hyps)
    else:
        rep.bleu = bleu(refs, hyps)
    rate = system.frame_rate_hz
    rep.measured_ratio = float(np.mean(in_lens / out_lens))
    rep.measured_rate_hz = float(rate * out_lens.sum() / in_lens.sum())
    nominal = nominal_compression(system.kind, system.adapter.cfg, rate)
    rep.mean_compression_ratio = rep.measured_ratio if nominal is None else nominal
    rep.out_rate_hz = rep.measured_rate_hz if nominal is None else rate / nominal
    rep.ref_tokens_per_second = tokens_per_second([e.source_text for e in examples],
                                                  [e.duration for e in examples])
    rep.trainable_params = system.adapter.param_breakdown()
    return rep


@dataclass
class TrainResult:
    checkpoint: Path
    report: RunReport
    system: AdapterSystem


def train_system(system: AdapterSystem, train: Sequence[Example], steps: int | None = None,
                 log_every: int = 100) -> list[dict]:
    """Optimise the adapter in place; returns the per-step loss rows."""
    cfg = system.cfg
    steps = cfg.steps if steps is None else steps
    if len(train) < cfg.micro_batch:
        raise ConfigError("fewer training examples than one micro-batch")
    rng = np.random.default_rng([cfg.seed, 0x7241])
    state = AdamWState()
    curve = []
    before = system.frozen_checksums()
    for step in range(1, steps + 1):
        picks = rng.choice(len(train), size=min(cfg.effective_batch, len(train)), replace=False)
        micro = [[train[i] for i in picks[j : j + cfg.micro_batch]] for j in range(0, len(picks), cfg.micro_batch)]
        system.store.zero_grad()
        try:
            bd = system.accumulate(micro)
        except NonFiniteError as exc:
            raise NonFiniteError(f"step {step}: {exc}") from None
        lr = lr_at_step(cfg.schedule, step)
        adamw_step(system.store, state, lr, weight_decay=cfg.weight_decay)
        curve.append({"step": step, "lr": lr, "ce": bd.ce, "ctc": bd.ctc, "quantity": bd.quantity,
                      "total": bd.total})
        if log_every and step % log_every == 0:
            log.info("%s step %d lr %.2e loss %.4f", cfg.adapter_kind, step, lr, bd.total)
    system.store.zero_grad()
    if system.frozen_checksums() != before:
        raise AssertionError("frozen encoder/LM parameters changed during training")
    return curve


def write_loss_csv(path, curve: Sequence[dict]) -> None:
    rows = [",".join(LOSS_COLUMNS)]
    for r in curve:
        rows.append(",".join("" if r[c] is None else (str(r[c]) if c == "step" else f"{r[c]:.6g}")
                             for c in LOSS_COLUMNS))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def train_adapter(cfg: RunConfig, out_dir, manifest: Manifest | None = None,
                  evaluate_untrained: bool = False) -> TrainResult:
    """Train per ``cfg`` and evaluate the last checkpoint on the test split."""
    out_dir = Path(out_dir)
    manifest = manifest or read_manifest(cfg.manifest)
    system = open_system(cfg, manifest)
    train = system.make_examples(manifest.split("train"))
    test = system.make_examples(manifest.split("test"))
    untrained = evaluate_system(system, test) if evaluate_untrained else None
    before = system.frozen_checksums()
    curve = train_system(system, train)
    ckpt = system.save_adapter(out_dir)
    write_loss_csv(out_dir / "loss.csv", curve)
    report = evaluate_system(system, test, run=out_dir.name)
    report.loss_curve = curve
    report.frozen_checksums_ok = system.frozen_checksums() == before
    if untrained is not None:
        report.untrained_wer, report.untrained_bleu = untrained.wer, untrained.bleu
    return TrainResult(ckpt, report, system)


def load_trained_system(checkpoint) -> AdapterSystem:
    checkpoint = Path(checkpoint)
    meta = json.loads(checkpoint.with_name(checkpoint.name + ".json").read_text(encoding="utf-8"))
    cfg = RunConfig.from_dict(meta["run_config"])
    system = AdapterSystem(cfg, meta["in_dim"])
    system.store.load_values(load_checkpoint(checkpoint), prefix=system.adapter.prefix)
    return system


def evaluate(checkpoint, manifest, task: str | None = None, split: str = "test") -> RunReport:
    system = load_trained_system(checkpoint)
    if task is not None and task != system.cfg.task:
        raise ConfigError(f"checkpoint was trained for {system.cfg.task}, asked to evaluate {task}")
    manifest = manifest if isinstance(manifest, Manifest) else read_manifest(manifest)
    records = manifest.split(split)
    if not records:
        raise ConfigError(f"manifest has no {split!r} records")
    return evaluate_system(system, system.make_examples(records), run=Path(checkpoint).parent.name)
