"""Run configuration and its ``key = value`` file format.

Keys are the :class:`RunConfig` field names; the schedule is written flat
as ``peak_lr``, ``warmup_steps``, ``total_steps`` and ``floor_lr``.
Lines starting with ``#`` are comments.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..adapters import AdapterConfig, AdapterKind, WlqConfig
from ..errors import ConfigError
from ..numkernel import DESK_SCHEDULE, FULL_SCHEDULE, EncoderStackConfig, ScheduleConfig
from ..toystack import AUDIO_POSITIONS, SFM_PRESETS

SCHEDULE_KEYS = ("peak_lr", "warmup_steps", "total_steps", "floor_lr")


@dataclass
class RunConfig:
    adapter_kind: str = "base"
    sfm_preset: str = "whisper-like"
    lm_checkpoint: str = ""
    manifest: str = ""
    task: str = "ASR"
    steps: int = 2000
    micro_batch: int = 8
    grad_accum: int = 2
    schedule: ScheduleConfig = DESK_SCHEDULE
    aux_weight: float = 0.1
    seed: int = 0
    adapter_layers: int = 4
    adapter_hidden: int = 64
    adapter_intermediate: int = 256
    adapter_heads: int = 4
    wlq_layers: int = 2
    weight_decay: float = 0.01
    sfm_seed: int = 0
    audio_position: str = "before_prompt"
    positional: bool = False
    max_decode_len: int = 12

    def __post_init__(self):
        self.adapter_kind = AdapterKind.parse(self.adapter_kind).value
        if self.steps < 1 or self.micro_batch < 1 or self.grad_accum < 1:
            raise ConfigError("steps, micro_batch and grad_accum must be >= 1")
        if self.task not in ("ASR", "ST"):
            raise ConfigError("task must be ASR or ST")
        if self.sfm_preset not in SFM_PRESETS:
            raise ConfigError(f"unknown sfm_preset {self.sfm_preset!r}")
        if self.audio_position not in AUDIO_POSITIONS:
            raise ConfigError(f"audio_position must be one of {AUDIO_POSITIONS}")
        if self.aux_weight < 0:
            raise ConfigError("aux_weight must be >= 0")

    @property
    def kind(self) -> AdapterKind:
        return AdapterKind.parse(self.adapter_kind)

    @property
    def effective_batch(self) -> int:
        return self.micro_batch * self.grad_accum

    def adapter_config(self, ctc_labels: int) -> AdapterConfig:
        core = EncoderStackConfig(self.adapter_layers, self.adapter_hidden, self.adapter_intermediate,
                                  self.adapter_heads)
        return AdapterConfig(core=core, wlq=WlqConfig(n_layers=self.wlq_layers), ctc_labels=ctc_labels,
                             positional=self.positional)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("schedule"))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        sched = {k: d.pop(k) for k in SCHEDULE_KEYS if k in d}
        cfg = cls(**{k: v for k, v in d.items() if k != "schedule"})
        if sched:
            cfg = replace(cfg, schedule=replace(cfg.schedule, **sched))
        return cfg


# full-scale recipe: 28k steps, micro-batch 10 x 4 accumulation (x4 GPUs = 160)
FULL_RUN = RunConfig(steps=28000, micro_batch=10, grad_accum=4, schedule=FULL_SCHEDULE,
                      adapter_hidden=768, adapter_intermediate=3072, adapter_heads=12)


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    types.update({"peak_lr": "float", "floor_lr": "float", "warmup_steps": "int", "total_steps": "int"})
    if name not in types or name == "schedule":
        raise ConfigError(f"unknown run-config key {name!r}")
    t = types[name]
    if t == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {name}: {raw!r}")
    try:
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_run_config(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    values = parse_run_config(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(values)


def dump_run_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
