"""``adapter-forge`` command line: data, LM pretraining, training, evaluation, grids.

Exit status is 0 on success, 1 when the library rejects the request and 2
on a usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .adapters import ALL_KINDS, AdapterConfig, AdapterKind, build_adapter
from .datasynth import SynthSpec, build_dataset
from .errors import AdapterForgeError
from .harness import (
    RunConfig,
    bootstrap_significance,
    check_training_gradients,
    dump_run_config,
    emit_report,
    evaluate,
    grid_run,
    load_run_config,
    prepare_lm,
    train_adapter,
)
from .harness.lmprep import DESK_LM
from .numkernel import FULL_STACK, ParamStore
from .toystack import AUDIO_POSITIONS, SFM_PRESETS, ToyLMConfig

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
RUN_FLAGS = [f for f in fields(RunConfig) if f.name != "schedule"]
SCHEDULE_FLAGS = {"peak_lr": float, "warmup_steps": int, "total_steps": int, "floor_lr": float}
_TYPES = {"int": int, "float": float, "str": str}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(raw: str) -> bool:
    if raw.lower() in ("1", "true", "yes", "on"):
        return True
    if raw.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {raw!r}")


def _add_run_flags(p: argparse.ArgumentParser, skip=()) -> None:
    p.add_argument("--config", help="key = value run-config file; flags override its values")
    for f in RUN_FLAGS:
        if f.name in skip or f.name == "seed":
            continue
        kind = _bool if f.type == "bool" else _TYPES[f.type]
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None,
                       help=f"run-config {f.name} (default {f.default!r})")
    for name, kind in SCHEDULE_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None,
                       help=f"schedule {name}")


def _run_config(args) -> RunConfig:
    names = [f.name for f in RUN_FLAGS] + list(SCHEDULE_FLAGS)
    overrides = {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}
    cfg = load_run_config(args.config, overrides)
    # a shorter run keeps the cosine decay ending at its last step
    if "steps" in overrides and "total_steps" not in overrides:
        cfg = replace(cfg, schedule=replace(cfg.schedule, total_steps=max(cfg.steps, cfg.schedule.warmup_steps)))
    return cfg


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True, default=str))


# --- subcommands ---------------------------------------------------------------


def cmd_synth_data(args) -> int:
    spec = SynthSpec(vocab_size=args.vocab_size, seed=args.seed, noise_std=args.noise_std,
                     feat_dim=args.feat_dim)
    rate = SFM_PRESETS[args.preset]
    manifest = build_dataset(spec, args.n_items, rate, args.out, overwrite=args.overwrite)
    counts = {s: len(manifest.split(s)) for s in ("train", "dev", "test")}
    print(f"wrote {len(manifest.records)} items at {rate:g} Hz to {args.out} {counts}")
    return EXIT_OK


def cmd_pretrain_lm(args) -> int:
    cfg = ToyLMConfig(n_layers=args.layers, n_heads=args.heads, dim=args.dim,
                      intermediate=args.intermediate, max_len=args.max_len)
    spec = SynthSpec(vocab_size=args.vocab_size, seed=args.seed)
    report = prepare_lm(args.out, spec, steps=args.steps, seed=args.seed, cfg=cfg,
                        audio_position=args.audio_position, corpus_size=args.corpus_size)
    print(f"perplexity {report.untrained_ppl:.3f} -> {report.trained_ppl:.3f}; saved {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = replace(_run_config(args), seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(dump_run_config(cfg), encoding="utf-8")
    result = train_adapter(cfg, out, evaluate_untrained=args.eval_untrained)
    emit_report([result.report], out)
    _print_json(result.report.summary())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = evaluate(args.checkpoint, args.manifest, args.task, args.split)
    if args.out:
        emit_report([report], args.out)
    _print_json(report.summary())
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = replace(_run_config(args), seed=args.seed)
    adapters = [k.value for k in ALL_KINDS] if args.adapters == "all" else args.adapters.split(",")
    presets = list(SFM_PRESETS) if args.presets == "all" else args.presets.split(",")
    reports = grid_run(cfg, adapters, presets, args.out, n_items=args.n_items, n_resamples=args.n_resamples)
    print((Path(args.out) / "compression.txt").read_text(encoding="utf-8"))
    print((Path(args.out) / "metrics.txt").read_text(encoding="utf-8"))
    return EXIT_DOMAIN if any(r.error for r in reports) and not args.keep_going else EXIT_OK


def cmd_gradcheck(args) -> int:
    kinds = list(ALL_KINDS) if args.adapter == "all" else [AdapterKind.parse(args.adapter)]
    worst = 0.0
    for kind in kinds:
        report = check_training_gradients(kind, args.seed, eps=args.eps, preset=args.preset,
                                          max_coords=args.max_coords or None)
        worst = max(worst, report.max_rel_error)
        print(f"{kind.value}: max relative error {report.max_rel_error:.3e} (worst entry {report.worst_entry})")
    return EXIT_OK if worst < args.tol else EXIT_DOMAIN


def cmd_params(args) -> int:
    kinds = list(ALL_KINDS) if args.adapter == "all" else [AdapterKind.parse(args.adapter)]
    cfg = AdapterConfig(core=replace(FULL_STACK, n_layers=args.layers, hidden=args.hidden,
                                     intermediate=args.intermediate, n_heads=args.heads))
    for kind in kinds:
        adapter = build_adapter(kind, args.in_dim, args.lm_dim, ParamStore(), cfg, seed=None)
        b = adapter.param_breakdown()
        if kind is AdapterKind.WLQ:
            print(f"{kind.value}: window-level Q-Former {b['wlq']:,}")
        else:
            print(f"{kind.value}: modality core {b['modality']:,}; length adapter {b['length']:,}; "
                  f"projections {b['projections']:,}; total {b['total']:,}")
    return EXIT_OK


def _read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def cmd_significance(args) -> int:
    refs, a, b = _read_lines(args.refs), _read_lines(args.hyps_a), _read_lines(args.hyps_b)
    p = bootstrap_significance(refs, a, b, args.metric, args.n_resamples, args.seed)
    verdict = "significant" if p < 0.05 else "not significant"
    print(f"p = {p:.4f} ({verdict} at 0.05)")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adapter-forge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0, help="seed for every random draw (default 0)")
        p.set_defaults(func=fn)
        return p

    p = add("synth-data", cmd_synth_data, "generate a synthetic feature corpus and manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", choices=sorted(SFM_PRESETS), default="whisper-like", help="frame-rate preset")
    p.add_argument("--n-items", type=int, default=2000, help="number of utterances")
    p.add_argument("--vocab-size", type=int, default=16, help="source vocabulary size")
    p.add_argument("--noise-std", type=float, default=0.25, help="frame noise level")
    p.add_argument("--feat-dim", type=int, default=32, help="raw feature dimension")
    p.add_argument("--overwrite", action="store_true", help="replace an existing manifest")

    p = add("pretrain-lm", cmd_pretrain_lm, "pretrain and freeze the toy LM")
    p.add_argument("--out", required=True, help="checkpoint path (a .json sidecar is written next to it)")
    p.add_argument("--steps", type=int, default=4000, help="optimizer steps")
    p.add_argument("--layers", type=int, default=DESK_LM.n_layers, help="decoder layers")
    p.add_argument("--heads", type=int, default=DESK_LM.n_heads, help="attention heads")
    p.add_argument("--dim", type=int, default=DESK_LM.dim, help="model width")
    p.add_argument("--intermediate", type=int, default=DESK_LM.intermediate, help="feed-forward width")
    p.add_argument("--max-len", type=int, default=DESK_LM.max_len, help="longest sequence")
    p.add_argument("--vocab-size", type=int, default=16, help="source vocabulary size")
    p.add_argument("--corpus-size", type=int, default=20000, help="pretraining sequences")
    p.add_argument("--audio-position", choices=AUDIO_POSITIONS, default="before_prompt",
                   help="where the audio slot sits relative to the prompt")

    p = add("train", cmd_train, "train one adapter and evaluate it on the test split")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--eval-untrained", action="store_true", help="also score the adapter before training")
    _add_run_flags(p)

    p = add("evaluate", cmd_evaluate, "decode a split with a trained adapter")
    p.add_argument("--checkpoint", required=True, help="adapter.afck written by train")
    p.add_argument("--manifest", required=True, help="dataset manifest")
    p.add_argument("--task", choices=("ASR", "ST"), default=None, help="must match the trained task")
    p.add_argument("--split", default="test", help="manifest split to decode")
    p.add_argument("--out", default=None, help="directory for report tables")

    p = add("grid", cmd_grid, "train every adapter x preset cell and write the report tables")
    p.add_argument("--out", required=True, help="grid directory")
    p.add_argument("--adapters", default="all", help="comma-separated adapter kinds or 'all'")
    p.add_argument("--presets", default="all", help="comma-separated presets or 'all'")
    p.add_argument("--n-items", type=int, default=2000, help="synthetic utterances per preset")
    p.add_argument("--n-resamples", type=int, default=1000, help="bootstrap resamples")
    p.add_argument("--keep-going", action="store_true", help="exit 0 even if some cells failed")
    _add_run_flags(p, skip=("adapter_kind", "sfm_preset", "manifest"))

    p = add("gradcheck", cmd_gradcheck, "central-difference check of the full training loss")
    p.add_argument("--adapter", default="all", help="adapter kind or 'all'")
    p.add_argument("--preset", choices=sorted(SFM_PRESETS), default="seamless-like", help="frame-rate preset")
    p.add_argument("--eps", type=float, default=1e-4, help="finite-difference step")
    p.add_argument("--tol", type=float, default=1e-4, help="pass threshold on the max relative error")
    p.add_argument("--max-coords", type=int, default=8, help="coordinates sampled per entry (0 = all)")

    p = add("params", cmd_params, "count adapter parameters")
    p.add_argument("--adapter", default="all", help="adapter kind or 'all'")
    p.add_argument("--layers", type=int, default=FULL_STACK.n_layers, help="modality-core layers")
    p.add_argument("--hidden", type=int, default=FULL_STACK.hidden, help="modality-core width")
    p.add_argument("--intermediate", type=int, default=FULL_STACK.intermediate, help="feed-forward width")
    p.add_argument("--heads", type=int, default=FULL_STACK.n_heads, help="attention heads")
    p.add_argument("--in-dim", type=int, default=1280, help="encoder output width")
    p.add_argument("--lm-dim", type=int, default=4096, help="LM embedding width")

    p = add("significance", cmd_significance, "paired bootstrap test between two hypothesis files")
    p.add_argument("--refs", required=True, help="references, one sentence per line")
    p.add_argument("--hyps-a", required=True, help="system A hypotheses")
    p.add_argument("--hyps-b", required=True, help="system B hypotheses")
    p.add_argument("--metric", choices=("wer", "bleu"), default="wer", help="corpus metric")
    p.add_argument("--n-resamples", type=int, default=1000, help="bootstrap resamples")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AdapterForgeError, OSError, ValueError) as exc:
        print(f"adapter-forge {args.command}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
