"""Grid of adapter kinds x encoder presets with significance against Base."""
from __future__ import annotations

import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Sequence

from ..adapters import AdapterKind
from ..datasynth import Manifest, SynthSpec, build_dataset, read_manifest
from ..errors import ConfigError
from ..toystack import SFM_PRESETS
from .config import RunConfig
from .lmprep import prepare_lm
from .report import emit_report
from .significance import bootstrap_significance
from .train import RunReport, train_adapter

log = logging.getLogger(__name__)

DEFAULT_ITEMS = 2000
THREADS_ENV = "ADAPTER_FORGE_THREADS"


def grid_workers() -> int:
    """Cell parallelism, capped by ``ADAPTER_FORGE_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _run_cell(cfg: RunConfig, run_dir: Path, manifest: Manifest) -> RunReport:
    t0 = time.time()
    try:
        report = train_adapter(cfg, run_dir, manifest, evaluate_untrained=True).report
        log.info("cell %s: score %.4f (untrained %s) in %.0fs", run_dir.name, report.score,
                 report.untrained_wer if cfg.task == "ASR" else report.untrained_bleu, time.time() - t0)
    except Exception as exc:  # recorded, the grid keeps going
        log.error("cell %s failed: %s", run_dir.name, exc)
        log.debug("%s", traceback.format_exc())
        report = RunReport(run_dir.name, cfg.adapter_kind, cfg.sfm_preset, cfg.task,
                           error=f"{type(exc).__name__}: {exc}")
    report.run = run_dir.name
    return report


def grid_run(base_cfg: RunConfig, adapters: Sequence[str], presets: Sequence[str], out_dir,
             manifests: Mapping[str, Manifest | str] | None = None, synth: SynthSpec | None = None,
             n_items: int = DEFAULT_ITEMS, n_resamples: int = 1000,
             workers: int | None = None) -> list[RunReport]:
    """Train every (preset, adapter) cell, compare each to Base, write the tables.

    Presets without an entry in ``manifests`` get a synthetic dataset
    generated under ``out_dir/data-<preset>``. A cell that raises is kept in
    the report with its error message and the grid moves on. Without an
    LM checkpoint in ``base_cfg`` one is pretrained into ``out_dir/lm.afck``.
    """
    if not adapters or not presets:
        raise ConfigError("grid needs at least one adapter and one preset")
    kinds = [AdapterKind.parse(a).value for a in adapters]
    for p in presets:
        if p not in SFM_PRESETS:
            raise ConfigError(f"unknown preset {p!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = dict(manifests or {})
    synth = synth or SynthSpec(seed=base_cfg.seed)

    if not base_cfg.lm_checkpoint:
        lm_path = out_dir / "lm.afck"
        if not lm_path.exists():
            prepare_lm(lm_path, synth, seed=base_cfg.seed, audio_position=base_cfg.audio_position)
        base_cfg = replace(base_cfg, lm_checkpoint=str(lm_path))

    cells = []
    for preset in presets:
        manifest = manifests.get(preset)
        if manifest is None:
            data_dir = out_dir / f"data-{preset}"
            if (data_dir / "manifest.tsv").exists():
                manifest = read_manifest(data_dir / "manifest.tsv")
            else:
                manifest = build_dataset(synth, n_items, SFM_PRESETS[preset], data_dir)
        elif not isinstance(manifest, Manifest):
            manifest = read_manifest(manifest)
        for kind in kinds:
            cfg = replace(base_cfg, adapter_kind=kind, sfm_preset=preset)
            cells.append((cfg, out_dir / f"{preset}-{kind}", manifest))

    workers = min(grid_workers() if workers is None else workers, len(cells))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_cell, *zip(*cells)))
    else:
        results = [_run_cell(*cell) for cell in cells]

    reports: list[RunReport] = []
    for preset in presets:
        group = [r for r in results if r.sfm_preset == preset]
        _mark_against_base(group, n_resamples, base_cfg.seed)
        reports += group
    emit_report(reports, out_dir)
    return reports


def _mark_against_base(group: list[RunReport], n_resamples: int, seed: int) -> None:
    base = next((r for r in group if r.adapter_kind == AdapterKind.BASE.value and r.error is None), None)
    for r in group:
        if r is base:
            r.baseline, r.p_value = None, None
            continue
        if base is None:
            r.baseline = AdapterKind.BASE.value
            continue
        r.baseline = base.run
        if r.error is None:
            metric = "wer" if r.task == "ASR" else "bleu"
            r.p_value = bootstrap_significance(base.refs, base.hyps, r.hyps, metric, n_resamples, seed)
