"""Tabular reports for a set of runs: compression table and metric table.

Both tables are written as UTF-8 TSV and as an aligned plain-text rendering.
In the text form the best score of each encoder-preset group is wrapped in
underscores, and ``*`` flags a cell that is *not* significantly different
from the Base adapter (p >= 0.05).
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

from ..adapters.config import AdapterKind
from .significance import significant
from .train import RunReport, write_loss_csv

COMPRESSION_COLUMNS = ("sfm_preset", "adapter", "compression_ratio", "sampling_rate_hz",
                       "measured_ratio", "measured_rate_hz")
METRIC_COLUMNS = ("sfm_preset", "adapter", "task", "wer", "bleu", "untrained_wer", "untrained_bleu",
                  "p_value", "mark", "best", "trainable_params", "error")
FOOTER = ("BLEU stands in for COMET on the toy translation task. "
          "* = not significantly better or worse than Base (paired bootstrap, p >= 0.05). "
          "_x_ = best in its encoder group.")


def _fmt(x, digits: int = 4) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return f"{x:.{digits}f}"
    return str(x)


def best_flags(reports: Sequence[RunReport]) -> list[bool]:
    """Best score per encoder preset; every tied report is flagged."""
    flags = [False] * len(reports)
    groups: dict[str, list[int]] = {}
    for i, r in enumerate(reports):
        if r.error is None and r.score is not None:
            groups.setdefault(r.sfm_preset, []).append(i)
    for idx in groups.values():
        lower_better = reports[idx[0]].task == "ASR"
        scores = [reports[i].score for i in idx]
        target = min(scores) if lower_better else max(scores)
        for i in idx:
            flags[i] = reports[i].score == target
    return flags


def significance_mark(report: RunReport) -> str:
    if report.baseline is None and report.adapter_kind == AdapterKind.BASE.value:
        return "baseline"
    if report.p_value is None:
        return ""
    return "" if significant(report.p_value) else "*"


def _sorted(reports: Sequence[RunReport]) -> list[RunReport]:
    # lexicographic adapter names inside a preset: tied bests come out in a fixed order
    return sorted(reports, key=lambda r: (r.sfm_preset, r.adapter_kind))


def compression_rows(reports: Sequence[RunReport]) -> list[list[str]]:
    return [[r.sfm_preset, r.adapter_kind, _fmt(r.mean_compression_ratio, 2), _fmt(r.out_rate_hz, 3),
             _fmt(r.measured_ratio, 2), _fmt(r.measured_rate_hz, 3)] for r in _sorted(reports)]


def metric_rows(reports: Sequence[RunReport]) -> list[list[str]]:
    ordered = _sorted(reports)
    flags = best_flags(ordered)
    rows = []
    for r, best in zip(ordered, flags):
        trainable = r.trainable_params.get("total", "") if r.trainable_params else ""
        rows.append([r.sfm_preset, r.adapter_kind, r.task, _fmt(r.wer), _fmt(r.bleu, 2),
                     _fmt(r.untrained_wer), _fmt(r.untrained_bleu, 2), _fmt(r.p_value),
                     significance_mark(r), "yes" if best else "", str(trainable), r.error or ""])
    return rows


def _tsv(columns, rows) -> str:
    return "\n".join("\t".join(row) for row in [list(columns), *rows]) + "\n"


def align(columns, rows) -> str:
    table = [list(columns), *rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(columns))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _text_metric_rows(rows: list[list[str]]) -> list[list[str]]:
    out = []
    for row in rows:
        row = list(row)
        score_col = 3 if row[2] == "ASR" else 4
        if row[9] == "yes" and row[score_col]:
            row[score_col] = f"_{row[score_col]}_"
        if row[8] == "*" and row[score_col]:
            row[score_col] += "*"
        out.append([row[0], row[1], row[2], row[3], row[4], row[5], row[7], row[10], row[11]])
    return out


def emit_report(reports: Sequence[RunReport], out_dir) -> dict[str, Path]:
    """Write compression/metric tables (and per-run loss curves) under ``out_dir``."""
    if not reports:
        raise ValueError("emit_report needs at least one run")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    comp, met = compression_rows(reports), metric_rows(reports)
    paths = {
        "compression.tsv": out_dir / "compression.tsv",
        "compression.txt": out_dir / "compression.txt",
        "metrics.tsv": out_dir / "metrics.tsv",
        "metrics.txt": out_dir / "metrics.txt",
    }
    paths["compression.tsv"].write_text(_tsv(COMPRESSION_COLUMNS, comp), encoding="utf-8")
    paths["compression.txt"].write_text(align(COMPRESSION_COLUMNS, comp), encoding="utf-8")
    paths["metrics.tsv"].write_text(_tsv(METRIC_COLUMNS, met), encoding="utf-8")
    text_cols = ("sfm_preset", "adapter", "task", "wer", "bleu", "untrained_wer", "p_value",
                 "trainable_params", "error")
    paths["metrics.txt"].write_text(align(text_cols, _text_metric_rows(met)) + "\n" + FOOTER + "\n",
                                    encoding="utf-8")
    for r in reports:
        if r.loss_curve and r.run:
            run_dir = out_dir / r.run
            run_dir.mkdir(parents=True, exist_ok=True)
            write_loss_csv(run_dir / "loss.csv", r.loss_curve)
            paths[f"{r.run}/loss.csv"] = run_dir / "loss.csv"
    return paths
