"""Train a single adapter between the frozen toy encoder and toy LM.

Run with ``python notebooks/02_train_one_adapter.py [work_dir]``. Takes a
few minutes on one CPU core with the defaults below; raise ``STEPS`` to
2000 for the desk-scale setting used by the grid.
"""
import sys
from dataclasses import replace
from pathlib import Path

from adapter_forge.datasynth import SynthSpec, build_dataset
from adapter_forge.harness import RunConfig, prepare_lm, train_adapter

work = Path(sys.argv[1] if len(sys.argv) > 1 else "nb-work")
STEPS = 400
spec = SynthSpec()

# 1. A synthetic corpus at the slow encoder rate: each word is a run of noisy
#    copies of its prototype vector, about 2 frames per word at 6.25 Hz.
manifest_path = work / "data" / "manifest.tsv"
if not manifest_path.exists():
    build_dataset(spec, 2000, 6.25, work / "data")

# 2. Pretrain the toy LM on text laid out like the joined input, then freeze it.
lm_path = work / "lm.afck"
if not lm_path.exists():
    report = prepare_lm(lm_path, spec)
    print(f"LM perplexity {report.untrained_ppl:.2f} -> {report.trained_ppl:.2f}")

# 3. Train the CTC-based adapter; only adapter parameters change.
cfg = replace(RunConfig(), adapter_kind="ctc", sfm_preset="seamless-like", lm_checkpoint=str(lm_path),
              manifest=str(manifest_path), steps=STEPS)
cfg = replace(cfg, schedule=replace(cfg.schedule, total_steps=STEPS))
result = train_adapter(cfg, work / "ctc-run", evaluate_untrained=True)
r = result.report

print(f"WER untrained {r.untrained_wer:.3f} -> trained {r.wer:.3f}")
print(f"measured compression {r.measured_ratio:.2f}:1, {r.measured_rate_hz:.2f} Hz out")
print(f"frozen encoder/LM unchanged: {r.frozen_checksums_ok}")
for ref, hyp in list(zip(r.refs, r.hyps))[:5]:
    print(f"  ref {ref!r:28s} hyp {hyp!r}")
