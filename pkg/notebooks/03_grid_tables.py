"""The full adapter x encoder-rate grid and its two report tables.

Run with ``python notebooks/03_grid_tables.py [out_dir]``. This is the
desk-scale experiment: an LM is pretrained once, then each of the ten cells
trains for 2000 steps. Expect well over half an hour on one core; set
``ADAPTER_FORGE_THREADS`` to run cells in parallel processes.
"""
import sys
from pathlib import Path

from adapter_forge.adapters import ALL_KINDS
from adapter_forge.harness import RunConfig, grid_run

out = Path(sys.argv[1] if len(sys.argv) > 1 else "nb-grid")
reports = grid_run(RunConfig(), [k.value for k in ALL_KINDS], ["whisper-like", "seamless-like"], out)

# compression.txt mirrors a ratio / sampling-rate table; metrics.txt carries
# WER, the paired-bootstrap p-value against Base and the best-in-group mark.
print((out / "compression.txt").read_text())
print((out / "metrics.txt").read_text())

failed = [r.run for r in reports if r.error]
if failed:
    print("failed cells:", ", ".join(failed))
