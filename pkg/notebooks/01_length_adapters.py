"""How each adapter kind shortens a frame sequence.

Run with ``python notebooks/01_length_adapters.py``. Nothing is trained;
the point is the length arithmetic of each kind at the two encoder rates.
"""
import torch

from adapter_forge.adapters import ALL_KINDS, AdapterConfig, WlqConfig, build_adapter, compression_stats
from adapter_forge.numkernel import EncoderStackConfig, ParamStore
from adapter_forge.sequence import FeatureSequence

# A small configuration is enough: lengths do not depend on widths.
cfg = AdapterConfig(core=EncoderStackConfig(2, 16, 32, 2), wlq=WlqConfig(n_layers=1), ctc_labels=8)

# Two seconds of audio: 100 frames at 50 Hz, 12 or 13 at 6.25 Hz.
for rate, n_frames in ((50.0, 100), (6.25, 13)):
    x = FeatureSequence.from_list([torch.randn(n_frames, 8)], rate)
    print(f"\n{n_frames} frames at {rate:g} Hz")
    for kind in ALL_KINDS:
        adapter = build_adapter(kind, 8, 16, ParamStore(), cfg)
        # content-based kinds use a transcript to set their length while training;
        # at inference they decide from their own predictions
        out = adapter(x, transcripts=[[1, 2, 3, 4, 5]], training=True)
        n_out = int(out.out_lengths[0])
        ratio, hz = compression_stats(n_frames, n_out, rate)
        print(f"  {kind.value:10s} -> {n_out:3d} vectors  ratio {ratio:5.2f}:1  {hz:6.3f} Hz")

# CIF with train-time scaling emits exactly the transcript length (5 here),
# CTC collapse emits one vector per run of equal argmax labels, which for an
# untrained head is arbitrary. Base keeps every frame, Conv divides by 4 and
# WLQ emits one query per 0.33 s window.
