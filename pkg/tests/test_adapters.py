import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from adapter_forge.adapters import (
    ALL_KINDS,
    AdapterConfig,
    AdapterKind,
    CifConfig,
    WlqConfig,
    build_adapter,
    cif_integrate_fire,
    cif_weights,
    compression_stats,
    ctc_collapse,
    label_runs,
    nominal_compression,
    output_length_law,
    window_length,
)
from adapter_forge.errors import ConfigError, ShapeError
from adapter_forge.numkernel import EncoderStackConfig, Linear, ParamStore, make_generator
from adapter_forge.sequence import FeatureSequence

TINY = AdapterConfig(core=EncoderStackConfig(4, 8, 16, 2), wlq=WlqConfig(n_layers=1), ctc_labels=5)


def seq(*lengths, dim=6, rate=50.0, dtype=torch.float64, seed=0):
    g = torch.Generator().manual_seed(seed)
    return FeatureSequence.from_list([torch.randn(n, dim, generator=g, dtype=dtype) for n in lengths], rate, dtype)


def tiny_adapter(kind, seed=0, cfg=TINY):
    store = ParamStore(torch.float64)
    return store, build_adapter(kind, 6, 10, store, cfg, seed=seed)


# --- construction and parameter accounting --------------------------------------------


def test_full_modality_core_identical_across_stack_kinds():
    counts = set()
    for kind in (AdapterKind.BASE, AdapterKind.CONV, AdapterKind.CIF, AdapterKind.CTC):
        counts.add(build_adapter(kind, 32, 64, ParamStore(), seed=None).param_breakdown()["modality"])
    assert counts == {28_351_488}


def test_wlq_is_a_single_block():
    b = build_adapter("wlq", 32, 64, ParamStore(), TINY).param_breakdown()
    assert b["modality"] == 0 and b["length"] == 0 and b["wlq"] == b["total"] > 0


def test_kind_parsing():
    assert AdapterKind.parse("conv") is AdapterKind.CONV
    assert AdapterKind.parse("CIFBASED") is AdapterKind.CIF
    assert [k.value for k in ALL_KINDS] == ["base", "convbased", "cifbased", "ctcbased", "wlqformer"]
    with pytest.raises(ConfigError):
        AdapterKind.parse("transformer")


def test_bad_dims():
    with pytest.raises(ConfigError):
        build_adapter("base", 0, 8, ParamStore(), TINY)


# --- shared interface suite -------------------------------------------------------------


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
def test_interface_contract(kind):
    _, adapter = tiny_adapter(kind)
    x = seq(40, 23, 9)
    transcripts = [[1, 2, 3], [4, 1], [2]]
    out = adapter(x, transcripts, training=True)
    assert out.features.dim == 10
    assert out.features.data.shape[0] == 3
    assert torch.all(out.out_lengths <= x.lengths)
    assert torch.all(out.out_lengths >= 1)
    padded = ~out.features.mask()
    assert torch.all(out.features.data[padded] == 0)
    if out.ctc_logprobs is not None:
        row_sums = out.ctc_logprobs.exp().sum(-1)[x.mask()]
        assert torch.allclose(row_sums, torch.ones_like(row_sums), atol=1e-5)
    if out.alpha is not None:
        valid = out.alpha[x.mask()]
        assert torch.all((valid > 0) & (valid < 1))
    # inference mode needs no transcripts
    adapter(x, training=False)


@pytest.mark.parametrize("kind", [AdapterKind.CIF, AdapterKind.CTC], ids=lambda k: k.value)
def test_content_kinds_need_transcripts_to_train(kind):
    _, adapter = tiny_adapter(kind)
    with pytest.raises(ConfigError):
        adapter(seq(10), training=True)


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
def test_padding_invariance(kind):
    _, adapter = tiny_adapter(kind)
    item = seq(18, seed=1).item(0)
    other_a, other_b = seq(20, seed=2).item(0), seq(35, seed=3).item(0)
    a = adapter(FeatureSequence.from_list([item, other_a], 50.0, torch.float64), [[1, 2], [3]], training=True)
    b = adapter(FeatureSequence.from_list([item, other_b], 50.0, torch.float64), [[1, 2], [4]], training=True)
    n = int(a.out_lengths[0])
    assert n == int(b.out_lengths[0])
    assert torch.allclose(a.features.data[0, :n], b.features.data[0, :n], atol=1e-10)


# --- length laws --------------------------------------------------------------------------


def test_base_and_conv_lengths():
    _, base = tiny_adapter("base")
    _, conv = tiny_adapter("conv")
    x = seq(40)
    assert base(x).out_lengths.tolist() == [40]
    assert conv(x).out_lengths.tolist() == [10]
    assert conv(seq(100)).features.frame_rate_hz == 12.5


def test_wlq_lengths():
    _, wlq = tiny_adapter("wlq")
    assert wlq(seq(33)).out_lengths.tolist() == [3]
    assert wlq(seq(16)).out_lengths.tolist() == [1]
    assert window_length(50.0, 0.33) == 16 and window_length(6.25, 0.33) == 2
    assert wlq(seq(16)).features.frame_rate_hz == pytest.approx(3.125)


@given(st.sampled_from([AdapterKind.BASE, AdapterKind.CONV, AdapterKind.WLQ]),
       st.lists(st.integers(1, 60), min_size=1, max_size=4), st.sampled_from([50.0, 6.25]))
@settings(max_examples=40, deadline=None)
def test_fixed_rate_laws(kind, lengths, rate):
    _, adapter = tiny_adapter(kind)
    out = adapter(seq(*lengths, rate=rate))
    expected = [output_length_law(kind, TINY, n, rate) for n in lengths]
    assert out.out_lengths.tolist() == expected


def test_ctc_adapter_length_is_run_count():
    _, adapter = tiny_adapter("ctc")
    x = seq(30, 12)
    out = adapter(x, [[1, 2], [3]], training=True)
    _, counts = label_runs(out.ctc_logprobs.argmax(-1), x.lengths)
    assert out.out_lengths.tolist() == counts.tolist()


def test_cif_adapter_training_length_is_transcript_length():
    _, adapter = tiny_adapter("cif")
    out = adapter(seq(30, 12), [[1, 2, 3, 4], [3]], training=True)
    assert out.out_lengths.tolist() == [4, 1]


# --- CIF --------------------------------------------------------------------------------


def frames(*rows):
    data = torch.tensor(rows, dtype=torch.float64)[None]
    return FeatureSequence(data, torch.tensor([len(rows)]), 50.0)


def test_cif_exact_threshold_hits():
    h = frames([1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 2.0])
    out, n = cif_integrate_fire(h, torch.tensor([[0.5] * 4], dtype=torch.float64), CifConfig(1.0, False))
    assert n.tolist() == [2]
    assert torch.allclose(out.data[0, 0], torch.tensor([0.5, 0.5], dtype=torch.float64))
    assert torch.allclose(out.data[0, 1], torch.tensor([1.0, 1.0], dtype=torch.float64))


def test_cif_boundary_split_and_discarded_residue():
    h = frames([1.0, 0.0], [0.0, 1.0])
    out, n = cif_integrate_fire(h, torch.tensor([[0.6, 0.6]], dtype=torch.float64), CifConfig(1.0, False))
    assert n.tolist() == [1]
    assert torch.allclose(out.data[0, 0], torch.tensor([0.6, 0.4], dtype=torch.float64))


def test_cif_scaled_to_target():
    h = frames(*[[float(i)] for i in range(4)])
    alpha = torch.tensor([[0.6, 0.6, 0.6, 0.6]], dtype=torch.float64)
    out, n = cif_integrate_fire(h, alpha, CifConfig(1.0, True), [3])
    assert n.tolist() == [3] and out.lengths.tolist() == [3]
    with pytest.raises(ConfigError):
        cif_integrate_fire(h, torch.zeros(1, 4, dtype=torch.float64), CifConfig(1.0, True), [3])
    with pytest.raises(ConfigError):
        cif_integrate_fire(h, alpha, CifConfig(1.0, True))


def test_cif_weights():
    store = ParamStore(torch.float64)
    head = Linear(store, "a", 3, 1, make_generator(0))
    with torch.no_grad():
        head.weight.zero_()
    h = FeatureSequence.from_list([torch.zeros(4, 3), torch.zeros(2, 3)], 50.0, torch.float64)
    alpha = cif_weights(h, head)
    assert torch.all(alpha[0] == 0.5) and torch.all(alpha[1, :2] == 0.5) and torch.all(alpha[1, 2:] == 0)
    x = seq(5, dim=3)
    with torch.no_grad():
        head.weight.normal_()
    lo = cif_weights(x, head)
    with torch.no_grad():
        head.bias.add_(0.3)
    assert torch.all(cif_weights(x, head) > lo)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_cif_scaled_group_weights_sum_to_beta(seed):
    rng = np.random.default_rng(seed)
    T, beta = int(rng.integers(1, 30)), float(rng.uniform(0.5, 2.0))
    target = int(rng.integers(1, 8))
    alpha = torch.tensor(rng.uniform(0.01, 0.99, (1, T)))
    # identity features expose the per-group weights directly
    h = FeatureSequence(torch.eye(T, dtype=torch.float64)[None], torch.tensor([T]), 50.0)
    out, n = cif_integrate_fire(h, alpha, CifConfig(beta, True), [target])
    assert int(n) == target
    sums = out.data[0, :target].sum(dim=1)
    assert torch.allclose(sums, torch.full_like(sums, beta), atol=1e-6)


def test_cif_inference_emits_at_least_one():
    h = frames([1.0], [2.0])
    out, n = cif_integrate_fire(h, torch.tensor([[0.1, 0.2]], dtype=torch.float64), CifConfig(1.0, False))
    assert n.tolist() == [1]
    assert float(out.data[0, 0, 0]) == pytest.approx(0.1 + 0.4)


# --- CTC collapse -------------------------------------------------------------------------


def one_hot_logprobs(labels, C=4):
    lp = torch.full((1, len(labels), C), -20.0, dtype=torch.float64)
    for t, k in enumerate(labels):
        lp[0, t, k] = 0.0
    return lp


def test_collapse_runs():
    h = frames(*[[float(i), 1.0] for i in range(6)])
    a, b = 1, 2
    out = ctc_collapse(h, one_hot_logprobs([a, a, 0, b, b, b]))
    assert out.lengths.tolist() == [3]
    assert torch.allclose(out.data[0], torch.tensor([[0.5, 1], [2, 1], [4, 1]], dtype=torch.float64))


def test_collapse_extremes():
    h = seq(13, dim=2)
    one = ctc_collapse(h, one_hot_logprobs([1] * 13))
    assert one.lengths.tolist() == [1]
    ratio, _ = compression_stats(13, 1, 50.0)
    assert ratio == 13
    alt = ctc_collapse(seq(4, dim=2), one_hot_logprobs([1, 2, 1, 2]))
    assert alt.lengths.tolist() == [4]


def test_collapse_gradient_flows_through_mean_only():
    h = seq(5, dim=2)
    data = h.data.clone().requires_grad_()
    lp = one_hot_logprobs([1, 1, 2, 2, 2]).requires_grad_()
    out = ctc_collapse(h.replace(data), lp)
    out.data.sum().backward()
    assert lp.grad is None
    # each frame contributes 1/run_length to its run mean
    expected = torch.tensor([1 / 2, 1 / 2, 1 / 3, 1 / 3, 1 / 3], dtype=torch.float64)
    assert torch.allclose(data.grad[0, :, 0], expected)


# --- compression accounting -----------------------------------------------------------


def test_compression_stats():
    ratio, rate = compression_stats(300, 100, 6.25)
    assert ratio == 3 and round(rate, 2) == 2.08
    ratio, rate = compression_stats(500, 20, 50.0)
    assert ratio == 25 and rate == pytest.approx(2.0)
    assert compression_stats(7, 7, 50.0) == (1.0, 50.0)
    with pytest.raises(ShapeError):
        compression_stats(5, 0, 50.0)


def test_nominal_compression_table():
    cfg = AdapterConfig()
    for rate in (50.0, 6.25):
        assert nominal_compression(AdapterKind.BASE, cfg, rate) == 1
        assert nominal_compression(AdapterKind.CONV, cfg, rate) == 4
        assert nominal_compression(AdapterKind.CIF, cfg, rate) is None
    assert round(50.0 / 4, 2) == 12.5 and round(6.25 / 4, 2) == 1.56
    assert 50.0 / nominal_compression(AdapterKind.WLQ, cfg, 50.0) == pytest.approx(3.125)
    assert nominal_compression(AdapterKind.WLQ, cfg, 6.25) == 2
    assert math.isclose(50.0 / window_length(50.0, 0.33), 3.125)
