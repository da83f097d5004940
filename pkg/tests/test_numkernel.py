import math
import struct

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from adapter_forge.errors import ConfigError, FormatError, NonFiniteError, RegistrationError, ShapeError
from adapter_forge.numkernel import (
    FULL_SCHEDULE,
    FULL_STACK,
    AdamWState,
    Conv1d,
    EncoderStackConfig,
    ParamStore,
    ScheduleConfig,
    adamw_step,
    build_encoder_stack,
    conv1d_forward,
    count_params,
    encoder_forward,
    grad_check,
    load_checkpoint,
    lr_at_step,
    make_generator,
    save_checkpoint,
)
from adapter_forge.sequence import FeatureSequence


def closed_form(n, h, i):
    return n * (4 * (h * h + h) + (h * i + i) + (i * h + h) + 4 * h)


# --- parameter accounting -----------------------------------------------------


def test_full_stack_count():
    store = ParamStore()
    build_encoder_stack(EncoderStackConfig(4, 768, 3072, 12), store, "core", gen=make_generator(0))
    assert store.count() == 28_351_488
    assert FULL_STACK.param_count() == 28_351_488


def test_small_layer_count():
    store = ParamStore()
    build_encoder_stack(EncoderStackConfig(1, 8, 16, 2), store, "s")
    # closed form 4·72 + 144 + 136 + 32; the same formula gives the 28,351,488 above
    assert store.count() == 4 * (8 * 8 + 8) + (8 * 16 + 16) + (16 * 8 + 8) + 2 * 16 == 600


def test_two_layer_full_count_is_half():
    assert EncoderStackConfig(2, 768, 3072, 12).param_count() == 14_175_744


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 24))
@settings(max_examples=30, deadline=None)
def test_count_closed_form(n, heads, i):
    h = heads * 2
    store = ParamStore()
    build_encoder_stack(EncoderStackConfig(n, h, i, heads), store, "x")
    assert store.count() == closed_form(n, h, i)


def test_duplicate_prefix_rejected():
    store = ParamStore()
    cfg = EncoderStackConfig(1, 4, 8, 2)
    build_encoder_stack(cfg, store, "enc")
    with pytest.raises(RegistrationError):
        build_encoder_stack(cfg, store, "enc")
    with pytest.raises(RegistrationError):
        store.register("enc.layer0.ln_attn.gain", torch.ones(4))


def test_stack_config_validation():
    with pytest.raises(ConfigError):
        EncoderStackConfig(1, 10, 8, 3)
    with pytest.raises(ConfigError):
        EncoderStackConfig(0, 8, 8, 2)


def test_count_params_prefix_and_freezing():
    store = ParamStore()
    assert count_params(store) == 0
    store.register("lm.emb", torch.zeros(10, 4), frozen=True)
    store.register("adapter.w", torch.zeros(3, 4))
    store.register("adapterx.w", torch.zeros(2))
    assert count_params(store, trainable_only=True) == 14
    assert count_params(store, "adapter") == 12
    assert count_params(store, "nothing") == 0


def test_init_is_deterministic():
    a, b = ParamStore(), ParamStore()
    cfg = EncoderStackConfig(2, 8, 16, 2)
    build_encoder_stack(cfg, a, "s", gen=make_generator(3))
    build_encoder_stack(cfg, b, "s", gen=make_generator(3))
    assert a.checksum() == b.checksum()
    w = a["s.layer0.attn.q.weight"].detach()
    assert float(w.abs().max()) <= 0.04
    assert torch.all(a["s.layer0.attn.q.bias"] == 0) and torch.all(a["s.layer0.ln_attn.gain"] == 1)


# --- encoder forward ------------------------------------------------------------


def _stack(dtype=torch.float64, cfg=EncoderStackConfig(2, 8, 16, 2)):
    store = ParamStore(dtype)
    return store, build_encoder_stack(cfg, store, "enc", gen=make_generator(1))


def test_lengths_preserved():
    _, stack = _stack()
    x = FeatureSequence.from_list([torch.randn(7, 8), torch.randn(3, 8)], 50.0, torch.float64)
    y = encoder_forward(stack, x)
    assert y.lengths.tolist() == [7, 3]
    assert torch.all(y.data[1, 3:] == 0)


def test_padding_does_not_leak():
    _, stack = _stack()
    item = torch.randn(6, 8, dtype=torch.float64)
    short = FeatureSequence.from_list([item, torch.randn(10, 8)], 50.0, torch.float64)
    long = FeatureSequence.from_list([item, torch.randn(20, 8)], 50.0, torch.float64)
    a = encoder_forward(stack, short).data[0, :6]
    b = encoder_forward(stack, long).data[0, :6]
    assert torch.allclose(a, b, atol=1e-5)


def test_encoder_dim_mismatch():
    _, stack = _stack()
    with pytest.raises(ShapeError):
        encoder_forward(stack, FeatureSequence.from_list([torch.randn(3, 5)], 50.0))


def test_encoder_gradcheck_double():
    store, stack = _stack()
    x = FeatureSequence.from_list([torch.randn(5, 8, dtype=torch.float64)], 50.0, torch.float64)
    probe = torch.randn(1, 5, 8, dtype=torch.float64)
    report = grad_check(lambda: (encoder_forward(stack, x).data * probe).sum(), store, eps=1e-4)
    assert report.max_rel_error < 1e-4


# --- convolution ----------------------------------------------------------------


@pytest.mark.parametrize("length,expected", [(100, 50), (5, 3), (1, 1), (2, 1)])
def test_conv_length(length, expected):
    store = ParamStore()
    conv = Conv1d(store, "c", 4, 4, 3, 2, make_generator(0))
    y = conv1d_forward(conv, FeatureSequence.from_list([torch.randn(length, 4)], 50.0), 2, 3)
    assert y.lengths.tolist() == [expected] and y.max_len == expected
    assert y.frame_rate_hz == 25.0


def test_two_convs_give_quarter_length():
    store = ParamStore()
    g = make_generator(0)
    c1, c2 = Conv1d(store, "a", 4, 4, 3, 2, g), Conv1d(store, "b", 4, 4, 3, 2, g)
    y = c2(c1(FeatureSequence.from_list([torch.randn(100, 4)], 50.0)))
    assert y.lengths.tolist() == [25] and y.frame_rate_hz == 12.5


def test_conv_padding_does_not_leak():
    store = ParamStore(torch.float64)
    conv = Conv1d(store, "c", 3, 3, 3, 2, make_generator(0))
    item = torch.randn(7, 3, dtype=torch.float64)
    a = conv(FeatureSequence.from_list([item, torch.randn(9, 3)], 50.0, torch.float64))
    b = conv(FeatureSequence.from_list([item], 50.0, torch.float64))
    assert torch.allclose(a.data[0, :4], b.data[0, :4], atol=1e-12)


def test_conv_rejects_empty():
    store = ParamStore()
    conv = Conv1d(store, "c", 2, 2, 3, 2, make_generator(0))
    x = FeatureSequence(torch.zeros(1, 0, 2), torch.tensor([0]), 50.0)
    with pytest.raises(ShapeError):
        conv(x)


# --- gradient checker -------------------------------------------------------------


def test_gradcheck_quadratic():
    store = ParamStore(torch.float64)
    w = store.register("w", torch.tensor([1.0, 2.0]))
    store.register("frozen", torch.tensor([3.0]), frozen=True)
    report = grad_check(lambda: (w**2).sum(), store)
    assert report.max_rel_error < 1e-8
    assert set(report.per_entry) == {"w"}
    store.zero_grad()
    (w**2).sum().backward()
    assert w.grad.tolist() == [2.0, 4.0]


def test_gradcheck_catches_wrong_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return (x**3).sum()

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return g * 2 * x

    store = ParamStore(torch.float64)
    w = store.register("w", torch.tensor([1.0, -2.0, 0.5]))
    assert grad_check(lambda: Wrong.apply(w), store).max_rel_error > 0.1


def test_gradcheck_non_finite():
    store = ParamStore(torch.float64)
    w = store.register("w", torch.tensor([0.0]))
    with pytest.raises(NonFiniteError):
        grad_check(lambda: torch.log(w).sum(), store)


# --- optimizer and schedule ---------------------------------------------------------


def test_full_schedule_points():
    assert lr_at_step(FULL_SCHEDULE, 840) == pytest.approx(1e-4, abs=1e-15)
    assert lr_at_step(FULL_SCHEDULE, 420) == pytest.approx(5e-5, abs=1e-15)
    assert lr_at_step(FULL_SCHEDULE, 28000) == pytest.approx(0.0, abs=1e-15)
    assert lr_at_step(FULL_SCHEDULE, 30000) == 0.0


def test_schedule_shape():
    cfg = ScheduleConfig(1e-3, 50, 400, 1e-5)
    lrs = [lr_at_step(cfg, s) for s in range(0, 401)]
    assert max(lrs) == lrs[50] == pytest.approx(1e-3)
    assert all(a >= b for a, b in zip(lrs[50:], lrs[51:]))
    assert all(a <= b for a, b in zip(lrs[:50], lrs[1:51]))
    assert max(abs(a - b) for a, b in zip(lrs, lrs[1:])) < 1e-3 / 50 + 1e-12
    assert lrs[-1] == pytest.approx(1e-5)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        ScheduleConfig(1e-3, 500, 400, 0.0)
    with pytest.raises(ConfigError):
        ScheduleConfig(1e-3, 10, 400, 1e-2)


def test_adamw_hand_step():
    store = ParamStore(torch.float64)
    w = store.register("w", torch.tensor([1.0]))
    w.grad = torch.tensor([1.0], dtype=torch.float64)
    adamw_step(store, AdamWState(), 0.1, weight_decay=0.0)
    # bias-corrected m/sqrt(v) is exactly 1 after one step
    assert float(w.detach()) == pytest.approx(0.9, abs=1e-7)


def test_adamw_matches_torch_reference():
    rng = np.random.default_rng(0)
    init = rng.standard_normal((4, 3))
    store = ParamStore(torch.float64)
    w = store.register("w", torch.tensor(init))
    ref = torch.nn.Parameter(torch.tensor(init))
    opt = torch.optim.AdamW([ref], lr=1e-2, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05)
    state = AdamWState()
    for _ in range(5):
        g = torch.tensor(rng.standard_normal((4, 3)))
        w.grad, ref.grad = g.clone(), g.clone()
        adamw_step(store, state, 1e-2, weight_decay=0.05)
        opt.step()
    assert torch.allclose(w.detach(), ref.detach(), atol=1e-12)


def test_adamw_zero_lr_and_frozen():
    store = ParamStore(torch.float64)
    w = store.register("w", torch.tensor([1.0, 2.0]))
    f = store.register("f", torch.tensor([3.0]), frozen=True)
    w.grad = torch.ones(2, dtype=torch.float64)
    f.grad = torch.ones(1, dtype=torch.float64)
    adamw_step(store, AdamWState(), 0.0)
    assert w.tolist() == [1.0, 2.0]
    adamw_step(store, AdamWState(), 0.1)
    assert f.tolist() == [3.0]
    with pytest.raises(ConfigError):
        adamw_step(store, AdamWState(), -1.0)


def test_adamw_rejects_nan_step():
    store = ParamStore(torch.float64)
    a = store.register("a", torch.tensor([1.0]))
    b = store.register("b", torch.tensor([1.0]))
    a.grad = torch.tensor([1.0], dtype=torch.float64)
    b.grad = torch.tensor([math.nan], dtype=torch.float64)
    with pytest.raises(NonFiniteError, match="b"):
        adamw_step(store, AdamWState(), 0.1)
    assert a.tolist() == [1.0]


# --- checkpoints ---------------------------------------------------------------------


def test_checkpoint_layout(tmp_path):
    path = tmp_path / "c.afck"
    save_checkpoint(path, {"b": np.array([1.5], np.float32), "a": np.zeros((2, 3), np.float32)})
    buf = path.read_bytes()
    assert buf[:5] == b"AFCK1"
    # sorted: "a" first, rank 2, dims 2 and 3
    assert struct.unpack("<I", buf[5:9]) == (1,) and buf[9:10] == b"a"
    assert struct.unpack("<III", buf[10:22]) == (2, 2, 3)
    assert buf[-4:] == struct.pack("<f", 1.5)


def test_checkpoint_round_trip(tmp_path):
    store = ParamStore()
    build_encoder_stack(EncoderStackConfig(1, 4, 8, 2), store, "enc")
    store.save(tmp_path / "s.afck")
    other = ParamStore()
    build_encoder_stack(EncoderStackConfig(1, 4, 8, 2), other, "enc", gen=make_generator(9))
    other.load_values(load_checkpoint(tmp_path / "s.afck"))
    assert other.checksum() == store.checksum()


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "c.afck"
    save_checkpoint(path, {"w": np.ones(4, np.float32)})
    buf = path.read_bytes()
    (tmp_path / "magic.afck").write_bytes(b"XFCK1" + buf[5:])
    with pytest.raises(FormatError, match="byte 0"):
        load_checkpoint(tmp_path / "magic.afck")
    (tmp_path / "trunc.afck").write_bytes(buf[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(tmp_path / "trunc.afck")
