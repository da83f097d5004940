"""Transformer and convolution building blocks backed by a ParamStore."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ..errors import ConfigError, RegistrationError, ShapeError
from ..sequence import FeatureSequence, lengths_to_mask
from .params import ParamStore

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderStackConfig:
    n_layers: int = 4
    hidden: int = 768
    intermediate: int = 3072
    n_heads: int = 12

    def __post_init__(self):
        if min(self.n_layers, self.hidden, self.intermediate, self.n_heads) < 1:
            raise ConfigError(f"all encoder dimensions must be >= 1: {self}")
        if self.hidden % self.n_heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by n_heads={self.n_heads}")

    def param_count(self) -> int:
        h, i = self.hidden, self.intermediate
        return self.n_layers * (4 * (h * h + h) + (h * i + i) + (i * h + h) + 4 * h)


FULL_STACK = EncoderStackConfig(4, 768, 3072, 12)


def make_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


# passed instead of a generator: allocate without drawing (parameter counting)
class _Uninitialised:
    def __repr__(self):
        return "UNINITIALISED"


UNINITIALISED = _Uninitialised()


def trunc_normal(shape, gen: torch.Generator, std: float = INIT_STD) -> torch.Tensor:
    if gen is UNINITIALISED:
        return torch.empty(shape)
    t = torch.empty(shape, dtype=torch.float64)
    torch.nn.init.trunc_normal_(t, 0.0, std, -2 * std, 2 * std, generator=gen)
    return t


def _claim_prefix(store: ParamStore, prefix: str) -> None:
    if store.has_prefix(prefix):
        raise RegistrationError(f"name prefix {prefix!r} already in use")


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, gen: torch.Generator,
                 bias: bool = True, frozen: bool = False):
        self.weight = store.register(f"{name}.weight", trunc_normal((d_out, d_in), gen), frozen)
        self.bias = store.register(f"{name}.bias", torch.zeros(d_out), frozen) if bias else None

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, frozen: bool = False, eps: float = 1e-5):
        self.gain = store.register(f"{name}.gain", torch.ones(dim), frozen)
        self.bias = store.register(f"{name}.bias", torch.zeros(dim), frozen)
        self.eps = eps

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return F.layer_norm(x, self.gain.shape, self.gain, self.bias, self.eps)


def attention_bias(key_mask: torch.Tensor | None, tq: int, tk: int, causal: bool, dtype) -> torch.Tensor | None:
    """Additive (B or 1, 1, Tq, Tk) mask: 0 where attention is allowed, a huge negative elsewhere."""
    if key_mask is None and not causal:
        return None
    allowed = torch.ones(1, 1, tq, tk, dtype=torch.bool)
    if key_mask is not None:
        allowed = allowed & key_mask[:, None, None, :]
    if causal:
        allowed = allowed & torch.ones(tq, tk, dtype=torch.bool).tril()
    bias = torch.zeros(allowed.shape, dtype=dtype)
    return bias.masked_fill(~allowed, torch.finfo(dtype).min)


def masked_softmax_attention(q, k, v, key_mask=None, causal: bool = False, bias=None):
    """Scaled dot-product attention over (B, heads, T, dh) tensors.

    ``key_mask`` is (B, Tk) with True on keys that may be attended to; a
    precomputed additive ``bias`` may be passed instead. Rows with no
    admissible key fall back to a uniform average, which only happens on
    padded query positions that callers zero out afterwards.
    """
    if bias is None:
        bias = attention_bias(key_mask, q.shape[-2], k.shape[-2], causal, q.dtype)
    return F.scaled_dot_product_attention(q, k, v, attn_mask=bias)


class MultiHeadAttention:
    """Four projections (q, k, v, out), each ``hidden x hidden`` plus bias."""

    def __init__(self, store, name, hidden, n_heads, gen, frozen=False):
        self.n_heads = n_heads
        self.q = Linear(store, f"{name}.q", hidden, hidden, gen, frozen=frozen)
        self.k = Linear(store, f"{name}.k", hidden, hidden, gen, frozen=frozen)
        self.v = Linear(store, f"{name}.v", hidden, hidden, gen, frozen=frozen)
        self.out = Linear(store, f"{name}.out", hidden, hidden, gen, frozen=frozen)

    def _split(self, x):
        b, t, h = x.shape
        return x.view(b, t, self.n_heads, h // self.n_heads).transpose(1, 2)

    def __call__(self, x, context=None, key_mask=None, causal=False, bias=None):
        context = x if context is None else context
        q, k, v = self._split(self.q(x)), self._split(self.k(context)), self._split(self.v(context))
        y = masked_softmax_attention(q, k, v, key_mask, causal, bias)
        b, _, t, _ = y.shape
        return self.out(y.transpose(1, 2).reshape(b, t, -1))


class FeedForward:
    def __init__(self, store, name, hidden, intermediate, gen, frozen=False):
        self.up = Linear(store, f"{name}.up", hidden, intermediate, gen, frozen=frozen)
        self.down = Linear(store, f"{name}.down", intermediate, hidden, gen, frozen=frozen)

    def __call__(self, x):
        return self.down(F.gelu(self.up(x)))


class EncoderLayer:
    """Pre-norm transformer layer; ``causal`` turns it into a decoder block."""

    def __init__(self, store, name, cfg: EncoderStackConfig, gen, frozen=False):
        self.ln_attn = LayerNorm(store, f"{name}.ln_attn", cfg.hidden, frozen)
        self.attn = MultiHeadAttention(store, f"{name}.attn", cfg.hidden, cfg.n_heads, gen, frozen)
        self.ln_ffn = LayerNorm(store, f"{name}.ln_ffn", cfg.hidden, frozen)
        self.ffn = FeedForward(store, f"{name}.ffn", cfg.hidden, cfg.intermediate, gen, frozen)

    def __call__(self, x, key_mask=None, causal=False, bias=None):
        x = x + self.attn(self.ln_attn(x), key_mask=key_mask, causal=causal, bias=bias)
        return x + self.ffn(self.ln_ffn(x))


class EncoderStack:
    def __init__(self, cfg: EncoderStackConfig, layers: list[EncoderLayer], prefix: str):
        self.cfg = cfg
        self.layers = layers
        self.prefix = prefix

    def run(self, x: torch.Tensor, mask: torch.Tensor, start: int = 0, stop: int | None = None,
            causal: bool = False) -> torch.Tensor:
        """Apply layers ``[start, stop)`` to raw (B, T, H) data."""
        keep = mask[..., None].to(x.dtype)
        bias = attention_bias(mask, x.shape[1], x.shape[1], causal, x.dtype)
        x = x * keep
        for layer in self.layers[start:stop]:
            x = layer(x, causal=causal, bias=bias) * keep
        return x


def build_encoder_stack(cfg: EncoderStackConfig, store: ParamStore, name_prefix: str,
                        gen: torch.Generator | None = None, frozen: bool = False) -> EncoderStack:
    _claim_prefix(store, name_prefix)
    gen = make_generator(0) if gen is None else gen
    layers = [EncoderLayer(store, f"{name_prefix}.layer{i}", cfg, gen, frozen) for i in range(cfg.n_layers)]
    return EncoderStack(cfg, layers, name_prefix)


def encoder_forward(stack: EncoderStack, x: FeatureSequence, mask: torch.Tensor | None = None,
                    start: int = 0, stop: int | None = None) -> FeatureSequence:
    if x.dim != stack.cfg.hidden:
        raise ShapeError(f"input dim {x.dim} != encoder hidden {stack.cfg.hidden}")
    mask = x.mask() if mask is None else mask
    if mask.shape != (x.batch_size, x.max_len):
        raise ShapeError("padding mask does not match the sequence batch")
    return x.replace(stack.run(x.data, mask, start, stop))


def sinusoidal_positions(n: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    freq = torch.exp(-math.log(10000.0) * torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    table = torch.zeros(n, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq)[:, : dim // 2]
    return table.to(dtype)


class Conv1d:
    """1-D convolution over time with ceil(T / stride) output frames."""

    def __init__(self, store, name, c_in, c_out, kernel, stride, gen, frozen=False):
        if stride < 1 or kernel < 1:
            raise ConfigError("stride and kernel must be >= 1")
        self.kernel, self.stride = kernel, stride
        self.weight = store.register(f"{name}.weight", trunc_normal((c_out, c_in, kernel), gen), frozen)
        self.bias = store.register(f"{name}.bias", torch.zeros(c_out), frozen)

    def __call__(self, x: FeatureSequence) -> FeatureSequence:
        return conv1d_forward(self, x, self.stride, self.kernel)


def conv1d_forward(params: Conv1d, x: FeatureSequence, stride: int, kernel: int) -> FeatureSequence:
    if stride < 1 or kernel < 1:
        raise ConfigError("stride and kernel must be >= 1")
    if x.max_len == 0 or int(x.lengths.min()) == 0:
        raise ShapeError("cannot convolve an empty sequence")
    left = (kernel - 1) // 2
    out_len = -(-x.max_len // stride)
    # right padding generous enough that every ceil(T/stride) window exists
    padded = F.pad(x.data.transpose(1, 2), (left, kernel + stride))
    y = F.conv1d(padded, params.weight, params.bias, stride=stride)[:, :, :out_len].transpose(1, 2)
    lengths = torch.div(x.lengths + stride - 1, stride, rounding_mode="floor")
    return x.replace(y, lengths, x.frame_rate_hz / stride)


def padding_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    return lengths_to_mask(lengths, max_len)
