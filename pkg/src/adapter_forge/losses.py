"""Training objectives: LM cross-entropy, CTC, CIF quantity loss and their sum."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, CTCInfeasibleError, ShapeError

AUX_WEIGHT = 0.1
BLANK = 0


def ctc_min_frames(target: Sequence[int]) -> int:
    """Fewest frames that admit an alignment: one per label plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _lse(*arrays):
    stacked = np.stack(arrays)
    top = stacked.max(axis=0)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(stacked - safe).sum(axis=0))


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    """Shift along the state axis: k > 0 reads state s-k, k < 0 reads s+|k|."""
    out = np.full_like(x, -np.inf)
    S = x.shape[1]
    if abs(k) < S:
        if k > 0:
            out[:, k:] = x[:, : S - k]
        else:
            out[:, : S + k] = x[:, -k:]
    return out


def _ctc_forward_backward(lp: np.ndarray, lengths: np.ndarray, targets: list[list[int]]):
    """Log-space alpha/beta recursions for a padded batch.

    ``lp`` is (B, T, C) log-probabilities. Returns per-item negative log
    likelihoods and their gradient with respect to ``lp``.
    """
    B, T, C = lp.shape
    S = 2 * max((len(y) for y in targets), default=0) + 1
    ext = np.full((B, S), BLANK, dtype=np.int64)
    n_states = np.empty(B, dtype=np.int64)
    for b, y in enumerate(targets):
        ext[b, 1 : 2 * len(y) : 2] = y
        n_states[b] = 2 * len(y) + 1
    s_idx = np.arange(S)
    valid_state = s_idx[None, :] < n_states[:, None]
    # a skip from s-2 is allowed into a non-blank state whose label differs from s-2
    skip = np.zeros((B, S), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != BLANK) & (ext[:, 2:] != ext[:, :-2])
    emit = np.take_along_axis(lp, np.broadcast_to(ext[:, None, :], (B, T, S)), axis=2)
    emit = np.where(valid_state[:, None, :], emit, -np.inf)

    ninf = -np.inf
    alpha = np.full((B, T, S), ninf)
    alpha[:, 0, 0] = emit[:, 0, 0]
    if S > 1:
        alpha[:, 0, 1] = np.where(n_states > 1, emit[:, 0, 1], ninf)
    for t in range(1, T):
        prev = alpha[:, t - 1]
        from1 = _shift(prev, 1)
        from2 = np.where(skip, _shift(prev, 2), ninf)
        alpha[:, t] = _lse(prev, from1, from2) + emit[:, t]

    bidx = np.arange(B)
    last = lengths - 1
    a_last = alpha[bidx, last]
    end1 = a_last[bidx, n_states - 1]
    end2 = np.where(n_states > 1, a_last[bidx, np.maximum(n_states - 2, 0)], ninf)
    log_p = np.logaddexp(end1, end2)

    beta = np.full((B, T, S), ninf)
    skip_next = np.zeros((B, S), dtype=bool)
    skip_next[:, :-2] = skip[:, 2:]
    for t in range(T - 1, -1, -1):
        init = np.full((B, S), ninf)
        init[bidx, n_states - 1] = emit[bidx, t, n_states - 1]
        two = n_states > 1
        init[bidx[two], n_states[two] - 2] = emit[bidx[two], t, n_states[two] - 2]
        if t == T - 1:
            rec = np.full((B, S), ninf)
        else:
            nxt = beta[:, t + 1]
            to1 = _shift(nxt, -1)
            to2 = np.where(skip_next, _shift(nxt, -2), ninf)
            rec = _lse(nxt, to1, to2) + emit[:, t]
        row = np.where((t == last)[:, None], init, np.where((t < last)[:, None], rec, ninf))
        beta[:, t] = row

    with np.errstate(invalid="ignore"):
        occ = np.exp(alpha + beta - emit - log_p[:, None, None])
    occ = np.where(np.isfinite(occ), occ, 0.0)
    grad = np.zeros_like(lp)
    for b in range(B):
        np.add.at(grad[b], (slice(None), ext[b]), -occ[b])
    return -log_p, grad


class _CTCFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, logprobs, lengths, targets):
        lp = logprobs.detach().cpu().numpy().astype(np.float64)
        nll, grad = _ctc_forward_backward(lp, lengths.cpu().numpy(), targets)
        ctx.save_for_backward(torch.as_tensor(grad, dtype=logprobs.dtype))
        return torch.as_tensor(nll, dtype=logprobs.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad * grad_out[:, None, None], None, None


def ctc_loss_batch(logprobs: torch.Tensor, lengths, targets: Sequence[Sequence[int]]) -> torch.Tensor:
    """Per-item CTC negative log-likelihood for a padded (B, T, C) batch.

    Column 0 of the distribution is the blank; labels are ``1..C-1``.
    """
    if logprobs.dim() != 3:
        raise ShapeError("logprobs must be (B, T, C)")
    lengths = torch.as_tensor(lengths, dtype=torch.long)
    targets = [list(map(int, y)) for y in targets]
    if len(targets) != logprobs.shape[0]:
        raise ShapeError("one target per batch item required")
    for b, y in enumerate(targets):
        if any(not 0 < k < logprobs.shape[2] for k in y):
            raise ShapeError(f"target {b} has labels outside 1..{logprobs.shape[2] - 1}")
        need = ctc_min_frames(y)
        if int(lengths[b]) < max(need, 1):
            raise CTCInfeasibleError(f"item {b}: {int(lengths[b])} frames cannot align {len(y)} labels (need {need})")
    return _CTCFunction.apply(logprobs, lengths, targets)


def ctc_loss(logprobs: torch.Tensor, target: Sequence[int]) -> torch.Tensor:
    """CTC negative log-likelihood of one (T, C) log-distribution."""
    return ctc_loss_batch(logprobs[None], [logprobs.shape[0]], [target])[0]


def quantity_loss(alpha: torch.Tensor, target_lens, reduction: str = "sum") -> torch.Tensor:
    """``|sum(alpha) - target_len|`` per item; padded frames must carry zero weight."""
    if alpha.dim() == 1:
        alpha = alpha[None]
    target = torch.as_tensor(target_lens, dtype=alpha.dtype).reshape(-1)
    per_item = (alpha.sum(dim=1) - target).abs()
    return per_item.sum() if reduction == "sum" else per_item.mean() if reduction == "mean" else per_item


def lm_cross_entropy(logits: torch.Tensor, targets: torch.Tensor, loss_mask: torch.Tensor,
                     normalizer: float | None = None) -> torch.Tensor:
    """Mean next-token NLL over the positions where ``loss_mask`` is True.

    ``normalizer`` overrides the token count in the denominator, which lets
    gradient accumulation reproduce the mean over a larger batch exactly.
    """
    n = int(loss_mask.sum())
    if n == 0:
        raise ShapeError("loss mask selects no positions")
    logp = F.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.clamp(min=0)[..., None])[..., 0]
    total = -(picked * loss_mask.to(picked.dtype)).sum()
    return total / (n if normalizer is None else normalizer)


@dataclass
class LossBreakdown:
    """Loss components; values are tensors while training, floats in reports."""

    ce: object
    ctc: object | None
    quantity: object | None
    total: object
    aux_weight: float = AUX_WEIGHT

    def as_floats(self) -> "LossBreakdown":
        f = lambda v: None if v is None else float(v)
        return LossBreakdown(f(self.ce), f(self.ctc), f(self.quantity), f(self.total), self.aux_weight)


def composite_loss(ce, ctc=None, quantity=None, aux_weight: float = AUX_WEIGHT) -> LossBreakdown:
    if aux_weight < 0:
        raise ConfigError("aux_weight must be non-negative")
    total = ce
    if ctc is not None:
        total = total + aux_weight * ctc
    if quantity is not None:
        total = total + aux_weight * quantity
    return LossBreakdown(ce, ctc, quantity, total, aux_weight)
