import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from adapter_forge.errors import ConfigError, CTCInfeasibleError, ShapeError
from adapter_forge.losses import (
    composite_loss,
    ctc_loss,
    ctc_loss_batch,
    ctc_min_frames,
    lm_cross_entropy,
    quantity_loss,
)

from oracles import ctc_brute_force, random_log_distribution


def test_ctc_worked_case():
    lp = torch.log(torch.full((2, 2), 0.5, dtype=torch.float64))
    assert float(ctc_loss(lp, [1])) == pytest.approx(-math.log(0.75), abs=1e-12)
    assert -math.log(0.75) == pytest.approx(0.28768, abs=1e-5)


def test_ctc_certain_path():
    lp = torch.log(torch.tensor([[1e-300, 1.0]], dtype=torch.float64))
    assert float(ctc_loss(lp, [1])) == pytest.approx(0.0, abs=1e-12)


def test_ctc_matches_enumeration():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(60):
        T, C = int(rng.integers(1, 6)), int(rng.integers(2, 4))
        target = list(rng.integers(1, C, size=int(rng.integers(0, 4))))
        if ctc_min_frames(target) > T:
            continue
        lp = random_log_distribution(rng, T, C)
        ours = float(ctc_loss(torch.tensor(lp), target))
        worst = max(worst, abs(ours - ctc_brute_force(np.exp(lp), target)))
    assert worst < 1e-6


def test_ctc_matches_torch_reference_with_gradient():
    # torch's CTC backward assumes a log_softmax in front, so compare gradients through one
    rng = np.random.default_rng(1)
    B, T, C = 3, 12, 5
    x = torch.tensor(rng.standard_normal((B, T, C)), requires_grad=True)
    lengths = [12, 9, 7]
    targets = [[1, 2, 2, 3], [4, 4], [1, 2, 3]]
    ours = ctc_loss_batch(F.log_softmax(x, -1), lengths, targets)
    ours.sum().backward()
    g_ours, x.grad = x.grad.clone(), None
    flat = torch.tensor([k for t in targets for k in t])
    ref = F.ctc_loss(F.log_softmax(x, -1).transpose(0, 1), flat, torch.tensor(lengths),
                     torch.tensor([len(t) for t in targets]), blank=0, reduction="none")
    ref.sum().backward()
    assert torch.allclose(ours, ref, atol=1e-9)
    mask = torch.arange(T)[None, :, None] < torch.tensor(lengths)[:, None, None]
    assert torch.allclose(g_ours * mask, x.grad * mask, atol=1e-9)


def test_ctc_gradcheck():
    lp0 = torch.randn(2, 6, 4, dtype=torch.float64)
    fn = lambda x: ctc_loss_batch(F.log_softmax(x, -1), [6, 5], [[1, 3], [2, 2, 1]])
    assert torch.autograd.gradcheck(fn, (lp0.requires_grad_(),), eps=1e-6, atol=1e-6)


def test_ctc_infeasible_and_bad_labels():
    lp = torch.log_softmax(torch.randn(2, 3, dtype=torch.float64), -1)
    with pytest.raises(CTCInfeasibleError):
        ctc_loss(lp, [1, 1])  # needs a blank between the repeats: 3 frames
    with pytest.raises(ShapeError):
        ctc_loss(lp, [3])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_ctc_relabeling_invariance(seed):
    rng = np.random.default_rng(seed)
    T, C = 5, 4
    lp = random_log_distribution(rng, T, C)
    target = [1, 3, 2]
    perm = [0, *rng.permutation([1, 2, 3])]  # blank stays put
    relabelled = np.empty_like(lp)
    relabelled[:, perm] = lp
    a = float(ctc_loss(torch.tensor(lp), target))
    b = float(ctc_loss(torch.tensor(relabelled), [perm[k] for k in target]))
    assert a == pytest.approx(b, abs=1e-9)


def test_quantity_loss():
    alpha = torch.tensor([0.8, 0.8, 0.8], dtype=torch.float64, requires_grad=True)
    loss = quantity_loss(alpha, [3])
    assert float(loss.detach()) == pytest.approx(0.6)
    loss.backward()
    assert alpha.grad.tolist() == [-1.0, -1.0, -1.0]
    assert float(quantity_loss(torch.tensor([0.5, 1.5]), [2])) == 0.0
    over = torch.tensor([2.0, 2.0], requires_grad=True)
    quantity_loss(over, [1]).backward()
    assert over.grad.tolist() == [1.0, 1.0]


def test_cross_entropy_cases():
    V = 16
    targets = torch.tensor([[3, 5, 7]])
    mask = torch.tensor([[True, True, True]])
    uniform = torch.zeros(1, 3, V)
    assert float(lm_cross_entropy(uniform, targets, mask)) == pytest.approx(math.log(16))
    confident = F.one_hot(targets, V).float() * 100
    assert float(lm_cross_entropy(confident, targets, mask)) == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ShapeError):
        lm_cross_entropy(uniform, targets, torch.zeros(1, 3, dtype=torch.bool))


def test_cross_entropy_masked_mean():
    torch.manual_seed(0)
    logits = torch.randn(2, 4, 6, dtype=torch.float64)
    targets = torch.randint(0, 6, (2, 4))
    mask = torch.tensor([[True, False, True, False], [False, False, True, True]])
    logp = torch.log_softmax(logits, -1)
    picked = [-float(logp[b, t, targets[b, t]]) for b in range(2) for t in range(4) if mask[b, t]]
    assert float(lm_cross_entropy(logits, targets, mask)) == pytest.approx(sum(picked) / 4, abs=1e-12)
    assert float(lm_cross_entropy(logits, targets, mask, normalizer=8)) == pytest.approx(sum(picked) / 8)


def test_composite():
    bd = composite_loss(2.0, 1.0, 0.5)
    assert bd.total == pytest.approx(2.15)
    assert composite_loss(1.25).total == 1.25
    ctc_only = composite_loss(1.0, ctc=2.0)
    assert ctc_only.quantity is None and ctc_only.total == pytest.approx(1.2)
    with pytest.raises(ConfigError):
        composite_loss(1.0, 1.0, aux_weight=-0.1)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 1))
def test_composite_linear(ce, ctc, q, w):
    bd = composite_loss(ce, ctc, q, w)
    assert bd.total == pytest.approx(ce + w * ctc + w * q, abs=1e-6)
