import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from axialcast.grid import (
    NEG_INF,
    DimensionError,
    FeedForward,
    MaskError,
    combine_weights,
    feed_forward,
    layer_norm,
    mask_from_allowed,
    masked_attention,
    softmax_rows,
)
from oracles import brute_attention, hp_log_normalizer, hp_softmax


@pytest.fixture(autouse=True)
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def linear(d_in, d_out, weight=None, seed=0):
    torch.manual_seed(seed)
    lin = nn.Linear(d_in, d_out, bias=False).double()
    if weight is not None:
        with torch.no_grad():
            lin.weight.copy_(torch.as_tensor(weight, dtype=torch.float64))
    return lin


def identity(d):
    return linear(d, d, torch.eye(d))


# -- masked attention ----------------------------------------------------------


def test_single_vector_returns_value_projection():
    s = torch.tensor([[0.3, -1.2]])
    wq, wk, wv = linear(2, 2, seed=1), linear(2, 2, seed=2), linear(2, 2, seed=3)
    r, log_n = masked_attention(s, wq, wk, wv, torch.zeros(1, 1))
    assert torch.equal(r, wv(s))
    # one logit q.k / sqrt(d); n = exp(logit)
    logit = float((wq(s) @ wk(s).T)[0, 0].detach()) / math.sqrt(2)
    assert float(log_n[0, 0]) == pytest.approx(logit, abs=1e-15)


def test_single_vector_identity_maps_normalizer_is_one_for_zero_input():
    s = torch.zeros(1, 3)
    r, log_n = masked_attention(s, identity(3), identity(3), identity(3), torch.zeros(1, 1))
    assert float(log_n.exp()) == 1.0
    assert torch.equal(r, s)


def test_diagonal_only_mask_gives_own_value_rows():
    torch.manual_seed(0)
    s = torch.randn(3, 4)
    wq, wk, wv = linear(4, 4, seed=1), linear(4, 4, seed=2), linear(4, 4, seed=3)
    mask = mask_from_allowed(torch.eye(3, dtype=torch.bool))
    r, _ = masked_attention(s, wq, wk, wv, mask)
    assert torch.equal(r, wv(s))


def test_masked_attention_matches_double_loop_oracle():
    g = torch.Generator().manual_seed(42)
    s = torch.randn(4, 2, generator=g)
    ws = [torch.randn(2, 2, generator=g) for _ in range(3)]
    allowed = torch.rand(4, 4, generator=g) < 0.6
    allowed[torch.arange(4), torch.arange(4)] = True
    wq, wk, wv = (linear(2, 2, w) for w in ws)
    r, log_n = masked_attention(s, wq, wk, wv, mask_from_allowed(allowed))
    ref, norms = brute_attention(s.tolist(), *(w.tolist() for w in ws), allowed.tolist(), 2)
    assert np.abs(r.detach().numpy() - np.array(ref)).max() <= 1e-12
    assert np.abs(log_n[0].exp().detach().numpy() - np.array(norms)).max() <= 1e-12


def test_masked_attention_multihead_matches_per_head_oracle():
    g = torch.Generator().manual_seed(7)
    s = torch.randn(5, 4, generator=g)
    ws = [torch.randn(4, 4, generator=g) for _ in range(3)]
    allowed = torch.rand(5, 5, generator=g) < 0.5
    allowed[:, 0] = True
    r, _ = masked_attention(s, *(linear(4, 4, w) for w in ws), mask_from_allowed(allowed), heads=2)
    for h in range(2):
        rows = slice(2 * h, 2 * h + 2)
        ref, _ = brute_attention(s.tolist(), *(w[rows].tolist() for w in ws), allowed.tolist(), 2)
        assert np.abs(r[:, rows].detach().numpy() - np.array(ref)).max() <= 1e-12


def test_fully_masked_row_yields_zero_and_zero_normalizer():
    s = torch.randn(3, 2)
    allowed = torch.tensor([[False, False, False], [True, True, False], [True, True, True]])
    r, log_n = masked_attention(s, identity(2), identity(2), identity(2), mask_from_allowed(allowed))
    assert torch.equal(r[0], torch.zeros(2))
    assert float(log_n[0, 0].exp()) == 0.0
    assert torch.isfinite(r).all()


def test_masked_pairs_receive_exactly_zero_weight():
    g = torch.Generator().manual_seed(3)
    s = torch.randn(4, 3, generator=g)
    allowed = torch.rand(4, 4, generator=g) < 0.5
    allowed[:, 1] = True
    wq, wk = linear(3, 3, seed=4), linear(3, 3, seed=5)
    with torch.no_grad():
        p, _ = softmax_rows((wq(s) @ wk(s).T / math.sqrt(3)).masked_fill(~allowed, NEG_INF))
    assert torch.equal(p[~allowed], torch.zeros(int((~allowed).sum())))


def test_shape_mismatch_raises_dimension_error():
    with pytest.raises(DimensionError):
        masked_attention(torch.randn(3, 2), identity(2), identity(2), identity(2), torch.zeros(2, 2))
    with pytest.raises(DimensionError):
        masked_attention(torch.randn(3, 2), identity(3), identity(2), identity(2), torch.zeros(3, 3))


def test_non_sentinel_mask_value_rejected():
    mask = torch.zeros(2, 2)
    mask[0, 1] = -5.0
    with pytest.raises(MaskError):
        masked_attention(torch.randn(2, 2), identity(2), identity(2), identity(2), mask)


def test_masked_attention_gradients_match_finite_differences():
    g = torch.Generator().manual_seed(11)
    s = torch.randn(4, 3, generator=g, requires_grad=True)
    wq, wk, wv = linear(3, 3, seed=1), linear(3, 3, seed=2), linear(3, 3, seed=3)
    allowed = torch.tril(torch.ones(4, 4, dtype=torch.bool))
    mask = mask_from_allowed(allowed)
    assert torch.autograd.gradcheck(
        lambda x: masked_attention(x, wq, wk, wv, mask)[0], (s,), eps=1e-6, atol=1e-8, rtol=1e-4
    )


# -- softmax ---------------------------------------------------------------------


def test_softmax_zero_matrix():
    p, log_n = softmax_rows(torch.zeros(2, 2))
    assert torch.equal(p, torch.full((2, 2), 0.5))
    assert torch.allclose(log_n.exp(), torch.tensor([2.0, 2.0]), atol=0, rtol=1e-15)


def test_softmax_against_extended_precision():
    rng = np.random.default_rng(0)
    a = rng.normal(0, 3, (5, 5))
    p, log_n = softmax_rows(torch.as_tensor(a))
    for i in range(5):
        assert abs(float(log_n[i]) - hp_log_normalizer(a[i].tolist())) <= 1e-12
        assert np.abs(p[i].numpy() - np.array(hp_softmax(a[i].tolist()))).max() <= 1e-12


def test_softmax_survives_huge_logits():
    a = torch.tensor([[1000.0, 999.0], [-1000.0, -1001.0]])
    p, log_n = softmax_rows(a)
    assert torch.isfinite(p).all() and torch.isfinite(log_n).all()
    assert float(log_n[0]) == pytest.approx(1000 + math.log1p(math.exp(-1)), abs=1e-12)


def test_softmax_fully_masked_row_no_nan_gradient():
    a = torch.tensor([[NEG_INF, NEG_INF], [0.5, NEG_INF]], requires_grad=True)
    p, _ = softmax_rows(a)
    p.sum().backward()
    assert torch.isfinite(a.grad).all()
    assert torch.equal(p[0], torch.zeros(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 7), st.integers(1, 7))
def test_softmax_permutation_equivariance(seed, rows, cols):
    rng = np.random.default_rng(seed)
    a = torch.as_tensor(rng.normal(0, 2, (rows, cols)))
    a[torch.as_tensor(rng.random((rows, cols)) < 0.2)] = NEG_INF
    pr = torch.as_tensor(rng.permutation(rows))
    pc = torch.as_tensor(rng.permutation(cols))
    p, log_n = softmax_rows(a)
    p_rows, log_n_rows = softmax_rows(a[pr])
    assert (p_rows - p[pr]).abs().max() <= 1e-12
    assert torch.equal(torch.isneginf(log_n_rows), torch.isneginf(log_n[pr]))
    p_cols, _ = softmax_rows(a[:, pc])
    assert (p_cols - p[:, pc]).abs().max() <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_softmax_rows_are_stochastic(seed):
    rng = np.random.default_rng(seed)
    a = torch.as_tensor(rng.normal(0, 5, (6, 6)))
    a[torch.as_tensor(rng.random((6, 6)) < 0.3)] = NEG_INF
    p, _ = softmax_rows(a)
    live = ~torch.isneginf(a).all(-1)
    assert (p[live].sum(-1) - 1).abs().max() <= 1e-9 if live.any() else True
    assert torch.equal(p[~live], torch.zeros_like(p[~live]))


# -- combination weights ---------------------------------------------------------


def test_combine_weights_edges_and_ratio():
    lr = torch.tensor([NEG_INF, 0.0, math.log(3.0), 800.0])
    lc = torch.tensor([0.0, NEG_INF, math.log(1.0), 799.0])
    w = combine_weights(lr, lc)
    assert float(w[0]) == 0.0 and float(w[1]) == 1.0
    assert float(w[2]) == pytest.approx(0.75, abs=1e-15)
    assert float(w[3]) == pytest.approx(math.e / (math.e + 1), abs=1e-15)
    assert torch.equal(w + (1 - w), torch.ones(4))


# -- layer norm and feed-forward ---------------------------------------------------


def test_layer_norm_constant_vector_is_zero():
    out = layer_norm(torch.full((5,), 3.7), torch.ones(5), torch.zeros(5))
    assert torch.equal(out, torch.zeros(5))


def test_layer_norm_leaves_normalized_vector():
    x = torch.tensor([1.0, -1.0, 1.0, -1.0])
    out = layer_norm(x, torch.ones(4), torch.zeros(4))
    assert (out - x).abs().max() <= 1e-9


def test_layer_norm_moments():
    x = torch.as_tensor(np.random.default_rng(1).normal(4, 9, 64))
    out = layer_norm(x, torch.ones(64), torch.zeros(64))
    assert abs(float(out.mean())) <= 1e-9
    assert abs(float(out.var(unbiased=False)) - 1) <= 1e-6


def test_feed_forward_zero_weights_propagate_bias():
    ff = FeedForward(3, 5).double()
    with torch.no_grad():
        ff.inner.weight.zero_()
        ff.outer.weight.zero_()
        ff.inner.bias.copy_(torch.tensor([1.0, -1.0, 2.0, 0.0, 0.5]))
        ff.outer.bias.copy_(torch.tensor([0.1, 0.2, 0.3]))
    out = feed_forward(torch.randn(4, 3), ff)
    assert torch.equal(out, torch.tensor([0.1, 0.2, 0.3]).expand(4, 3))


def test_feed_forward_identity_on_nonnegative_input():
    ff = FeedForward(4, 4).double()
    with torch.no_grad():
        for lin in (ff.inner, ff.outer):
            lin.weight.copy_(torch.eye(4))
            lin.bias.zero_()
    x = torch.rand(2, 3, 4)
    assert torch.equal(ff(x), x)


def test_feed_forward_gradient_finite_differences():
    ff = FeedForward(4, 6).double()
    x = torch.randn(3, 3, 4, requires_grad=True)
    assert torch.autograd.gradcheck(ff, (x,), eps=1e-6, atol=1e-8, rtol=1e-4)


def test_feed_forward_rejects_empty_hidden():
    with pytest.raises(DimensionError):
        FeedForward(4, 0)
