"""Dense-tensor substrate shared by every attention variant.

Masks are additive matrices holding only ``0`` (attend) or ``-inf`` (blocked).
Softmax normalizers are carried in the log domain: a fully-masked row has a
log-normalizer of ``-inf`` and a zero probability row.
"""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

NEG_INF = float("-inf")


class MaskError(ValueError):
    """A mask matrix holds something other than the 0 / -inf sentinels."""


class DimensionError(ValueError):
    pass


def validate_mask(mask: torch.Tensor) -> None:
    ok = (mask == 0) | (mask == NEG_INF)
    if not bool(ok.all()):
        bad = torch.nonzero(~ok)[0].tolist()
        raise MaskError(f"mask entry {tuple(bad)} is {mask[tuple(bad)].item()!r}, expected 0 or -inf")


def mask_from_allowed(allowed: torch.Tensor, dtype=torch.float64) -> torch.Tensor:
    """Boolean attend-matrix -> additive 0/-inf mask."""
    out = torch.zeros(allowed.shape, dtype=dtype)
    return out.masked_fill(~allowed, NEG_INF)


def softmax_rows(a: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Row-wise softmax over the last axis with an explicit log-normalizer.

    Returns ``(p, log_n)`` where ``log_n[..., i] = log(sum_j exp(a[..., i, j]))``.
    Rows whose entries are all ``-inf`` give a zero row in ``p`` and
    ``log_n = -inf``. The max-shift never leaks into gradients.
    """
    full = torch.isneginf(a).all(dim=-1, keepdim=True)
    shift = a.detach().amax(dim=-1, keepdim=True)
    shift = torch.where(full, torch.zeros_like(shift), shift)
    e = torch.exp(a - shift)
    n = e.sum(dim=-1, keepdim=True)
    safe_n = torch.where(full, torch.ones_like(n), n)
    p = torch.where(full, torch.zeros_like(e), e / safe_n)
    log_n = torch.where(full, torch.full_like(n, NEG_INF), torch.log(safe_n) + shift)
    return p, log_n.squeeze(-1)


def combine_weights(log_n_row: torch.Tensor, log_n_col: torch.Tensor) -> torch.Tensor:
    """Row share ``n_row / (n_row + n_col)`` computed as a sigmoid of log-normalizers.

    Exactly 0 where the row axis is fully masked and exactly 1 where the column
    axis is. Callers must reject cells where both are masked.
    """
    row_empty = torch.isneginf(log_n_row)
    col_empty = torch.isneginf(log_n_col)
    either = row_empty | col_empty
    diff = torch.where(either, torch.zeros_like(log_n_row), log_n_row - log_n_col)
    w = torch.sigmoid(diff)
    w = torch.where(col_empty, torch.ones_like(w), w)
    return torch.where(row_empty, torch.zeros_like(w), w)


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    """(..., S, D) -> (..., heads, S, D // heads)"""
    *lead, s, d = x.shape
    if d % heads:
        raise DimensionError(f"dimension {d} is not divisible by {heads} heads")
    return x.reshape(*lead, s, heads, d // heads).transpose(-2, -3)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    """(..., heads, S, dh) -> (..., S, heads * dh)"""
    *lead, h, s, dh = x.shape
    return x.transpose(-2, -3).reshape(*lead, s, h * dh)


def attention_logits(q: torch.Tensor, k: torch.Tensor, allowed: torch.Tensor, scale_dim: int) -> torch.Tensor:
    logits = q @ k.transpose(-1, -2) / math.sqrt(scale_dim)
    return logits.masked_fill(~allowed, NEG_INF)


def masked_attention(
    s: torch.Tensor,
    w_q: nn.Linear,
    w_k: nn.Linear,
    w_v: nn.Linear,
    mask: torch.Tensor,
    heads: int = 1,
    scale_dim: int | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Masked self-attention over a sequence ``s`` of shape (..., S, D).

    ``mask`` is an additive (S, S) mask (broadcastable over leading axes).
    Returns the per-head-concatenated result (..., S, D) and the
    log-normalizers (..., heads, S). A fully-masked query row yields zeros.
    """
    size = s.shape[-2]
    if mask.shape[-2:] != (size, size):
        raise DimensionError(f"mask is {tuple(mask.shape[-2:])}, sequence length is {size}")
    for name, m in (("w_q", w_q), ("w_k", w_k), ("w_v", w_v)):
        if m.in_features != s.shape[-1]:
            raise DimensionError(f"{name} expects dim {m.in_features}, got {s.shape[-1]}")
    validate_mask(mask)
    q = split_heads(w_q(s), heads)
    k = split_heads(w_k(s), heads)
    v = split_heads(w_v(s), heads)
    dh = q.shape[-1] if scale_dim is None else scale_dim
    allowed = (mask == 0).unsqueeze(-3)
    p, log_n = softmax_rows(attention_logits(q, k, allowed, dh))
    return merge_heads(p @ v), log_n


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return F.layer_norm(x, (x.shape[-1],), gain, bias, eps)


class LayerNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias, self.eps)


_ACTIVATIONS = {"relu": F.relu, "gelu": F.gelu, "tanh": torch.tanh}


class FeedForward(nn.Module):
    """Position-wise two-layer MLP: D -> hidden -> D."""

    def __init__(self, dim: int, hidden: int, activation: str = "relu"):
        super().__init__()
        if hidden < 1:
            raise DimensionError("hidden size must be >= 1")
        self.inner = nn.Linear(dim, hidden)
        self.outer = nn.Linear(hidden, dim)
        self.activation = activation
        self._act = _ACTIVATIONS[activation]

    def forward(self, x):
        return self.outer(self._act(self.inner(x)))


def feed_forward(x: torch.Tensor, block: FeedForward) -> torch.Tensor:
    return block(x)
