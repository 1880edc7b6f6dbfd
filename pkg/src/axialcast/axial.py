"""Additive axial attention over an (agents x steps) grid of embeddings.

Row attention runs along each agent's time-series, column attention across the
agents of each step. Both use the same Q/K/V projections, and their results
are blended per cell by the share of the softmax normalizer each axis
contributes, which makes the operation identical to one masked self-attention
over the unravelled grid (see :func:`sequential_oracle`).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .grid import (
    NEG_INF,
    FeedForward,
    LayerNorm,
    attention_logits,
    combine_weights,
    mask_from_allowed,
    masked_attention,
    softmax_rows,
    validate_mask,
)


class DisjointnessError(ValueError):
    """A cell may attend to itself on both axes."""


class DegenerateCellError(ValueError):
    """A cell has nothing to attend to on either axis."""


@dataclass(frozen=True)
class AxialMaskSet:
    """Additive masks for every row (W x W each) and column (H x H each).

    ``row`` has shape (..., H, W, W) and ``col`` (..., W, H, H); the agent
    axis of ``row`` and the step axis of ``col`` may be 1 to broadcast.
    """

    row: torch.Tensor
    col: torch.Tensor

    @classmethod
    def from_allowed(cls, row_allowed, col_allowed, dtype=torch.float64) -> "AxialMaskSet":
        return cls(mask_from_allowed(row_allowed, dtype), mask_from_allowed(col_allowed, dtype))

    @property
    def steps(self) -> int:
        return self.row.shape[-1]

    @property
    def agents(self) -> int:
        return self.col.shape[-1]

    def row_allowed(self) -> torch.Tensor:
        return self.row == 0

    def col_allowed(self) -> torch.Tensor:
        return self.col == 0

    def check(self, agents: int, steps: int, disjoint: bool = True) -> None:
        if self.row.shape[-2:] != (steps, steps) or self.row.shape[-3] not in (1, agents):
            raise ValueError(f"row masks {tuple(self.row.shape)} do not fit a {agents}x{steps} grid")
        if self.col.shape[-2:] != (agents, agents) or self.col.shape[-3] not in (1, steps):
            raise ValueError(f"column masks {tuple(self.col.shape)} do not fit a {agents}x{steps} grid")
        validate_mask(self.row)
        validate_mask(self.col)
        row_ok = self.row_allowed()
        col_ok = self.col_allowed()
        if disjoint:
            row_self = torch.diagonal(row_ok, dim1=-2, dim2=-1)  # (..., H, W)
            col_self = torch.diagonal(col_ok, dim1=-2, dim2=-1).transpose(-1, -2)
            both = row_self & col_self
            if bool(both.any()):
                idx = torch.nonzero(both)[0].tolist()
                i, j = idx[-2], idx[-1]
                raise DisjointnessError(f"cell ({i}, {j}) attends to itself on both axes")
        empty = ~row_ok.any(-1) & ~col_ok.any(-1).transpose(-1, -2)
        if bool(empty.any()):
            idx = torch.nonzero(empty)[0].tolist()
            raise DegenerateCellError(f"cell ({idx[-2]}, {idx[-1]}) cannot attend to anything")


class UnravelPermutation:
    """Maps a column-major flattening of an H x W grid onto row-major order.

    ``perm[r]`` is the column-major position of the element that lands at
    row-major position ``r``, so ``x_row_major = x_col_major[perm]``.
    """

    def __init__(self, agents: int, steps: int):
        self.agents = agents
        self.steps = steps
        r = torch.arange(agents * steps)
        i, j = r // steps, r % steps
        self.perm = j * agents + i

    def inverse(self) -> torch.Tensor:
        inv = torch.empty_like(self.perm)
        inv[self.perm] = torch.arange(self.perm.numel())
        return inv

    def matrix(self, dtype=torch.float64) -> torch.Tensor:
        n = self.perm.numel()
        p = torch.zeros(n, n, dtype=dtype)
        p[torch.arange(n), self.perm] = 1
        return p

    def apply(self, x_col_major: torch.Tensor, dim: int = -2) -> torch.Tensor:
        return x_col_major.index_select(dim, self.perm)


class AxialAttention(nn.Module):
    """Q/K/V projections shared between the row and the column operation."""

    def __init__(self, dim: int, heads: int = 1, scale_dim: int | None = None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.scale_dim = scale_dim or dim // heads
        self.w_q = nn.Linear(dim, dim, bias=False)
        self.w_k = nn.Linear(dim, dim, bias=False)
        self.w_v = nn.Linear(dim, dim, bias=False)
        self.w_o = nn.Linear(dim, dim) if heads > 1 else None

    def _heads(self, x):
        # (..., H, W, D) -> (..., h, H, W, dh)
        *lead, hh, ww, d = x.shape
        x = x.reshape(*lead, hh, ww, self.heads, d // self.heads)
        return x.movedim(-2, -4)

    def _merge(self, x):
        x = x.movedim(-4, -2)
        x = x.reshape(*x.shape[:-2], self.dim)
        return self.w_o(x) if self.w_o is not None else x

    def project(self, g):
        return self._heads(self.w_q(g)), self._heads(self.w_k(g)), self._heads(self.w_v(g))

    def rows(self, q, k, v, row_allowed):
        """Attention along each row; returns (..., h, H, W, dh) and log-normalizers (..., h, H, W)."""
        p, log_n = softmax_rows(attention_logits(q, k, row_allowed.unsqueeze(-4), self.scale_dim))
        return p @ v, log_n

    def cols(self, q, k, v, col_allowed):
        """Attention along each column, returned in (..., h, H, W, ...) layout."""
        qc, kc, vc = (t.transpose(-2, -3) for t in (q, k, v))
        p, log_n = softmax_rows(attention_logits(qc, kc, col_allowed.unsqueeze(-4), self.scale_dim))
        return (p @ vc).transpose(-2, -3), log_n.transpose(-1, -2)

    def additive(self, g: torch.Tensor, masks: AxialMaskSet) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns the combined result and the row weights ``w`` of shape (..., h, H, W)."""
        q, k, v = self.project(g)
        r_row, n_row = self.rows(q, k, v, masks.row_allowed())
        r_col, n_col = self.cols(q, k, v, masks.col_allowed())
        w = combine_weights(n_row, n_col)
        wx = w.unsqueeze(-1)
        return self._merge(wx * r_row + (1 - wx) * r_col), w

    def row_only(self, g, row_mask):
        q, k, v = self.project(g)
        return self._merge(self.rows(q, k, v, row_mask == 0)[0])

    def col_only(self, g, col_mask):
        q, k, v = self.project(g)
        return self._merge(self.cols(q, k, v, col_mask == 0)[0])


def _check_grid(g: torch.Tensor, masks: AxialMaskSet, disjoint: bool = True):
    if g.dim() < 3:
        raise ValueError(f"grid must be (..., H, W, D), got shape {tuple(g.shape)}")
    masks.check(g.shape[-3], g.shape[-2], disjoint=disjoint)


def axial_attention(g: torch.Tensor, masks: AxialMaskSet, layer: AxialAttention) -> torch.Tensor:
    _check_grid(g, masks)
    return layer.additive(g, masks)[0]


def unravelled_mask(masks: AxialMaskSet, agents: int, steps: int) -> torch.Tensor:
    """Additive (..., HW, HW) mask over the row-major unravelled grid.

    Attend-indicators of the block-diagonal row masks and of the permuted
    block-diagonal column masks are summed; a 2 anywhere means a cell sees
    itself twice.
    """
    hh, ww = agents, steps
    row = masks.row_allowed().to(torch.int8)
    col = masks.col_allowed().to(torch.int8)
    row = row.expand(*row.shape[:-3], hh, ww, ww)
    col = col.expand(*col.shape[:-3], ww, hh, hh)
    lead = row.shape[:-3]
    n = hh * ww
    # block diagonal in row-major order: index i * W + j
    row_block = row.new_zeros(*lead, hh, ww, hh, ww)
    for i in range(hh):
        row_block[..., i, :, i, :] = row[..., i, :, :]
    # block diagonal in column-major order: index j * H + i
    col_block = col.new_zeros(*col.shape[:-3], ww, hh, ww, hh)
    for j in range(ww):
        col_block[..., j, :, j, :] = col[..., j, :, :]
    perm = UnravelPermutation(hh, ww).perm
    # P X P^T with P[r, perm[r]] = 1, done by gathering
    col_row_major = col_block.reshape(*col.shape[:-3], n, n).index_select(-2, perm).index_select(-1, perm)
    indicator = row_block.reshape(*lead, n, n) + col_row_major
    if bool((indicator > 1).any()):
        raise DisjointnessError("row and column masks both admit a diagonal entry")
    return mask_from_allowed(indicator > 0)


def sequential_oracle(g: torch.Tensor, masks: AxialMaskSet, layer: AxialAttention) -> torch.Tensor:
    """Plain masked self-attention over the whole unravelled grid."""
    _check_grid(g, masks)
    *lead, hh, ww, d = g.shape
    s = g.reshape(*lead, hh * ww, d)
    mask = unravelled_mask(masks, hh, ww)
    r, _ = masked_attention(s, layer.w_q, layer.w_k, layer.w_v, mask, layer.heads, layer.scale_dim)
    if layer.w_o is not None:
        r = layer.w_o(r)
    return r.reshape(*lead, hh, ww, d)


def stacked_axial_attention(
    g: torch.Tensor, masks: AxialMaskSet, layer_row: AxialAttention, layer_col: AxialAttention
) -> torch.Tensor:
    """Row attention, then column attention on its output, each with its own weights."""
    _check_grid(g, masks, disjoint=False)
    return layer_col.col_only(layer_row.row_only(g, masks.row), masks.col)


def build_forecast_masks(agents: int, steps: int, pregame_col: int = 0, dtype=torch.float64) -> AxialMaskSet:
    """Strictly causal temporal masks and fully open agent masks.

    Cell (i, j) attends to steps ``pregame_col <= j' < j`` of its own row and to
    every agent (itself included) of step j. The pre-game column therefore has
    no temporal context and takes everything from the agent axis.
    """
    if agents < 1 or steps < 1:
        raise ValueError("grid must have at least one agent and one step")
    if not 0 <= pregame_col < steps:
        raise ValueError(f"pregame_col {pregame_col} outside 0..{steps - 1}")
    idx = torch.arange(steps)
    row = (idx[None, :] < idx[:, None]) & (idx[None, :] >= pregame_col)
    col = torch.ones(agents, agents, dtype=torch.bool)
    return AxialMaskSet.from_allowed(
        row.expand(agents, steps, steps), col.expand(steps, agents, agents), dtype
    )


class AxialTransformerLayer(nn.Module):
    """Attention -> add & norm -> feed-forward -> add & norm.

    ``variant="additive"`` uses one shared :class:`AxialAttention`;
    ``variant="stacked"`` composes separate row and column attentions.
    """

    def __init__(self, dim: int, hidden: int, heads: int = 1, variant: str = "additive", eps: float = 1e-5):
        super().__init__()
        if variant not in ("additive", "stacked"):
            raise ValueError(f"unknown attention variant {variant!r}")
        self.variant = variant
        if variant == "additive":
            self.attn = AxialAttention(dim, heads)
        else:
            self.attn_row = AxialAttention(dim, heads)
            self.attn_col = AxialAttention(dim, heads)
        self.norm1 = LayerNorm(dim, eps)
        self.ff = FeedForward(dim, hidden)
        self.norm2 = LayerNorm(dim, eps)

    def forward(self, g: torch.Tensor, masks: AxialMaskSet) -> torch.Tensor:
        if self.variant == "additive":
            r = axial_attention(g, masks, self.attn)
        else:
            r = stacked_axial_attention(g, masks, self.attn_row, self.attn_col)
        g = self.norm1(g + r)
        return self.norm2(g + self.ff(g))


__all__ = [
    "NEG_INF",
    "AxialAttention",
    "AxialMaskSet",
    "AxialTransformerLayer",
    "DegenerateCellError",
    "DisjointnessError",
    "UnravelPermutation",
    "axial_attention",
    "build_forecast_masks",
    "sequential_oracle",
    "stacked_axial_attention",
    "unravelled_mask",
]
