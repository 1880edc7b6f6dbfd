"""Wall-clock comparison of additive axial attention and the unravelled sequential form."""

from __future__ import annotations

import time
from dataclasses import dataclass

import torch

from .axial import AxialAttention, axial_attention, build_forecast_masks, sequential_oracle, unravelled_mask
from .grid import masked_attention


@dataclass
class BenchRow:
    size: int  # H = W
    dim: int
    axial: float  # seconds, best of repeats
    sequential: float

    @property
    def ratio(self) -> float:
        return self.sequential / self.axial


def _best(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(sizes=(8, 16, 32, 64), dim: int = 16, repeats: int = 3, dtype=torch.float32, seed: int = 0) -> list[BenchRow]:
    """Time one attention pass on an n x n grid with the forecast masks.

    The sequential mask is built once outside the timed region, so only the
    attention itself is compared.
    """
    rows = []
    torch.manual_seed(seed)
    layer = AxialAttention(dim).to(dtype)
    for n in sizes:
        g = torch.randn(n, n, dim, dtype=dtype)
        masks = build_forecast_masks(n, n, dtype=dtype)
        flat_mask = unravelled_mask(masks, n, n).to(dtype)
        s = g.reshape(n * n, dim)
        with torch.no_grad():
            axial_attention(g, masks, layer)  # warm-up
            t_ax = _best(lambda: axial_attention(g, masks, layer), repeats)
            t_seq = _best(lambda: masked_attention(s, layer.w_q, layer.w_k, layer.w_v, flat_mask), repeats)
        rows.append(BenchRow(n, dim, t_ax, t_seq))
    return rows


def format_table(rows: list[BenchRow]) -> str:
    lines = ["size,dim,axial_s,sequential_s,ratio"]
    lines += [f"{r.size},{r.dim},{r.axial:.6f},{r.sequential:.6f},{r.ratio:.2f}" for r in rows]
    return "\n".join(lines)


__all__ = ["BenchRow", "bench", "format_table", "sequential_oracle"]
