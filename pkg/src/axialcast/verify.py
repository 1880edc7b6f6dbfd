"""Self-checks: axial vs unravelled sequential attention, and finite-difference gradients."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .axial import AxialAttention, AxialMaskSet, axial_attention, sequential_oracle
from .model import Batch, ForecastModel, ModelConfig
from .training import PaddedBatch, loss


def random_masks(rng: np.random.Generator, agents: int, steps: int, density: float = 0.5) -> AxialMaskSet:
    """Random row/column masks that are disjoint and leave no cell empty."""
    row = rng.random((agents, steps, steps)) < density
    col = rng.random((steps, agents, agents)) < density
    for i in range(agents):
        for j in range(steps):
            if row[i, j, j] and col[j, i, i]:
                if rng.random() < 0.5:
                    row[i, j, j] = False
                else:
                    col[j, i, i] = False
            if not row[i, j].any() and not col[j, i].any():
                options = [("row", k) for k in range(steps) if k != j] + [("col", k) for k in range(agents) if k != i]
                if options:
                    axis, k = options[rng.integers(len(options))]
                else:
                    axis, k = ("row", j) if rng.random() < 0.5 else ("col", i)
                if axis == "row":
                    row[i, j, k] = True
                else:
                    col[j, i, k] = True
    return AxialMaskSet.from_allowed(torch.as_tensor(row), torch.as_tensor(col))


@dataclass
class EquivalenceCase:
    seed: int
    agents: int
    steps: int
    dim: int
    heads: int
    error: float


@dataclass
class EquivalenceReport:
    cases: list[EquivalenceCase] = field(default_factory=list)
    tol: float = 1e-9
    seconds: float = 0.0

    @property
    def passed(self) -> int:
        return sum(c.error <= self.tol for c in self.cases)

    @property
    def max_error(self) -> float:
        return max((c.error for c in self.cases), default=0.0)

    @property
    def ok(self) -> bool:
        return self.passed == len(self.cases)


def equivalence_case(seed: int, max_size: int = 6, max_dim: int = 8) -> EquivalenceCase:
    rng = np.random.default_rng(seed)
    hh, ww = int(rng.integers(1, max_size + 1)), int(rng.integers(1, max_size + 1))
    d = int(rng.integers(1, max_dim + 1))
    heads = int(rng.choice([h for h in (1, 2, 4) if d % h == 0]))
    torch.manual_seed(seed)
    layer = AxialAttention(d, heads).double()
    g = torch.as_tensor(rng.standard_normal((hh, ww, d)))
    masks = random_masks(rng, hh, ww)
    with torch.no_grad():
        err = float((axial_attention(g, masks, layer) - sequential_oracle(g, masks, layer)).abs().max())
    return EquivalenceCase(seed, hh, ww, d, heads, err)


def equivalence_suite(cases: int = 200, seed: int = 0, tol: float = 1e-9) -> EquivalenceReport:
    t0 = time.perf_counter()
    report = EquivalenceReport(tol=tol)
    for k in range(cases):
        report.cases.append(equivalence_case(seed * 1_000_003 + k))
    report.seconds = time.perf_counter() - t0
    return report


# -- gradients ----------------------------------------------------------------


def tiny_problem(seed: int = 0, players: int = 3, steps: int = 4, dim: int = 8, layers: int = 2):
    """A float64 model plus one random batch with random count targets."""
    cfg = ModelConfig(dim=dim, layers=layers, hidden=2 * dim, seed=seed)
    model = ForecastModel(cfg).double()
    gen = torch.Generator().manual_seed(seed)
    dims = cfg.feature_dims

    def rand(*shape):
        return torch.randn(*shape, generator=gen, dtype=torch.float64)

    inputs = Batch(
        player=rand(1, players, steps, dims["player"]),
        player_strength=rand(1, players, dims["player_strength"]),
        team=rand(1, 2, steps, dims["team"]),
        team_strength=rand(1, 2, dims["team_strength"]),
        game=rand(1, steps, dims["game"]),
        game_context=rand(1, dims["game_context"]),
        agent_valid=torch.ones(1, players, dtype=torch.bool),
        step_valid=torch.ones(1, steps + 1, dtype=torch.bool),
    )
    a = len(cfg.actions)
    batch = PaddedBatch(
        inputs,
        torch.randint(0, 4, (1, a, players, steps + 1), generator=gen).double(),
        torch.randint(0, 6, (1, a, 2, steps + 1), generator=gen).double(),
        torch.tensor([1]),
    )
    return model, batch


@dataclass
class GradientReport:
    errors: dict[str, float]  # parameter name -> relative error
    tol: float = 1e-4
    seconds: float = 0.0

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_error <= self.tol


def gradient_check(seed: int = 0, eps: float = 1e-6, tol: float = 1e-4, fraction: float = 1.0) -> GradientReport:
    """Central differences against backprop for every parameter tensor.

    The error per tensor is ``|g_ad - g_fd| / max(|g_ad|, |g_fd|)`` in the
    2-norm over the checked entries. ``fraction < 1`` checks a random
    subset of entries per tensor.
    """
    t0 = time.perf_counter()
    model, batch = tiny_problem(seed)
    model.train()

    def objective() -> torch.Tensor:
        return loss(model(batch.inputs), batch)[0]

    model.zero_grad()
    objective().backward()
    rng = np.random.default_rng(seed)
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            analytic = p.grad.view(-1)
            n = flat.numel()
            idx = np.arange(n) if fraction >= 1 else rng.choice(n, max(1, int(n * fraction)), replace=False)
            fd = torch.empty(len(idx), dtype=torch.float64)
            for k, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = objective().item()
                flat[i] = orig - eps
                down = objective().item()
                flat[i] = orig
                fd[k] = (up - down) / (2 * eps)
            ad = analytic[torch.as_tensor(idx)]
            scale = max(float(ad.norm()), float(fd.norm()), 1e-12)
            errors[name] = float((ad - fd).norm()) / scale
    return GradientReport(errors, tol, time.perf_counter() - t0)
