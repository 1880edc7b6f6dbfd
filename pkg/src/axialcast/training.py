"""Summed multi-target likelihood training with Adam and cosine annealing."""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data.features import MatchInputs, TargetBundle
from .model import Batch, ForecastModel, ForecastOutput, ModelConfig, collate_inputs, save_checkpoint

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 3e-4
    lr_min: float = 0.0
    batch_size: int = 8
    steps: int = 500
    anneal_steps: int | None = None  # defaults to ``steps``
    val_fraction: float = 0.1
    seed: int = 0
    loss_weights: dict[str, float] = field(default_factory=dict)
    clip_norm: float | None = 1.0
    eval_every: int = 50
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    dtype: str = "float32"
    threads: int = 1
    init_bias: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.val_fraction < 1:
            raise ValueError("validation fraction must lie in (0, 1)")
        self.betas = tuple(self.betas)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown train config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class PaddedBatch:
    inputs: Batch
    remaining_player: torch.Tensor  # (B, A, P, W)
    remaining_team: torch.Tensor  # (B, A, 2, W)
    outcome: torch.Tensor  # (B,)

    @property
    def agent_valid(self):
        return self.inputs.agent_valid

    @property
    def step_valid(self):
        return self.inputs.step_valid


def collate(examples: list[tuple[MatchInputs, TargetBundle]], dtype=torch.float32,
            step_capacity: int | None = None, player_capacity: int | None = None) -> PaddedBatch:
    inputs = collate_inputs([x for x, _ in examples], dtype, step_capacity, player_capacity)
    b, p, t = inputs.player.shape[:3]
    a = examples[0][1].remaining_player.shape[0]
    rp = np.zeros((b, a, p, t + 1))
    rt = np.zeros((b, a, 2, t + 1))
    for k, (_, y) in enumerate(examples):
        pp, ww = y.remaining_player.shape[1:]
        rp[k, :, :pp, :ww] = y.remaining_player
        rt[k, :, :, :ww] = y.remaining_team
    outcome = torch.tensor([y.outcome for _, y in examples])
    return PaddedBatch(inputs, torch.as_tensor(rp, dtype=dtype), torch.as_tensor(rt, dtype=dtype), outcome)


def cell_nll(output: ForecastOutput, batch: PaddedBatch) -> dict[tuple[str, str], tuple[torch.Tensor, torch.Tensor]]:
    """(modality, action) -> (per-cell NLL with padding zeroed, validity mask)."""
    step = batch.step_valid  # (B, W)
    player_mask = batch.agent_valid[:, :, None] & step[:, None, :]
    team_mask = step[:, None, :].expand(-1, 2, -1)
    out = {}
    for k, a in enumerate(output.actions):
        fam = output.families[a]
        for name, params, target, mask in (
            ("player", output.player[a], batch.remaining_player[:, k], player_mask),
            ("team", output.team[a], batch.remaining_team[:, k], team_mask),
        ):
            fam.check_target(target[mask])
            nll = fam.nll(params, target)
            out[(name, a)] = (torch.where(mask, nll, torch.zeros_like(nll)), mask)
    ofam = output.outcome_family
    target = batch.outcome[:, None].expand(-1, step.shape[1])
    nll = ofam.nll(output.outcome, target)
    out[("game", "outcome")] = (torch.where(step, nll, torch.zeros_like(nll)), step)
    return out


def loss(output: ForecastOutput, batch: PaddedBatch, weights: dict[str, float] | None = None):
    """Summed negative log-likelihood, averaged over the matches in the batch.

    Returns ``(total, breakdown)``; ``breakdown`` maps each action (player and
    team cells together) and ``"outcome"`` to its weighted contribution, and
    ``total`` is their sum.
    """
    weights = weights or {}
    b = batch.inputs.size
    breakdown: dict[str, torch.Tensor] = {}
    for (_, target), (nll, _) in cell_nll(output, batch).items():
        term = nll.sum() * (weights.get(target, 1.0) / b)
        breakdown[target] = breakdown[target] + term if target in breakdown else term
    total = sum(breakdown.values())
    return total, breakdown


# -- optimisation ------------------------------------------------------------


def adam_step(params, grads, state: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place Adam update with bias correction.

    ``state`` starts as ``{}`` and holds the step count and both moments.
    """
    b1, b2 = betas
    if not state:
        state["t"] = 0
        state["m"] = [torch.zeros_like(p) for p in params]
        state["v"] = [torch.zeros_like(p) for p in params]
    state["t"] += 1
    t = state["t"]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state["m"], state["v"]):
            if g is None:
                continue
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            denom = (v / c2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-lr / c1)


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    if total <= 0:
        return lr_max
    step = min(max(step, 0), total)
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * step / total))


def validation_split(match_ids: list[str], fraction: float) -> tuple[list[int], list[int]]:
    """Indices (train, validation), decided by a stable hash of each match id."""
    train, val = [], []
    for k, mid in enumerate(match_ids):
        h = int.from_bytes(hashlib.sha256(mid.encode()).digest()[:8], "big") / 2**64
        (val if h < fraction else train).append(k)
    if not val and len(train) > 1:
        val.append(train.pop())
    return train, val


def _inv_softplus(y: float) -> float:
    y = max(y, 1e-6)
    return y + math.log(-math.expm1(-y))


def init_head_biases(model: ForecastModel, examples) -> None:
    """Start Poisson heads at the training-set mean remaining count and the
    outcome head at the empirical outcome frequencies."""
    cfg = model.config
    with torch.no_grad():
        for k, a in enumerate(cfg.actions):
            if cfg.family_of(a) != "poisson":
                continue
            for heads, attr in ((model.player_heads, "remaining_player"), (model.team_heads, "remaining_team")):
                vals = np.concatenate([getattr(y, attr)[k].ravel() for _, y in examples])
                heads[a].bias.fill_(_inv_softplus(float(vals.mean())))
        if cfg.outcome_family == "discrete:3":
            freq = np.bincount([y.outcome for _, y in examples], minlength=3) + 1.0
            model.outcome_head.bias.copy_(torch.as_tensor(np.log(freq / freq.sum())))


@dataclass
class TrainResult:
    model: ForecastModel
    history: list[dict]
    best_val: float
    best_step: int
    train_idx: list[int]
    val_idx: list[int]
    seconds: float = 0.0


def evaluate_loss(model: ForecastModel, examples, batch_size: int = 8) -> tuple[float, dict[str, float]]:
    """Mean summed loss per match and per-target mean NLL per cell."""
    model.eval()
    total, n = 0.0, 0
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    with torch.no_grad():
        for k in range(0, len(examples), batch_size):
            chunk = examples[k : k + batch_size]
            batch = collate(chunk, model.dtype)
            out = model(batch.inputs)
            value, _ = loss(out, batch)
            total += float(value) * len(chunk)
            n += len(chunk)
            for (_, target), (nll, mask) in cell_nll(out, batch).items():
                sums[target] = sums.get(target, 0.0) + float(nll.sum())
                counts[target] = counts.get(target, 0) + int(mask.sum())
    return total / max(n, 1), {k: sums[k] / max(counts[k], 1) for k in sums}


def train(examples, model_config: ModelConfig, config: TrainConfig, match_ids: list[str] | None = None,
          checkpoint: str | None = None, model: ForecastModel | None = None) -> TrainResult:
    """Fit a model on ``[(inputs, targets)]`` examples.

    The best model by validation loss is returned (and written to
    ``checkpoint`` if given). Runs are deterministic for a fixed seed with
    ``threads=1``.
    """
    if not examples:
        raise ValueError("dataset is empty")
    started = time.perf_counter()
    torch.set_num_threads(config.threads)
    dtype = DTYPES[config.dtype]
    ids = match_ids or [str(k) for k in range(len(examples))]
    if len(examples) == 1:
        train_idx, val_idx = [0], [0]
    else:
        train_idx, val_idx = validation_split(ids, config.val_fraction)
    train_set = [examples[k] for k in train_idx]
    val_set = [examples[k] for k in val_idx]

    if model is None:
        model = ForecastModel(model_config).to(dtype)
        if config.init_bias:
            init_head_biases(model, train_set)
    params = [p for p in model.parameters()]
    state: dict = {}
    rng = np.random.default_rng(config.seed)
    horizon = config.anneal_steps or config.steps
    order: list[int] = []
    history: list[dict] = []
    best_val, best_step = math.inf, -1
    best_state = copy.deepcopy(model.state_dict())
    running = []

    for step in range(config.steps):
        if len(order) < config.batch_size:
            order.extend(rng.permutation(len(train_set)).tolist())
        idx, order = order[: config.batch_size], order[config.batch_size :]
        batch = collate([train_set[k] for k in idx], dtype)
        lr = cosine_lr(step, horizon, config.lr, config.lr_min)
        model.train()
        out = model(batch.inputs)
        value, parts = loss(out, batch, config.loss_weights)
        if not torch.isfinite(value):
            bad = [k for k, v in parts.items() if not torch.isfinite(v)]
            raise TrainingDiverged(f"non-finite loss at step {step} (lr={lr:.3g}); offending targets: {bad}")
        model.zero_grad(set_to_none=True)
        value.backward()
        if config.clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(params, config.clip_norm)
        adam_step(params, [p.grad for p in params], state, lr, config.betas, config.eps)
        running.append(float(value.detach()))

        last = step == config.steps - 1
        if (step + 1) % config.eval_every == 0 or last:
            val_loss, per_target = evaluate_loss(model, val_set, config.batch_size)
            row = {"step": step + 1, "lr": lr, "train_loss": float(np.mean(running)), "val_loss": val_loss}
            row.update({f"nll_{k}": v for k, v in per_target.items()})
            history.append(row)
            running = []
            log.info("step %d lr %.2e train %.3f val %.3f", step + 1, lr, row["train_loss"], val_loss)
            if val_loss < best_val:
                best_val, best_step = val_loss, step + 1
                best_state = copy.deepcopy(model.state_dict())
                if checkpoint:
                    save_checkpoint(model, checkpoint, {"step": step + 1, "val_loss": val_loss})

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, best_val, best_step, train_idx, val_idx, time.perf_counter() - started)


def write_history(history: list[dict], path) -> None:
    if not history:
        return
    keys = list(history[0])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(history)


# -- constant-rate baseline ---------------------------------------------------


def constant_rates(examples, actions) -> dict[tuple[str, str], float]:
    """Mean remaining count per (modality, action) over all cells of ``examples``."""
    rates = {}
    for k, a in enumerate(actions):
        for name, attr in (("player", "remaining_player"), ("team", "remaining_team")):
            vals = np.concatenate([getattr(y, attr)[k].ravel() for _, y in examples])
            rates[(name, a)] = float(vals.mean())
    return rates


def baseline_nll(rates: dict[tuple[str, str], float], examples, actions) -> dict[str, float]:
    """Per-action mean Poisson NLL per cell of the constant-rate baseline."""
    from scipy.special import gammaln

    out = {}
    for k, a in enumerate(actions):
        total, count = 0.0, 0
        for name, attr in (("player", "remaining_player"), ("team", "remaining_team")):
            lam = rates[(name, a)]
            for _, y in examples:
                v = getattr(y, attr)[k].astype(float)
                total += float(np.sum(lam - v * math.log(max(lam, 1e-30)) + gammaln(v + 1)))
                count += v.size
        out[a] = total / count
    return out
