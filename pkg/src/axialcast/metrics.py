"""Log-probability, modal-value calibration and the ablation harness."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import ForecastModel, ForecastOutput, ModelConfig
from .training import PaddedBatch, TrainConfig, collate, train

log = logging.getLogger(__name__)

LOGPROB_FLOOR = -700.0

# name -> ModelConfig overrides
ABLATIONS: dict[str, dict] = {
    "ours": {},
    "w/o agent": {"agent": False},
    "w/o temporal": {"temporal": False},
    "w/o pre-game": {"pregame": False},
    "w/ stacked": {"attention": "stacked"},
}


# -- log-probability ----------------------------------------------------------


@dataclass
class LogProb:
    mean: float
    count: int
    floored: int = 0


def floored_mean(logp) -> LogProb:
    """Mean of log-probabilities with entries below the floor clamped to it."""
    logp = np.asarray(logp, dtype=float).ravel()
    if logp.size == 0:
        return LogProb(math.nan, 0, 0)
    low = ~(logp >= LOGPROB_FLOOR)  # catches -inf and nan
    clamped = np.where(low, LOGPROB_FLOOR, logp)
    return LogProb(float(clamped.mean()), int(logp.size), int(low.sum()))


def _cells(output: ForecastOutput, batch: PaddedBatch):
    """Yield (modality, target, params, truth, family) over valid cells only."""
    step = batch.step_valid
    pmask = batch.agent_valid[:, :, None] & step[:, None, :]
    tmask = step[:, None, :].expand(-1, 2, -1)
    for k, a in enumerate(output.actions):
        fam = output.families[a]
        yield "player", a, output.player[a][pmask], batch.remaining_player[:, k][pmask], fam
        yield "team", a, output.team[a][tmask], batch.remaining_team[:, k][tmask], fam
    truth = batch.outcome[:, None].expand(-1, step.shape[1])
    yield "game", "outcome", output.outcome[step], truth[step], output.outcome_family


def log_probability(output: ForecastOutput, batch: PaddedBatch) -> dict[tuple[str, str], LogProb]:
    """Mean log-probability of the ground truth per (modality, target)."""
    with torch.no_grad():
        return {
            (m, a): floored_mean(fam.log_prob(params, truth).double().numpy())
            for m, a, params, truth, fam in _cells(output, batch)
        }


# -- calibration --------------------------------------------------------------


@dataclass
class CalibrationBin:
    center: float
    predicted: float
    empirical: float
    count: int


@dataclass
class Calibration:
    bins: list[CalibrationBin]
    error: float
    total: int

    def rows(self):
        return [dataclasses.astuple(b) for b in self.bins]


def calibration(prob, correct, bins: int = 20) -> Calibration:
    """Bin modal-value probabilities and compare with how often the mode was right.

    ``error`` is the count-weighted mean of |mean predicted − empirical rate|
    over non-empty bins. Empty bins are reported with count 0 and NaN rates.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    prob = np.asarray(prob, dtype=float).ravel()
    correct = np.asarray(correct, dtype=float).ravel()
    if prob.shape != correct.shape:
        raise ValueError("probabilities and outcomes differ in length")
    if prob.size and (prob.min() < 0 or prob.max() > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    idx = np.minimum((prob * bins).astype(int), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    p_sum = np.bincount(idx, weights=prob, minlength=bins)
    c_sum = np.bincount(idx, weights=correct, minlength=bins)
    out, gap = [], 0.0
    for b in range(bins):
        n = int(counts[b])
        if n:
            pred, emp = p_sum[b] / n, c_sum[b] / n
            gap += n * abs(pred - emp)
        else:
            pred = emp = math.nan
        out.append(CalibrationBin((b + 0.5) / bins, float(pred), float(emp), n))
    total = int(prob.size)
    return Calibration(out, float(gap / total) if total else math.nan, total)


def modal_hits(output: ForecastOutput, batch: PaddedBatch) -> dict[tuple[str, str], tuple[np.ndarray, np.ndarray]]:
    """(modal probability, mode == truth) arrays per (modality, target)."""
    out = {}
    with torch.no_grad():
        for m, a, params, truth, fam in _cells(output, batch):
            value, prob = fam.mode(params)
            if fam.spec.startswith("discrete"):
                truth = truth.clamp(max=fam.n_params - 1)
            out[(m, a)] = (prob.double().numpy(), (value == truth.to(value.dtype)).numpy())
    return out


# -- evaluation ---------------------------------------------------------------


@dataclass
class Evaluation:
    logprob: dict[tuple[str, str], LogProb]
    calibration: dict[tuple[str, str], Calibration]
    matches: int

    def table(self) -> list[dict]:
        rows = []
        for key, lp in self.logprob.items():
            cal = self.calibration[key]
            rows.append({"modality": key[0], "target": key[1], "log_prob": lp.mean, "calibration_error": cal.error,
                         "count": lp.count, "floored": lp.floored})
        return rows

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "metrics.csv", self.table())
        rows = []
        for (m, a), cal in self.calibration.items():
            for b in cal.bins:
                rows.append({"modality": m, "target": a, "center": b.center, "predicted": b.predicted,
                             "empirical": b.empirical, "count": b.count})
        _write_csv(out / "calibration.csv", rows)


def evaluate(model: ForecastModel, examples, batch_size: int = 8, bins: int = 20) -> Evaluation:
    """Log-probability and calibration over every valid cell of ``examples``."""
    model.eval()
    logps: dict[tuple[str, str], list] = {}
    hits: dict[tuple[str, str], list] = {}
    with torch.no_grad():
        for k in range(0, len(examples), batch_size):
            batch = collate(examples[k : k + batch_size], model.dtype)
            out = model(batch.inputs)
            for m, a, params, truth, fam in _cells(out, batch):
                logps.setdefault((m, a), []).append(fam.log_prob(params, truth).double().numpy())
            for key, pair in modal_hits(out, batch).items():
                hits.setdefault(key, []).append(pair)
    lp = {k: floored_mean(np.concatenate(v)) for k, v in logps.items()}
    cal = {
        k: calibration(np.concatenate([p for p, _ in v]), np.concatenate([c for _, c in v]), bins)
        for k, v in hits.items()
    }
    return Evaluation(lp, cal, len(examples))


# -- ablation harness ---------------------------------------------------------


def ablation_config(base: ModelConfig, name: str) -> ModelConfig:
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; choose from {list(ABLATIONS)}")
    return dataclasses.replace(base, **ABLATIONS[name])


def format_metric(value: float, floor: float = 1e-3) -> str:
    """Display formatter; values below ``floor`` print as "<0.001"."""
    if math.isnan(value):
        return "nan"
    if 0 <= value < floor:
        return f"<{floor:g}"
    return f"{value:.3f}"


@dataclass
class AblationTable:
    actions: tuple[str, ...]
    models: tuple[str, ...]
    log_prob: dict[str, dict[str, float]] = field(default_factory=dict)  # action -> model -> value
    calibration_error: dict[str, dict[str, float]] = field(default_factory=dict)
    modality: str = "player"

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.actions), len(self.models), 2

    def as_array(self) -> np.ndarray:
        grid = np.empty(self.shape)
        for i, a in enumerate(self.actions):
            for j, m in enumerate(self.models):
                grid[i, j] = self.log_prob[a][m], self.calibration_error[a][m]
        return grid

    def rows(self, display: bool = False) -> list[dict]:
        fmt = format_metric if display else (lambda v: v)
        rows = []
        for a in self.actions:
            row = {"action": a}
            row.update({f"log_prob[{m}]": f"{self.log_prob[a][m]:.3f}" if display else self.log_prob[a][m]
                        for m in self.models})
            row.update({f"calibration[{m}]": fmt(self.calibration_error[a][m]) for m in self.models})
            rows.append(row)
        return rows

    def write(self, path) -> None:
        _write_csv(path, self.rows())


@dataclass
class AblationRun:
    table: AblationTable
    evaluations: dict[str, Evaluation]
    models: dict[str, ForecastModel]


def ablation_suite(examples, base: ModelConfig, train_config: TrainConfig, match_ids=None,
                   test_examples=None, names=tuple(ABLATIONS), modality: str = "player") -> AblationRun:
    """Train and evaluate each configuration on the same data and split.

    With no ``test_examples`` each model is scored on its validation split,
    which is the same for every configuration since it hashes match ids.
    """
    table = AblationTable(tuple(base.actions), tuple(names), modality=modality)
    evals, models = {}, {}
    for name in names:
        cfg = ablation_config(base, name)
        log.info("ablation %s", name)
        result = train(examples, cfg, train_config, match_ids)
        scored = test_examples if test_examples is not None else [examples[k] for k in result.val_idx]
        ev = evaluate(result.model, scored, train_config.batch_size)
        evals[name], models[name] = ev, result.model
        for a in base.actions:
            table.log_prob.setdefault(a, {})[name] = ev.logprob[(modality, a)].mean
            table.calibration_error.setdefault(a, {})[name] = ev.calibration[(modality, a)].error
    return AblationRun(table, evals, models)


def _write_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
