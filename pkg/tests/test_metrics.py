import csv
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from axialcast.distributions import family
from axialcast.metrics import (
    ABLATIONS,
    LOGPROB_FLOOR,
    ablation_suite,
    calibration,
    evaluate,
    floored_mean,
    format_metric,
    log_probability,
)
from axialcast.model import ForecastModel, ModelConfig
from axialcast.training import TrainConfig, collate
from oracles import poisson_nll

TINY = ModelConfig(dim=8, layers=1, hidden=16, seed=1)


# -- log-probability -------------------------------------------------------------


def test_perfect_one_hot_scores_zero():
    fam = family("discrete:3")
    params = torch.tensor([[0.0, 1.0, 0.0]], dtype=torch.float64)
    assert float(fam.log_prob(params, torch.tensor([1]))) == 0.0


@pytest.mark.parametrize("outcome", [0, 1, 2])
def test_uniform_discrete_three(outcome):
    fam = family("discrete:3")
    params = torch.full((1, 3), 1 / 3, dtype=torch.float64)
    assert float(fam.log_prob(params, torch.tensor([outcome]))) == pytest.approx(math.log(1 / 3), abs=1e-15)


def test_five_prediction_fixture_mean():
    lam = [1.0, 2.0, 0.5, 3.0, 1.5]
    y = [0, 2, 1, 4, 1]
    logp = family("poisson").log_prob(torch.tensor(lam, dtype=torch.float64)[:, None], torch.tensor(y))
    expected = -math.fsum(poisson_nll(a, b) for a, b in zip(lam, y)) / 5
    got = floored_mean(logp.numpy())
    assert got.mean == pytest.approx(expected, abs=1e-14)
    assert got.count == 5 and got.floored == 0


def test_zero_probability_truth_is_floored_and_counted():
    got = floored_mean(np.array([-1.0, -math.inf, -1e4, math.nan]))
    assert got.floored == 3
    assert got.mean == pytest.approx((-1.0 + 3 * LOGPROB_FLOOR) / 4)
    assert math.isnan(floored_mean([]).mean)


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(["poisson", "bernoulli", "log_gaussian", "discrete:4"]),
    st.integers(0, 2**31 - 1),
)
def test_log_probability_never_positive(spec, seed):
    gen = torch.Generator().manual_seed(seed)
    fam = family(spec)
    raw = torch.randn(50, fam.n_params, generator=gen, dtype=torch.float64) * 3
    params = fam.transform(raw)
    upper = 2 if spec == "bernoulli" else 4 if spec.startswith("discrete") else 30
    y = torch.randint(0, upper, (50,), generator=gen)
    assert (fam.log_prob(params, y) <= 0).all()


def test_model_log_probability_covers_every_target(small_examples):
    model = ForecastModel(TINY).double()
    batch = collate([(x, y) for _, x, y in small_examples[:2]], torch.float64)
    with torch.no_grad():
        lp = log_probability(model(batch.inputs), batch)
    assert len(lp) == 2 * 12 + 1
    cells = int(batch.step_valid.sum())
    assert lp[("game", "outcome")].count == cells
    assert lp[("team", "goals")].count == 2 * cells
    assert lp[("player", "goals")].count == sum(x.players * (x.steps + 1) for _, x, _ in small_examples[:2])
    assert all(v.mean <= 0 for v in lp.values())


# -- calibration -------------------------------------------------------------------


def test_oracle_predictor_has_zero_error():
    cal = calibration(np.ones(40), np.ones(40))
    assert cal.error == 0.0
    assert cal.bins[-1].count == 40


def test_constant_predictor_on_matching_fixture():
    n = 100
    correct = np.zeros(n)
    correct[:70] = 1
    cal = calibration(np.full(n, 0.7), correct)
    assert cal.error <= 1 / n


def test_probability_one_lands_in_top_bin():
    cal = calibration([1.0, 0.0, 0.999], [1, 0, 1], bins=20)
    assert cal.bins[19].count == 2 and cal.bins[0].count == 1


def test_bin_counts_sum_and_empty_bins_excluded():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.2, 0.4, 500)  # bins 4..7 only
    c = rng.random(500) < p
    cal = calibration(p, c, bins=20)
    assert sum(b.count for b in cal.bins) == cal.total == 500
    empty = [b for b in cal.bins if b.count == 0]
    assert empty and all(math.isnan(b.predicted) and math.isnan(b.empirical) for b in empty)
    live = [b for b in cal.bins if b.count]
    expected = math.fsum(b.count * abs(b.predicted - b.empirical) for b in live) / 500
    assert cal.error == pytest.approx(expected, abs=1e-15)


def test_calibration_input_errors():
    with pytest.raises(ValueError):
        calibration([0.5], [1], bins=1)
    with pytest.raises(ValueError):
        calibration([0.5, 0.2], [1])
    with pytest.raises(ValueError):
        calibration([1.5], [1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.integers(2, 30))
def test_calibration_counts_property(probs, bins):
    correct = [p > 0.5 for p in probs]
    cal = calibration(probs, correct, bins)
    assert sum(b.count for b in cal.bins) == len(probs)
    assert 0 <= cal.error <= 1


# -- evaluation exports --------------------------------------------------------------


def test_evaluation_writes_metric_and_curve_files(tmp_path, small_examples):
    model = ForecastModel(TINY)
    ev = evaluate(model, [(x, y) for _, x, y in small_examples[:3]], bins=10)
    ev.write(tmp_path)
    metrics = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    curves = list(csv.DictReader(open(tmp_path / "calibration.csv")))
    assert len(metrics) == 25
    assert len(curves) == 25 * 10
    per_target = {}
    for row in curves:
        key = (row["modality"], row["target"])
        per_target[key] = per_target.get(key, 0) + int(row["count"])
    for row in metrics:
        assert per_target[(row["modality"], row["target"])] == int(row["count"])


def test_format_metric_floor():
    assert format_metric(0.0004) == "<0.001"
    assert format_metric(0.0123) == "0.012"
    assert format_metric(float("nan")) == "nan"


# -- ablation harness -----------------------------------------------------------------


def test_ablation_suite_grid_shape(tmp_path, small_examples):
    ex = [(x, y) for _, x, y in small_examples]
    ids = [m.match_id for m, _, _ in small_examples]
    run = ablation_suite(ex, TINY, TrainConfig(steps=2, batch_size=2, eval_every=2), ids)
    grid = run.table.as_array()
    assert grid.shape == (12, 5, 2)
    assert run.table.models == tuple(ABLATIONS)
    assert np.isfinite(grid).all()
    run.table.write(tmp_path / "table.csv")
    rows = list(csv.DictReader(open(tmp_path / "table.csv")))
    assert len(rows) == 12 and len(rows[0]) == 1 + 2 * 5
