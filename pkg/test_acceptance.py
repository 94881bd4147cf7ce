"""Trained-model comparisons on the default synthetic mix. Slow: four full trainings."""
import os

import numpy as np
import pytest

from laneattn.harness import CV_NAME, attention_trace, compare, final_window_leader, followed_lane_id, merge_weight_gap
from laneattn.model import ModelConfig
from laneattn.scenarios import generate_dataset
from laneattn.training import TrainConfig, fit

pytestmark = pytest.mark.slow

AGGREGATORS = ("attention", "pooling", "single_lane", "none")


@pytest.fixture(scope="module")
def trained():
    data = generate_dataset((1200, 400, 500), seed=0)
    train_cfg = TrainConfig(max_epochs=50, seed=0, workers=max(1, os.cpu_count() or 1))
    models = {}
    for aggregator in AGGREGATORS:
        result = fit(data["train"].samples, data["val"].samples, ModelConfig(aggregator=aggregator), train_cfg)
        models[aggregator] = result.checkpoint
    test = data["test"].samples
    report = compare([(name, models[name]) for name in AGGREGATORS], test, workers=train_cfg.workers)
    return models, test, report


def test_three_second_ade_ordering(trained):
    _, _, report = trained
    ade = {name: report.row(name, 3.0).ade for name in AGGREGATORS}
    assert ade["attention"] <= ade["pooling"] <= ade["single_lane"] < ade["none"], ade
    assert ade["attention"] <= 0.85 * ade["none"], ade


def test_fde_grows_with_horizon(trained):
    _, _, report = trained
    for name in (CV_NAME,) + AGGREGATORS:
        assert report.row(name, 3.0).fde > report.row(name, 1.0).fde, name


def test_bifurcation_attention_follows_taken_branch(trained):
    models, test, _ = trained
    forks = [s for s in test if s.kind.startswith("bifurcation")]
    assert forks
    hits = sum(final_window_leader(attention_trace(models["attention"], s)) == followed_lane_id(s) for s in forks)
    assert hits / len(forks) >= 0.7, f"{hits}/{len(forks)}"


def test_merge_weight_gap_shrinks(trained):
    models, test, _ = trained
    gaps = [merge_weight_gap(attention_trace(models["attention"], s), s) for s in test if s.kind == "merge"]
    gaps = [g for g in gaps if len(g) > 1]
    assert gaps
    for g in gaps:
        assert np.all(np.diff(g) <= 1e-6), g
