import csv
import math

import numpy as np
import pytest

from dectrain.exceptions import UndefinedRecoveryError
from dectrain.metrics import (
    TRADEOFF_COLUMNS,
    DecisionHistogram,
    EpisodeResult,
    aggregate_sweep,
    curve_dominates,
    decision_kl,
    delta1,
    envelope_value,
    kl_bits,
    pareto_dominated,
    recovery,
    write_plot_data,
    write_svg_scatter,
    write_tradeoff_csv,
)


def test_delta1_examples():
    assert delta1([1.2, 0.7], [1.0, 1.0]) == 50.0
    assert delta1([3.0, 4.0], [3.0, 4.0]) == 100.0
    assert delta1([6.0, 8.0], [3.0, 4.0]) == 0.0
    assert delta1([1.25], [1.0]) == 100.0


def test_delta1_errors():
    with pytest.raises(ValueError):
        delta1([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        delta1([1.0], [0.0])
    with pytest.raises(ValueError):
        delta1([], [])


def test_recovery_examples():
    assert recovery(80.0, 60.0, 80.0) == 100.0
    assert recovery(60.0, 60.0, 80.0) == 0.0
    assert round(recovery(87.6, 70.6, 87.8), 4) == 98.8372
    with pytest.raises(UndefinedRecoveryError):
        recovery(1.0, 5.0, 5.0)


def test_histogram_bins():
    d = [True] * 25 + [False] * 25 + [True] * 50 + [False] * 50
    h = DecisionHistogram.from_decisions(d, window=50)
    assert h.counts[5] == 1 and h.counts[10] == 1 and h.counts[0] == 1
    assert h.frequencies.sum() == pytest.approx(1.0)
    assert np.all(h.frequencies > 0)


def test_histogram_needs_one_window():
    with pytest.raises(ValueError):
        DecisionHistogram.from_decisions([True] * 49, window=50)


def test_kl_two_bin_analytic():
    assert kl_bits([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.5 * math.log2(2) + 0.5 * math.log2(2 / 3))
    assert round(kl_bits([0.5, 0.5], [0.25, 0.75]), 4) == 0.2075


def test_kl_identical_is_zero():
    d = list(np.random.default_rng(0).random(500) < 0.3)
    assert decision_kl(d, d) == 0.0


def test_kl_length_mismatch():
    with pytest.raises(ValueError):
        decision_kl([True] * 100, [True] * 150)


def _episode(policy, param, seed, d1, nt, cost=100):
    return EpisodeResult(policy, param, seed, d1, nt, cost, {"inference": cost, "train": 0, "dec1": 0, "dec2": 0})


def test_aggregate_single_episode():
    rows = aggregate_sweep([_episode("all_train", None, 0, 80.0, 998)])
    assert rows[0]["delta1_mean"] == 80.0 and rows[0]["delta1_std"] == 0.0
    assert rows[0]["n_train_mean"] == 998.0


def test_aggregate_order_and_permutation_invariance():
    eps = [
        _episode("dectrain", 500.0, 0, 70.0, 500),
        _episode("dectrain", 50.0, 0, 60.0, 100),
        _episode("no_train", None, 1, 50.0, 0),
        _episode("no_train", None, 0, 52.0, 0),
        _episode("fixed_periodic", 0.5, 0, 65.0, 499),
    ]
    rows = aggregate_sweep(eps)
    assert [(r["policy"], r["parameter"]) for r in rows] == [
        ("no_train", None), ("fixed_periodic", 0.5), ("dectrain", 50.0), ("dectrain", 500.0)]
    assert rows[0]["delta1_mean"] == 51.0 and rows[0]["delta1_std"] == 1.0
    assert aggregate_sweep(eps[::-1]) == rows


def test_tradeoff_outputs(tmp_path):
    rows = aggregate_sweep([_episode("no_train", None, 0, 50.0, 0), _episode("all_train", None, 0, 80.0, 998)])
    write_tradeoff_csv(rows, tmp_path / "t.csv")
    table = list(csv.reader(open(tmp_path / "t.csv")))
    assert tuple(table[0]) == TRADEOFF_COLUMNS
    assert len(table) == 3
    write_plot_data(rows, tmp_path / "p.csv")
    assert list(csv.reader(open(tmp_path / "p.csv")))[2][:4] == ["all_train", "", "998.0", "80.0"]
    write_svg_scatter(rows, tmp_path / "s.svg")
    svg = (tmp_path / "s.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<circle") == 2


def test_pareto_dominated():
    assert pareto_dominated((500, 70.0), [(400, 71.0)])
    assert pareto_dominated((500, 70.0), [(500, 70.0)])
    assert not pareto_dominated((500, 70.0), [(400, 69.0), (600, 75.0)])


def test_envelope_interpolates_running_max():
    pts = [(100, 60.0), (300, 70.0), (200, 72.0)]
    assert envelope_value(pts, 100) == 60.0
    assert envelope_value(pts, 150) == 66.0
    assert envelope_value(pts, 250) == 72.0
    assert envelope_value(pts, 1000) == 72.0
    assert envelope_value(pts, 50) == -math.inf
    assert curve_dominates(pts, (150, 66.0))
    assert not curve_dominates(pts, (150, 66.5))
