import numpy as np

from online_gne.bandit import BanditConfig, run_bandit
from online_gne.game import nash_cournot
from online_gne.graph import named_graph
from online_gne.learner import StepSchedule, run
from online_gne.trajectory import csv_columns, file_sha256, read_csv, to_csv_text, write_csv


def _same(a, b):
    for k in ("x", "lam", "lam_mix", "R", "C", "alpha", "beta", "gamma"):
        assert np.array_equal(getattr(a, k), getattr(b, k)), k
    assert tuple(a.dims) == tuple(b.dims)


def test_full_log_roundtrip(tmp_path):
    g = nash_cournot("oscillating", 4)
    log = run(g, named_graph("ring", 4), StepSchedule(0.8, 0.3), horizon=50, seed=1, init="random")
    digest = write_csv(log, tmp_path / "a.csv")
    assert digest == file_sha256(tmp_path / "a.csv")
    back = read_csv(tmp_path / "a.csv")
    _same(log, back)
    assert to_csv_text(back) == to_csv_text(log)


def test_bandit_log_roundtrip(tmp_path):
    g = nash_cournot("oscillating", 3)
    bc = BanditConfig.for_sets(g.feasible_sets, 0.75, 0.25, 0.4, rng_seed=2)
    log = run_bandit(g, named_graph("ring", 3), bc.schedule(), bc, horizon=40, seed=2, init="random")
    write_csv(log, tmp_path / "b.csv")
    back = read_csv(tmp_path / "b.csv")
    _same(log, back)
    assert np.array_equal(log.x_hat, back.x_hat)
    assert np.array_equal(log.direction, back.direction)
    assert np.array_equal(log.delta, back.delta)


def test_columns_one_row_per_round_and_player():
    g = nash_cournot("oscillating", 3)
    log = run(g, named_graph("ring", 3), StepSchedule(0.8, 0.3), horizon=7)
    text = to_csv_text(log).strip().splitlines()
    assert text[0].split(",") == csv_columns(log)
    assert len(text) == 1 + 7 * 3
