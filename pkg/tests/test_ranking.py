import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brats_inpaint import ranking as R
from brats_inpaint.errors import EmptyTable
from brats_inpaint.metrics import MetricReport, write_reports_csv
from brats_inpaint.ranking import ScoreTable

from oracles import naive_leaderboard


def _table(scores, missing=()):
    """scores: {(team, case): (ssim, psnr, mse)}"""
    teams = {t for t, _ in scores} | {t for t, _ in missing}
    cases = {c for _, c in scores} | {c for _, c in missing}
    rows = {k: dict(zip(R.METRICS, v)) for k, v in scores.items() if k not in set(missing)}
    return ScoreTable(teams, cases, rows)


def random_table(seed, max_teams=6, max_cases=10, ties=True, missing_rate=0.1):
    r = np.random.default_rng(seed)
    T, C = int(r.integers(1, max_teams + 1)), int(r.integers(1, max_cases + 1))
    teams = [f"team{t}" for t in range(T)]
    cases = [f"case{c}" for c in range(C)]
    scores, missing = {}, set()
    for t in teams:
        for c in cases:
            if r.random() < missing_rate:
                missing.add((t, c))
                continue
            if ties:
                # coarse grid so that ties actually happen
                scores[(t, c)] = (r.integers(0, 4) / 4, float(r.integers(20, 24)), float(r.integers(1, 4)))
            else:
                scores[(t, c)] = (r.random(), 20 + 10 * r.random(), r.random())
    return teams, cases, scores, missing


def _build(teams, cases, scores, missing):
    rows = {k: dict(zip(R.METRICS, v)) for k, v in scores.items()}
    table = ScoreTable(teams, cases, rows)
    assert table.missing == set(missing)
    return table


def test_one_team():
    table = _table({("A", "c1"): (0.9, 30.0, 0.1)})
    assert R.per_case_ranks(table, "ssim") == {"c1": {"A": 1.0}}
    board = R.final_ranking(table)
    assert board.final_rank_sum == {"A": 3.0} and board.final_order == ["A"]


def test_mse_ties_midrank():
    table = _table({("A", "c"): (0.5, 20, 0.1), ("B", "c"): (0.5, 20, 0.2), ("C", "c"): (0.5, 20, 0.2)})
    assert R.per_case_ranks(table, "mse")["c"] == {"A": 1.0, "B": 2.5, "C": 2.5}


def test_ssim_higher_is_better():
    table = _table({("A", "c"): (0.9, 20, 0.1), ("B", "c"): (0.8, 20, 0.1)})
    assert R.per_case_ranks(table, "ssim")["c"] == {"A": 1.0, "B": 2.0}


def test_metric_rank_cases():
    table = _table({("A", "1"): (0.9, 30, 0.1), ("B", "1"): (0.8, 20, 0.2),
                    ("A", "2"): (0.9, 30, 0.1), ("B", "2"): (0.8, 20, 0.2)})
    assert R.metric_rank(table, "ssim") == {"A": 1.0, "B": 2.0}
    split = _table({("A", "1"): (0.9, 30, 0.1), ("B", "1"): (0.8, 20, 0.2),
                    ("A", "2"): (0.7, 10, 0.3), ("B", "2"): (0.8, 20, 0.2)})
    assert R.metric_rank(split, "ssim") == {"A": 1.5, "B": 1.5}


def test_missing_ranks_worst():
    table = _table({("A", "c"): (0.9, 30, 0.1), ("B", "c"): (0.1, 5, 9.0), ("C", "c"): (0, 0, 0)},
                   missing=[("C", "c")])
    assert R.per_case_ranks(table, "ssim")["c"] == {"A": 1.0, "B": 2.0, "C": 3.0}


def test_empty_table():
    with pytest.raises(EmptyTable):
        R.final_ranking(ScoreTable([], []))


def test_tie_break_by_ssim_then_name():
    # A best on SSIM, B best on PSNR and MSE: B wins on rank sum
    table = _table({("A", "c"): (0.9, 10, 0.3), ("B", "c"): (0.8, 20, 0.2)})
    assert R.final_ranking(table).final_order == ["B", "A"]
    # total tie everywhere falls back to team id
    table = _table({("Z", "c"): (0.9, 10, 0.3), ("Y", "c"): (0.9, 10, 0.3)})
    board = R.final_ranking(table)
    assert board.final_order == ["Y", "Z"]
    assert "ssim" in json.loads(board.to_json())["tie_break_rule"]


def test_hand_fixture_against_oracle():
    scores = {
        ("A", "1"): (0.90, 25.0, 0.10), ("B", "1"): (0.85, 27.0, 0.08), ("C", "1"): (0.70, 20.0, 0.30),
        ("A", "2"): (0.95, 30.0, 0.05), ("B", "2"): (0.80, 24.0, 0.12), ("C", "2"): (0.88, 26.0, 0.09),
    }
    board = R.final_ranking(_table(scores))
    mr, final, order = naive_leaderboard({"A", "B", "C"}, ["1", "2"], scores, set())
    assert board.final_order == order == ["A", "B", "C"]
    assert board.final_rank_sum == final


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_matches_naive_oracle(seed):
    teams, cases, scores, missing = random_table(seed)
    board = R.final_ranking(_build(teams, cases, scores, missing))
    mr, final, order = naive_leaderboard(teams, cases, scores, missing)
    assert board.final_order == order
    assert board.final_rank_sum == final
    for m, ranks in zip(R.METRICS, mr):
        assert board.per_metric_ranks[m] == ranks


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_midrank_conservation(seed):
    teams, cases, scores, missing = random_table(seed)
    table = _build(teams, cases, scores, missing)
    T = len(teams)
    for m in R.METRICS:
        for ranks in R.per_case_ranks(table, m).values():
            assert sum(ranks.values()) == T * (T + 1) / 2
        assert sum(R.metric_rank(table, m).values()) == T * (T + 1) / 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(R.METRICS), st.floats(0.01, 100))
def test_monotone_transform_invariance(seed, metric, scale):
    teams, cases, scores, missing = random_table(seed)
    base = R.final_ranking(_build(teams, cases, scores, missing))
    i = R.METRICS.index(metric)
    transformed = {k: tuple(np.exp(v[j]) * scale if j == i else v[j] for j in range(3)) for k, v in scores.items()}
    again = R.final_ranking(_build(teams, cases, transformed, missing))
    assert again.final_order == base.final_order


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_strictly_worst_team_keeps_order(seed):
    teams, cases, scores, missing = random_table(seed, missing_rate=0.0)
    base = R.final_ranking(_build(teams, cases, scores, missing))
    worse = dict(scores)
    for c in cases:
        worse[("zz-worst", c)] = (-10.0, -100.0, 1e9)
    again = R.final_ranking(_build(teams + ["zz-worst"], cases, worse, missing))
    assert again.final_order[:-1] == base.final_order
    assert again.final_order[-1] == "zz-worst"


def test_permuting_cases_is_invariant():
    teams, cases, scores, missing = random_table(5)
    a = R.final_ranking(_build(teams, cases, scores, missing))
    b = R.final_ranking(_build(teams, list(reversed(cases)), scores, missing))
    assert a.to_json() == b.to_json()


def test_leaderboard_outputs(tmp_path):
    for team, ssim in (("a", 0.9), ("b", 0.8)):
        write_reports_csv([MetricReport("c1", team, ssim, 30.0, 0.1, 10),
                           MetricReport("c2", team, ssim, 30.0, 0.1, 10)], tmp_path / f"{team}.csv")
    board = R.leaderboard_from_csvs([tmp_path / "a.csv", tmp_path / "b.csv"])
    assert board.final_order == ["a", "b"]
    board.write_csv(tmp_path / "board.csv")
    lines = (tmp_path / "board.csv").read_text().splitlines()
    assert lines[0] == "team_id,ssim_rank,psnr_rank,mse_rank,rank_sum,final_position"
    assert lines[1] == "a,1,1.5,1.5,4,1"
    doc = json.loads(board.to_json())
    assert set(doc) >= {"tie_break_rule", "per_metric_ranks", "final_rank_sum", "final_order"}
