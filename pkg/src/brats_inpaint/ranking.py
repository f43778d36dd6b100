"""Rank-sum leaderboard over SSIM, PSNR and MSE.

Every case ranks the teams per metric (midranks on ties, absent
predictions share the bottom places). Per-case ranks are summed per team and
re-ranked to give each metric's rank. The final score is the sum of the three
metric ranks, with lower being better.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyTable

METRICS = ("ssim", "psnr", "mse")
HIGHER_IS_BETTER = {"ssim": True, "psnr": True, "mse": False}
TIE_BREAK_RULE = "rank_sum ascending; then ssim metric rank ascending; then team_id lexicographic"
MISSING_POLICY = "missing predictions share the worst per-case positions (rank T when only one team is missing)"


@dataclass
class ScoreTable:
    teams: list
    cases: list
    scores: dict = field(default_factory=dict)  # (team, case) -> {metric: value}
    missing: set = field(default_factory=set)

    def __post_init__(self):
        self.teams = sorted(set(self.teams))
        self.cases = sorted(set(self.cases))
        for t in self.teams:
            for c in self.cases:
                row = self.scores.get((t, c))
                if row is None or any(row.get(m) is None or math.isnan(row[m]) for m in METRICS):
                    self.missing.add((t, c))
                    self.scores.pop((t, c), None)

    @classmethod
    def from_reports(cls, reports) -> "ScoreTable":
        scores = {}
        for r in reports:
            if not r.missing:
                scores[(r.team_id, r.case_id)] = {"ssim": r.ssim, "psnr": r.psnr, "mse": r.mse}
        return cls({r.team_id for r in reports}, {r.case_id for r in reports}, scores)

    def _check(self):
        if not self.teams or not self.cases:
            raise EmptyTable("score table needs at least one team and one case")


@dataclass
class Leaderboard:
    per_metric_ranks: dict
    final_rank_sum: dict
    final_order: list
    tie_break_rule: str = TIE_BREAK_RULE
    missing_policy: str = MISSING_POLICY

    def to_json(self) -> str:
        doc = {
            "tie_break_rule": self.tie_break_rule,
            "missing_policy": self.missing_policy,
            "per_metric_ranks": self.per_metric_ranks,
            "final_rank_sum": self.final_rank_sum,
            "final_order": self.final_order,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["team_id", "ssim_rank", "psnr_rank", "mse_rank", "rank_sum", "final_position"])
            for pos, team in enumerate(self.final_order, start=1):
                r = [self.per_metric_ranks[m][team] for m in METRICS]
                w.writerow([team, *(f"{x:g}" for x in r), f"{self.final_rank_sum[team]:g}", pos])


def per_case_ranks(table: ScoreTable, metric: str) -> dict:
    """{case: {team: rank}} with 1 = best under the metric's orientation."""
    table._check()
    sign = -1.0 if HIGHER_IS_BETTER[metric] else 1.0
    out = {}
    for case in table.cases:
        scored = [t for t in table.teams if (t, case) not in table.missing]
        absent = [t for t in table.teams if (t, case) in table.missing]
        ranks = {}
        if scored:
            vals = [sign * table.scores[(t, case)][metric] for t in scored]
            ranks.update(zip(scored, (float(r) for r in rankdata(vals, method="average"))))
        if absent:
            # shared midrank of the trailing positions
            tail = len(scored) + (len(absent) + 1) / 2.0
            ranks.update((t, tail) for t in absent)
        out[case] = ranks
    return out


def metric_rank(table: ScoreTable, metric: str) -> dict:
    case_ranks = per_case_ranks(table, metric)
    sums = [sum(case_ranks[c][t] for c in table.cases) for t in table.teams]
    return dict(zip(table.teams, (float(r) for r in rankdata(sums, method="average"))))


def final_ranking(table: ScoreTable) -> Leaderboard:
    table._check()
    per_metric = {m: metric_rank(table, m) for m in METRICS}
    total = {t: float(sum(per_metric[m][t] for m in METRICS)) for t in table.teams}
    order = sorted(table.teams, key=lambda t: (total[t], per_metric["ssim"][t], t))
    return Leaderboard(per_metric, total, order)


def leaderboard_from_csvs(paths) -> Leaderboard:
    from .metrics import read_reports_csv

    reports = [r for p in paths for r in read_reports_csv(p)]
    if not reports:
        raise EmptyTable("metrics files hold no rows")
    return final_ranking(ScoreTable.from_reports(reports))
