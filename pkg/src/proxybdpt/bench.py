"""Ablation of the reciprocal estimator on the analytic fixtures: the
splitting estimator, the sign estimator and the Russian-roulette baseline
over a grid of r_param, all at the same B."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .reciprocal import ReciprocalConfig, estimate_reciprocal_batch, measure_efficiency, standard_fixtures

R_GRID = (1.0, 10.0, 100.0, 1000.0)
RECIP_HEADER = ["fixture", "method", "r_param", "B", "variance", "mean_cost", "efficiency", "truncated"]


@dataclass(frozen=True)
class RecipRow:
    fixture: str
    method: str
    r_param: float
    B: float
    variance: float
    mean_cost: float
    efficiency: float
    truncated: int

    def csv_row(self):
        return [self.fixture, self.method, self.r_param, self.B, self.variance, self.mean_cost, self.efficiency, self.truncated]


def run_recip_bench(trials=200_000, seed=0, r_grid=R_GRID, b_scale=1.0, fixtures=None, recursion_cap=10_000):
    """One row per (fixture, method). B = b_scale * max f/q of the fixture."""
    rng = np.random.default_rng(seed)
    fx_all = standard_fixtures()
    names = fixtures or list(fx_all)
    rows = []
    for name in names:
        fx = fx_all[name]
        B = b_scale * fx.max_ratio
        configs = [("ours", ReciprocalConfig(B, recursion_cap, "main"), float("nan")),
                   ("sign", ReciprocalConfig(B, recursion_cap, "sign"), float("nan"))]
        configs += [("booth", ReciprocalConfig(B, recursion_cap, "booth", r), r) for r in r_grid]
        for method, cfg, r in configs:
            eff = measure_efficiency(lambda n, c=cfg: estimate_reciprocal_batch(fx.f, fx.q, c, n, rng), trials)
            rows.append(RecipRow(name, method, r, B, eff.variance, eff.mean_cost, eff.efficiency, eff.n_truncated))
    return rows


def write_recip_rows(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECIP_HEADER)
        for r in rows:
            w.writerow(r.csv_row())
