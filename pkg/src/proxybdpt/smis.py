"""1D benchmark: stochastic MIS (SMIS-n) vs reciprocal balance-heuristic CMIS.

The technique space has K segments of [0,1]. Technique t puts density beta
on its own segment and alpha on every other one, with
beta/K + alpha (K-1)/K = 1, so every conditional density integrates to 1
and the marginal over a uniform technique prior is exactly 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .reciprocal import ReciprocalConfig, run_reciprocal

SMIS_METHODS = {"SMIS1": 1, "SMIS2": 2, "SMIS4": 4, "SMIS8": 8, "SMIS16": 16}
DEFAULT_METHODS = ("SMIS2", "SMIS4", "SMIS8", "SMIS16", "recip")


@dataclass(frozen=True)
class SegmentedTechniqueSpace:
    alpha: float
    beta: float
    K: int = 5

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.alpha < 0 or self.beta <= 0:
            raise ValueError("need alpha >= 0 and beta > 0")
        total = self.beta / self.K + self.alpha * (self.K - 1) / self.K
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"beta/K + alpha(K-1)/K must equal 1, got {total!r}")

    @classmethod
    def from_alpha(cls, alpha, K=5):
        return cls(alpha, K - alpha * (K - 1), K)

    def segment(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)):
            raise ValueError("x outside [0, 1]")
        return np.minimum((x * self.K).astype(np.int64), self.K - 1)


def conditional_pdf(x, t, space):
    seg = space.segment(x)
    t = np.asarray(t)
    if np.any((t < 0) | (t >= space.K)):
        raise ValueError("technique index out of range")
    return np.where(seg == t, space.beta, space.alpha)


def marginal_pdf(x, space):
    seg = space.segment(x)
    # one technique gives beta, the other K-1 give alpha
    return np.full(seg.shape, (space.beta + (space.K - 1) * space.alpha) / space.K)


def sample_technique(t, space, rng):
    """Draw x ~ p(x | t) for each entry of the integer array t."""
    t = np.asarray(t)
    K = space.K
    on_seg = rng.random(t.shape) < space.beta / K
    u = rng.random(t.shape)
    other = rng.integers(0, K - 1, t.shape) if K > 1 else np.zeros(t.shape, dtype=np.int64)
    other = other + (other >= t)
    seg = np.where(on_seg, t, other)
    return (seg + u) / K


@dataclass(frozen=True)
class BenchIntegrand:
    label: str
    values: tuple = ()
    kind: str = "smooth"

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "const":
            return np.ones_like(x)
        if self.kind == "smooth":
            return 1.0 + 4.0 * np.sin(np.pi * x) ** 2
        v = np.asarray(self.values, dtype=float)
        return v[np.minimum((x * len(v)).astype(np.int64), len(v) - 1)]

    @property
    def integral(self):
        if self.kind == "const":
            return 1.0
        if self.kind == "smooth":
            return 3.0
        return float(np.mean(self.values))


F_A = BenchIntegrand("f_A", kind="smooth")
F_B = BenchIntegrand("f_B", values=(1.0, 10.0, 4.0, 2.0, 7.0), kind="piecewise")
F_ONE = BenchIntegrand("f_one", kind="const")
INTEGRANDS = {f.label: f for f in (F_A, F_B, F_ONE)}


def smis_batch(n, f, space, trials, rng):
    """``trials`` independent SMIS-n estimates.

    Returns (estimates, draws, pdf_evals): each estimate uses n samples of
    x and n*n conditional-pdf evaluations.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    t = rng.integers(0, space.K, (trials, n))
    x = sample_technique(t, space, rng)
    seg = space.segment(x)
    # denom[k, i] = Σ_j p(x_i | t_j)
    same = seg[:, :, None] == t[:, None, :]
    denom = np.where(same, space.beta, space.alpha).sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        est = (f.eval(x) / denom).sum(axis=1)
    return est, np.full(trials, float(n)), np.full(trials, float(n * n))


def smis_estimate(n, f, space, rng):
    return float(smis_batch(n, f, space, 1, rng)[0][0])


def recip_cmis_batch(f, space, cfg, trials, rng):
    """Balance-heuristic CMIS with 1/p(x) estimated by reciprocal estimation.

    Returns (estimates, draws, pdf_evals). The reciprocal integrates
    F(t) = p(x|t)/K against q(t) = 1/K, so F/q = p(x|t) and B = beta bounds it.
    """
    if space.alpha <= 0:
        raise ValueError("reciprocal CMIS needs alpha > 0 so every technique covers x")
    t0 = rng.integers(0, space.K, trials)
    x = sample_technique(t0, space, rng)
    seg = space.segment(x)

    def draw(owner):
        t = rng.integers(0, space.K, owner.size)
        return np.where(seg[owner] == t, space.beta, space.alpha)

    run = run_reciprocal(draw, cfg.B, trials, cfg, rng)
    return f.eval(x) * run.estimates, np.ones(trials), run.costs.astype(float)


def recip_cmis_estimate(f, space, cfg, rng):
    est, _, _ = recip_cmis_batch(f, space, cfg, 1, rng)
    return float(est[0])


@dataclass(frozen=True)
class BenchRow:
    method: str
    alpha: float
    beta: float
    integrand: str
    variance: float
    mean_cost: float
    bias: float
    stderr: float = float("nan")

    def csv_row(self):
        return [self.method, self.alpha, self.beta, self.integrand, self.variance, self.mean_cost, self.bias]


CSV_HEADER = ["method", "alpha", "beta", "integrand", "variance", "mean_cost", "bias"]


# Cost of one conditional-pdf evaluation relative to drawing and evaluating
# one sample x. Fitted to the published SMIS-n variance ratios, see
# scripts/fit_smis_cost.py. A value of 1.0 counts both operations equally.
PDF_COST = 0.0625


def cost_of(draws, pdf_evals, pdf_cost=PDF_COST):
    return draws + pdf_cost * pdf_evals


@dataclass
class BenchConfig:
    """``budget`` is the cost at which variances are compared: reported
    variance = V * mean_cost / budget, with cost = draws + pdf_cost * pdf_evals."""

    pairs: list = field(default_factory=lambda: [(0.1, 4.6), (0.01, 4.96)])
    methods: tuple = DEFAULT_METHODS
    integrands: tuple = ("f_A", "f_B")
    trials: int = 200_000
    budget: float = 1000.0
    K: int = 5
    seed: int = 0
    chunk: int = 50_000
    pdf_cost: float = PDF_COST


def method_batch(method, f, space, trials, rng):
    """(estimates, draws, pdf_evals) for ``trials`` runs of ``method``."""
    if method == "recip":
        return recip_cmis_batch(f, space, ReciprocalConfig(B=space.beta), trials, rng)
    if method not in SMIS_METHODS:
        raise ValueError(f"unknown method {method!r}")
    return smis_batch(SMIS_METHODS[method], f, space, trials, rng)


def run_benchmark(config):
    rng = np.random.default_rng(config.seed)
    rows = []
    for alpha, beta in config.pairs:
        space = SegmentedTechniqueSpace(alpha, beta, config.K)
        for name in config.integrands:
            f = INTEGRANDS[name]
            for method in config.methods:
                if method == "recip" and alpha <= 0:
                    continue
                ests, costs = [], []
                done = 0
                while done < config.trials:
                    n = min(config.chunk, config.trials - done)
                    e, d, p = method_batch(method, f, space, n, rng)
                    ests.append(e)
                    costs.append(cost_of(d, p, config.pdf_cost))
                    done += n
                e = np.concatenate(ests)
                c = np.concatenate(costs)
                var = float(e.var(ddof=1))
                mc = float(c.mean())
                rows.append(
                    BenchRow(method, alpha, beta, name, var * mc / config.budget, mc,
                             float(e.mean() - f.integral), float(e.std(ddof=1) / np.sqrt(len(e))))
                )
    return rows


def write_rows(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.csv_row())
