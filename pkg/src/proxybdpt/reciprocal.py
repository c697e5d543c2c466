"""Unbiased estimation of the reciprocal of an integral, 1/∫f.

The estimator expands 1/I around a bound B,

    1/I = (1/B) Σ_n (1 - I/B)^n,

and evaluates the series with a random tree: every node draws x ~ q,
computes g = 1 - f(x)/(B q(x)) and spawns a stochastic number of children
whose expected value is |g|. The estimate is

    Ĩ = (1/B) [1 + Σ_nodes S(ancestors) g(node)],

with S the product of the signs of g along the ancestor chain.

Everything in this module is driven by a single callable ``draw(owner)``
that returns fresh samples of the ratio f(X)/q(X), one per entry of
``owner``. This makes the same engine usable for closed-form fixtures and
for the path-space integrals of the renderer, where each run has its own
integrand (its "owner" context).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

MODES = ("main", "sign", "booth")


class ReciprocalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# integrands and supporting distributions


@dataclass
class IntegrandOracle:
    """Deterministic nonnegative integrand.

    ``fn`` maps an array of samples to an array of values. ``domain`` is a
    free-form descriptor such as "interval[0,1]" or "discrete{a,b}".
    """

    fn: Callable[[np.ndarray], np.ndarray]
    domain: str = "abstract"

    def eval(self, x):
        return np.asarray(self.fn(x), dtype=float)


@dataclass
class SupportSampler:
    """Sampling distribution q with a density evaluator."""

    sample_fn: Callable[[np.random.Generator, int], np.ndarray]
    pdf_fn: Callable[[np.ndarray], np.ndarray]

    def sample(self, rng, n):
        return self.sample_fn(rng, n)

    def pdf(self, x):
        return np.asarray(self.pdf_fn(x), dtype=float)


def discrete_oracle(values):
    values = np.asarray(values, dtype=float)
    return IntegrandOracle(lambda i: values[np.asarray(i, dtype=int)], domain=f"discrete[{len(values)}]")


def discrete_sampler(probs):
    probs = np.asarray(probs, dtype=float)
    probs = probs / probs.sum()
    return SupportSampler(
        lambda rng, n: rng.choice(len(probs), size=n, p=probs),
        lambda i: probs[np.asarray(i, dtype=int)],
    )


def uniform_sampler(lo=0.0, hi=1.0):
    width = hi - lo
    return SupportSampler(
        lambda rng, n: lo + width * rng.random(n),
        lambda x: np.where((np.asarray(x) >= lo) & (np.asarray(x) <= hi), 1.0 / width, 0.0),
    )


@dataclass(frozen=True)
class Fixture:
    """A closed-form test problem: f, q and the exact value of ∫f."""

    name: str
    f: IntegrandOracle
    q: SupportSampler
    integral: float
    max_ratio: float


def standard_fixtures():
    """The three analytic fixtures used throughout the tests and benches."""
    two_q = Fixture(
        "f_prop_q",
        IntegrandOracle(lambda x: 2.0 * np.ones_like(np.asarray(x, dtype=float)), "interval[0,1]"),
        uniform_sampler(),
        integral=2.0,
        max_ratio=2.0,
    )
    ab = Fixture("discrete_1_3", discrete_oracle([1.0, 3.0]), discrete_sampler([0.5, 0.5]), 4.0, 6.0)
    lin = Fixture(
        "linear_2x",
        IntegrandOracle(lambda x: 2.0 * np.asarray(x, dtype=float), "interval[0,1]"),
        uniform_sampler(),
        integral=1.0,
        max_ratio=2.0,
    )
    return {fx.name: fx for fx in (two_q, ab, lin)}


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class ReciprocalConfig:
    """B is the expansion center. ``recursion_cap`` bounds the number of
    f/q evaluations of a single run; the depth of the tree is bounded by
    the same number. ``r_param`` is only read in booth mode."""

    B: float
    recursion_cap: int = 10_000
    mode: str = "main"
    r_param: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.B) and self.B > 0):
            raise ReciprocalError(f"B must be positive and finite, got {self.B}")
        if self.recursion_cap < 1:
            raise ReciprocalError("recursion_cap must be >= 1")
        if self.mode not in MODES:
            raise ReciprocalError(f"unknown mode {self.mode!r}")
        if self.mode == "booth" and not self.r_param > 0:
            raise ReciprocalError("booth r_param must be positive")


@dataclass(frozen=True)
class ReciprocalRun:
    estimate: float
    cost: int
    truncated: bool


@dataclass
class ReciprocalBatch:
    estimates: np.ndarray
    costs: np.ndarray
    truncated: np.ndarray

    def __len__(self):
        return len(self.estimates)

    def run(self, i):
        return ReciprocalRun(float(self.estimates[i]), int(self.costs[i]), bool(self.truncated[i]))


# ---------------------------------------------------------------------------
# splitting


def stochastic_split(r, rng):
    """Integer n with E[n] = r: floor(r)+1 with probability frac(r)."""
    if not np.isfinite(r):
        raise ReciprocalError(f"split factor must be finite, got {r}")
    if r < 0:
        raise ReciprocalError(f"split factor must be nonnegative, got {r}")
    fl = int(np.floor(r))
    frac = r - fl
    if frac == 0.0:
        return fl
    return fl + int(rng.random() < frac)


def stochastic_split_array(r, rng):
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ReciprocalError("split factor must be finite")
    fl = np.floor(r)
    return (fl + (rng.random(r.shape) < (r - fl))).astype(np.int64)


# ---------------------------------------------------------------------------
# batched engine


def ratio_drawer(f, q, rng):
    """Turn (f, q) into the ``draw(owner)`` callable used by the engine."""

    def draw(owner):
        x = q.sample(rng, len(owner))
        fx = f.eval(x)
        qx = q.pdf(x)
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(qx))):
            raise ReciprocalError("non-finite integrand or density value")
        if np.any(qx <= 0):
            raise ReciprocalError("supporting density vanished at a sampled point")
        return fx / qx

    return draw


def run_reciprocal(draw, B, n_runs, cfg, rng):
    """Run ``n_runs`` independent estimates of 1/∫f_owner.

    ``B`` is a scalar or an array with one bound per run. ``draw(owner)``
    must return one f/q sample per entry of the integer array ``owner``.
    Nodes are processed one tree generation at a time.
    """
    B = np.broadcast_to(np.asarray(B, dtype=float), (n_runs,)).copy()
    if np.any(~np.isfinite(B)) or np.any(B <= 0):
        raise ReciprocalError("B must be positive and finite")
    if cfg.mode == "booth":
        return _run_booth(draw, B, n_runs, cfg, rng)
    total = np.zeros(n_runs)
    cost = np.zeros(n_runs, dtype=np.int64)
    truncated = np.zeros(n_runs, dtype=bool)

    owner = np.arange(n_runs)
    sign = np.ones(n_runs)
    while owner.size:
        w = _checked(draw(owner))
        cost += np.bincount(owner, minlength=n_runs)
        b = B[owner]
        g = 1.0 - w / b
        if cfg.mode == "main":
            total += np.bincount(owner, weights=sign * g / b, minlength=n_runs)
        else:
            # every call of the sign estimator adds its own 1/B
            total += np.bincount(owner, weights=sign / b, minlength=n_runs)
        n = stochastic_split_array(np.abs(g), rng)
        n = _apply_cap(owner, n, cost, cfg.recursion_cap, truncated, n_runs)
        owner = np.repeat(owner, n)
        sign = np.repeat(sign * np.sign(g), n)
    est = 1.0 / B + total if cfg.mode == "main" else total
    return ReciprocalBatch(est, cost, truncated)


def _run_booth(draw, B, n_runs, cfg, rng):
    # single chain per run; continue after the k-th sample with probability
    # c_k = min(1, |P_k| / r_param), P_k the raw product of g
    total = np.zeros(n_runs)
    cost = np.zeros(n_runs, dtype=np.int64)
    truncated = np.zeros(n_runs, dtype=bool)
    owner = np.arange(n_runs)
    prod = np.ones(n_runs)
    weight = np.ones(n_runs)  # P_{k-1} / prod_{j<k} c_j
    while owner.size:
        w = _checked(draw(owner))
        cost[owner] += 1
        b = B[owner]
        g = 1.0 - w / b
        total[owner] += weight * g / b
        prod = prod * g
        c = np.minimum(1.0, np.abs(prod) / cfg.r_param)
        alive = rng.random(owner.size) < c
        at_cap = alive & (cost[owner] >= cfg.recursion_cap)
        truncated[owner[at_cap]] = True
        alive &= ~at_cap
        weight = weight[alive] * g[alive] / c[alive]
        prod = prod[alive]
        owner = owner[alive]
    return ReciprocalBatch(1.0 / B + total, cost, truncated)


def _checked(w):
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ReciprocalError("non-finite f/q ratio")
    return w


def _apply_cap(owner, n, cost, cap, truncated, n_runs):
    pending = np.bincount(owner, weights=n, minlength=n_runs)
    over = cost + pending > cap
    if np.any(over):
        truncated |= over & (pending > 0)
        n = np.where(over[owner], 0, n)
    return n


def estimate_reciprocal_batch(f, q, cfg, n_runs, rng):
    return run_reciprocal(ratio_drawer(f, q, rng), cfg.B, n_runs, cfg, rng)


def _single(f, q, cfg, rng, mode):
    if cfg.mode != mode:
        raise ReciprocalError(f"config mode is {cfg.mode!r}, expected {mode!r}")
    return estimate_reciprocal_batch(f, q, cfg, 1, rng).run(0)


def estimate_reciprocal(f, q, cfg, rng):
    """One run of the main estimator (splitting with r = |g|)."""
    return _single(f, q, cfg, rng, "main")


def estimate_reciprocal_sign(f, q, cfg, rng):
    """One run of the sign estimator, I = 1/B + sign(g) Σ I_child."""
    return _single(f, q, cfg, rng, "sign")


def booth_estimate(f, q, cfg, rng):
    """One run of the Russian-roulette baseline without splitting."""
    return _single(f, q, cfg, rng, "booth")


# ---------------------------------------------------------------------------
# statistics


@dataclass
class RunningMoments:
    """Mergeable mean/variance accumulator (Chan et al. pairwise update)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, values):
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            return self
        mean = values.mean()
        other = RunningMoments(values.size, float(mean), float(((values - mean) ** 2).sum()))
        return self.merge(other)

    def merge(self, other):
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean += delta * other.n / n
        self.m2 += other.m2 + delta * delta * self.n * other.n / n
        self.n = n
        return self

    @property
    def variance(self):
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def stderr(self):
        return float(np.sqrt(self.variance / self.n)) if self.n > 0 else float("inf")


@dataclass(frozen=True)
class Efficiency:
    variance: float
    mean_cost: float
    efficiency: float
    mean: float
    stderr: float
    n: int
    n_truncated: int

    def __iter__(self):
        return iter((self.variance, self.mean_cost, self.efficiency))


def measure_efficiency(runner, trials, chunk=250_000):
    """Efficiency 1/(V C) of an estimator.

    ``runner(n)`` returns a ReciprocalBatch of n runs. Truncated runs are
    counted and excluded. Zero variance yields efficiency = inf.
    """
    if trials < 10_000:
        raise ReciprocalError("measure_efficiency needs at least 1e4 trials")
    est = RunningMoments()
    cost = RunningMoments()
    n_trunc = 0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        batch = runner(n)
        keep = ~batch.truncated
        n_trunc += int((~keep).sum())
        est.add(batch.estimates[keep])
        cost.add(batch.costs[keep])
        done += n
    if est.n == 0:
        raise ReciprocalError("all runs were truncated")
    var = est.variance
    eff = float("inf") if var == 0.0 else 1.0 / (var * cost.mean)
    return Efficiency(var, cost.mean, eff, est.mean, est.stderr, est.n, n_trunc)


def efficiency_stderr(estimates, costs, n_boot=200, rng=None):
    """Bootstrap standard error of 1/(V C)."""
    rng = np.random.default_rng(0) if rng is None else rng
    estimates = np.asarray(estimates, dtype=float)
    costs = np.asarray(costs, dtype=float)
    n = len(estimates)
    out = np.empty(n_boot)
    for k in range(n_boot):
        idx = rng.integers(0, n, n)
        v = estimates[idx].var(ddof=1)
        out[k] = np.inf if v == 0 else 1.0 / (v * costs[idx].mean())
    return float(out.std(ddof=1))


@dataclass(frozen=True)
class DivergenceReport:
    divergent: bool
    offspring_mean: float
    offspring_stderr: float
    truncation_rate: float
    variances: tuple = field(default_factory=tuple)
    reason: str = ""


def check_divergence(draw_ratio, B, rng, pilot=100_000, cap=1_000, batch_sizes=(1_000, 4_000), alarm=0.01):
    """Flag a bound B for which the estimator has no finite cost or variance.

    Two independent indicators are combined. The mean offspring count
    E|g| of the branching process is estimated from a pilot sample; a value
    not below 1 means the tree is critical or supercritical. The second is
    the truncation rate of capped runs, measured for each batch size in
    ``batch_sizes`` together with their sample variances.
    """
    w = _checked(draw_ratio(pilot))
    r = np.abs(1.0 - w / B)
    m = float(r.mean())
    se = float(r.std(ddof=1) / np.sqrt(len(r)))
    cfg = ReciprocalConfig(B=B, recursion_cap=cap)
    variances = []
    trunc = 0
    total = 0
    for n in batch_sizes:
        batch = run_reciprocal(lambda owner: draw_ratio(len(owner)), B, n, cfg, rng)
        trunc += int(batch.truncated.sum())
        total += n
        variances.append(float(batch.estimates.var(ddof=1)))
    rate = trunc / total
    reasons = []
    if m - 2 * se >= 1.0 or m >= 1.0:
        reasons.append(f"mean offspring {m:.4f} >= 1")
    if rate > alarm:
        reasons.append(f"truncation rate {rate:.3%} above {alarm:.1%}")
    return DivergenceReport(bool(reasons), m, se, rate, tuple(variances), "; ".join(reasons))
