"""Subspace labels, per-(u, C, S) statistics and the Γ selection matrix.

Labels come from a fixed spatial grid over the scene bounds combined with
the octant of a normal or direction, hashed into the configured counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

NULL_CONTROL = 0


def octant(v):
    v = np.asarray(v, dtype=float)
    return (v[..., 0] >= 0).astype(np.int64) + 2 * (v[..., 1] >= 0) + 4 * (v[..., 2] >= 0)


@dataclass(frozen=True)
class SubspaceMapper:
    lo: tuple
    hi: tuple
    grid: int = 2
    S_count: int = 100
    C_count: int = 10
    T_count: int = 32

    def __post_init__(self):
        if self.grid < 2:
            raise ValueError("grid resolution must be at least 2 per axis")
        if self.S_count < 1 or self.C_count < 2 or self.T_count < 1:
            raise ValueError("need S_count >= 1, C_count >= 2, T_count >= 1")

    @classmethod
    def for_scene(cls, scene, **kw):
        lo, hi = scene.geometry.bbox
        return cls(tuple(lo), tuple(hi), **kw)

    def cell(self, pos):
        lo = np.asarray(self.lo)
        ext = np.maximum(np.asarray(self.hi) - lo, 1e-12)
        ijk = np.floor((np.asarray(pos, dtype=float) - lo) / ext * self.grid).astype(np.int64)
        ijk = np.clip(ijk, 0, self.grid - 1)
        g = self.grid
        return ijk[..., 0] + g * (ijk[..., 1] + g * ijk[..., 2])

    def specular_labels(self, pos, normal):
        return (self.cell(pos) * 8 + octant(normal)) % self.S_count

    def control_labels(self, pos, direction, present):
        """``present`` marks entries with a control vertex; direction may hold
        NaN rows for a null control direction."""
        d = np.asarray(direction, dtype=float)
        null_dir = ~np.all(np.isfinite(d), axis=-1)
        code = np.where(null_dir, 8, octant(np.nan_to_num(d)))
        lab = 1 + (self.cell(pos) * 9 + code) % (self.C_count - 1)
        return np.where(present, lab, NULL_CONTROL)

    def eye_labels(self, pos, normal):
        return (self.cell(pos) * 8 + octant(normal)) % self.T_count

    # scalar forms

    def classify_specular(self, vertex):
        if not vertex.specular:
            raise ValueError("classify_specular needs a specular vertex")
        return int(self.specular_labels(vertex.position, vertex.normal))

    def classify_control(self, h_c=None, omega_c=None):
        if h_c is None:
            return NULL_CONTROL
        d = np.full(3, np.nan) if omega_c is None else np.asarray(omega_c, dtype=float)
        return int(self.control_labels(np.asarray(h_c.position), d, True))


# ---------------------------------------------------------------------------
# statistics


@dataclass
class StatEntry:
    max_ratio: float = 0.0
    n: int = 0
    sum_inv: float = 0.0
    sum_inv_sq: float = 0.0

    @property
    def mean_inv(self):
        return self.sum_inv / self.n if self.n else float("nan")

    @property
    def mean_inv_sq(self):
        return self.sum_inv_sq / self.n if self.n else float("nan")

    def merged(self, other):
        return StatEntry(
            max(self.max_ratio, other.max_ratio),
            self.n + other.n,
            self.sum_inv + other.sum_inv,
            self.sum_inv_sq + other.sum_inv_sq,
        )


@dataclass
class SubspaceStats:
    """Keyed by (u, C, S). The B bound is ``b_factor`` times the running max."""

    entries: dict = field(default_factory=dict)
    b_factor: float = 2.0
    min_samples: int = 16
    # incomplete sub-paths seen per specular label, and light paths traced
    occupancy: dict = field(default_factory=dict)
    paths: int = 0

    def count_paths(self, n_paths, S_labels):
        self.paths += int(n_paths)
        for s, c in zip(*np.unique(np.asarray(S_labels, dtype=np.int64), return_counts=True)):
            self.occupancy[int(s)] = self.occupancy.get(int(s), 0) + int(c)

    def occupancy_rate(self, S_count):
        """Expected incomplete sub-paths per light path, per specular label."""
        phi = np.zeros(S_count)
        for s, c in self.occupancy.items():
            phi[s] = c
        return phi / max(self.paths, 1)

    def update(self, key, f_over_q=None, inv_p_estimate=None):
        e = self.entries.setdefault(key, StatEntry())
        if f_over_q is not None:
            r = np.asarray(f_over_q, dtype=float)
            if r.size:
                if not np.all(np.isfinite(r)):
                    raise ValueError("f/q ratios must be finite")
                e.max_ratio = max(e.max_ratio, float(r.max()))
        if inv_p_estimate is not None:
            x = np.atleast_1d(np.asarray(inv_p_estimate, dtype=float))
            if not np.all(np.isfinite(x)):
                raise ValueError("inverse-pdf estimates must be finite")
            e.n += x.size
            e.sum_inv += float(x.sum())
            e.sum_inv_sq += float((x * x).sum())

    def merge(self, other):
        out = SubspaceStats(dict(self.entries), self.b_factor, self.min_samples, dict(self.occupancy), self.paths + other.paths)
        for k, e in other.entries.items():
            out.entries[k] = out.entries[k].merged(e) if k in out.entries else e
        for s, c in other.occupancy.items():
            out.occupancy[s] = out.occupancy.get(s, 0) + c
        return out

    def __len__(self):
        return len(self.entries)

    def bound(self, key):
        e = self.entries.get(key)
        if e is None or e.max_ratio <= 0:
            return None
        return self.b_factor * e.max_ratio

    def kappa(self, key):
        """Relative second moment E[x^2]/E[x]^2 of the inverse-pdf estimates;
        1 (plain balance heuristic) until enough samples exist."""
        e = self.entries.get(key)
        if e is None or e.n < self.min_samples or e.sum_inv <= 0:
            return 1.0
        return max(e.mean_inv_sq / e.mean_inv**2, 1.0)

    def approx_pdf(self, key):
        """Bucket-level stand-in for the incomplete-path density, 0 if unknown."""
        e = self.entries.get(key)
        if e is None or e.n == 0 or e.sum_inv <= 0:
            return 0.0
        return 1.0 / e.mean_inv

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["u", "C", "S", "max_ratio", "B", "count", "mean_inv", "mean_inv_sq"])
            for (u, c, s), e in sorted(self.entries.items()):
                w.writerow([u, c, s, e.max_ratio, self.b_factor * e.max_ratio, e.n, e.mean_inv, e.mean_inv_sq])


def update_stats(stats, key, f_over_q, inv_p_estimate):
    stats.update(key, f_over_q, inv_p_estimate)
    return stats


# ---------------------------------------------------------------------------
# Γ matrix


class GammaMatrix:
    """Rows Γ[T] are PMFs over specular subspaces, floored at ``eps``."""

    def __init__(self, T_count=32, S_count=100, freeze_iteration=40, eps=None):
        self.T_count = T_count
        self.S_count = S_count
        self.freeze_iteration = freeze_iteration
        self.eps = 1e-3 / S_count if eps is None else eps
        self.acc = np.zeros((T_count, S_count))
        self.table = np.full((T_count, S_count), 1.0 / S_count)
        self.iteration = 0

    @property
    def learning(self):
        return self.iteration < self.freeze_iteration

    def learn(self, T, S, contribution, iteration=None):
        """Accumulate records and renormalize; no-op once frozen."""
        it = self.iteration if iteration is None else iteration
        if it >= self.freeze_iteration:
            self.iteration = max(self.iteration, it)
            return self
        c = np.asarray(contribution, dtype=float)
        if c.size:
            if np.any(c < 0) or not np.all(np.isfinite(c)):
                raise ValueError("contributions must be finite and nonnegative")
            np.add.at(self.acc, (np.asarray(T, dtype=np.int64), np.asarray(S, dtype=np.int64)), c)
        self._renormalize()
        self.iteration = it + 1
        return self

    def _renormalize(self):
        rows = self.acc.sum(axis=1, keepdims=True)
        scale = 1.0 - self.S_count * self.eps
        with np.errstate(invalid="ignore", divide="ignore"):
            learned = scale * (self.acc / rows) + self.eps
        self.table = np.where(rows > 0, learned, 1.0 / self.S_count)

    def sample(self, T, rng, allowed=None):
        """Draw S ~ Γ[T] (restricted and renormalized to ``allowed`` columns
        when given). Returns (S, pmf value used)."""
        T = np.atleast_1d(np.asarray(T, dtype=np.int64))
        pmf = self.table[T]
        if allowed is not None:
            rows = pmf * allowed[None, :]
            tot = rows.sum(axis=1, keepdims=True)
            pmf = np.divide(rows, tot, out=np.zeros_like(rows), where=tot > 0)
        cdf = np.cumsum(pmf, axis=1)
        u = rng.random(len(T))[:, None]
        S = np.minimum((u >= cdf).sum(axis=1), self.S_count - 1)
        # never land on a zero-mass column through round-off
        S = np.where(pmf[np.arange(len(T)), S] > 0, S, pmf.argmax(axis=1))
        return S, pmf[np.arange(len(T)), S]

    def write_csv(self, path):
        np.savetxt(path, self.table, delimiter=",", fmt="%.9g")


def sample_specular_subspace(T, gamma, rng):
    S, p = gamma.sample([T], rng)
    return int(S[0]), float(p[0])


def select_in_subspace(labels, S, S_count, rng):
    """Pick one member uniformly among those with label ``S`` (per entry of
    ``S``). Returns (member index, member count of that label)."""
    labels = np.asarray(labels, dtype=np.int64)
    S = np.asarray(S, dtype=np.int64)
    counts = np.bincount(labels, minlength=S_count)
    if np.any(counts[S] == 0):
        raise ValueError("selected subspace has no members")
    order = np.argsort(labels, kind="stable")
    start = np.concatenate([[0], np.cumsum(counts)])
    pick = np.minimum((rng.random(len(S)) * counts[S]).astype(np.int64), counts[S] - 1)
    return order[start[S] + pick], counts[S]


def learn_gamma(gamma, records, iteration):
    """``records``: iterable of (T, S, contribution)."""
    rec = list(records)
    T = [r[0] for r in rec]
    S = [r[1] for r in rec]
    c = [r[2] for r in rec]
    return gamma.learn(T, S, c, iteration)


def pretrace_statistics(scene, n_paths, rng, mapper=None, **kw):
    """Seed (u, C, S) statistics from light sub-paths before rendering."""
    from .proxy import pretrace

    if n_paths < 1000:
        raise ValueError("pretrace needs at least 1000 paths")
    return pretrace(scene, n_paths, rng, mapper, **kw)
