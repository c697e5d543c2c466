"""Image error metrics against a reference."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene.vec import luminance


def _pair(estimate, reference):
    e = np.asarray(estimate, dtype=float)
    r = np.asarray(reference, dtype=float)
    if e.shape != r.shape:
        raise ValueError(f"dimension mismatch: estimate {e.shape} vs reference {r.shape}")
    return e, r


def default_eps(reference):
    """1e-2 times the mean reference luminance (channels if not RGB)."""
    r = np.asarray(reference, dtype=float)
    m = luminance(r).mean() if r.ndim >= 1 and r.shape[-1] == 3 else r.mean()
    return 1e-2 * float(m)


def mape(estimate, reference, eps=None):
    e, r = _pair(estimate, reference)
    eps = default_eps(r) if eps is None else eps
    return float(np.mean(np.abs(e - r) / (np.abs(r) + eps)))


def smape(estimate, reference, eps=None):
    e, r = _pair(estimate, reference)
    eps = default_eps(r) if eps is None else eps
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.abs(e - r) / ((np.abs(e) + np.abs(r)) / 2 + eps)
    return float(np.mean(np.where(np.isfinite(x), x, 0.0)))


def mse(estimate, reference):
    e, r = _pair(estimate, reference)
    return float(np.mean((e - r) ** 2))


@dataclass
class MetricReport:
    mape: float
    mse: float
    smape: float
    rows: list = field(default_factory=list)  # (pass, elapsed_s, mape)

    def __post_init__(self):
        if min(self.mape, self.mse, self.smape) < 0:
            raise ValueError("metrics are nonnegative")


def compare(estimate, reference, eps=None):
    return MetricReport(mape(estimate, reference, eps), mse(estimate, reference), smape(estimate, reference, eps))
