"""Paired nonparametric statistics: exact Wilcoxon signed-rank with Holm
step-down correction and rank-biserial effect sizes.

The signed-rank null distribution is computed exactly (by convolution over the
2^n equiprobable sign assignments) for n <= 25 after zero-difference removal.
Ties among absolute differences receive mid-ranks; since mid-ranks are
multiples of one half, doubling them yields the integer weights the
convolution runs over. Beyond n = 25 a tie-corrected normal approximation
with continuity correction is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm, rankdata

EXACT_LIMIT = 25


@dataclass
class WilcoxonResult:
    n_effective: int
    w_plus: float
    w_minus: float
    p_value: float
    effect_size: float
    method: str
    degenerate: bool = False


@dataclass
class ComparisonRow:
    name: str
    n_effective: int
    w_plus: float
    w_minus: float
    p_raw: float
    p_holm: float
    effect_size: float
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_effective": self.n_effective,
            "w_plus": self.w_plus,
            "w_minus": self.w_minus,
            "p_raw": self.p_raw,
            "p_holm": self.p_holm,
            "effect_size": self.effect_size,
            "degenerate": self.degenerate,
        }


@dataclass
class StatReport:
    comparisons: list[ComparisonRow]
    n_comparisons: int

    def to_dict(self) -> dict:
        return {
            "n_comparisons": self.n_comparisons,
            "comparisons": [row.to_dict() for row in self.comparisons],
        }


def _exact_two_sided_p(doubled_ranks: np.ndarray, w_plus: float) -> float:
    """Exact two-sided p for the signed-rank statistic.

    Under the null every sign assignment is equiprobable and W+ is symmetric
    about M/2 (M = sum of ranks), so the two-sided p-value is
    P(|W+ - M/2| >= |w - M/2|). Computed over doubled (integer) ranks.

    Parameters
    ----------
    doubled_ranks : ndarray of int
        Twice the mid-ranks of the nonzero absolute differences.
    w_plus : float
        Observed sum of (undoubled) positive ranks.

    Returns
    -------
    float in (0, 1].
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    w2 = int(round(2 * w_plus))
    center = total / 2.0
    deviation = abs(w2 - center)
    support = np.arange(total + 1)
    # All quantities sit on a half-integer grid, so >= compares exactly.
    tail = counts[np.abs(support - center) >= deviation].sum()
    return float(min(1.0, tail / counts.sum()))


def wilcoxon_exact(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired scores.

    Zero differences are dropped; ties among absolute differences are
    mid-ranked. For n <= 25 effective pairs the p-value comes from the exact
    null distribution, otherwise from the tie-corrected normal approximation.
    The effect size is the rank-biserial correlation (W+ - W-) / (W+ + W-).

    An all-zero difference vector is degenerate: p = 1, effect = 0, flagged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired score vectors must share one shape, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise ValueError("empty score vectors")
    diff = a - b
    nonzero = diff[diff != 0]
    n = nonzero.size
    if n == 0:
        return WilcoxonResult(
            n_effective=0, w_plus=0.0, w_minus=0.0, p_value=1.0,
            effect_size=0.0, method="degenerate", degenerate=True,
        )
    ranks = rankdata(np.abs(nonzero))
    w_plus = float(ranks[nonzero > 0].sum())
    w_minus = float(ranks[nonzero < 0].sum())
    effect = (w_plus - w_minus) / (w_plus + w_minus)
    if n <= EXACT_LIMIT:
        doubled = np.rint(2 * ranks).astype(np.int64)
        p = _exact_two_sided_p(doubled, w_plus)
        method = "exact"
    else:
        mu = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie_term = float(((tie_counts**3 - tie_counts)).sum()) / 48.0
        sigma = np.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
        if sigma == 0:
            p = 1.0
        else:
            z = (abs(w_plus - mu) - 0.5) / sigma
            p = float(min(1.0, 2.0 * norm.sf(max(z, 0.0))))
        method = "normal_approx"
    return WilcoxonResult(
        n_effective=n, w_plus=w_plus, w_minus=w_minus, p_value=p,
        effect_size=float(effect), method=method,
    )


def holm_adjust(p_values: Sequence[float]) -> np.ndarray:
    """Holm step-down adjusted p-values.

    Sorted ascending, the i-th raw p (1-based) is multiplied by (m - i + 1);
    adjusted values are made monotone along the sorted order and capped at 1.
    Output order matches input order.
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("p_values must be 1-dimensional")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m, dtype=np.float64)
    running = 0.0
    for i, idx in enumerate(order):
        candidate = (m - i) * p[idx]
        running = max(running, candidate)
        adjusted[idx] = min(1.0, running)
    return adjusted


def wilcoxon_holm(
    scores: Sequence[float], baselines: Mapping[str, Sequence[float]]
) -> StatReport:
    """Compare one score vector against m baselines with Holm correction.

    Each baseline is tested with :func:`wilcoxon_exact` against `scores`
    (pairing by position); Holm step-down adjusts across the m comparisons.
    """
    if not baselines:
        raise ValueError("no baselines to compare against")
    names = list(baselines.keys())
    results = [wilcoxon_exact(scores, baselines[name]) for name in names]
    adjusted = holm_adjust([r.p_value for r in results])
    rows = [
        ComparisonRow(
            name=name,
            n_effective=r.n_effective,
            w_plus=r.w_plus,
            w_minus=r.w_minus,
            p_raw=r.p_value,
            p_holm=float(p_adj),
            effect_size=r.effect_size,
            degenerate=r.degenerate,
        )
        for name, r, p_adj in zip(names, results, adjusted)
    ]
    return StatReport(comparisons=rows, n_comparisons=len(rows))
