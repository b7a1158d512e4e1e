"""Group comparison tests: Wilcoxon rank-sum (Mann-Whitney U) and one-way ANOVA."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _st

EXACT_LIMIT = 50_000  # max number of rank assignments enumerated by the exact path


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class RankSumResult:
    statistic: float   # U for the first sample
    pvalue: float
    rank_sum: float    # sum of midranks of the first sample
    method: str        # "exact" or "normal"


def _exact_counts(doubled_ranks, n1):
    """Number of size-n1 subsets for every possible doubled rank sum.

    Dynamic programming over items; ``counts[j][s]`` = subsets of size j with
    doubled-rank sum s.
    """
    total = int(sum(doubled_ranks))
    counts = np.zeros((n1 + 1, total + 1), dtype=object)
    counts[0, 0] = 1
    for r in doubled_ranks:
        r = int(r)
        for j in range(n1, 0, -1):
            counts[j, r:] = counts[j, r:] + counts[j - 1, :total + 1 - r]
    return counts[n1]


def rank_sum_test(xs, ys, method="auto") -> RankSumResult:
    """Two-sided Wilcoxon rank-sum test with midranks for ties.

    ``method='auto'`` enumerates the permutation distribution of the rank
    sum exactly when there are at most ``EXACT_LIMIT`` assignments and
    otherwise uses the normal approximation with tie-corrected variance and
    continuity correction.
    """
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    n1, n2 = len(x), len(y)
    if n1 < 2 or n2 < 2:
        raise ValueError(f"each sample needs at least 2 values, got {n1} and {n2}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    n = n1 + n2
    ranks = _st.rankdata(np.concatenate([x, y]))
    r1 = float(ranks[:n1].sum())
    u = r1 - n1 * (n1 + 1) / 2.0

    if np.all(ranks == ranks[0]):
        return RankSumResult(u, 1.0, r1, "tied")

    if method == "auto":
        method = "exact" if math.comb(n, n1) <= EXACT_LIMIT else "normal"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _exact_counts(doubled, n1)
        center2 = n1 * (n + 1)  # twice the expected rank sum
        obs = abs(int(doubled[:n1].sum()) - center2)
        sums = np.arange(len(counts))
        extreme = np.abs(sums - center2) >= obs
        p = sum(counts[extreme]) / math.comb(n, n1)
        return RankSumResult(u, min(1.0, float(p)), r1, "exact")
    if method != "normal":
        raise ValueError(f"unknown method {method!r}")

    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float((tie_counts ** 3 - tie_counts).sum()) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    mu = n1 * n2 / 2.0
    dev = max(abs(u - mu) - 0.5, 0.0)
    p = 2.0 * _st.norm.sf(dev / math.sqrt(var))
    return RankSumResult(u, min(1.0, float(p)), r1, "normal")


@dataclass(frozen=True)
class AnovaResult:
    F: float
    df_between: int
    df_within: int
    pvalue: float


def anova(groups) -> AnovaResult:
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2:
        raise ValueError("ANOVA needs at least two groups")
    if any(len(g) < 2 for g in groups):
        raise ValueError("every ANOVA group needs at least two values")
    allv = np.concatenate(groups)
    grand = allv.mean()
    ssb = sum(len(g) * (g.mean() - grand) ** 2 for g in groups)
    ssw = sum(((g - g.mean()) ** 2).sum() for g in groups)
    df_b = len(groups) - 1
    df_w = len(allv) - len(groups)
    if ssw == 0:
        raise DegenerateDataError("zero within-group variance: F statistic undefined")
    f = (ssb / df_b) / (ssw / df_w)
    return AnovaResult(float(f), df_b, df_w, float(_st.f.sf(f, df_b, df_w)))


def anova_f(groups) -> float:
    """One-way ANOVA F = between-group mean square / within-group mean square."""
    return anova(groups).F
