"""Speaker similarity, MOS aggregation and the rank test behind significance markers."""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

import numpy as np

from ..errors import DataError

SCALES = {
    "smos": (1, 5),
    "cmos": (-3, 3),
    "intelligibility": (1, 5),
}
EXACT_MAX_N = 8


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DataError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class MosSample:
    item_id: str
    rater_id: str
    smos: Optional[int] = None
    cmos: Optional[int] = None
    intelligibility: Optional[int] = None

    def __post_init__(self):
        for name, (lo, hi) in SCALES.items():
            v = getattr(self, name)
            if v is not None and not (isinstance(v, int) and lo <= v <= hi):
                raise DataError(f"{name}={v!r} outside [{lo}, {hi}] for item {self.item_id}")


class MosAggregate(NamedTuple):
    mean: float
    std: float
    n: int

    def render(self) -> str:
        return format_mean_std(self.mean, self.std)


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.2f}±{std:.2f}"


def aggregate_mos(samples: Sequence[MosSample], field: str) -> MosAggregate:
    """Mean and sample standard deviation (n-1) of one rating field.

    Missing ratings are skipped; std is 0.0 when only one rating remains.
    """
    if field not in SCALES:
        raise DataError(f"unknown rating field {field!r}")
    values = [getattr(s, field) for s in samples if getattr(s, field) is not None]
    if not values:
        raise DataError(f"no {field} ratings to aggregate")
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return MosAggregate(mean, std, len(values))


class SignificanceResult(NamedTuple):
    p_value: float
    significant: bool
    u_statistic: float
    method: str


def _midranks(values: Sequence[float]):
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_rank_sum_tail(doubled_ranks, n: int, observed: int):
    """P(S <= observed), P(S >= observed) for the sum S of n ranks drawn
    without replacement, every subset equally likely (handles ties)."""
    # dist[k] maps doubled rank-sum -> number of k-subsets
    dist = [Counter() for _ in range(n + 1)]
    dist[0][0] = 1
    for r in doubled_ranks:
        for k in range(n, 0, -1):
            for s, c in dist[k - 1].items():
                dist[k][s + r] += c
    total = sum(dist[n].values())
    le = sum(c for s, c in dist[n].items() if s <= observed)
    ge = sum(c for s, c in dist[n].items() if s >= observed)
    return Fraction(le, total), Fraction(ge, total)


def mann_whitney_u(a: Sequence[float], b: Sequence[float]):
    """Two-sided Mann-Whitney U test; returns (U of ``a``, p, method)."""
    n1, n2 = len(a), len(b)
    ranks = _midranks(list(a) + list(b))
    r1 = sum(ranks[:n1])
    u1 = r1 - n1 * (n1 + 1) / 2.0
    if min(n1, n2) <= EXACT_MAX_N:
        doubled = [int(round(2 * r)) for r in ranks]
        # enumerate the smaller sample's rank-sum
        if n1 <= n2:
            small_n, observed = n1, sum(doubled[:n1])
        else:
            small_n, observed = n2, sum(doubled[n1:])
        le, ge = _exact_rank_sum_tail(doubled, small_n, observed)
        p = min(Fraction(1), 2 * min(le, ge))
        return u1, float(p), "exact"

    n = n1 + n2
    ties = Counter(ranks).values()
    tie_term = sum(t**3 - t for t in ties) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return u1, 1.0, "normal"
    mu = n1 * n2 / 2.0
    z = max(abs(u1 - mu) - 0.5, 0.0) / math.sqrt(var)
    return u1, min(1.0, math.erfc(z / math.sqrt(2.0))), "normal"


def significance(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> SignificanceResult:
    """Two-sided Mann-Whitney U.

    Exact null distribution (conditional on ties) when the smaller sample has
    at most 8 ratings, otherwise the tie-corrected normal approximation with
    continuity correction.
    """
    if len(a) < 3 or len(b) < 3:
        raise DataError(f"significance test needs >= 3 ratings per group, got {len(a)} and {len(b)}")
    u, p, method = mann_whitney_u(a, b)
    return SignificanceResult(p, p < alpha, u, method)
