"""Diarization error rate with optimal speaker mapping and boundary collar."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import DataError

DEFAULT_COLLAR_S = 0.25


@dataclass(frozen=True)
class DerBreakdown:
    missed: float
    false_alarm: float
    confusion: float
    total: float
    mapping: Dict[str, str]

    @property
    def rate(self) -> float:
        return (self.missed + self.false_alarm + self.confusion) / self.total


def _spans(turns) -> List[Tuple[float, float, str]]:
    return [(float(t.start_s), float(t.end_s), t.speaker_tag) for t in turns]


def _merge(intervals: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    out = []
    for s, e in sorted(intervals):
        if out and s <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out


def _elementary(ref, hyp, collar_s):
    """Split the timeline at every boundary; yield scored pieces.

    Each piece is (duration, active ref speakers, active hyp speakers).
    Pieces within ``collar_s`` of a reference boundary are not scored.
    """
    no_score = _merge([(b - collar_s, b + collar_s) for s, e, _ in ref for b in (s, e)]) if collar_s > 0 else []
    points = {p for s, e, _ in ref + hyp for p in (s, e)}
    points.update(p for a, b in no_score for p in (a, b))
    points = sorted(points)
    pieces = []
    k = 0
    for a, b in zip(points, points[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        while k < len(no_score) and no_score[k][1] <= mid:
            k += 1
        if k < len(no_score) and no_score[k][0] <= mid < no_score[k][1]:
            continue
        r = frozenset(spk for s, e, spk in ref if s <= mid < e)
        h = frozenset(spk for s, e, spk in hyp if s <= mid < e)
        if r or h:
            pieces.append((b - a, r, h))
    return pieces


def der_breakdown(reference: Sequence, hypothesis: Sequence, collar_s: float = DEFAULT_COLLAR_S) -> DerBreakdown:
    ref, hyp = _spans(reference), _spans(hypothesis)
    pieces = _elementary(ref, hyp, collar_s)
    total = sum(d * len(r) for d, r, _ in pieces)
    if total <= 0:
        raise DataError("DER is undefined without scored reference speech")

    ref_spk = sorted({s for _, _, s in ref})
    hyp_spk = sorted({s for _, _, s in hyp})
    mapping = {}
    if ref_spk and hyp_spk:
        ri = {s: i for i, s in enumerate(ref_spk)}
        hi = {s: i for i, s in enumerate(hyp_spk)}
        overlap = np.zeros((len(ref_spk), len(hyp_spk)))
        for d, r, h in pieces:
            for a in r:
                for b in h:
                    overlap[ri[a], hi[b]] += d
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        mapping = {hyp_spk[c]: ref_spk[r] for r, c in zip(rows, cols) if overlap[r, c] > 0}

    missed = fa = conf = 0.0
    for d, r, h in pieces:
        n_ref, n_hyp = len(r), len(h)
        correct = sum(1 for b in h if mapping.get(b) in r)
        missed += d * max(0, n_ref - n_hyp)
        fa += d * max(0, n_hyp - n_ref)
        conf += d * (min(n_ref, n_hyp) - correct)
    return DerBreakdown(missed, fa, conf, total, mapping)


def der(reference: Sequence, hypothesis: Sequence, collar_s: float = DEFAULT_COLLAR_S) -> float:
    """(missed + false alarm + confusion) / scored reference speech time."""
    return der_breakdown(reference, hypothesis, collar_s).rate
