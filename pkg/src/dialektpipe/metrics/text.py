"""Text normalisation, word error rate and corpus BLEU."""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from ..errors import DataError


@dataclass(frozen=True)
class TextNormConfig:
    lowercase: bool = True
    strip_punctuation: bool = True
    collapse_whitespace: bool = True


DEFAULT_NORM = TextNormConfig()
_WS = re.compile(r"\s+")


def _strip_punct(s: str) -> str:
    # unicode punctuation and symbols become spaces; apostrophes inside words are dropped
    out = []
    for ch in s:
        cat = unicodedata.category(ch)
        if cat[0] in "PS":
            out.append("" if ch in "'’" else " ")
        else:
            out.append(ch)
    return "".join(out)


def normalize_text(s: str, cfg: TextNormConfig = DEFAULT_NORM) -> List[str]:
    s = unicodedata.normalize("NFC", s)
    if cfg.lowercase:
        s = s.lower()
    if cfg.strip_punctuation:
        s = _strip_punct(s)
    if cfg.collapse_whitespace:
        s = _WS.sub(" ", s)
    return s.split()


def edit_ops(reference: Sequence, hypothesis: Sequence) -> Tuple[int, int, int]:
    """(substitutions, deletions, insertions) of a minimal unit-cost alignment.

    Ties between equal-cost alignments prefer substitutions, then deletions.
    """
    n = len(hypothesis)
    # each cell holds (cost, S, D, I)
    prev = [(j, 0, 0, j) for j in range(n + 1)]
    for i, r in enumerate(reference, start=1):
        cur = [(i, 0, i, 0)]
        for j, h in enumerate(hypothesis, start=1):
            diag = prev[j - 1]
            if r == h:
                best = diag
            else:
                best = (diag[0] + 1, diag[1] + 1, diag[2], diag[3])
            up = prev[j]
            if up[0] + 1 < best[0]:
                best = (up[0] + 1, up[1], up[2] + 1, up[3])
            left = cur[j - 1]
            if left[0] + 1 < best[0]:
                best = (left[0] + 1, left[1], left[2], left[3] + 1)
            cur.append(best)
        prev = cur
    _, s, d, ins = prev[n]
    return s, d, ins


def edit_distance(reference: Sequence, hypothesis: Sequence) -> int:
    return sum(edit_ops(reference, hypothesis))


def wer(reference: Sequence, hypothesis: Sequence) -> float:
    if len(reference) == 0:
        raise DataError("WER is undefined for an empty reference")
    return edit_distance(reference, hypothesis) / len(reference)


def corpus_wer(references: Sequence[Sequence], hypotheses: Sequence[Sequence]) -> float:
    """Total edits over total reference words, as jiwer computes it for lists."""
    if len(references) != len(hypotheses):
        raise DataError(f"{len(references)} references vs {len(hypotheses)} hypotheses")
    n_ref = sum(len(r) for r in references)
    if n_ref == 0:
        raise DataError("WER is undefined for an empty reference corpus")
    return sum(edit_distance(r, h) for r, h in zip(references, hypotheses)) / n_ref


def ngram_counts(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(references: Sequence[Sequence], hypotheses: Sequence[Sequence], max_order: int = 4) -> float:
    """Corpus BLEU in [0, 1] with one reference per hypothesis.

    Clipped n-gram matches and totals are summed over the corpus. Precisions
    for n >= 2 use add-one smoothing, (matches + 1) / (total + 1); the
    unigram precision is unsmoothed. The brevity penalty is
    exp(1 - r/c) when the hypothesis corpus is shorter than the references.
    """
    if len(references) != len(hypotheses):
        raise DataError(f"{len(references)} references vs {len(hypotheses)} hypotheses")
    if not references:
        raise DataError("BLEU is undefined for an empty corpus")
    matches = [0] * max_order
    totals = [0] * max_order
    ref_len = hyp_len = 0
    for ref, hyp in zip(references, hypotheses):
        ref_len += len(ref)
        hyp_len += len(hyp)
        for n in range(1, max_order + 1):
            h = ngram_counts(hyp, n)
            r = ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = math.log(matches[0] / totals[0])
    for n in range(1, max_order):
        log_p += math.log((matches[n] + 1) / (totals[n] + 1))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p / max_order)
