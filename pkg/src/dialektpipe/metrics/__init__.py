"""Evaluation metrics: WER, BLEU, DER, speaker similarity, MOS and significance."""

from .der import DEFAULT_COLLAR_S, der, der_breakdown
from .stats import (
    MosAggregate,
    MosSample,
    SignificanceResult,
    aggregate_mos,
    cosine_sim,
    format_mean_std,
    mann_whitney_u,
    significance,
)
from .text import (
    DEFAULT_NORM,
    TextNormConfig,
    bleu,
    corpus_wer,
    edit_distance,
    edit_ops,
    normalize_text,
    wer,
)

__all__ = [
    "DEFAULT_COLLAR_S",
    "DEFAULT_NORM",
    "MosAggregate",
    "MosSample",
    "SignificanceResult",
    "TextNormConfig",
    "aggregate_mos",
    "bleu",
    "corpus_wer",
    "cosine_sim",
    "der",
    "der_breakdown",
    "edit_distance",
    "edit_ops",
    "format_mean_std",
    "mann_whitney_u",
    "normalize_text",
    "significance",
    "wer",
]
