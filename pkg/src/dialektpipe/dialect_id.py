"""Phoneme n-gram multinomial Naive Bayes dialect identification."""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError
from .model import DialectRegion

DEFAULT_ORDERS = (1, 2, 3)
DEFAULT_ALPHA = 1.0
MIN_SPEAKER_SECONDS = 30.0
MODEL_FORMAT = "dialektpipe-nb"
MODEL_VERSION = 1


def tokenize_phonemes(text: str) -> List[str]:
    return text.split()


def extract_ngrams(phonemes: Sequence[str], orders: Iterable[int] = DEFAULT_ORDERS) -> Counter:
    """Count contiguous n-grams of every requested order.

    Keys are space-joined tokens, so ``a b`` is the bigram (a, b).
    """
    counts = Counter()
    toks = list(phonemes)
    for k in orders:
        if k < 1:
            raise DataError(f"n-gram order must be >= 1, got {k}")
        for i in range(len(toks) - k + 1):
            counts[" ".join(toks[i : i + k])] += 1
    return counts


@dataclass
class NBModel:
    classes: List[DialectRegion]
    ngram_orders: List[int]
    vocab: Dict[str, int]
    log_prior: np.ndarray  # (n_classes,)
    log_likelihood: np.ndarray  # (n_classes, |vocab|)
    log_unseen: np.ndarray  # (n_classes,) shared bucket for out-of-vocabulary n-grams
    smoothing_alpha: float
    class_counts: List[int] = field(default_factory=list)

    def config_hash(self) -> str:
        cfg = json.dumps(
            {"classes": [c.value for c in self.classes], "orders": self.ngram_orders, "alpha": self.smoothing_alpha},
            sort_keys=True,
        )
        return hashlib.sha256(cfg.encode()).hexdigest()[:16]

    def scores(self, phonemes: Sequence[str]) -> np.ndarray:
        """Unnormalised joint log-probabilities, one per class."""
        scores = self.log_prior.copy()
        for gram, count in extract_ngrams(phonemes, self.ngram_orders).items():
            j = self.vocab.get(gram)
            scores += count * (self.log_unseen if j is None else self.log_likelihood[:, j])
        return scores


@dataclass(frozen=True)
class Prediction:
    label: DialectRegion
    log_posterior: Dict[DialectRegion, float]
    flagged: bool = False  # empty input: label is the prior argmax

    @property
    def posterior(self) -> Dict[DialectRegion, float]:
        return {c: math.exp(v) for c, v in self.log_posterior.items()}


def train_nb(
    corpus: Sequence[Tuple[Sequence[str], DialectRegion]],
    orders: Sequence[int] = DEFAULT_ORDERS,
    alpha: float = DEFAULT_ALPHA,
    classes: Optional[Sequence[DialectRegion]] = None,
) -> NBModel:
    """Fit add-alpha smoothed multinomial Naive Bayes.

    ``classes`` defaults to the labels present in the corpus; every declared
    class needs at least one example.
    """
    if not alpha > 0:
        raise DataError(f"smoothing alpha must be positive, got {alpha}")
    orders = sorted(set(orders))
    if not orders or orders[0] < 1:
        raise DataError(f"invalid n-gram orders {orders}")
    seen = sorted({label for _, label in corpus}, key=list(DialectRegion).index)
    classes = list(classes) if classes is not None else seen
    n_examples = Counter(label for _, label in corpus)
    for c in classes:
        if n_examples[c] == 0:
            raise DataError(f"no training examples for class {c.value}")
    extra = set(seen) - set(classes)
    if extra:
        raise DataError(f"corpus contains undeclared classes {sorted(e.value for e in extra)}")

    per_class = {c: Counter() for c in classes}
    for tokens, label in corpus:
        per_class[label].update(extract_ngrams(tokens, orders))
    vocab = {g: i for i, g in enumerate(sorted(set().union(*per_class.values())))}
    counts = np.zeros((len(classes), len(vocab)))
    for ci, c in enumerate(classes):
        for g, n in per_class[c].items():
            counts[ci, vocab[g]] = n
    totals = counts.sum(axis=1)
    denom = totals + alpha * (len(vocab) + 1)
    log_lik = np.log(counts + alpha) - np.log(denom)[:, None]
    log_unseen = np.log(alpha) - np.log(denom)
    n = np.array([n_examples[c] for c in classes], dtype=np.float64)
    log_prior = np.log(n) - math.log(n.sum())
    return NBModel(classes, orders, vocab, log_prior, log_lik, log_unseen, float(alpha), [int(x) for x in n])


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


def predict(model: NBModel, phonemes: Sequence[str]) -> Prediction:
    tokens = list(phonemes)
    scores = model.scores(tokens)
    log_post = scores - _logsumexp(scores)
    best = int(np.argmax(log_post))
    return Prediction(
        label=model.classes[best],
        log_posterior={c: float(v) for c, v in zip(model.classes, log_post)},
        flagged=not tokens,
    )


@dataclass(frozen=True)
class SpeakerPrediction:
    label: DialectRegion
    prediction: Prediction
    total_s: float
    low_confidence: bool


def classify_speaker(
    model: NBModel,
    segments: Sequence[Sequence[str]],
    durations: Sequence[float],
    min_total_s: float = MIN_SPEAKER_SECONDS,
) -> SpeakerPrediction:
    """Classify one speaker from the concatenation of their segments."""
    if not segments:
        raise DataError("classify_speaker needs at least one segment")
    if len(durations) != len(segments):
        raise DataError("one duration per segment is required")
    joined = [tok for seg in segments for tok in seg]
    pred = predict(model, joined)
    total = float(sum(durations))
    return SpeakerPrediction(pred.label, pred, total, total < min_total_s or pred.flagged)


@dataclass
class ConfusionMatrix:
    classes: List[DialectRegion]
    counts: np.ndarray  # rows = truth, cols = prediction

    def row_sums(self) -> Dict[DialectRegion, int]:
        return {c: int(self.counts[i].sum()) for i, c in enumerate(self.classes)}

    def f1_per_class(self) -> Dict[DialectRegion, float]:
        """F1 for every class that occurs in the truth or the predictions."""
        out = {}
        for i, c in enumerate(self.classes):
            tp = self.counts[i, i]
            fp = self.counts[:, i].sum() - tp
            fn = self.counts[i, :].sum() - tp
            if tp + fp + fn == 0:
                continue
            out[c] = float(2 * tp / (2 * tp + fp + fn))
        return out

    def macro_f1(self) -> float:
        f1 = self.f1_per_class()
        return sum(f1.values()) / len(f1) if f1 else 0.0

    def render(self) -> str:
        names = [c.value for c in self.classes]
        w = max(len(n) for n in names) + 2
        lines = ["truth\\pred".ljust(w) + "".join(n.rjust(w) for n in names)]
        for name, row in zip(names, self.counts):
            lines.append(name.ljust(w) + "".join(str(int(v)).rjust(w) for v in row))
        return "\n".join(lines)


def evaluate(model: NBModel, test: Sequence[Tuple[Sequence[str], DialectRegion]]):
    """Return (macro F1, confusion matrix) over a labelled test set."""
    if not test:
        raise DataError("evaluation needs a non-empty test set")
    classes = list(model.classes)
    for _, truth in test:
        if truth not in classes:
            classes.append(truth)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for tokens, truth in test:
        counts[index[truth], index[predict(model, tokens).label]] += 1
    cm = ConfusionMatrix(classes, counts)
    return cm.macro_f1(), cm


def save_model(model: NBModel, path) -> None:
    """Write the model as versioned JSON; vocabulary in index order."""
    inv = sorted(model.vocab, key=model.vocab.get)
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config_hash": model.config_hash(),
        "classes": [c.value for c in model.classes],
        "ngram_orders": model.ngram_orders,
        "smoothing_alpha": model.smoothing_alpha,
        "class_counts": model.class_counts,
        "vocab": inv,
        "log_prior": [float(x) for x in model.log_prior],
        "log_unseen": [float(x) for x in model.log_unseen],
        "log_likelihood": [[float(x) for x in row] for row in model.log_likelihood],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_model(path) -> NBModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: not a {MODEL_FORMAT} v{MODEL_VERSION} model")
    model = NBModel(
        classes=[DialectRegion.parse(c) for c in doc["classes"]],
        ngram_orders=list(doc["ngram_orders"]),
        vocab={g: i for i, g in enumerate(doc["vocab"])},
        log_prior=np.array(doc["log_prior"]),
        log_likelihood=np.array(doc["log_likelihood"]).reshape(len(doc["classes"]), len(doc["vocab"])),
        log_unseen=np.array(doc["log_unseen"]),
        smoothing_alpha=float(doc["smoothing_alpha"]),
        class_counts=list(doc.get("class_counts", [])),
    )
    if model.config_hash() != doc.get("config_hash"):
        raise DataError(f"{path}: config hash mismatch")
    return model


def read_labeled_corpus(path) -> List[Tuple[List[str], DialectRegion]]:
    """Read ``label<TAB>phoneme tokens`` lines."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            label, sep, phon = line.rstrip("\n").partition("\t")
            if not sep:
                raise DataError(f"{path}: line {lineno}: expected label<TAB>phonemes")
            try:
                out.append((tokenize_phonemes(phon), DialectRegion.parse(label.strip())))
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
    return out


def write_labeled_corpus(corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, label in corpus:
            fh.write(f"{label.value}\t{' '.join(tokens)}\n")
