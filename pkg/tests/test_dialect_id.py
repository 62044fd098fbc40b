import math
import random
from collections import Counter

import numpy as np
import pytest

from dialektpipe import synthetic
from dialektpipe.dialect_id import (
    ConfusionMatrix,
    classify_speaker,
    evaluate,
    extract_ngrams,
    load_model,
    predict,
    read_labeled_corpus,
    save_model,
    train_nb,
    write_labeled_corpus,
)
from dialektpipe.errors import DataError
from dialektpipe.model import DialectRegion

A, B, C = DialectRegion.BASEL, DialectRegion.BERN, DialectRegion.ZURICH


def test_extract_ngrams_examples():
    assert extract_ngrams(list("abc"), [1, 2]) == Counter({"a": 1, "b": 1, "c": 1, "a b": 1, "b c": 1})
    assert extract_ngrams([], [1, 2, 3]) == Counter()
    assert extract_ngrams(["a"], [2]) == Counter()


def test_model_tables_normalized():
    m = train_nb([(list("pqp"), A), (list("qr"), B), (list("rrs"), C)], [1, 2])
    for ci in range(len(m.classes)):
        total = np.exp(m.log_likelihood[ci]).sum() + np.exp(m.log_unseen[ci])
        assert abs(total - 1) <= 1e-9
    assert abs(np.exp(m.log_prior).sum() - 1) <= 1e-12


def test_single_class_always_wins():
    m = train_nb([(list("abc"), A)])
    p = predict(m, list("xyz"))
    assert p.label == A and p.posterior[A] == pytest.approx(1.0)


def test_training_errors():
    with pytest.raises(DataError):
        train_nb([(list("ab"), A)], alpha=0)
    with pytest.raises(DataError, match="Bern"):
        train_nb([(list("ab"), A)], classes=[A, B])


def test_hand_computed_posterior_gap():
    # vocab {p,q,r}; A counts p2 q1 (total 3), B counts q1 r1 (total 2); alpha 1
    m = train_nb([(list("pqp"), A), (list("qr"), B)], [1], 1.0)
    p = predict(m, list("pqp"))
    log_a = 2 * math.log(3 / 7) + math.log(2 / 7)
    log_b = 2 * math.log(1 / 6) + math.log(2 / 6)
    assert p.label == A
    assert abs((p.log_posterior[A] - p.log_posterior[B]) - (log_a - log_b)) <= 1e-9
    # unseen token uses the shared bucket alpha / (total + alpha (|V| + 1))
    q = predict(m, ["z"])
    assert abs((q.log_posterior[A] - q.log_posterior[B]) - (math.log(1 / 7) - math.log(1 / 6))) <= 1e-9


def test_empty_input_flagged_prior_argmax():
    m = train_nb([(list("ab"), A), (list("ab"), A), (list("cd"), B)], [1])
    p = predict(m, [])
    assert p.flagged and p.label == A


def test_posteriors_sum_to_one_on_random_inputs(did_model):
    rng = random.Random(0)
    for _ in range(100):
        toks = [rng.choice(synthetic.PHONEMES) for _ in range(rng.randint(1, 200))]
        assert abs(sum(predict(did_model, toks).posterior.values()) - 1) <= 1e-9


def test_duplicating_training_corpus_keeps_argmax(did_model):
    corpus = synthetic.phoneme_corpus([A, B, C], 20, 30, seed=4)
    m1, m2 = train_nb(corpus), train_nb(corpus + corpus)
    for toks, _ in synthetic.phoneme_corpus([A, B, C], 10, 30, seed=9):
        assert predict(m1, toks).label == predict(m2, toks).label


def test_disjoint_alphabets_perfect():
    rng = random.Random(1)
    def seqs(alpha, label, n):
        return [([rng.choice(alpha) for _ in range(50)], label) for _ in range(n)]
    m = train_nb(seqs("pq", A, 200) + seqs("rs", B, 200))
    f1, cm = evaluate(m, seqs("pq", A, 100) + seqs("rs", B, 100))
    assert f1 == 1.0 and cm.counts[0, 1] == cm.counts[1, 0] == 0


def test_synthetic_distributions_separable(did_model):
    test = synthetic.phoneme_corpus(list(DialectRegion), 100, 50, seed=1)
    f1, cm = evaluate(did_model, test)
    assert f1 >= 0.95
    assert cm.row_sums() == {d: 100 for d in DialectRegion}


def test_classify_speaker():
    m = train_nb([(list("pqpq"), A), (list("rsrs"), B)], [1, 2])
    segs = [list("pq"), list("qp"), list("pp")]
    r = classify_speaker(m, segs, [10, 10, 10])
    assert r.label == A and not r.low_confidence and r.total_s == 30
    assert r.prediction.log_posterior == predict(m, list("pqqppp")).log_posterior
    single = classify_speaker(m, [list("rs")], [5.0])
    assert single.label == B and single.low_confidence
    with pytest.raises(DataError):
        classify_speaker(m, [], [])


def test_macro_f1_hand_case():
    # A: TP1 FP1 FN0 -> 2/3 ; B: TP1 FP0 FN1 -> 2/3
    cm = ConfusionMatrix([A, B], np.array([[1, 0], [1, 1]]))
    f1 = cm.f1_per_class()
    assert f1[A] == pytest.approx(2 / 3) and f1[B] == pytest.approx(2 / 3)
    assert cm.macro_f1() == pytest.approx(2 / 3)


def test_macro_f1_extremes_and_absent_classes():
    m = train_nb([(list("pp"), A), (list("rr"), B), (list("ss"), C)], [1])
    f1, _ = evaluate(m, [(list("pp"), A), (list("rr"), B)])
    assert f1 == 1.0  # C absent from truth and predictions
    f1, _ = evaluate(m, [(list("rr"), A), (list("pp"), B)])
    assert f1 == 0.0


def test_save_load_round_trip(tmp_path, did_model):
    p = tmp_path / "m.json"
    save_model(did_model, p)
    back = load_model(p)
    toks = synthetic.sample_phonemes(C, 40, 3)
    assert predict(back, toks).log_posterior == pytest.approx(predict(did_model, toks).log_posterior)
    p.write_text(p.read_text().replace('"smoothing_alpha":1.0', '"smoothing_alpha":2.0'))
    with pytest.raises(DataError, match="hash"):
        load_model(p)


def test_labeled_corpus_io(tmp_path):
    corpus = [(list("abc"), A), (["ts", "ch"], DialectRegion.VALAIS)]
    p = tmp_path / "c.tsv"
    write_labeled_corpus(corpus, p)
    assert read_labeled_corpus(p) == corpus
    p.write_text("Mars\ta b\n")
    with pytest.raises(DataError, match="line 1"):
        read_labeled_corpus(p)
