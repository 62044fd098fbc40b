"""Score the BLEU fixture corpora with sacrebleu and print frozen constants.

Run once by hand (``pip install sacrebleu``); the printed values are pasted
into tests/test_metrics_text.py. Not collected by pytest.
"""

from sacrebleu.metrics import BLEU

CASES = [
    ([["a", "b", "c", "d"]], [["a", "b", "c"]]),
    ([["the", "cat", "sat", "on", "the", "mat"]], [["the", "cat", "is", "on", "the", "mat"]]),
    ([["der", "hund", "bellt", "laut", "im", "garten"]], [["der", "hund", "bellt", "im", "garten"]]),
    (
        [["ich", "gehe", "heute", "nach", "hause"], ["es", "regnet", "seit", "gestern", "abend"]],
        [["ich", "gehe", "nach", "hause"], ["es", "regnet", "seit", "gestern", "abend", "stark"]],
    ),
    ([["a", "b", "c", "d", "e"]], [["e", "d", "c", "b", "a"]]),
    ([["a", "a", "a", "b"]], [["a", "a", "a", "a", "a"]]),
    (
        [["wir", "fahren", "morgen", "in", "die", "berge"], ["das", "wetter", "ist", "schoen"], ["x"]],
        [["wir", "fahren", "in", "die", "berge"], ["das", "wetter", "ist", "sehr", "schoen"], ["x"]],
    ),
    ([["one", "two", "three", "four", "five", "six", "seven"]], [["one", "two", "three", "four", "five", "six", "seven", "eight", "nine"]]),
    ([["p", "q"], ["r", "s", "t", "u"]], [["p", "q"], ["r", "s", "t", "u"]]),
    ([["zuerich", "ist", "eine", "stadt", "in", "der", "schweiz"]], [["bern", "ist", "eine", "stadt", "der", "schweiz"]]),
]

if __name__ == "__main__":
    scorer = BLEU(tokenize="none", smooth_method="add-k", smooth_value=1, force=True)
    for refs, hyps in CASES:
        res = scorer.corpus_score([" ".join(h) for h in hyps], [[" ".join(r) for r in refs]])
        print(repr(res.score / 100.0))
