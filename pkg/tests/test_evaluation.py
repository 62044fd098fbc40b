import csv
import random
from collections import Counter

import pytest

from conftest import stub_client
from dialektpipe.errors import ConfigError, DataError
from dialektpipe.evaluation import (
    EvalBackends,
    EvalItem,
    SpeakerRef,
    aggregate_human,
    aggregate_samples,
    assign_raters,
    build_eval_set,
    for_models,
    prepare_human_sheets,
    read_items,
    read_sheet,
    read_speaker_table,
    read_texts,
    run_auto_eval,
    scenario,
    sheet_name,
)
from dialektpipe.metrics import MosSample
from dialektpipe.model import DialectRegion
from dialektpipe.synthetic import SWISS_REGIONS


def backends(tags=("M",), **asr_opts):
    return EvalBackends(
        tts={t: stub_client("tts") for t in tags},
        asr=stub_client("asr", **asr_opts),
        embedder=stub_client("embedder"),
        phonemizer=stub_client("phonemizer"),
    )


@pytest.fixture(scope="module")
def inputs(eval_inputs):
    return scenario("short", read_texts(eval_inputs["texts"])), read_speaker_table(eval_inputs["speakers"])


def test_scenario_names():
    assert scenario("long", ["a"]).expected_duration_range_s == (10.0, 15.0)
    with pytest.raises(ConfigError, match="medium"):
        scenario("medium", ["a"])


def test_eval_item_needs_five_clips():
    with pytest.raises(DataError):
        EvalItem("i", "M", DialectRegion.BERN, "s", "t", ("a",) * 4)


def test_eval_set_cardinality_and_determinism(inputs):
    scen, speakers = inputs
    items = build_eval_set(scen, speakers, seed=7)
    assert len(items) == 1400
    assert Counter(it.dialect for it in items) == {d: 200 for d in SWISS_REGIONS}
    assert len({it.item_id for it in items}) == 1400
    assert len({it.text for it in items}) == 50
    assert all(len(set(it.reference_clips)) == 5 for it in items)
    assert items == build_eval_set(scen, speakers, seed=7)
    assert items != build_eval_set(scen, speakers, seed=8)
    assert len(build_eval_set(scen, speakers, 7, dialects=list(DialectRegion))) == 1600


def test_eval_set_names_short_dialect(inputs):
    scen, speakers = inputs
    speakers = dict(speakers)
    speakers[DialectRegion.GRISONS] = speakers[DialectRegion.GRISONS][:3]
    with pytest.raises(DataError, match="Grisons.*found 3"):
        build_eval_set(scen, speakers, seed=0)
    speakers[DialectRegion.GRISONS] = [SpeakerRef(s.speaker_id, s.dialect, s.clips[:4]) for s in inputs[1][DialectRegion.GRISONS]]
    with pytest.raises(DataError, match="Grisons"):
        build_eval_set(scen, speakers, seed=0)


def test_for_models(inputs):
    scen, speakers = inputs
    base = build_eval_set(scen, speakers, 0, n_texts=2)
    multi = for_models(base, ["A", "B"])
    assert len(multi) == 2 * len(base)
    assert {it.item_id.split("__")[0] for it in multi} == {"A", "B"}


def test_closed_loop_small(inputs, did_model, tmp_path):
    scen, speakers = inputs
    items = for_models(build_eval_set(scen, speakers, 1, n_texts=5), ["A", "B"])
    rep = run_auto_eval(items, backends(("A", "B")), did_model, tmp_path, "short")
    assert len(rep.rows) == 2 * 9
    for r in rep.rows:
        if r.dialect == DialectRegion.GERMAN:
            assert r.items_total == 0 and r.wer is None
            continue
        assert (r.wer, r.bleu, r.sim, r.did) == (0.0, 1.0, pytest.approx(1.0, abs=1e-12), 1.0)
    back = read_items(tmp_path / "items.jsonl")
    assert len(back) == len(items) and not any(f for _, f in back)
    assert all(it.generated_audio and it.back_translation for it, _ in back)


def test_missing_tts_backend(inputs, did_model, tmp_path):
    scen, speakers = inputs
    items = for_models(build_eval_set(scen, speakers, 1, n_texts=1), ["X"])
    with pytest.raises(ConfigError, match="'X'"):
        run_auto_eval(items, backends(("A",)), did_model, tmp_path)


def test_substitution_wer_and_failure_accounting(inputs, did_model, tmp_path):
    scen, speakers = inputs
    words = "eins zwei drei vier fünf sechs sieben acht neun zehn".split()
    texts = [" ".join(random.Random(i).choices(words, k=20)) for i in range(50)]
    items = for_models(build_eval_set(scenario("short", texts), speakers, 3, n_texts=10), ["M"])
    bad = [items[0].item_id, items[57].item_id]
    rep = run_auto_eval(items, backends(substitute_every=10, fail_ids=bad), did_model, tmp_path, "short")
    total = rep.row(None, "M")
    assert total.wer == pytest.approx(0.1, abs=0.02)
    assert total.items_failed == 2 and total.items_total == total.items_scored + total.items_failed == len(items)
    failed = {it.item_id for it, f in read_items(tmp_path / "items.jsonl") if f}
    assert failed == set(bad)


# ---------------------------------------------------------------- human sheets


@pytest.fixture
def generated(inputs, tmp_path):
    scen, speakers = inputs
    items = for_models(build_eval_set(scen, speakers, 2, n_texts=10), ["Baseline", "Ours"])
    return [EvalItem(**{**it.__dict__, "generated_audio": f"/gen/{it.item_id}.wav"}) for it in items]


RATERS = [f"r{i}" for i in range(5)]


def test_human_sheet_counts(generated, tmp_path):
    paths = prepare_human_sheets(generated, RATERS, tmp_path / "s", "short", seed=3)
    assert len(paths) == 2 * len(RATERS)
    for tag in ("Baseline", "Ours"):
        loads = {}
        slots = []
        for r in RATERS:
            _, t, rater, samples = read_sheet(tmp_path / "s" / sheet_name("short", tag, r))
            assert t == tag and rater == r
            loads[r] = len(samples)
            slots += [s.item_id for s in samples]
        assert len(slots) == 84
        assert max(loads.values()) - min(loads.values()) <= 1
        per_item = Counter(slots)
        assert set(per_item.values()) == {2} and len(per_item) == 42
    again = prepare_human_sheets(generated, RATERS, tmp_path / "t", "short", seed=3)
    assert [p.read_bytes() for p in paths] == [p.read_bytes() for p in again]
    rows = list(csv.DictReader(open(tmp_path / "s" / "assignments.csv")))
    assert len(rows) == 168


def test_assign_raters_properties():
    rng = random.Random(0)
    for n in range(1, 60):
        for r in range(2, 8):
            for k in range(1, r + 1):
                a = assign_raters(n, [f"x{i}" for i in range(r)], k, rng)
                assert all(len(set(x)) == k for x in a)
                load = Counter(x for row in a for x in row)
                counts = [load.get(f"x{i}", 0) for i in range(r)]
                assert max(counts) - min(counts) <= 1
    with pytest.raises(DataError):
        assign_raters(3, ["a"], 2, rng)


def _fill(path, values):
    rows = list(csv.DictReader(open(path, newline="")))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["item_id"], lineterminator="\n")
        w.writeheader()
        for row, v in zip(rows, values):
            row.update({"smos": v[0], "cmos": v[1], "intelligibility": v[2]})
            w.writerow(row)


def test_aggregate_uniform_and_shifted(generated, tmp_path):
    paths = prepare_human_sheets(generated, RATERS, tmp_path, "short", seed=1)
    for p in paths:
        n = len(read_sheet(p)[3])
        if "__Baseline__" in p.name:
            _fill(p, [("4", "0", "4")] * n)
        else:
            _fill(p, [("2", "0", "4")] * n)
    rep = aggregate_human(paths)
    base = rep.row("short", "Baseline")
    ours = rep.row("short", "Ours")
    assert base.render("smos") == "4.00±0.00"
    assert ours.render("smos") == "2.00±0.00*"
    assert ours.render("intelligibility") == "4.00±0.00"
    assert ours.render("cmos") == "0.00±0.00"


def test_peer_marker_and_small_groups():
    mk = lambda tag, vals: [MosSample(f"{tag}{i}", "r", smos=v) for i, v in enumerate(vals)]
    grouped = {
        ("short", "Baseline"): mk("b", [3, 3, 3, 4, 4, 4]),
        ("short", "A"): mk("a", [3, 3, 4, 4, 3, 4]),
        ("short", "B"): mk("c", [5, 5, 5, 5, 5, 5]),
        ("long", "Baseline"): mk("d", [1, 1]),
        ("long", "A"): mk("e", [5, 5]),
    }
    rep = aggregate_samples(grouped)
    assert rep.row("short", "A").render("smos").endswith("†")
    assert not rep.row("short", "A").vs_baseline["smos"]
    assert rep.row("short", "B").render("smos").endswith("*†")
    assert rep.row("long", "A").render("smos") == "5.00±0.00"
    assert rep.row("short", "A").render("cmos") == "-"


def test_bad_sheet_values_name_the_row(generated, tmp_path):
    paths = prepare_human_sheets(generated, RATERS, tmp_path, "short")
    p = next(p for p in paths if read_sheet(p)[3])
    n = len(read_sheet(p)[3])
    _fill(p, [("4", "0", "4")] * (n - 1) + [("6", "0", "4")])
    with pytest.raises(DataError, match=f"row {n + 1}"):
        read_sheet(p)
    _fill(p, [("4", "x", "4")] * n)
    with pytest.raises(DataError, match="row 2.*cmos"):
        read_sheet(p)
    with pytest.raises(DataError, match="sheet names"):
        read_sheet(tmp_path / "assignments.csv")
