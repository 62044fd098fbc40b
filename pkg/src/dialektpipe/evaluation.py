"""Automated and human evaluation of voice-adaptation systems.

Automated: synthesize every item, transcribe it back, embed generated and
reference audio, and phonemize for speaker-level dialect identification.
Human: distribute a balanced subset to raters as CSV sheets and aggregate the
returned ratings into mean±std with rank-test significance markers.
"""

from __future__ import annotations

import csv
import json
import random
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .backends import (
    BackendClient,
    check_embedding_dims,
    embedding_from_response,
    run_batch,
    synthesis_from_response,
    synthesis_payload,
    transcript_from_response,
)
from .backends import _phonemes_from_response as phonemes_from_response
from .dialect_id import NBModel, classify_speaker, tokenize_phonemes
from .errors import ConfigError, DataError
from .metrics import (
    DEFAULT_NORM,
    MosAggregate,
    MosSample,
    TextNormConfig,
    aggregate_mos,
    bleu,
    corpus_wer,
    cosine_sim,
    normalize_text,
    significance,
)
from .model import SWISS_REGIONS, DialectRegion, MetricReport, MetricRow

N_TEXTS = 50
SPEAKERS_PER_DIALECT = 4
CLIPS_PER_SPEAKER = 5
HUMAN_PER_DIALECT = 6
RATERS_PER_SAMPLE = 2
RATING_FIELDS = ("smos", "cmos", "intelligibility")
SHEET_COLUMNS = ("item_id", "audio_path", "reference_audio_path", "text") + RATING_FIELDS


@dataclass(frozen=True)
class EvalScenario:
    name: str
    texts: tuple
    expected_duration_range_s: Tuple[float, float]

    def __post_init__(self):
        if self.name not in SCENARIO_DURATIONS:
            raise ConfigError(f"unknown scenario {self.name!r}; expected one of {sorted(SCENARIO_DURATIONS)}")
        object.__setattr__(self, "texts", tuple(self.texts))


SCENARIO_DURATIONS = {"short": (5.0, 7.0), "long": (10.0, 15.0)}


def scenario(name: str, texts: Iterable[str]) -> EvalScenario:
    return EvalScenario(name, tuple(texts), SCENARIO_DURATIONS.get(name, (0.0, 0.0)))


@dataclass(frozen=True)
class SpeakerRef:
    speaker_id: str
    dialect: DialectRegion
    clips: tuple


@dataclass(frozen=True)
class EvalItem:
    item_id: str
    model_tag: str
    dialect: DialectRegion
    speaker_id: str
    text: str
    reference_clips: tuple
    generated_audio: Optional[str] = None
    back_translation: Optional[str] = None

    def __post_init__(self):
        if len(self.reference_clips) != CLIPS_PER_SPEAKER:
            raise DataError(f"item {self.item_id}: expected {CLIPS_PER_SPEAKER} reference clips")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dialect"] = self.dialect.value
        d["reference_clips"] = list(self.reference_clips)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalItem":
        return cls(**{**d, "dialect": DialectRegion.parse(d["dialect"]), "reference_clips": tuple(d["reference_clips"])})


def read_texts(path) -> List[str]:
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def read_speaker_table(path) -> Dict[DialectRegion, List[SpeakerRef]]:
    """``dialect<TAB>speaker_id<TAB>clip_path`` lines; clip paths relative to the table."""
    path = Path(path)
    clips = defaultdict(list)
    dialect_of = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}: line {lineno}: expected dialect<TAB>speaker_id<TAB>clip_path")
        d = DialectRegion.parse(parts[0].strip())
        spk = parts[1].strip()
        if dialect_of.setdefault(spk, d) != d:
            raise DataError(f"{path}: line {lineno}: speaker {spk} listed under two dialects")
        clip = Path(parts[2].strip())
        clips[spk].append(str(clip if clip.is_absolute() else (path.parent / clip)))
    table = defaultdict(list)
    for spk in sorted(clips):
        table[dialect_of[spk]].append(SpeakerRef(spk, dialect_of[spk], tuple(clips[spk])))
    return dict(table)


def build_eval_set(
    scenario: EvalScenario,
    speakers: Dict[DialectRegion, Sequence[SpeakerRef]],
    seed: int,
    model_tag: str = "",
    dialects: Sequence[DialectRegion] = SWISS_REGIONS,
    n_texts: int = N_TEXTS,
    speakers_per_dialect: int = SPEAKERS_PER_DIALECT,
) -> List[EvalItem]:
    """Every sampled text x every dialect x every sampled speaker.

    With the defaults that is 50 x 7 x 4 = 1400 items, 200 per dialect.
    """
    if len(scenario.texts) < n_texts:
        raise DataError(f"scenario {scenario.name}: need {n_texts} texts, got {len(scenario.texts)}")
    rng = random.Random(seed)
    texts = rng.sample(list(scenario.texts), n_texts)
    items = []
    for d in dialects:
        pool = sorted(
            (s for s in speakers.get(d, ()) if len(s.clips) >= CLIPS_PER_SPEAKER),
            key=lambda s: s.speaker_id,
        )
        if len(pool) < speakers_per_dialect:
            raise DataError(
                f"dialect {d.value}: need {speakers_per_dialect} speakers with >= {CLIPS_PER_SPEAKER} clips, "
                f"found {len(pool)}"
            )
        for spk in rng.sample(pool, speakers_per_dialect):
            refs = tuple(rng.sample(sorted(spk.clips), CLIPS_PER_SPEAKER))
            for t, text in enumerate(texts):
                prefix = f"{model_tag}__" if model_tag else ""
                items.append(
                    EvalItem(
                        item_id=f"{prefix}{scenario.name}-{d.value}-{spk.speaker_id}-{t:02d}",
                        model_tag=model_tag,
                        dialect=d,
                        speaker_id=spk.speaker_id,
                        text=text,
                        reference_clips=refs,
                    )
                )
    return items


def for_models(items: Sequence[EvalItem], model_tags: Sequence[str]) -> List[EvalItem]:
    """Replicate a model-agnostic item list once per system under test."""
    return [
        replace(it, model_tag=tag, item_id=f"{tag}__{it.item_id.split('__', 1)[-1]}")
        for tag in model_tags
        for it in items
    ]


@dataclass
class EvalBackends:
    tts: Dict[str, BackendClient]  # model_tag -> TTS backend
    asr: BackendClient
    embedder: BackendClient
    phonemizer: BackendClient


@dataclass
class ScoredItem:
    item: EvalItem
    failed: bool = False
    reason: str = ""
    embedding: Optional[list] = None
    phonemes: Optional[str] = None


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._+-]", "_", name)


def generate(items: Sequence[EvalItem], backends: EvalBackends, work_dir) -> List[ScoredItem]:
    """Run TTS, ASR, embedding and phonemization for every item, checkpointed in ``work_dir/logs``."""
    work = Path(work_dir)
    logs = work / "logs"
    scored = {it.item_id: ScoredItem(it) for it in items}
    if len(scored) != len(items):
        raise DataError("eval item ids must be unique")

    def fail(item_id, reason):
        s = scored[item_id]
        if not s.failed:
            s.failed, s.reason = True, reason

    by_model = defaultdict(list)
    for it in items:
        by_model[it.model_tag].append(it)
    for tag, group in by_model.items():
        if tag not in backends.tts:
            raise ConfigError(f"no TTS backend configured for model {tag!r}")
        out_dir = work / "audio" / _safe(tag or "model")
        reqs = [
            (it.item_id, synthesis_payload(it.text, it.reference_clips, it.dialect, out_dir / f"{_safe(it.item_id)}.wav"))
            for it in group
        ]
        for (iid, _), resp in zip(reqs, run_batch(backends.tts[tag], reqs, logs / f"tts-{_safe(tag or 'model')}.jsonl")):
            res = synthesis_from_response(iid, resp)
            if res.failed:
                fail(iid, f"tts: {res.reason}")
            else:
                scored[iid].item = replace(scored[iid].item, generated_audio=res.value)

    live = [s for s in scored.values() if not s.failed]
    resps = run_batch(backends.asr, [(s.item.item_id, {"audio_path": s.item.generated_audio, "id_hint": s.item.item_id}) for s in live], logs / "asr.jsonl")
    for s, resp in zip(live, resps):
        tr = transcript_from_response(s.item.item_id, resp)
        if tr.failed:
            fail(s.item.item_id, f"asr: {tr.reason}")
        else:
            s.item = replace(s.item, back_translation=tr.text)

    resps = run_batch(backends.embedder, [(s.item.item_id, {"audio_path": s.item.generated_audio}) for s in live], logs / "embed.jsonl")
    for s, resp in zip(live, resps):
        res = embedding_from_response(s.item.item_id, resp)
        if res.failed:
            fail(s.item.item_id, f"embedder: {res.reason}")
        else:
            s.embedding = res.value

    resps = run_batch(backends.phonemizer, [(s.item.item_id, {"audio_path": s.item.generated_audio}) for s in live], logs / "phonemes.jsonl")
    for s, resp in zip(live, resps):
        res = phonemes_from_response(s.item.item_id, resp)
        if res.failed:
            fail(s.item.item_id, f"phonemizer: {res.reason}")
        else:
            s.phonemes = res.value
    return [scored[it.item_id] for it in items]


def reference_embeddings(items: Sequence[EvalItem], embedder: BackendClient, log_path=None) -> Dict[str, np.ndarray]:
    """Mean embedding of each speaker's reference clips, keyed by speaker_id."""
    clips = sorted({c for it in items for c in it.reference_clips})
    resps = run_batch(embedder, [(c, {"audio_path": c}) for c in clips], log_path)
    results = [embedding_from_response(c, r) for c, r in zip(clips, resps)]
    check_embedding_dims(results)
    by_clip = {r.item_id: r for r in results}
    out = {}
    for it in items:
        if it.speaker_id in out:
            continue
        vecs = [by_clip[c].value for c in it.reference_clips if not by_clip[c].failed]
        if vecs:
            out[it.speaker_id] = np.mean(np.asarray(vecs), axis=0)
    return out


def _did_accuracy(groups: Dict[tuple, List[ScoredItem]], model: NBModel, min_total_s: float = 0.0):
    """Fraction of speakers whose concatenated generated phonemes classify as their dialect."""
    correct = total = 0
    for (_, dialect, _), members in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2])):
        seqs = [tokenize_phonemes(s.phonemes) for s in members]
        pred = classify_speaker(model, seqs, [0.0] * len(seqs), min_total_s=min_total_s)
        correct += pred.label == dialect
        total += 1
    return (correct / total) if total else None


def score(
    scored: Sequence[ScoredItem],
    ref_emb: Dict[str, np.ndarray],
    did_model: NBModel,
    scenario_name: str = "",
    norm: TextNormConfig = DEFAULT_NORM,
) -> MetricReport:
    report = MetricReport(scenario=scenario_name)
    models = []
    for s in scored:
        if s.item.model_tag not in models:
            models.append(s.item.model_tag)

    def cell(dialect, members):
        ok = [s for s in members if not s.failed and s.item.speaker_id in ref_emb]
        row = MetricRow(dialect, members[0].item.model_tag if members else "")
        row.items_total = len(members)
        row.items_scored = len(ok)
        row.items_failed = row.items_total - row.items_scored
        if not ok:
            return row, ok
        refs = [normalize_text(s.item.text, norm) for s in ok]
        hyps = [normalize_text(s.item.back_translation, norm) for s in ok]
        row.wer = corpus_wer(refs, hyps)
        row.bleu = bleu(refs, hyps)
        row.sim = float(np.mean([cosine_sim(s.embedding, ref_emb[s.item.speaker_id]) for s in ok]))
        return row, ok

    for tag in models:
        mine = [s for s in scored if s.item.model_tag == tag]
        for d in DialectRegion:
            members = [s for s in mine if s.item.dialect == d]
            row, ok = cell(d, members)
            row.model_tag = tag
            groups = defaultdict(list)
            for s in ok:
                groups[(tag, d, s.item.speaker_id)].append(s)
            row.did = _did_accuracy(groups, did_model)
            report.rows.append(row)
        total, ok = cell(None, mine)
        total.model_tag = tag
        groups = defaultdict(list)
        for s in ok:
            if s.item.dialect.is_swiss:
                groups[(tag, s.item.dialect, s.item.speaker_id)].append(s)
        total.did = _did_accuracy(groups, did_model)
        report.rows.append(total)
    return report


def run_auto_eval(
    items: Sequence[EvalItem],
    backends: EvalBackends,
    did_model: NBModel,
    work_dir,
    scenario_name: str = "",
    norm: TextNormConfig = DEFAULT_NORM,
) -> MetricReport:
    """WER/BLEU of back-translations, SIM against reference clips and speaker-level DID.

    Per-item backend failures are excluded from the aggregates and counted in
    ``items_failed``. Generated items are written to ``work_dir/items.jsonl``.
    """
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    scored = generate(items, backends, work)
    ref_emb = reference_embeddings(items, backends.embedder, work / "logs" / "embed-refs.jsonl")
    dims = {len(v) for v in ref_emb.values()} | {len(s.embedding) for s in scored if s.embedding is not None}
    if len(dims) > 1:
        raise DataError(f"embedding dimension mismatch between generated and reference audio: {sorted(dims)}")
    with open(work / "items.jsonl", "w", encoding="utf-8") as fh:
        for s in scored:
            rec = s.item.to_dict()
            rec["failed"], rec["reason"] = s.failed, s.reason
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    return score(scored, ref_emb, did_model, scenario_name, norm)


def read_items(path) -> List[Tuple[EvalItem, bool]]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            failed = rec.pop("failed", False)
            rec.pop("reason", None)
            out.append((EvalItem.from_dict(rec), failed))
    return out


# ---------------------------------------------------------------- human evaluation


@dataclass(frozen=True)
class Assignment:
    scenario: str
    model_tag: str
    item_id: str
    rater_id: str


def sheet_name(scenario_name: str, model_tag: str, rater_id: str) -> str:
    return f"{_safe(scenario_name)}__{_safe(model_tag)}__{_safe(rater_id)}.csv"


def assign_raters(n_items: int, raters: Sequence[str], raters_per_sample: int, rng: random.Random) -> List[List[str]]:
    """Cyclic assignment over a shuffled rater order: distinct raters per
    item and per-rater load within one of every other rater."""
    if raters_per_sample > len(raters):
        raise DataError(f"cannot give each item {raters_per_sample} distinct raters with only {len(raters)} raters")
    order = list(raters)
    rng.shuffle(order)
    k = raters_per_sample
    return [[order[(k * i + j) % len(order)] for j in range(k)] for i in range(n_items)]


def prepare_human_sheets(
    items: Sequence[EvalItem],
    raters: Sequence[str],
    out_dir,
    scenario_name: str,
    per_dialect: int = HUMAN_PER_DIALECT,
    raters_per_sample: int = RATERS_PER_SAMPLE,
    seed: int = 0,
    dialects: Sequence[DialectRegion] = SWISS_REGIONS,
) -> List[Path]:
    """Write one rating sheet per (model, rater) and an ``assignments.csv`` index.

    Items need generated audio. Per model: ``per_dialect`` items from each
    dialect, each rated by ``raters_per_sample`` distinct raters.
    """
    if len(set(raters)) != len(raters) or len(raters) < 2:
        raise DataError("need at least two distinct raters")
    rng = random.Random(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_model = defaultdict(list)
    for it in items:
        if it.generated_audio:
            by_model[it.model_tag].append(it)
    paths, index = [], []
    for tag in sorted(by_model):
        chosen = []
        for d in dialects:
            pool = sorted((it for it in by_model[tag] if it.dialect == d), key=lambda it: it.item_id)
            if len(pool) < per_dialect:
                raise DataError(f"model {tag}: dialect {d.value} has {len(pool)} rateable items, need {per_dialect}")
            chosen.extend(rng.sample(pool, per_dialect))
        rng.shuffle(chosen)
        sheets = defaultdict(list)
        for it, who in zip(chosen, assign_raters(len(chosen), raters, raters_per_sample, rng)):
            for r in who:
                sheets[r].append(it)
                index.append(Assignment(scenario_name, tag, it.item_id, r))
        for r in sorted(raters):
            path = out / sheet_name(scenario_name, tag, r)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(SHEET_COLUMNS)
                for it in sheets.get(r, []):
                    w.writerow([it.item_id, it.generated_audio, it.reference_clips[0], it.text, "", "", ""])
            paths.append(path)
    with open(out / "assignments.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "model_tag", "item_id", "rater_id"])
        for a in index:
            w.writerow([a.scenario, a.model_tag, a.item_id, a.rater_id])
    return paths


def _parse_rating(value: str, name: str, where: str) -> Optional[int]:
    value = (value or "").strip()
    if not value:
        return None
    try:
        return int(value)
    except ValueError:
        raise DataError(f"{where}: {name}={value!r} is not an integer") from None


def _rows_to_samples(rows, source: str, rater_for) -> List[MosSample]:
    samples = []
    for rowno, row in enumerate(rows, start=2):
        where = f"{source}: row {rowno}"
        vals = {f: _parse_rating(row.get(f, ""), f, where) for f in RATING_FIELDS}
        try:
            samples.append(MosSample(row["item_id"], rater_for(row), **vals))
        except DataError as exc:
            raise DataError(f"{where}: {exc}") from None
    return samples


def read_sheet(path) -> Tuple[str, str, str, List[MosSample]]:
    """Parse a completed rating sheet; returns (scenario, model_tag, rater_id, samples)."""
    path = Path(path)
    parts = path.stem.split("__")
    if len(parts) != 3:
        raise DataError(f"{path.name}: sheet names must be <scenario>__<model>__<rater>.csv")
    scen, tag, rater = parts
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(SHEET_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path.name}: missing columns {sorted(missing)}")
        samples = _rows_to_samples(list(reader), path.name, lambda row: rater)
    return scen, tag, rater, samples


def read_ratings(path) -> List[MosSample]:
    """Flat ratings CSV: item_id,rater_id,smos,cmos,intelligibility."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"item_id", "rater_id", *RATING_FIELDS} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path.name}: missing columns {sorted(missing)}")
        return _rows_to_samples(list(reader), path.name, lambda row: row["rater_id"])


@dataclass
class MosRow:
    scenario: str
    model_tag: str
    scores: Dict[str, Optional[MosAggregate]]
    vs_baseline: Dict[str, bool] = field(default_factory=dict)
    vs_peers: Dict[str, bool] = field(default_factory=dict)
    p_values: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def render(self, name: str) -> str:
        agg = self.scores.get(name)
        if agg is None:
            return "-"
        marks = ("*" if self.vs_baseline.get(name) else "") + ("†" if self.vs_peers.get(name) else "")
        return agg.render() + marks


@dataclass
class MosReport:
    baseline: str
    rows: List[MosRow] = field(default_factory=list)

    def row(self, scenario_name: str, model_tag: str) -> MosRow:
        for r in self.rows:
            if r.scenario == scenario_name and r.model_tag == model_tag:
                return r
        raise KeyError((scenario_name, model_tag))


def aggregate_samples(
    grouped: Dict[Tuple[str, str], List[MosSample]], baseline: str = "Baseline", alpha: float = 0.05
) -> MosReport:
    report = MosReport(baseline)
    for scen, tag in sorted(grouped):
        samples = grouped[(scen, tag)]
        scores = {}
        for f in RATING_FIELDS:
            try:
                scores[f] = aggregate_mos(samples, f)
            except DataError:
                scores[f] = None
        report.rows.append(MosRow(scen, tag, scores))

    def values(scen, tag, f):
        return [getattr(s, f) for s in grouped.get((scen, tag), []) if getattr(s, f) is not None]

    def test(a, b):
        if len(a) < 3 or len(b) < 3:
            return None
        return significance(a, b, alpha)

    for row in report.rows:
        peers = [t for s, t in grouped if s == row.scenario and t not in (baseline, row.model_tag)]
        for f in RATING_FIELDS:
            mine = values(row.scenario, row.model_tag, f)
            row.p_values[f] = {}
            if row.model_tag != baseline and (row.scenario, baseline) in grouped:
                res = test(mine, values(row.scenario, baseline, f))
                row.vs_baseline[f] = bool(res and res.significant)
                if res:
                    row.p_values[f][baseline] = res.p_value
            if row.model_tag != baseline:
                flags = []
                for peer in sorted(peers):
                    res = test(mine, values(row.scenario, peer, f))
                    if res:
                        row.p_values[f][peer] = res.p_value
                        flags.append(res.significant)
                row.vs_peers[f] = any(flags)
    return report


def aggregate_human(sheets: Iterable, baseline: str = "Baseline", alpha: float = 0.05) -> MosReport:
    """Aggregate completed sheets into per (scenario, model) mean±std with markers.

    ``*``: different from the baseline model; ``†``: different from another
    non-baseline model. Blank ratings are skipped per field.
    """
    grouped = defaultdict(list)
    for path in sheets:
        scen, tag, _, samples = read_sheet(path)
        grouped[(scen, tag)].extend(samples)
    return aggregate_samples(dict(grouped), baseline, alpha)
