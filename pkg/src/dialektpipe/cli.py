"""Command-line entry point: ``dialektpipe <verb> ...``.

Exit codes: 0 success, 1 data error, 2 config error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import yaml

from .errors import ConfigError, DataError, DialektError

log = logging.getLogger("dialektpipe")


def _backend_specs(path: Optional[str]):
    from .backends import CONF_ENV, parse_backend_conf

    path = path or os.environ.get(CONF_ENV)
    if not path:
        raise ConfigError(f"no backend configuration: pass --backend-conf or set {CONF_ENV}")
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read backend configuration {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping")
    tts_models = doc.pop("tts_models", None) or {}
    specs = parse_backend_conf(doc)
    return specs, {tag: parse_backend_conf({"tts": spec})["tts"] for tag, spec in tts_models.items()}


def _client(specs: dict, kind: str):
    from .backends import BackendClient

    if kind not in specs:
        raise ConfigError(f"backend configuration has no {kind!r} entry")
    return BackendClient(specs[kind])


# ------------------------------------------------------------------ verbs


def cmd_ingest(args) -> int:
    from . import ingestion

    if args.local:
        catalog = ingestion.load_local_catalog(args.local)
    else:
        catalog = ingestion.fetch_catalog(args.endpoint, args.auth or os.environ.get("DIALEKTPIPE_CATALOG_AUTH", ""))
    overrides = args.overrides
    if not overrides and args.local and (Path(args.local) / "overrides.tsv").exists():
        overrides = Path(args.local) / "overrides.tsv"
    if overrides:
        catalog = ingestion.apply_overrides(catalog, ingestion.read_overrides(overrides))
    counts = ingestion.class_counts(catalog)
    print("\t".join(f"{k}={v}" for k, v in counts.items()))
    decoder = ingestion.command_decoder(args.decoder) if args.decoder else None
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    episodes = ingestion.ingest(catalog, dest, args.parallelism, decoder)
    with open(dest / "episodes.jsonl", "w", encoding="utf-8") as fh:
        for e in episodes:
            rel = Path(e.audio_path).resolve().relative_to(dest.resolve()).as_posix()
            fh.write(json.dumps({**e.to_dict(), "audio_path": rel}, sort_keys=True) + "\n")
    print(f"{len(episodes)} episodes in {dest}")
    return 0


def cmd_diarize(args) -> int:
    from .backends import diarize

    specs, _ = _backend_specs(args.backend_conf)
    with _client(specs, "diarizer") as client:
        res = diarize(client, args.audio, args.min_speakers, args.max_speakers, args.file_id)
    if res.failed:
        raise DataError(f"diarization failed: {res.reason}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(res.value, encoding="utf-8")
    return 0


def cmd_segment(args) -> int:
    """Segment every episode listed in an ingest ``episodes.jsonl``."""
    from .audio import read_wav
    from .model import Episode, Manifest, write_manifest
    from .segmentation import DiarizationResult, parse_rttm, segment_episode

    listing = Path(args.manifest)
    audio_dir = Path(args.audio_dir) if args.audio_dir else listing.parent
    out = Path(args.out)
    segments = []
    for line in listing.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        ep = Episode.from_dict(json.loads(line))
        rttm = Path(args.rttm_dir) / f"{ep.episode_id}.rttm"
        if not rttm.exists():
            log.warning("no RTTM for %s; skipped", ep.episode_id)
            continue
        turns = parse_rttm(rttm.read_text(encoding="utf-8"))
        audio = read_wav(audio_dir / ep.audio_path, mixdown=True)
        segments.extend(segment_episode(ep, DiarizationResult(ep.episode_id, tuple(turns)), audio, out / "segments",
                                        args.min_s, args.max_s, relative_to=out))
    write_manifest(Manifest(tuple(segments), created=args.created), out / "manifest.jsonl")
    print(f"{len(segments)} segments")
    return 0


def cmd_transcribe(args) -> int:
    from .backends import transcribe_batch
    from .model import read_manifest, write_manifest

    m = read_manifest(args.manifest)
    base = Path(args.audio_root) if args.audio_root else Path(args.manifest).parent
    specs, _ = _backend_specs(args.backend_conf)
    with _client(specs, "asr") as client:
        res = transcribe_batch(client, [(s.segment_id, base / s.audio_path) for s in m], args.log)
    kept = [s.with_(transcript=r.text) for s, r in zip(m, res) if not r.failed]
    write_manifest(m.replace_segments(kept), args.out)
    print(f"{len(kept)} transcribed, {len(m) - len(kept)} failed")
    return 0


def cmd_did(args) -> int:
    from . import dialect_id as did

    if args.did_cmd == "train":
        orders = [int(x) for x in args.orders.split(",")]
        model = did.train_nb(did.read_labeled_corpus(args.corpus), orders, args.alpha)
        did.save_model(model, args.out)
        print(f"trained on {sum(model.class_counts)} sequences, {len(model.vocab)} n-grams")
    elif args.did_cmd == "predict":
        model = did.load_model(args.model)
        lines = Path(args.input).read_text(encoding="utf-8").splitlines() if args.input else [args.phonemes]
        for line in lines:
            if not line.strip():
                continue
            p = did.predict(model, did.tokenize_phonemes(line))
            post = " ".join(f"{c.value}={v:.4f}" for c, v in sorted(p.posterior.items(), key=lambda kv: -kv[1]))
            print(f"{p.label.value}\t{'flagged' if p.flagged else 'ok'}\t{post}")
    else:
        model = did.load_model(args.model)
        f1, cm = did.evaluate(model, did.read_labeled_corpus(args.corpus))
        print(cm.render())
        print(f"macro_f1\t{f1:.4f}")
    return 0


def cmd_stats(args) -> int:
    from .model import read_manifest
    from .reports import corpus_stats, render_stats_csv, render_stats_text

    stats = corpus_stats(read_manifest(args.manifest))
    text = render_stats_text(stats, args.units)
    sys.stdout.write(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.txt").write_text(text, encoding="utf-8")
        (out / "stats.csv").write_text(render_stats_csv(stats), encoding="utf-8")
        if not args.no_figures:
            from .figures import plot_corpus_stats

            plot_corpus_stats(stats, out / "stats.png")
    return 0


def cmd_eval(args) -> int:
    from . import evaluation as ev
    from .model import SWISS_REGIONS, DialectRegion

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.eval_cmd == "auto":
        from .dialect_id import load_model
        from .reports import render_metric_csv, render_metric_text

        sc = ev.scenario(args.scenario, ev.read_texts(args.texts))
        dialects = list(DialectRegion) if args.include_german else list(SWISS_REGIONS)
        base = ev.build_eval_set(sc, ev.read_speaker_table(args.speakers), args.seed, dialects=dialects)
        items = ev.for_models(base, args.model)
        specs, tts_models = _backend_specs(args.backend_conf)
        tts = {}
        for tag in args.model:
            spec = tts_models.get(tag) or specs.get("tts")
            if spec is None:
                raise ConfigError(f"no TTS backend for model {tag!r}")
            tts[tag] = spec
        from .backends import BackendClient

        clients = [BackendClient(s) for s in tts.values()]
        try:
            backends = ev.EvalBackends(
                dict(zip(tts, clients)), _client(specs, "asr"), _client(specs, "embedder"), _client(specs, "phonemizer")
            )
            clients += [backends.asr, backends.embedder, backends.phonemizer]
            report = ev.run_auto_eval(items, backends, load_model(args.did_model), out / "work", sc.name)
        finally:
            for c in clients:
                c.close()
        text = render_metric_text(report)
        sys.stdout.write(text)
        (out / f"auto_{sc.name}.txt").write_text(text, encoding="utf-8")
        (out / f"auto_{sc.name}.csv").write_text(render_metric_csv(report), encoding="utf-8")
        if not args.no_figures:
            from .figures import plot_metric_report

            plot_metric_report(report, out / f"auto_{sc.name}.png")
    elif args.eval_cmd == "human-prepare":
        items = [it for it, failed in ev.read_items(args.items) if not failed]
        raters = [r for r in args.raters.split(",") if r]
        paths = ev.prepare_human_sheets(items, raters, out, args.scenario, args.per_dialect,
                                        args.raters_per_sample, args.seed)
        print(f"{len(paths)} sheets in {out}")
    else:
        from .reports import render_mos_csv, render_mos_text

        sheets = []
        for p in args.sheets:
            p = Path(p)
            sheets.extend(sorted(q for q in p.glob("*.csv") if q.name != "assignments.csv") if p.is_dir() else [p])
        if not sheets:
            raise DataError("no rating sheets found")
        report = ev.aggregate_human(sheets, args.baseline, args.alpha)
        text = render_mos_text(report)
        sys.stdout.write(text)
        (out / "human.txt").write_text(text, encoding="utf-8")
        (out / "human.csv").write_text(render_mos_csv(report), encoding="utf-8")
        if not args.no_figures:
            from .figures import plot_mos_report

            plot_mos_report(report, out / "human.png")
    return 0


def cmd_pipeline(args) -> int:
    from .pipeline import PipelineStopped, load_config, run_pipeline

    over = {"workspace": args.workspace}
    if args.stages:
        over["stages"] = args.stages.split(",")
    cfg = load_config(args.config, over)
    try:
        results = run_pipeline(cfg, stop_after=args.stop_after, force=args.force or ())
    except PipelineStopped as exc:
        print(str(exc))
        return 0
    for r in results:
        print(f"{r.stage}\t{'ran' if r.ran else 'up-to-date'}")
    return 0


def cmd_audio(args) -> int:
    from . import audio

    if args.audio_cmd == "resample":
        audio.write_wav(audio.resample(audio.read_wav(args.input, mixdown=True), args.rate), args.output)
    elif args.audio_cmd == "slice":
        audio.write_wav(audio.slice_audio(audio.read_wav(args.input, mixdown=True), args.start, args.end), args.output)
    elif args.audio_cmd == "concat":
        audio.write_wav(audio.concat([audio.read_wav(p, mixdown=True) for p in args.inputs]), args.output)
    else:
        buf = audio.read_wav(args.input, mixdown=True)
        for start, end in audio.energy_vad(buf, args.frame_ms, args.threshold_db, args.min_speech_ms, args.min_gap_ms):
            print(f"{start:.3f}\t{end:.3f}")
    return 0


def cmd_manifest(args) -> int:
    from .model import read_manifest

    m = read_manifest(args.manifest)
    print(f"ok\t{len(m)} records\tschema {m.schema_version}\tconfig {m.config_hash or '-'}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dialektpipe", description="Swiss German dialect speech corpus and evaluation toolkit.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("ingest", help="fetch the catalog and download classified episodes")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--endpoint", help="HTTP catalog endpoint")
    g.add_argument("--local", help="directory with catalog.json and media files")
    s.add_argument("--overrides", help="podcast_id<TAB>language_class file")
    s.add_argument("--auth", default="")
    s.add_argument("--dest", required=True)
    s.add_argument("--parallelism", type=int, default=4)
    s.add_argument("--decoder", help="command template with {src} and {dst} for non-WAV media")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("diarize", help="diarize one audio file into RTTM")
    s.add_argument("audio")
    s.add_argument("--out", required=True)
    s.add_argument("--file-id")
    s.add_argument("--min-speakers", type=int, default=2)
    s.add_argument("--max-speakers", type=int, default=6)
    s.add_argument("--backend-conf")
    s.set_defaults(fn=cmd_diarize)

    s = sub.add_parser("segment", help="cut ingested episodes into 2-15s segments from RTTM")
    s.add_argument("--manifest", required=True, help="episodes.jsonl written by ingest")
    s.add_argument("--rttm-dir", required=True)
    s.add_argument("--audio-dir", help="base for episode audio paths (default: next to --manifest)")
    s.add_argument("--out", required=True)
    s.add_argument("--min-s", type=float, default=2.0)
    s.add_argument("--max-s", type=float, default=15.0)
    s.add_argument("--created", default="1970-01-01T00:00:00Z")
    s.set_defaults(fn=cmd_segment)

    s = sub.add_parser("transcribe", help="pseudo-label manifest segments through the ASR backend")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--audio-root", help="base for relative audio paths (default: manifest directory)")
    s.add_argument("--log", help="completion log for resumable runs")
    s.add_argument("--backend-conf")
    s.set_defaults(fn=cmd_transcribe)

    s = sub.add_parser("did", help="phoneme n-gram dialect identification")
    dsub = s.add_subparsers(dest="did_cmd", required=True)
    t = dsub.add_parser("train")
    t.add_argument("--corpus", required=True, help="label<TAB>phonemes lines")
    t.add_argument("--out", required=True)
    t.add_argument("--orders", default="1,2,3")
    t.add_argument("--alpha", type=float, default=1.0)
    t = dsub.add_parser("predict")
    t.add_argument("--model", required=True)
    g = t.add_mutually_exclusive_group(required=True)
    g.add_argument("--phonemes")
    g.add_argument("--input")
    t = dsub.add_parser("eval")
    t.add_argument("--model", required=True)
    t.add_argument("--corpus", required=True)
    s.set_defaults(fn=cmd_did)

    s = sub.add_parser("stats", help="per-dialect corpus statistics")
    s.add_argument("manifest")
    s.add_argument("--out-dir")
    s.add_argument("--units", choices=("raw", "scaled"), default="raw")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(fn=cmd_stats)

    s = sub.add_parser("eval", help="automated and human evaluation")
    esub = s.add_subparsers(dest="eval_cmd", required=True)
    for name in ("auto", "human-prepare", "human-aggregate"):
        t = esub.add_parser(name)
        t.add_argument("--out-dir", required=True)
        t.add_argument("--no-figures", action="store_true")
        if name != "human-aggregate":
            t.add_argument("--scenario", choices=("short", "long"), required=True)
            t.add_argument("--seed", type=int, default=0)
        if name == "auto":
            t.add_argument("--texts", required=True)
            t.add_argument("--speakers", required=True, help="dialect<TAB>speaker_id<TAB>clip table")
            t.add_argument("--model", action="append", required=True, help="model tag (repeatable)")
            t.add_argument("--did-model", required=True)
            t.add_argument("--include-german", action="store_true")
            t.add_argument("--backend-conf")
        elif name == "human-prepare":
            t.add_argument("--items", required=True, help="items.jsonl from an auto run")
            t.add_argument("--raters", required=True, help="comma-separated rater ids")
            t.add_argument("--per-dialect", type=int, default=6)
            t.add_argument("--raters-per-sample", type=int, default=2)
        else:
            t.add_argument("sheets", nargs="+", help="sheet files or directories")
            t.add_argument("--baseline", default="Baseline")
            t.add_argument("--alpha", type=float, default=0.05)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("pipeline", help="run the staged corpus pipeline from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--workspace")
    s.add_argument("--stages", help="comma-separated subset")
    s.add_argument("--stop-after", help="stop cleanly after this stage")
    s.add_argument("--force", action="append", help="re-run this stage even if up to date")
    s.set_defaults(fn=cmd_pipeline)

    s = sub.add_parser("audio", help="WAV utilities")
    asub = s.add_subparsers(dest="audio_cmd", required=True)
    t = asub.add_parser("resample")
    t.add_argument("input")
    t.add_argument("output")
    t.add_argument("--rate", type=int, required=True)
    t = asub.add_parser("slice")
    t.add_argument("input")
    t.add_argument("output")
    t.add_argument("--start", type=float, required=True)
    t.add_argument("--end", type=float, required=True)
    t = asub.add_parser("concat")
    t.add_argument("output")
    t.add_argument("inputs", nargs="+")
    t = asub.add_parser("vad")
    t.add_argument("input")
    t.add_argument("--frame-ms", type=float, default=30.0)
    t.add_argument("--threshold-db", type=float, default=-40.0)
    t.add_argument("--min-speech-ms", type=float, default=250.0)
    t.add_argument("--min-gap-ms", type=float, default=300.0)
    s.set_defaults(fn=cmd_audio)

    s = sub.add_parser("manifest", help="validate a manifest file")
    s.add_argument("manifest")
    s.set_defaults(fn=cmd_manifest)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except DialektError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
