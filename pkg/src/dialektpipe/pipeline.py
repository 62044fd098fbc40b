"""Stage orchestration: ingest -> diarize -> segment -> transcribe -> dialect-id -> stats.

Every stage writes its outputs into the workspace and then a checkpoint file
``checkpoints/<stage>.json`` holding a fingerprint (config hash plus the
upstream checkpoint) and the sha256 of each output. A stage whose checkpoint
matches and whose outputs are intact is skipped. Backend calls inside a stage
go through completion logs, so a stage killed half-way resumes where it was.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import signal
from collections import defaultdict
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import yaml

from . import ingestion
from .audio import read_wav
from .backends import (
    BackendClient,
    BackendSpec,
    load_backend_conf,
    parse_backend_conf,
    phonemize_batch,
    run_batch,
    transcribe_batch,
)
from .dialect_id import DEFAULT_ALPHA, DEFAULT_ORDERS, MIN_SPEAKER_SECONDS, classify_speaker, load_model, read_labeled_corpus, save_model, tokenize_phonemes, train_nb
from .errors import BackendError, ConfigError, DataError, DialektError
from .model import MAX_SEGMENT_S, MIN_SEGMENT_S, Episode, Manifest, read_manifest, write_manifest
from .segmentation import DiarizationResult, parse_rttm, segment_episode

log = logging.getLogger(__name__)

STAGES = ("ingest", "diarize", "segment", "transcribe", "dialect-id", "stats")
WORKSPACE_ENV = "DIALEKTPIPE_WORKSPACE"
KILL_ENV = "DIALEKTPIPE_KILL_AFTER"  # test hook: SIGKILL self after this stage's checkpoint


class LockError(DialektError):
    exit_code = 1


class PipelineStopped(DialektError):
    exit_code = 0


@dataclass
class PipelineConfig:
    workspace: str = ""
    created: str = "1970-01-01T00:00:00Z"
    seed: int = 0
    stages: List[str] = field(default_factory=lambda: list(STAGES))
    # ingest
    catalog: str = ""  # http(s) endpoint or a directory holding catalog.json
    catalog_auth: str = ""
    overrides: str = ""
    parallelism: int = 4
    decoder: str = ""
    # diarize / segment
    min_speakers: int = 2
    max_speakers: int = 6
    min_segment_s: float = float(MIN_SEGMENT_S)
    max_segment_s: float = float(MAX_SEGMENT_S)
    # dialect-id
    did_model: str = ""
    did_train_corpus: str = ""
    did_orders: List[int] = field(default_factory=lambda: list(DEFAULT_ORDERS))
    did_alpha: float = DEFAULT_ALPHA
    did_min_total_s: float = MIN_SPEAKER_SECONDS
    # stats
    stats_units: str = "raw"
    figures: bool = True
    # backends: inline mapping kind -> spec, or a file
    backends: Dict[str, dict] = field(default_factory=dict)
    backends_conf: str = ""

    base_dir: str = field(default=".", repr=False)
    raw: dict = field(default_factory=dict, repr=False)

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def config_hash(self) -> str:
        # where and which stages run does not change what a stage produces
        doc = {k: v for k, v in self.raw.items() if k not in ("workspace", "stages")}
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


_FIELDS = {f.name for f in fields(PipelineConfig)} - {"base_dir", "raw"}


def parse_config(doc: dict, base_dir=".") -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("pipeline config must be a mapping")
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    unknown = set(doc) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = PipelineConfig(**doc, base_dir=str(base_dir), raw=dict(doc))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    validate_config(cfg)
    return cfg


def load_config(path, overrides: Optional[dict] = None) -> PipelineConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return parse_config(doc, path.parent)


def validate_config(cfg: PipelineConfig) -> None:
    """Reject bad configs before any work is done."""
    bad = [s for s in cfg.stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}; expected a subset of {list(STAGES)}")
    if list(cfg.stages) != [s for s in STAGES if s in cfg.stages]:
        raise ConfigError(f"stages must keep pipeline order {list(STAGES)}")
    if not (cfg.workspace or os.environ.get(WORKSPACE_ENV)):
        raise ConfigError(f"no workspace: set 'workspace' or {WORKSPACE_ENV}")
    if "ingest" in cfg.stages and not cfg.catalog:
        raise ConfigError("ingest stage needs 'catalog'")
    if not 1 <= cfg.min_speakers <= cfg.max_speakers:
        raise ConfigError("need 1 <= min_speakers <= max_speakers")
    if not 0 < cfg.min_segment_s <= cfg.max_segment_s:
        raise ConfigError("need 0 < min_segment_s <= max_segment_s")
    if cfg.stats_units not in ("raw", "scaled"):
        raise ConfigError("stats_units must be 'raw' or 'scaled'")
    if "dialect-id" in cfg.stages:
        if not (cfg.did_model or cfg.did_train_corpus):
            raise ConfigError("dialect-id stage needs 'did_model' or 'did_train_corpus'")
        src = cfg.did_model or cfg.did_train_corpus
        if not cfg.path(src).exists():
            raise ConfigError(f"dialect-id input {src} does not exist")
    needed = {"diarize": "diarizer", "transcribe": "asr", "dialect-id": "phonemizer"}
    specs = backend_specs(cfg) if any(s in cfg.stages for s in needed) else {}
    for stage, kind in needed.items():
        if stage in cfg.stages and kind not in specs:
            raise ConfigError(f"stage {stage} needs a {kind} backend")


def backend_specs(cfg: PipelineConfig) -> Dict[str, BackendSpec]:
    if cfg.backends:
        return parse_backend_conf(cfg.backends)
    if cfg.backends_conf:
        return load_backend_conf(cfg.path(cfg.backends_conf))
    return load_backend_conf()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class WorkspaceLock:
    def __init__(self, ws: Path):
        self.path = ws / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                try:
                    pid = int(self.path.read_text().strip() or 0)
                except (OSError, ValueError):
                    pid = 0
                if pid and _alive(pid):
                    raise LockError(f"workspace {self.path.parent} is locked by running process {pid}") from None
                log.warning("removing stale lock left by process %s", pid or "?")
                self.path.unlink(missing_ok=True)
                continue
            with os.fdopen(fd, "w") as fh:
                fh.write(f"{os.getpid()}\n")
            return self
        raise LockError(f"cannot acquire {self.path}")

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _alive(pid: int) -> bool:
    if pid == os.getpid():
        return True
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


@dataclass
class StageResult:
    stage: str
    ran: bool
    outputs: Dict[str, str]


class Pipeline:
    def __init__(self, cfg: PipelineConfig, clients: Optional[Dict[str, BackendClient]] = None):
        self.cfg = cfg
        self.ws = Path(cfg.workspace or os.environ[WORKSPACE_ENV]).resolve()
        self._clients = dict(clients or {})
        self._owned: List[BackendClient] = []

    # ----------------------------------------------------------- plumbing

    def client(self, kind: str) -> BackendClient:
        if kind not in self._clients:
            specs = backend_specs(self.cfg)
            if kind not in specs:
                raise ConfigError(f"no {kind} backend configured")
            c = BackendClient(specs[kind])
            self._clients[kind] = c
            self._owned.append(c)
        return self._clients[kind]

    def close(self):
        for c in self._owned:
            c.close()

    def rel(self, p: Path) -> str:
        return Path(p).resolve().relative_to(self.ws).as_posix()

    def checkpoint_path(self, stage: str) -> Path:
        return self.ws / "checkpoints" / f"{stage}.json"

    def fingerprint(self, stage: str) -> str:
        i = STAGES.index(stage)
        upstream = ""
        for prev in reversed(STAGES[:i]):
            cp = self.checkpoint_path(prev)
            if cp.exists():
                upstream = cp.read_text(encoding="utf-8")
                break
        return hashlib.sha256(f"{stage}\n{self.cfg.config_hash}\n{upstream}".encode()).hexdigest()[:16]

    def is_done(self, stage: str) -> bool:
        cp = self.checkpoint_path(stage)
        if not cp.exists():
            return False
        rec = json.loads(cp.read_text(encoding="utf-8"))
        if rec.get("fingerprint") != self.fingerprint(stage):
            return False
        for rel, digest in rec.get("outputs", {}).items():
            p = self.ws / rel
            if not p.exists() or _sha256(p) != digest:
                return False
        return True

    def mark_done(self, stage: str, fingerprint: str, outputs: Sequence[Path]) -> Dict[str, str]:
        digests = {self.rel(p): _sha256(p) for p in outputs}
        cp = self.checkpoint_path(stage)
        cp.parent.mkdir(parents=True, exist_ok=True)
        tmp = cp.with_suffix(".tmp")
        tmp.write_text(json.dumps({"stage": stage, "fingerprint": fingerprint, "outputs": digests},
                                  sort_keys=True, indent=1) + "\n", encoding="utf-8")
        tmp.replace(cp)
        return digests

    def log_path(self, stage: str, fp: str) -> Path:
        return self.ws / "logs" / f"{stage}-{fp}.jsonl"

    def header(self) -> dict:
        return {"created": self.cfg.created, "config_hash": self.cfg.config_hash}

    # ----------------------------------------------------------- stages

    def stage_ingest(self, fp: str) -> List[Path]:
        cfg = self.cfg
        if "://" in cfg.catalog:
            catalog = ingestion.fetch_catalog(cfg.catalog, cfg.catalog_auth)
        else:
            catalog = ingestion.load_local_catalog(cfg.path(cfg.catalog))
        overrides = {}
        if cfg.overrides:
            overrides = ingestion.read_overrides(cfg.path(cfg.overrides))
        elif "://" not in cfg.catalog and (cfg.path(cfg.catalog) / "overrides.tsv").exists():
            overrides = ingestion.read_overrides(cfg.path(cfg.catalog) / "overrides.tsv")
        catalog = ingestion.apply_overrides(catalog, overrides)
        log.info("language classes: %s", ingestion.class_counts(catalog))
        decoder = ingestion.command_decoder(cfg.decoder) if cfg.decoder else None
        episodes = ingestion.ingest(catalog, self.ws / "audio", cfg.parallelism, decoder)
        out = self.ws / "episodes.jsonl"
        with open(out, "w", encoding="utf-8") as fh:
            for e in episodes:
                fh.write(json.dumps(replace(e, audio_path=self.rel(Path(e.audio_path))).to_dict(), sort_keys=True) + "\n")
        return [out]

    def episodes(self) -> List[Episode]:
        path = self.ws / "episodes.jsonl"
        if not path.exists():
            raise DataError(f"{path} missing; run the ingest stage first")
        return [Episode.from_dict(json.loads(l)) for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]

    def stage_diarize(self, fp: str) -> List[Path]:
        cfg = self.cfg
        eps = self.episodes()
        items = [
            (e.episode_id, {"audio_path": str(self.ws / e.audio_path), "min_speakers": cfg.min_speakers,
                            "max_speakers": cfg.max_speakers, "file_id": e.episode_id})
            for e in eps
        ]
        resps = run_batch(self.client("diarizer"), items, self.log_path("diarize", fp))
        out_dir = self.ws / "rttm"
        if out_dir.exists():
            shutil.rmtree(out_dir)
        out_dir.mkdir(parents=True)
        outputs = []
        for e, resp in zip(eps, resps):
            if not resp["ok"]:
                log.warning("diarization failed for %s: %s", e.episode_id, resp["error"])
                continue
            rttm = resp["result"].get("rttm")
            if not isinstance(rttm, str):
                raise BackendError(f"protocol violation: diarizer response for {e.episode_id} lacks 'rttm'")
            try:
                parse_rttm(rttm)
            except DataError as exc:
                raise BackendError(f"diarizer returned invalid RTTM for {e.episode_id}: {exc}") from None
            p = out_dir / f"{e.episode_id}.rttm"
            p.write_text(rttm, encoding="utf-8")
            outputs.append(p)
        return outputs

    def stage_segment(self, fp: str) -> List[Path]:
        cfg = self.cfg
        seg_dir = self.ws / "segments"
        if seg_dir.exists():
            shutil.rmtree(seg_dir)
        segments = []
        for e in self.episodes():
            rttm = self.ws / "rttm" / f"{e.episode_id}.rttm"
            if not rttm.exists():
                continue
            turns = [t for t in parse_rttm(rttm.read_text(encoding="utf-8"))]
            diar = DiarizationResult(e.episode_id, tuple(turns), (cfg.min_speakers, cfg.max_speakers))
            audio = read_wav(self.ws / e.audio_path)
            segments.extend(segment_episode(e, diar, audio, seg_dir, cfg.min_segment_s, cfg.max_segment_s,
                                            relative_to=self.ws))
        out = self.ws / "manifests" / "segmented.jsonl"
        out.parent.mkdir(parents=True, exist_ok=True)
        write_manifest(Manifest(tuple(segments), **self.header()), out)
        return [out]

    def stage_transcribe(self, fp: str) -> List[Path]:
        m = read_manifest(self.ws / "manifests" / "segmented.jsonl")
        results = transcribe_batch(
            self.client("asr"), [(s.segment_id, self.ws / s.audio_path) for s in m], self.log_path("transcribe", fp)
        )
        kept, failed = [], 0
        for s, r in zip(m, results):
            if r.failed:
                failed += 1
                log.info("dropping %s: %s", s.segment_id, r.reason)
            else:
                kept.append(s.with_(transcript=r.text))
        log.info("transcription: %d kept, %d failed", len(kept), failed)
        out = self.ws / "manifests" / "transcribed.jsonl"
        write_manifest(Manifest(tuple(kept), **self.header()), out)
        return [out]

    def did_model(self):
        cfg = self.cfg
        if cfg.did_model:
            return load_model(cfg.path(cfg.did_model)), []
        model = train_nb(read_labeled_corpus(cfg.path(cfg.did_train_corpus)), cfg.did_orders, cfg.did_alpha)
        path = self.ws / "models" / "did.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, path)
        return model, [path]

    def stage_dialect_id(self, fp: str) -> List[Path]:
        cfg = self.cfg
        model, extra = self.did_model()
        m = read_manifest(self.ws / "manifests" / "transcribed.jsonl")
        phon = phonemize_batch(self.client("phonemizer"), [(s.segment_id, self.ws / s.audio_path) for s in m],
                               self.log_path("dialect-id", fp))
        by_id = {r.item_id: r for r in phon}
        speakers = defaultdict(list)
        for s in m:
            speakers[(s.episode_id, s.speaker_tag)].append(s)
        labeled = []
        for key in sorted(speakers):
            members = [s for s in speakers[key] if not by_id[s.segment_id].failed]
            if not members:
                log.warning("no phonemes for speaker %s/%s; dropping %d segments", *key, len(speakers[key]))
                continue
            pred = classify_speaker(
                model,
                [tokenize_phonemes(by_id[s.segment_id].value) for s in members],
                [float(s.duration_s) for s in members],
                cfg.did_min_total_s,
            )
            if pred.low_confidence:
                log.info("speaker %s/%s: low-confidence label %s (%.1fs)", *key, pred.label.value, pred.total_s)
            labeled.extend(s.with_(dialect=pred.label) for s in speakers[key])
        out = self.ws / "manifest.jsonl"
        write_manifest(Manifest(tuple(labeled), **self.header()), out)
        return [out] + extra

    def stage_stats(self, fp: str) -> List[Path]:
        from .reports import corpus_stats, render_stats_csv, render_stats_text

        stats = corpus_stats(read_manifest(self.ws / "manifest.jsonl"))
        rep = self.ws / "reports"
        rep.mkdir(parents=True, exist_ok=True)
        txt, csv_ = rep / "stats.txt", rep / "stats.csv"
        txt.write_text(render_stats_text(stats, self.cfg.stats_units), encoding="utf-8")
        csv_.write_text(render_stats_csv(stats), encoding="utf-8")
        outputs = [txt, csv_]
        if self.cfg.figures:
            from .figures import plot_corpus_stats

            outputs.append(plot_corpus_stats(stats, rep / "stats.png"))
        return outputs

    # ----------------------------------------------------------- driver

    def run(self, stop_after: Optional[str] = None, force: Sequence[str] = ()) -> List[StageResult]:
        if stop_after is not None and stop_after not in STAGES:
            raise ConfigError(f"unknown stage {stop_after!r}")
        results = []
        with WorkspaceLock(self.ws):
            try:
                for stage in self.cfg.stages:
                    if stage not in force and self.is_done(stage):
                        log.info("%s: up to date", stage)
                        rec = json.loads(self.checkpoint_path(stage).read_text(encoding="utf-8"))
                        results.append(StageResult(stage, False, rec["outputs"]))
                    else:
                        fp = self.fingerprint(stage)
                        log.info("%s: running", stage)
                        outputs = getattr(self, "stage_" + stage.replace("-", "_"))(fp)
                        results.append(StageResult(stage, True, self.mark_done(stage, fp, outputs)))
                    if os.environ.get(KILL_ENV) == stage:
                        os.kill(os.getpid(), signal.SIGKILL)
                    if stage == stop_after:
                        raise PipelineStopped(f"stopped after {stage}")
            finally:
                self.close()
        return results


def run_pipeline(config, clients: Optional[Dict[str, BackendClient]] = None, stop_after: Optional[str] = None,
                 force: Sequence[str] = ()) -> List[StageResult]:
    """Run every configured stage; ``config`` is a path or a PipelineConfig."""
    cfg = config if isinstance(config, PipelineConfig) else load_config(config)
    return Pipeline(cfg, clients).run(stop_after, force)
