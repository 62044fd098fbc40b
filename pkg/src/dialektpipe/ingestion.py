"""Podcast catalog access, manual language classification and episode download."""

from __future__ import annotations

import hashlib
import json
import logging
import shlex
import subprocess
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from http.client import IncompleteRead
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from .audio import read_wav, sniff_codec, write_wav
from .errors import BackendError, ConfigError, DataError, UnsupportedAudioError
from .model import LANGUAGE_CLASSES, Episode

log = logging.getLogger(__name__)

PODCAST_CLASSES = LANGUAGE_CLASSES + ("excluded",)
RETRY_BACKOFF_S = (1.0, 4.0, 16.0)
CHUNK = 1 << 16


@dataclass(frozen=True)
class EpisodeRef:
    episode_id: str
    media_url: str
    sha256: Optional[str] = None


@dataclass(frozen=True)
class PodcastMeta:
    podcast_id: str
    title: str
    episode_count: int
    language_class: str = "excluded"
    episodes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.episode_count < 0:
            raise DataError(f"podcast {self.podcast_id}: negative episode_count")
        if self.language_class not in PODCAST_CLASSES:
            raise DataError(f"podcast {self.podcast_id}: bad language_class {self.language_class!r}")


def _with_retries(fn, what: str, backoff: Sequence[float], sleep: Callable[[float], None]):
    last = None
    for attempt, delay in enumerate(backoff, start=1):
        try:
            return fn()
        except (urllib.error.URLError, OSError, IncompleteRead) as exc:
            last = exc
            log.warning("%s failed (attempt %d/%d): %s", what, attempt, len(backoff), exc)
            if attempt < len(backoff):
                sleep(delay)
    raise BackendError(f"{what} failed after {len(backoff)} attempts: {last}")


def parse_catalog(doc, source: str = "catalog") -> List[PodcastMeta]:
    if not isinstance(doc, list):
        raise DataError(f"{source}: expected a JSON array of podcasts")
    out, seen = [], set()
    for i, entry in enumerate(doc):
        where = f"{source}[{i}]"
        if not isinstance(entry, dict):
            raise DataError(f"{where}: expected an object")
        for key, typ in (("podcast_id", str), ("title", str), ("episode_count", int)):
            if not isinstance(entry.get(key), typ) or isinstance(entry.get(key), bool):
                raise DataError(f"{where}: field {key!r} missing or not {typ.__name__}")
        pid = entry["podcast_id"]
        if pid in seen:
            raise DataError(f"{where}: duplicate podcast_id {pid!r}")
        seen.add(pid)
        episodes = entry.get("episodes", [])
        if not isinstance(episodes, list):
            raise DataError(f"{where}: field 'episodes' must be an array")
        refs = []
        for j, ep in enumerate(episodes):
            if not isinstance(ep, dict) or not isinstance(ep.get("episode_id"), str) or not isinstance(ep.get("media_url"), str):
                raise DataError(f"{where}.episodes[{j}]: needs string 'episode_id' and 'media_url'")
            refs.append(EpisodeRef(ep["episode_id"], ep["media_url"], ep.get("sha256")))
        out.append(PodcastMeta(pid, entry["title"], entry["episode_count"], episodes=tuple(refs)))
    return sorted(out, key=lambda p: p.podcast_id)


def fetch_catalog(
    endpoint: str,
    auth: str = "",
    backoff: Sequence[float] = RETRY_BACKOFF_S,
    sleep: Callable[[float], None] = time.sleep,
    timeout: float = 30.0,
) -> List[PodcastMeta]:
    """GET the catalog and return podcasts ordered by podcast_id."""
    headers = {"Accept": "application/json"}
    if auth:
        headers["Authorization"] = auth if " " in auth else f"Bearer {auth}"

    def get():
        req = urllib.request.Request(endpoint, headers=headers)
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.read()

    body = _with_retries(get, f"catalog fetch from {endpoint}", backoff, sleep)
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise DataError(f"{endpoint}: catalog is not JSON ({exc.msg})") from None
    return parse_catalog(doc, endpoint)


def load_local_catalog(root) -> List[PodcastMeta]:
    root = Path(root)
    path = root / "catalog.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not JSON ({exc.msg})") from None
    pods = parse_catalog(doc, str(path))
    # resolve relative media paths against the catalog directory
    resolved = []
    for p in pods:
        eps = tuple(
            replace(e, media_url=(root / e.media_url).resolve().as_uri())
            if "://" not in e.media_url else e
            for e in p.episodes
        )
        resolved.append(replace(p, episodes=eps))
    return resolved


def read_overrides(path) -> Dict[str, str]:
    """Parse ``podcast_id<TAB>language_class`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].rstrip("\n")
            if not line.strip():
                continue
            pid, sep, cls = line.partition("\t")
            if not sep:
                raise ConfigError(f"{path}: line {lineno}: expected podcast_id<TAB>language_class")
            cls = cls.strip()
            if cls not in PODCAST_CLASSES:
                raise ConfigError(f"{path}: line {lineno}: unknown language class {cls!r}")
            out[pid.strip()] = cls
    return out


def apply_overrides(catalog: Sequence[PodcastMeta], overrides: Dict[str, str]) -> List[PodcastMeta]:
    known = {p.podcast_id for p in catalog}
    for pid in sorted(set(overrides) - known):
        log.warning("override for unknown podcast %r ignored", pid)
    return [replace(p, language_class=overrides.get(p.podcast_id, "excluded")) for p in catalog]


def class_counts(catalog: Sequence[PodcastMeta]) -> Dict[str, int]:
    counts = {c: 0 for c in LANGUAGE_CLASSES}
    for p in catalog:
        if p.language_class in counts:
            counts[p.language_class] += 1
    return counts


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(CHUNK), b""):
            h.update(block)
    return h.hexdigest()


def _fetch_resumable(url: str, part: Path, timeout: float) -> None:
    """Append the remainder of ``url`` to ``part``, resuming from its size."""
    offset = part.stat().st_size if part.exists() else 0
    headers = {"Range": f"bytes={offset}-"} if offset else {}
    req = urllib.request.Request(url, headers=headers)
    try:
        resp = urllib.request.urlopen(req, timeout=timeout)
    except urllib.error.HTTPError as exc:
        if exc.code == 416:  # already complete
            return
        raise
    with resp:
        status = getattr(resp, "status", 200)
        mode = "ab" if offset and status == 206 else "wb"
        expected = resp.headers.get("Content-Length")
        got = 0
        with open(part, mode) as fh:
            while True:
                try:
                    block = resp.read(CHUNK)
                except IncompleteRead as exc:
                    fh.write(exc.partial)
                    raise
                if not block:
                    break
                fh.write(block)
                got += len(block)
        # http.client reports a dropped connection as a clean EOF
        if expected is not None and got < int(expected):
            raise IncompleteRead(b"", int(expected) - got)


Decoder = Callable[[Path, Path], None]


def command_decoder(template: str) -> Decoder:
    """Decoder hook that shells out, e.g. ``ffmpeg -y -i {src} -ac 1 -c:a pcm_s16le {dst}``."""

    def decode(src: Path, dst: Path) -> None:
        argv = [a.format(src=str(src), dst=str(dst)) for a in shlex.split(template)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise DataError(f"decoder failed on {src}: {proc.stderr.strip()[:200]}")

    return decode


def download_episode(
    ref: EpisodeRef,
    dest_dir,
    podcast_id: str = "",
    language_class: str = "mixed",
    decoder: Optional[Decoder] = None,
    backoff: Sequence[float] = RETRY_BACKOFF_S,
    sleep: Callable[[float], None] = time.sleep,
    timeout: float = 60.0,
) -> Episode:
    """Fetch one episode and normalise it to mono 16-bit WAV.

    Layout in ``dest_dir``: ``<id>.part`` while downloading, ``<id>.src`` once
    complete, ``<id>.wav`` normalised audio and ``<id>.json`` state with the
    source checksum. A finished episode whose state matches is returned
    without touching the network.
    """
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    eid = ref.episode_id
    part, src, wav, state = (dest / f"{eid}{ext}" for ext in (".part", ".src", ".wav", ".json"))

    if state.exists() and wav.exists():
        st = json.loads(state.read_text(encoding="utf-8"))
        if st.get("wav_sha256") == _sha256(wav) and (not ref.sha256 or st.get("sha256") == ref.sha256):
            return Episode.from_dict(st["episode"])

    def fetch():
        _fetch_resumable(ref.media_url, part, timeout)

    if not src.exists():
        for round_ in range(2):
            _with_retries(fetch, f"download of {eid}", backoff, sleep)
            digest = _sha256(part)
            if not ref.sha256 or digest == ref.sha256:
                break
            log.warning("%s: checksum mismatch, restarting download", eid)
            part.unlink()
        else:
            raise DataError(f"{eid}: checksum mismatch after retry (expected {ref.sha256}, got {digest})")
        part.replace(src)
    digest = _sha256(src)

    codec = sniff_codec(src)
    if codec != "wav":
        if decoder is None:
            raise UnsupportedAudioError(f"{eid}: unsupported codec {codec!r} (configure a decoder command)")
        tmp = dest / f"{eid}.decoded.wav"
        decoder(src, tmp)
        audio = read_wav(tmp, mixdown=True)
        tmp.unlink()
    else:
        audio = read_wav(src, mixdown=True)
    write_wav(audio, wav)
    episode = Episode(
        episode_id=eid,
        podcast_id=podcast_id,
        audio_path=wav.as_posix(),
        duration_s=round(audio.duration_s, 6),
        sample_rate_hz=audio.sample_rate_hz,
        language_class=language_class,
        checksum=digest,
    )
    state.write_text(
        json.dumps({"sha256": digest, "wav_sha256": _sha256(wav), "episode": episode.to_dict()}, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return episode


def ingest(
    catalog: Sequence[PodcastMeta],
    dest_dir,
    parallelism: int = 4,
    decoder: Optional[Decoder] = None,
    **download_kwargs,
) -> List[Episode]:
    """Download every episode of every classified podcast, ordered by episode_id."""
    jobs = [
        (ref, p.podcast_id, p.language_class)
        for p in catalog
        if p.language_class != "excluded"
        for ref in p.episodes
    ]
    ids = [r.episode_id for r, _, _ in jobs]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate episode_id across podcasts")

    def one(job):
        ref, pid, cls = job
        return download_episode(ref, dest_dir, pid, cls, decoder=decoder, **download_kwargs)

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        episodes = list(pool.map(one, jobs))
    return sorted(episodes, key=lambda e: e.episode_id)
