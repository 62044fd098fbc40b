"""Shared domain types and the line-delimited segment manifest."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from .errors import DataError

SCHEMA_VERSION = 1
MIN_SEGMENT_S = Decimal("2.000")
MAX_SEGMENT_S = Decimal("15.000")
_MS = Decimal("0.001")

Seconds = Union[Decimal, float, int, str]


class DialectRegion(str, enum.Enum):
    BASEL = "Basel"
    BERN = "Bern"
    GERMAN = "German"
    GRISONS = "Grisons"
    CENTRAL_CH = "CentralCH"
    EASTERN_CH = "EasternCH"
    VALAIS = "Valais"
    ZURICH = "Zurich"

    @classmethod
    def parse(cls, value: str) -> "DialectRegion":
        try:
            return cls(value)
        except ValueError:
            raise DataError(f"unknown dialect {value!r}; expected one of {[d.value for d in cls]}") from None

    @property
    def is_swiss(self) -> bool:
        return self is not DialectRegion.GERMAN


#: The seven Swiss German regions, without Standard German.
SWISS_REGIONS = tuple(d for d in DialectRegion if d.is_swiss)

LANGUAGE_CLASSES = ("standard", "swiss", "mixed")


def to_seconds(value: Seconds) -> Decimal:
    """Convert to an exact millisecond-precision Decimal.

    Floats go through ``repr`` so that 0.1 becomes Decimal("0.100"), not the
    binary expansion.
    """
    if isinstance(value, Decimal):
        dec = value
    elif isinstance(value, float):
        dec = Decimal(repr(value))
    else:
        try:
            dec = Decimal(str(value))
        except InvalidOperation:
            raise DataError(f"not a number: {value!r}") from None
    if not dec.is_finite():
        raise DataError(f"non-finite time value: {value!r}")
    return dec.quantize(_MS, rounding=ROUND_HALF_EVEN)


def format_seconds(value: Decimal) -> str:
    return format(value.quantize(_MS), "f")


@dataclass(frozen=True)
class Episode:
    episode_id: str
    podcast_id: str
    audio_path: str
    duration_s: float
    sample_rate_hz: int
    language_class: str
    checksum: str = ""

    def __post_init__(self):
        if self.duration_s <= 0:
            raise DataError(f"episode {self.episode_id}: duration must be positive")
        if not 8000 <= self.sample_rate_hz <= 192000:
            raise DataError(f"episode {self.episode_id}: sample rate {self.sample_rate_hz} out of range")
        if self.language_class not in LANGUAGE_CLASSES:
            raise DataError(f"episode {self.episode_id}: bad language_class {self.language_class!r}")

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "podcast_id": self.podcast_id,
            "audio_path": self.audio_path,
            "duration_s": self.duration_s,
            "sample_rate_hz": self.sample_rate_hz,
            "language_class": self.language_class,
            "checksum": self.checksum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(**d)


@dataclass(frozen=True)
class SpeakerTurn:
    speaker_tag: str
    start_s: Decimal
    end_s: Decimal

    def __post_init__(self):
        object.__setattr__(self, "start_s", to_seconds(self.start_s))
        object.__setattr__(self, "end_s", to_seconds(self.end_s))
        if self.start_s < 0 or self.start_s >= self.end_s:
            raise DataError(f"invalid turn {self.speaker_tag} [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self) -> Decimal:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class Segment:
    segment_id: str
    episode_id: str
    speaker_tag: str
    start_s: Decimal
    end_s: Decimal
    audio_path: str
    podcast_id: str = ""
    transcript: Optional[str] = None
    dialect: Optional[DialectRegion] = None
    language_class: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "start_s", to_seconds(self.start_s))
        object.__setattr__(self, "end_s", to_seconds(self.end_s))
        if self.dialect is not None and not isinstance(self.dialect, DialectRegion):
            object.__setattr__(self, "dialect", DialectRegion.parse(self.dialect))
        dur = self.duration_s
        if not MIN_SEGMENT_S <= dur <= MAX_SEGMENT_S:
            raise DataError(
                f"segment {self.segment_id}: duration {format_seconds(dur)}s outside "
                f"[{MIN_SEGMENT_S}, {MAX_SEGMENT_S}]"
            )
        if self.transcript is not None and not self.transcript.strip():
            raise DataError(f"segment {self.segment_id}: empty transcript")

    @property
    def duration_s(self) -> Decimal:
        return self.end_s - self.start_s

    def sort_key(self):
        return (self.episode_id, self.start_s, self.segment_id)

    def with_(self, **changes) -> "Segment":
        return replace(self, **changes)


# field order on disk
RECORD_FIELDS = (
    "segment_id",
    "episode_id",
    "podcast_id",
    "speaker_tag",
    "start_s",
    "end_s",
    "duration_s",
    "audio_path",
    "transcript",
    "dialect",
    "language_class",
)
_TIME_FIELDS = ("start_s", "end_s", "duration_s")


def _json_str(value: Optional[str]) -> str:
    return "null" if value is None else json.dumps(value, ensure_ascii=False)


def encode_segment(seg: Segment) -> str:
    values = {
        "segment_id": _json_str(seg.segment_id),
        "episode_id": _json_str(seg.episode_id),
        "podcast_id": _json_str(seg.podcast_id),
        "speaker_tag": _json_str(seg.speaker_tag),
        "start_s": format_seconds(seg.start_s),
        "end_s": format_seconds(seg.end_s),
        "duration_s": format_seconds(seg.duration_s),
        "audio_path": _json_str(seg.audio_path),
        "transcript": _json_str(seg.transcript),
        "dialect": _json_str(seg.dialect.value if seg.dialect else None),
        "language_class": _json_str(seg.language_class),
    }
    return "{" + ", ".join(f'"{k}": {values[k]}' for k in RECORD_FIELDS) + "}"


def decode_segment(line: str, lineno: int = 0) -> Segment:
    where = f"line {lineno}" if lineno else "record"
    try:
        obj = json.loads(line, parse_float=Decimal, parse_int=Decimal)
    except json.JSONDecodeError as exc:
        raise DataError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected an object")
    missing = [k for k in RECORD_FIELDS if k not in obj]
    if missing:
        raise DataError(f"{where}: missing field {missing[0]!r}")
    for key in _TIME_FIELDS:
        value = obj[key]
        if not isinstance(value, Decimal):
            raise DataError(f"{where}: field {key!r} must be a number")
        if to_seconds(value) != value:
            raise DataError(f"{where}: field {key!r} has sub-millisecond precision")
    for key in ("segment_id", "episode_id", "speaker_tag", "audio_path"):
        if not isinstance(obj[key], str) or not obj[key]:
            raise DataError(f"{where}: field {key!r} must be a non-empty string")
    if obj["end_s"] - obj["start_s"] != obj["duration_s"]:
        raise DataError(f"{where}: field 'duration_s' disagrees with end_s - start_s")
    lang = obj["language_class"]
    if lang is not None and lang not in LANGUAGE_CLASSES:
        raise DataError(f"{where}: field 'language_class' has bad value {lang!r}")
    try:
        return Segment(
            segment_id=obj["segment_id"],
            episode_id=obj["episode_id"],
            podcast_id=obj["podcast_id"] or "",
            speaker_tag=obj["speaker_tag"],
            start_s=obj["start_s"],
            end_s=obj["end_s"],
            audio_path=obj["audio_path"],
            transcript=obj["transcript"],
            dialect=DialectRegion.parse(obj["dialect"]) if obj["dialect"] is not None else None,
            language_class=lang,
        )
    except DataError as exc:
        raise DataError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class Manifest:
    """An immutable, sorted collection of segments plus provenance header."""

    segments: tuple = ()
    created: str = "1970-01-01T00:00:00Z"
    config_hash: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        segs = tuple(sorted(self.segments, key=Segment.sort_key))
        seen = set()
        for s in segs:
            if s.segment_id in seen:
                raise DataError(f"duplicate segment_id {s.segment_id!r}")
            seen.add(s.segment_id)
        object.__setattr__(self, "segments", segs)

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def header(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "created": self.created,
            "config_hash": self.config_hash,
        }

    def replace_segments(self, segments: Iterable[Segment]) -> "Manifest":
        return replace(self, segments=tuple(segments))

    @classmethod
    def concat(cls, manifests: Iterable["Manifest"], **header) -> "Manifest":
        segs = [s for m in manifests for s in m.segments]
        return cls(segments=tuple(segs), **header)


def dumps_manifest(manifest: Manifest) -> str:
    lines = [json.dumps(manifest.header(), sort_keys=True)]
    lines.extend(encode_segment(s) for s in manifest.segments)
    return "\n".join(lines) + "\n"


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_manifest(manifest))
    tmp.replace(path)


def iter_manifest_lines(path) -> Iterator[tuple]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line


def read_manifest(path) -> Manifest:
    """Parse and validate a manifest file.

    Every invalid record is collected; a single :class:`DataError` lists them
    all with their line numbers.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such manifest: {path}")
    lines = iter_manifest_lines(path)
    try:
        lineno, first = next(lines)
    except StopIteration:
        raise DataError(f"{path}: missing header line") from None
    try:
        header = json.loads(first)
    except json.JSONDecodeError:
        raise DataError(f"{path}: line {lineno}: header is not valid JSON") from None
    if not isinstance(header, dict) or header.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path}: line {lineno}: expected header with schema_version={SCHEMA_VERSION}")

    segments, problems, first_line = [], [], {}
    for lineno, line in lines:
        try:
            seg = decode_segment(line, lineno)
        except DataError as exc:
            problems.append(str(exc))
            continue
        if seg.segment_id in first_line:
            problems.append(
                f"line {lineno}: duplicate segment_id {seg.segment_id!r} "
                f"(first seen on line {first_line[seg.segment_id]})"
            )
            continue
        first_line[seg.segment_id] = lineno
        segments.append(seg)
    if problems:
        raise DataError(f"{path}: {len(problems)} invalid record(s):\n  " + "\n  ".join(problems))
    return Manifest(
        segments=tuple(segments),
        created=str(header.get("created", "")),
        config_hash=str(header.get("config_hash", "")),
    )


@dataclass
class MetricRow:
    dialect: Optional[DialectRegion]  # None for the Total row
    model_tag: str
    wer: Optional[float] = None
    bleu: Optional[float] = None
    sim: Optional[float] = None
    did: Optional[float] = None
    items_total: int = 0
    items_scored: int = 0
    items_failed: int = 0

    @property
    def label(self) -> str:
        return "Total" if self.dialect is None else self.dialect.value


@dataclass
class MetricReport:
    """Per dialect x model automated scores, plus one Total row per model."""

    scenario: str
    rows: list = field(default_factory=list)

    def row(self, dialect: Optional[DialectRegion], model_tag: str) -> MetricRow:
        for r in self.rows:
            if r.dialect == dialect and r.model_tag == model_tag:
                return r
        raise KeyError((dialect, model_tag))

    @property
    def model_tags(self) -> list:
        tags = []
        for r in self.rows:
            if r.model_tag not in tags:
                tags.append(r.model_tag)
        return tags
