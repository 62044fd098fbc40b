"""Turn diarization output into single-speaker corpus segments."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

from .audio import AudioBuffer, slice_audio, write_wav
from .errors import DataError
from .model import (
    MAX_SEGMENT_S,
    MIN_SEGMENT_S,
    Episode,
    Segment,
    SpeakerTurn,
    format_seconds,
    to_seconds,
)

MIN_SPEAKERS = 2
MAX_SPEAKERS = 6
# tolerated mismatch between episode metadata and decoded audio
AUDIO_DURATION_TOLERANCE_S = 0.5


@dataclass(frozen=True)
class DiarizationResult:
    episode_id: str
    turns: tuple
    num_speakers_hint: Tuple[int, int] = (MIN_SPEAKERS, MAX_SPEAKERS)

    def __post_init__(self):
        turns = tuple(sorted(self.turns, key=lambda t: (t.start_s, t.end_s, t.speaker_tag)))
        object.__setattr__(self, "turns", turns)
        last_end = {}
        for t in turns:
            if t.speaker_tag in last_end and t.start_s < last_end[t.speaker_tag]:
                raise DataError(f"{self.episode_id}: speaker {t.speaker_tag} overlaps itself at {t.start_s}")
            last_end[t.speaker_tag] = t.end_s


def parse_rttm(text: str) -> List[SpeakerTurn]:
    """Parse SPEAKER lines of an RTTM file.

    Fields: type, file, channel, onset, duration, ortho, stype, name, conf, slat.
    Blank lines and ``;;`` / ``#`` comments are skipped.
    """
    turns = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(";;") or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 10:
            raise DataError(f"RTTM line {lineno}: expected 10 fields, got {len(fields)}")
        if fields[0] != "SPEAKER":
            raise DataError(f"RTTM line {lineno}: unsupported type {fields[0]!r}")
        try:
            onset = Decimal(fields[3])
            dur = Decimal(fields[4])
        except Exception:
            raise DataError(f"RTTM line {lineno}: onset/duration are not numbers") from None
        if not onset.is_finite() or not dur.is_finite():
            raise DataError(f"RTTM line {lineno}: non-finite onset/duration")
        if dur < 0:
            raise DataError(f"RTTM line {lineno}: negative duration {fields[4]}")
        if onset < 0:
            raise DataError(f"RTTM line {lineno}: negative onset {fields[3]}")
        start, end = to_seconds(onset), to_seconds(onset + dur)
        if end <= start:
            # zero-length after millisecond rounding carries no audio
            continue
        turns.append(SpeakerTurn(fields[7], start, end))
    return turns


def format_rttm(file_id: str, turns: Iterable[SpeakerTurn]) -> str:
    lines = [
        f"SPEAKER {file_id} 1 {format_seconds(t.start_s)} {format_seconds(t.duration_s)} "
        f"<NA> <NA> {t.speaker_tag} <NA> <NA>"
        for t in sorted(turns, key=lambda t: (t.start_s, t.speaker_tag))
    ]
    return "".join(line + "\n" for line in lines)


def filter_min_duration(turns: Sequence[SpeakerTurn], min_s=MIN_SEGMENT_S) -> List[SpeakerTurn]:
    min_s = to_seconds(min_s)
    return [t for t in turns if t.duration_s >= min_s]


def split_long(turn: SpeakerTurn, max_s=MAX_SEGMENT_S, min_tail_s=MIN_SEGMENT_S) -> List[SpeakerTurn]:
    """Cut a turn into consecutive ``max_s`` windows from its start.

    A shorter final remainder is kept only if it lasts at least ``min_tail_s``.
    """
    max_s, min_tail_s = to_seconds(max_s), to_seconds(min_tail_s)
    out = []
    start = turn.start_s
    while turn.end_s - start > max_s:
        out.append(SpeakerTurn(turn.speaker_tag, start, start + max_s))
        start += max_s
    if turn.end_s - start >= min_tail_s:
        out.append(SpeakerTurn(turn.speaker_tag, start, turn.end_s))
    return out


def drop_overlaps(turns: Sequence[SpeakerTurn]) -> List[SpeakerTurn]:
    """Remove every turn that overlaps a turn of a different speaker."""
    ordered = sorted(turns, key=lambda t: (t.start_s, t.end_s))
    bad = set()
    for i, a in enumerate(ordered):
        for j in range(i + 1, len(ordered)):
            b = ordered[j]
            if b.start_s >= a.end_s:
                break
            if b.speaker_tag != a.speaker_tag:
                bad.add(i)
                bad.add(j)
    return [t for i, t in enumerate(ordered) if i not in bad]


def segment_turns(turns: Sequence[SpeakerTurn], min_s=MIN_SEGMENT_S, max_s=MAX_SEGMENT_S) -> List[SpeakerTurn]:
    kept = filter_min_duration(drop_overlaps(turns), min_s)
    return [piece for t in kept for piece in split_long(t, max_s, min_s)]


def segment_id_for(episode_id: str, speaker_tag: str, start_s) -> str:
    key = f"{episode_id}\x1f{speaker_tag}\x1f{format_seconds(to_seconds(start_s))}"
    return hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]


def segment_episode(
    episode: Episode,
    diarization: DiarizationResult,
    audio: AudioBuffer,
    out_dir,
    min_s=MIN_SEGMENT_S,
    max_s=MAX_SEGMENT_S,
    relative_to=None,
) -> List[Segment]:
    """Cut an episode into segments and write one WAV per segment.

    Files land in ``out_dir/<episode_id>/<segment_id>.wav``. With
    ``relative_to`` set, recorded audio paths are relative to that directory.
    """
    if diarization.episode_id != episode.episode_id:
        raise DataError(f"diarization for {diarization.episode_id!r} given for episode {episode.episode_id!r}")
    if abs(audio.duration_s - episode.duration_s) > AUDIO_DURATION_TOLERANCE_S:
        raise DataError(
            f"episode {episode.episode_id}: audio lasts {audio.duration_s:.3f}s, metadata says {episode.duration_s:.3f}s"
        )
    limit = to_seconds(audio.duration_s)
    for t in diarization.turns:
        if t.end_s > limit + to_seconds(AUDIO_DURATION_TOLERANCE_S):
            raise DataError(f"episode {episode.episode_id}: turn ends at {t.end_s}s beyond audio end {limit}s")

    ep_dir = Path(out_dir) / episode.episode_id
    segments = []
    for piece in segment_turns(diarization.turns, min_s, max_s):
        if piece.end_s > limit:
            # trailing piece runs past the decoded audio; keep only if still long enough
            if limit - piece.start_s < to_seconds(min_s):
                continue
            piece = SpeakerTurn(piece.speaker_tag, piece.start_s, limit)
        sid = segment_id_for(episode.episode_id, piece.speaker_tag, piece.start_s)
        path = ep_dir / f"{sid}.wav"
        write_wav(slice_audio(audio, piece.start_s, piece.end_s), path)
        segments.append(
            Segment(
                segment_id=sid,
                episode_id=episode.episode_id,
                podcast_id=episode.podcast_id,
                speaker_tag=piece.speaker_tag,
                start_s=piece.start_s,
                end_s=piece.end_s,
                audio_path=(path.relative_to(relative_to) if relative_to else path).as_posix(),
                language_class=episode.language_class,
            )
        )
    return segments
