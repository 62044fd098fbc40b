"""Uniform adapter contract for ASR, diarization, phonemization, TTS and speaker embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

from ..errors import BackendError, DataError
from ..model import DialectRegion
from .batch import CompletionLog, run_batch
from .client import CONF_ENV, BackendClient, BackendSpec, load_backend_conf, parse_backend_conf
from .protocol import KINDS

__all__ = [
    "CONF_ENV",
    "KINDS",
    "BackendClient",
    "BackendSpec",
    "CompletionLog",
    "ItemResult",
    "TranscriptResult",
    "diarize",
    "embed_speaker",
    "load_backend_conf",
    "parse_backend_conf",
    "phonemize",
    "phonemize_batch",
    "run_batch",
    "synthesize",
    "transcribe",
    "transcribe_batch",
    "transcript_from_response",
]


@dataclass(frozen=True)
class TranscriptResult:
    segment_id: str
    text: Optional[str]
    failed: bool
    reason: str = ""


@dataclass(frozen=True)
class ItemResult:
    item_id: str
    value: object
    failed: bool
    reason: str = ""


def _require(client: BackendClient, kind: str) -> None:
    if client.spec.kind != kind:
        raise BackendError(f"expected a {kind} backend, got {client.spec.kind}")


def _field(resp: dict, name: str, typ):
    value = resp["result"].get(name)
    if not isinstance(value, typ):
        raise BackendError(f"protocol violation: response {resp['id']} lacks {typ.__name__} field {name!r}")
    return value


def transcript_from_response(segment_id: str, resp: dict) -> TranscriptResult:
    if not resp["ok"]:
        return TranscriptResult(segment_id, None, True, resp["error"])
    text = _field(resp, "text", str).strip()
    if not text:
        return TranscriptResult(segment_id, None, True, "empty transcript")
    return TranscriptResult(segment_id, text, False)


def _asr_payload(segment_id: str, audio_path) -> dict:
    return {"audio_path": str(audio_path), "id_hint": segment_id}


def transcribe(client: BackendClient, segment_id: str, audio_path) -> TranscriptResult:
    _require(client, "asr")
    return transcript_from_response(segment_id, client.call(_asr_payload(segment_id, audio_path), req_id=segment_id))


def transcribe_batch(client: BackendClient, items: Sequence[tuple], log_path=None) -> List[TranscriptResult]:
    """``items`` are (segment_id, audio_path); results keep input order."""
    _require(client, "asr")
    resps = run_batch(client, [(sid, _asr_payload(sid, p)) for sid, p in items], log_path)
    return [transcript_from_response(sid, r) for (sid, _), r in zip(items, resps)]


def _phonemes_from_response(item_id: str, resp: dict) -> ItemResult:
    if not resp["ok"]:
        return ItemResult(item_id, "", True, resp["error"])
    text = _field(resp, "phonemes", str).strip()
    if not text:
        return ItemResult(item_id, "", True, "empty phoneme string")
    return ItemResult(item_id, text, False)


def phonemize(client: BackendClient, audio_path, item_id: str = None) -> ItemResult:
    _require(client, "phonemizer")
    item_id = item_id or Path(audio_path).stem
    return _phonemes_from_response(item_id, client.call({"audio_path": str(audio_path)}, req_id=item_id))


def phonemize_batch(client: BackendClient, items: Sequence[tuple], log_path=None) -> List[ItemResult]:
    _require(client, "phonemizer")
    resps = run_batch(client, [(i, {"audio_path": str(p)}) for i, p in items], log_path)
    return [_phonemes_from_response(i, r) for (i, _), r in zip(items, resps)]


def synthesis_payload(text: str, reference_audio: Sequence, dialect: DialectRegion, out_path) -> dict:
    if not 1 <= len(reference_audio) <= 5:
        raise DataError(f"synthesis needs 1-5 reference clips, got {len(reference_audio)}")
    if not text.strip():
        raise DataError("synthesis text is empty")
    return {
        "text": text,
        "reference_audio": [str(p) for p in reference_audio],
        "dialect": DialectRegion(dialect).value,
        "out_path": str(out_path),
    }


def synthesis_from_response(item_id: str, resp: dict) -> ItemResult:
    if not resp["ok"]:
        return ItemResult(item_id, None, True, resp["error"])
    path = _field(resp, "audio_path", str)
    return ItemResult(item_id, path, False)


def synthesize(client: BackendClient, text: str, reference_audio: Sequence, dialect: DialectRegion,
               out_path, item_id: str = None) -> ItemResult:
    _require(client, "tts")
    payload = synthesis_payload(text, reference_audio, dialect, out_path)
    item_id = item_id or Path(out_path).stem
    return synthesis_from_response(item_id, client.call(payload, req_id=item_id))


def embedding_from_response(item_id: str, resp: dict) -> ItemResult:
    if not resp["ok"]:
        return ItemResult(item_id, None, True, resp["error"])
    vec = _field(resp, "embedding", list)
    if not vec or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vec):
        raise BackendError(f"protocol violation: response {resp['id']} has a non-finite or empty embedding")
    return ItemResult(item_id, [float(v) for v in vec], False)


def embed_speaker(client: BackendClient, audio_path, item_id: str = None) -> ItemResult:
    _require(client, "embedder")
    item_id = item_id or Path(audio_path).stem
    return embedding_from_response(item_id, client.call({"audio_path": str(audio_path)}, req_id=item_id))


def check_embedding_dims(results: Sequence[ItemResult]) -> int:
    """All successful embeddings in a batch must share one dimension."""
    dims = {len(r.value) for r in results if not r.failed}
    if len(dims) > 1:
        raise BackendError(f"embedding dimension mismatch within batch: {sorted(dims)}")
    return dims.pop() if dims else 0


def diarize(client: BackendClient, audio_path, min_speakers: int = 2, max_speakers: int = 6,
            file_id: str = None) -> ItemResult:
    """Returns RTTM text in ``value``; turns are validated by parsing."""
    from ..segmentation import parse_rttm

    _require(client, "diarizer")
    file_id = file_id or Path(audio_path).stem
    payload = {"audio_path": str(audio_path), "min_speakers": min_speakers, "max_speakers": max_speakers,
               "file_id": file_id}
    resp = client.call(payload, req_id=file_id)
    if not resp["ok"]:
        return ItemResult(file_id, None, True, resp["error"])
    rttm = _field(resp, "rttm", str)
    try:
        parse_rttm(rttm)
    except DataError as exc:
        raise BackendError(f"diarizer returned invalid RTTM for {file_id}: {exc}") from None
    return ItemResult(file_id, rttm, False)
