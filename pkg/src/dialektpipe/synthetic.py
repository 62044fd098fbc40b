"""Deterministic synthetic data: phoneme distributions, tone-coded speakers,
episodes and eval inputs. Stub backends and the test-suite rely on these.

A synthetic speaker is a pure tone. Its frequency encodes both the dialect
(hundreds) and the speaker index within that dialect (tens):
``200 + 100 * dialect_index + 10 * speaker_index`` Hz.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .audio import AudioBuffer, concat, silence, tone, write_wav
from .model import DialectRegion, SWISS_REGIONS

PHONEMES = (
    "a e i o u y @ E O 2 9 p t k b d g f v s S z x h m n N l r j w ts pf".split()
)
DIALECTS = list(DialectRegion)
BASE_HZ = 200.0
DIALECT_STEP_HZ = 100.0
SPEAKER_STEP_HZ = 10.0
MAX_SPEAKERS_PER_DIALECT = 10

WORDS = (
    "der die das und ist nicht ein eine zu den von mit sich auf für im dem "
    "es auch als an nach wie aus bei heute morgen schweiz zürich bern basel "
    "wetter zeit jahr menschen stadt land arbeit sprache musik haus weg "
    "gut neu gross klein viel wenig immer wieder schon noch"
).split()


def stable_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def dialect_distribution(dialect: DialectRegion) -> np.ndarray:
    """Unigram phoneme distribution for a synthetic dialect."""
    rng = np.random.default_rng(stable_seed("phoneme-dist", dialect.value))
    return rng.dirichlet(np.full(len(PHONEMES), 0.25))


def sample_phonemes(dialect: DialectRegion, n: int, seed: int) -> List[str]:
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(PHONEMES), size=n, p=dialect_distribution(dialect))
    return [PHONEMES[i] for i in idx]


def phoneme_corpus(
    dialects: Sequence[DialectRegion], per_class: int, length: int, seed: int
) -> List[Tuple[List[str], DialectRegion]]:
    out = []
    for d in dialects:
        for i in range(per_class):
            out.append((sample_phonemes(d, length, stable_seed(seed, d.value, i)), d))
    return out


def speaker_frequency(dialect: DialectRegion, speaker_index: int) -> float:
    if not 0 <= speaker_index < MAX_SPEAKERS_PER_DIALECT:
        raise ValueError(f"speaker index {speaker_index} out of range")
    return BASE_HZ + DIALECT_STEP_HZ * DIALECTS.index(dialect) + SPEAKER_STEP_HZ * speaker_index


def dialect_from_frequency(freq_hz: float) -> DialectRegion:
    i = int(np.floor((freq_hz - BASE_HZ + SPEAKER_STEP_HZ / 2) / DIALECT_STEP_HZ))
    return DIALECTS[min(max(i, 0), len(DIALECTS) - 1)]


def speaker_key(freq_hz: float) -> int:
    return int(round(freq_hz / SPEAKER_STEP_HZ) * SPEAKER_STEP_HZ)


def hashed_text(key: bytes, min_words: int = 4, max_words: int = 10) -> str:
    rng = np.random.default_rng(int.from_bytes(hashlib.sha256(key).digest()[:8], "little"))
    n = int(rng.integers(min_words, max_words + 1))
    return " ".join(WORDS[i] for i in rng.integers(0, len(WORDS), n))


def sidecar_path(audio_path) -> Path:
    return Path(str(audio_path) + ".json")


def write_sidecar(audio_path, meta: dict) -> None:
    sidecar_path(audio_path).write_text(json.dumps(meta, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def read_sidecar(audio_path):
    p = sidecar_path(audio_path)
    if p.exists():
        return json.loads(p.read_text(encoding="utf-8"))
    return None


def episode_audio(
    turns: Sequence[Tuple[float, float, float]], duration_s: float, rate: int = 16000
) -> AudioBuffer:
    """Render (start_s, end_s, freq_hz) tone turns onto a silent timeline."""
    x = np.zeros(int(round(duration_s * rate)))
    for start, end, freq in turns:
        a, b = int(round(start * rate)), int(round(end * rate))
        t = np.arange(b - a) / rate
        x[a:b] += 0.5 * np.sin(2 * np.pi * freq * t)
    return AudioBuffer(x, rate)


def make_local_catalog(root, episodes_per_podcast: int = 1, rate: int = 16000) -> Path:
    """Write a three-episode desk-scale corpus in the local catalog layout.

    ``root/catalog.json`` follows the HTTP catalog contract with file paths
    relative to ``root``; ``root/overrides.tsv`` holds the language classes.
    """
    root = Path(root)
    (root / "media").mkdir(parents=True, exist_ok=True)
    layout = {
        "pod-a": [
            # (start, end, dialect, speaker index)
            [(0.5, 21.0, DialectRegion.ZURICH, 0), (22.0, 23.2, DialectRegion.BERN, 1), (24.0, 31.0, DialectRegion.BERN, 1)],
        ],
        "pod-b": [
            [(0.0, 9.0, DialectRegion.GERMAN, 2), (10.0, 40.0, DialectRegion.BASEL, 0), (41.0, 44.0, DialectRegion.GERMAN, 2)],
        ],
        "pod-c": [
            [(1.0, 18.0, DialectRegion.VALAIS, 3), (19.0, 20.5, DialectRegion.GRISONS, 1), (21.0, 33.0, DialectRegion.GRISONS, 1)],
        ],
    }
    catalog = []
    for pid, episodes in layout.items():
        entry = {"podcast_id": pid, "title": f"Podcast {pid}", "episode_count": 0, "episodes": []}
        for k, turns in enumerate(episodes[:episodes_per_podcast]):
            eid = f"{pid}-ep{k}"
            dur = max(e for _, e, _, _ in turns) + 1.0
            audio = episode_audio([(s, e, speaker_frequency(d, i)) for s, e, d, i in turns], dur, rate)
            media = root / "media" / f"{eid}.wav"
            write_wav(audio, media)
            entry["episodes"].append({"episode_id": eid, "media_url": f"media/{eid}.wav"})
        entry["episode_count"] = len(entry["episodes"])
        catalog.append(entry)
    (root / "catalog.json").write_text(json.dumps(catalog, indent=2) + "\n", encoding="utf-8")
    (root / "overrides.tsv").write_text("pod-a\tswiss\npod-b\tmixed\npod-c\tswiss\n", encoding="utf-8")
    return root


def make_eval_inputs(root, n_texts: int = 50, speakers_per_dialect: int = 4, clips: int = 5,
                     dialects: Sequence[DialectRegion] = tuple(DialectRegion), rate: int = 8000) -> Dict[str, Path]:
    """Write texts, reference clips and a speaker table for the evaluation harness."""
    root = Path(root)
    clip_dir = root / "refs"
    clip_dir.mkdir(parents=True, exist_ok=True)
    texts = [hashed_text(f"text-{i}".encode(), 6, 12).capitalize() + "." for i in range(n_texts)]
    (root / "texts.txt").write_text("\n".join(texts) + "\n", encoding="utf-8")
    rows = []
    for d in dialects:
        for s in range(speakers_per_dialect):
            f = speaker_frequency(d, s)
            sid = f"{d.value}-spk{s}"
            for c in range(clips):
                p = clip_dir / f"{sid}-{c}.wav"
                write_wav(concat([tone(f, 0.5, rate), silence(0.05, rate)]), p)
                write_sidecar(p, {"dialect": d.value, "speaker": sid})
                rows.append(f"{d.value}\t{sid}\t{p.relative_to(root).as_posix()}")
    (root / "speakers.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return {"texts": root / "texts.txt", "speakers": root / "speakers.tsv"}


__all__ = [
    "DIALECTS",
    "PHONEMES",
    "SWISS_REGIONS",
    "dialect_distribution",
    "dialect_from_frequency",
    "episode_audio",
    "hashed_text",
    "make_eval_inputs",
    "make_local_catalog",
    "phoneme_corpus",
    "sample_phonemes",
    "speaker_frequency",
    "speaker_key",
    "stable_seed",
]
