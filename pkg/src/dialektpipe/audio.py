"""WAV I/O, band-limited resampling, slicing, concatenation and energy VAD.

All audio is handled as mono float64 in [-1, 1]. Files on disk are RIFF PCM
16-bit little-endian.
"""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DataError, UnsupportedAudioError

_PCM16_SCALE = 32768.0

# resampler parameters
RESAMPLE_HALF_TAPS = 64
RESAMPLE_ROLLOFF = 0.945
KAISER_BETA = 8.6


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise DataError(f"audio must be mono, got shape {arr.shape}")
        if self.sample_rate_hz <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(arr)):
            raise DataError("audio contains non-finite samples")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def __eq__(self, other) -> bool:
        if not isinstance(other, AudioBuffer):
            return NotImplemented
        return self.sample_rate_hz == other.sample_rate_hz and np.array_equal(self.samples, other.samples)


def _read_fmt_chunk(path: Path) -> dict:
    """Parse the RIFF header ourselves so errors can name the offending field."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
            raise UnsupportedAudioError(f"{path}: not a RIFF/WAVE file (codec {sniff_codec(path)})")
        while True:
            chunk = fh.read(8)
            if len(chunk) < 8:
                raise DataError(f"{path}: missing fmt chunk")
            cid, size = chunk[:4], struct.unpack("<I", chunk[4:])[0]
            if cid == b"fmt ":
                body = fh.read(size)
                tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", body[:16])
                if tag == 0xFFFE and size >= 40:
                    tag = struct.unpack("<H", body[24:26])[0]
                return {"format_tag": tag, "channels": channels, "sample_rate": rate, "bits_per_sample": bits}
            fh.seek(size + (size & 1), 1)


def sniff_codec(path) -> str:
    with open(path, "rb") as fh:
        magic = fh.read(12)
    if magic[:4] == b"RIFF" and magic[8:12] == b"WAVE":
        return "wav"
    if magic[:3] == b"ID3" or (len(magic) > 1 and magic[0] == 0xFF and magic[1] & 0xE0 == 0xE0):
        return "mp3"
    if magic[:4] == b"fLaC":
        return "flac"
    if magic[:4] == b"OggS":
        return "ogg"
    if magic[4:8] == b"ftyp":
        return "mp4/aac"
    return "unknown"


def read_wav(path, mixdown: bool = False) -> AudioBuffer:
    """Read a 16-bit PCM WAV file.

    Multi-channel input is an error unless ``mixdown`` is set, in which case
    channels are averaged.
    """
    path = Path(path)
    fmt = _read_fmt_chunk(path)
    if fmt["format_tag"] != 1:
        raise UnsupportedAudioError(f"{path}: format_tag={fmt['format_tag']} is not PCM (1)")
    if fmt["bits_per_sample"] != 16:
        raise UnsupportedAudioError(f"{path}: bits_per_sample={fmt['bits_per_sample']}, only 16 is supported")
    if fmt["channels"] != 1 and not mixdown:
        raise UnsupportedAudioError(f"{path}: channels={fmt['channels']}, expected mono")
    with wave.open(str(path), "rb") as w:
        raw = w.readframes(w.getnframes())
        channels = w.getnchannels()
        rate = w.getframerate()
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _PCM16_SCALE
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return AudioBuffer(data, rate)


def to_pcm16(samples: np.ndarray) -> bytes:
    q = np.round(np.asarray(samples) * _PCM16_SCALE)
    return np.clip(q, -32768, 32767).astype("<i2").tobytes()


def write_wav(buffer: AudioBuffer, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with wave.open(str(tmp), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(buffer.sample_rate_hz)
        w.writeframes(to_pcm16(buffer.samples))
    tmp.replace(path)


def _kaiser(x: np.ndarray, beta: float) -> np.ndarray:
    """Continuous Kaiser window on [-1, 1], zero outside."""
    inside = np.abs(x) <= 1.0
    arg = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    return np.where(inside, np.i0(beta * arg) / np.i0(beta), 0.0)


def resample(buffer: AudioBuffer, target_rate_hz: int, chunk: int = 8192) -> AudioBuffer:
    """Windowed-sinc resampling with a Kaiser window.

    The low-pass cutoff sits at 0.945 x the lower Nyquist frequency and the
    kernel spans 64 source samples on either side of each output instant.
    Weights are renormalised to unit sum per output sample, which keeps DC
    exact including at the buffer edges.
    """
    if target_rate_hz <= 0:
        raise DataError(f"target rate must be positive, got {target_rate_hz}")
    src = buffer.sample_rate_hz
    if target_rate_hz == src:
        return buffer
    x = buffer.samples
    n_in = len(x)
    n_out = (n_in * target_rate_hz * 2 + src) // (2 * src)  # round half up
    if n_in == 0 or n_out == 0:
        return AudioBuffer(np.zeros(n_out), target_rate_hz)

    # cutoff in cycles per source sample
    fc = min(src, target_rate_hz) / 2.0 * RESAMPLE_ROLLOFF / src
    offsets = np.arange(-RESAMPLE_HALF_TAPS + 1, RESAMPLE_HALF_TAPS + 1)

    def kernel(frac: np.ndarray) -> np.ndarray:
        tau = frac[:, None] - offsets[None, :]
        return 2 * fc * np.sinc(2 * fc * tau) * _kaiser(tau / RESAMPLE_HALF_TAPS, KAISER_BETA)

    # output instant m sits at source position m*src/tgt; the fractional part
    # cycles through tgt/g distinct phases, so kernels are tabulated once
    g = math.gcd(src, target_rate_hz)
    n_phases = target_rate_hz // g
    table = kernel(np.arange(n_phases) * g / target_rate_hz) if n_phases <= 8192 else None

    out = np.empty(n_out)
    for lo in range(0, n_out, chunk):
        pos = np.arange(lo, min(lo + chunk, n_out), dtype=np.int64) * src
        base = pos // target_rate_hz
        rem = pos % target_rate_hz
        h = table[rem // g] if table is not None else kernel(rem / target_rate_hz)
        idx = base[:, None] + offsets[None, :]
        valid = (idx >= 0) & (idx < n_in)
        h = np.where(valid, h, 0.0)
        vals = x[np.clip(idx, 0, n_in - 1)]
        out[lo : lo + len(base)] = np.einsum("ij,ij->i", h, vals) / h.sum(axis=1)
    return AudioBuffer(out, target_rate_hz)


def _index(t_s: float, rate: int) -> int:
    return int(np.floor(t_s * rate + 0.5))


def slice_audio(buffer: AudioBuffer, start_s: float, end_s: float) -> AudioBuffer:
    start_s, end_s = float(start_s), float(end_s)
    if not (0 <= start_s < end_s):
        raise DataError(f"invalid slice bounds [{start_s}, {end_s}]")
    # tolerate float noise at the end boundary (half a sample)
    if end_s > buffer.duration_s + 0.5 / buffer.sample_rate_hz:
        raise DataError(f"slice end {end_s}s beyond buffer duration {buffer.duration_s}s")
    i0 = _index(start_s, buffer.sample_rate_hz)
    n = _index(end_s - start_s, buffer.sample_rate_hz)
    n = min(n, len(buffer) - i0)
    return AudioBuffer(buffer.samples[i0 : i0 + n].copy(), buffer.sample_rate_hz)


def concat(buffers: Sequence[AudioBuffer]) -> AudioBuffer:
    if not buffers:
        raise DataError("cannot concatenate an empty list of buffers")
    rates = {b.sample_rate_hz for b in buffers}
    if len(rates) > 1:
        raise DataError(f"mixed sample rates: {sorted(rates)}")
    return AudioBuffer(np.concatenate([b.samples for b in buffers]), buffers[0].sample_rate_hz)


def frame_energy_db(buffer: AudioBuffer, frame_ms: float) -> np.ndarray:
    frame_len = max(1, int(round(buffer.sample_rate_hz * frame_ms / 1000.0)))
    n_frames = int(np.ceil(len(buffer) / frame_len))
    padded = np.zeros(n_frames * frame_len)
    padded[: len(buffer)] = buffer.samples
    power = (padded.reshape(n_frames, frame_len) ** 2).mean(axis=1)
    return 10.0 * np.log10(power + 1e-12)


def energy_vad(
    buffer: AudioBuffer,
    frame_ms: float = 30.0,
    energy_threshold_db: float = -40.0,
    min_speech_ms: float = 250.0,
    min_gap_ms: float = 300.0,
) -> List[Tuple[float, float]]:
    """Return sorted, disjoint (start_s, end_s) speech intervals.

    A frame is speech when its mean power in dBFS exceeds the threshold.
    Runs of speech frames separated by gaps shorter than ``min_gap_ms`` are
    merged, then intervals shorter than ``min_speech_ms`` are discarded.
    """
    if frame_ms <= 0:
        raise DataError("frame_ms must be positive")
    if len(buffer) == 0:
        return []
    active = frame_energy_db(buffer, frame_ms) > energy_threshold_db
    frame_s = max(1, int(round(buffer.sample_rate_hz * frame_ms / 1000.0))) / buffer.sample_rate_hz
    runs = []
    start = None
    for i, a in enumerate(active):
        if a and start is None:
            start = i
        elif not a and start is not None:
            runs.append([start, i])
            start = None
    if start is not None:
        runs.append([start, len(active)])

    merged = []
    for r in runs:
        if merged and (r[0] - merged[-1][1]) * frame_s * 1000.0 < min_gap_ms:
            merged[-1][1] = r[1]
        else:
            merged.append(r)
    duration = buffer.duration_s
    out = []
    for a, b in merged:
        s, e = a * frame_s, min(b * frame_s, duration)
        if (e - s) * 1000.0 >= min_speech_ms:
            out.append((round(s, 6), round(e, 6)))
    return out


def dominant_frequency(buffer: AudioBuffer) -> float:
    """Frequency of the strongest FFT bin, refined by parabolic interpolation."""
    x = buffer.samples
    if len(x) < 4:
        return 0.0
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    k = int(np.argmax(spec[1:])) + 1
    if 1 <= k < len(spec) - 1:
        a, b, c = np.log(spec[k - 1 : k + 2] + 1e-300)
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        delta = 0.0
    return (k + delta) * buffer.sample_rate_hz / len(x)


def tone(freq_hz: float, duration_s: float, rate: int, amplitude: float = 0.5) -> AudioBuffer:
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq_hz * t), rate)


def silence(duration_s: float, rate: int) -> AudioBuffer:
    return AudioBuffer(np.zeros(int(round(duration_s * rate))), rate)
