"""Deterministic stand-ins for the neural backends.

They work on the tone-coded synthetic audio from :mod:`dialektpipe.synthetic`
and on sidecar metadata written by the stub TTS, so closed-loop evaluations
and end-to-end pipeline runs are reproducible without any model weights.

Run as a stdio backend::

    python -m dialektpipe.backends.stubs asr --options '{"fail_rate": 0.0015}'
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable

import numpy as np

from .. import synthetic
from ..audio import AudioBuffer, dominant_frequency, energy_vad, read_wav, tone, write_wav
from ..errors import BackendError
from ..model import DialectRegion, SpeakerTurn
from ..segmentation import format_rttm
from .protocol import decode_request, error_response, ok_response


class StubFailure(Exception):
    pass


def _file_digest(path) -> bytes:
    return hashlib.sha256(Path(path).read_bytes()).digest()


def _unit_hash(*parts) -> float:
    return (synthetic.stable_seed(*parts) % 10**9) / 10**9


def _asr(payload, opts):
    path = payload["audio_path"]
    key = payload.get("id_hint") or Path(path).stem
    if key in opts.get("fail_ids", ()):
        raise StubFailure(f"configured failure for {key}")
    if _unit_hash("asr-fail", key, opts.get("seed", 0)) < opts.get("fail_rate", 0.0):
        return {"text": ""}
    canned = opts.get("canned", {})
    meta = synthetic.read_sidecar(path)
    if key in canned:
        text = canned[key]
    elif meta and "text" in meta:
        text = meta["text"]
    else:
        text = synthetic.hashed_text(_file_digest(path))
    every = int(opts.get("substitute_every", 0))
    if every:
        toks = text.split()
        text = " ".join("<noise>" if (i + 1) % every == 0 else t for i, t in enumerate(toks))
    return {"text": text}


def _phonemizer(payload, opts):
    path = payload["audio_path"]
    canned = opts.get("canned", {})
    key = Path(path).stem
    if key in canned:
        return {"phonemes": canned[key]}
    audio = read_wav(path)
    if len(audio) == 0:
        return {"phonemes": ""}
    meta = synthetic.read_sidecar(path)
    if meta and "dialect" in meta:
        dialect = DialectRegion.parse(meta["dialect"])
    else:
        dialect = synthetic.dialect_from_frequency(dominant_frequency(audio))
    n = max(1, int(round(audio.duration_s * opts.get("tokens_per_s", 10.0))))
    seed = int.from_bytes(_file_digest(path)[:8], "little")
    return {"phonemes": " ".join(synthetic.sample_phonemes(dialect, n, seed))}


def _tts(payload, opts):
    refs = payload["reference_audio"]
    if not 1 <= len(refs) <= 5:
        raise StubFailure(f"expected 1-5 reference clips, got {len(refs)}")
    text, dialect = payload["text"], DialectRegion.parse(payload["dialect"])
    rate = int(opts.get("sample_rate", 8000))
    freq = synthetic.speaker_key(dominant_frequency(read_wav(refs[0])))
    freq += opts.get("speaker_shift_hz", 0)
    amp = 0.3 + 0.2 * _unit_hash("tts", text, dialect.value)
    out = Path(payload["out_path"])
    write_wav(tone(freq, float(opts.get("duration_s", 0.5)), rate, amp), out)
    synthetic.write_sidecar(out, {"text": text, "dialect": dialect.value})
    return {"audio_path": str(out)}


def _embedder(payload, opts):
    dim = int(opts.get("dim", 16))
    freq = dominant_frequency(read_wav(payload["audio_path"]))
    rng = np.random.default_rng(synthetic.speaker_key(freq))
    return {"embedding": [float(v) for v in rng.standard_normal(dim)]}


def _diarizer(payload, opts):
    audio = read_wav(payload["audio_path"])
    turns = []
    for start, end in energy_vad(audio, min_gap_ms=opts.get("min_gap_ms", 100.0)):
        a, b = int(round(start * audio.sample_rate_hz)), int(round(end * audio.sample_rate_hz))
        f = dominant_frequency(AudioBuffer(audio.samples[a:b], audio.sample_rate_hz))
        turns.append(SpeakerTurn(f"spk{synthetic.speaker_key(f)}", start, end))
    file_id = payload.get("file_id") or Path(payload["audio_path"]).stem
    return {"rttm": format_rttm(file_id, turns)}


_HANDLERS = {
    "asr": _asr,
    "phonemizer": _phonemizer,
    "tts": _tts,
    "embedder": _embedder,
    "diarizer": _diarizer,
}


def make_stub(kind: str, options: dict = None) -> Callable[[str, dict], dict]:
    """Return a handler ``(kind, payload) -> result`` for an in-process stub."""
    if kind not in _HANDLERS:
        raise BackendError(f"no stub for backend kind {kind!r}")
    opts = dict(options or {})
    fn = _HANDLERS[kind]
    calls = {"n": 0}
    lock = threading.Lock()

    def handler(req_kind: str, payload: dict) -> dict:
        if req_kind != kind:
            raise StubFailure(f"stub for {kind} received a {req_kind} request")
        with lock:
            calls["n"] += 1
        return fn(payload, opts)

    handler.calls = calls
    return handler


def _answer(line: str, handler) -> str:
    req = decode_request(line)
    try:
        return ok_response(req["id"], handler(req["kind"], req["payload"]))
    except Exception as exc:  # per-item failures are data
        return error_response(req["id"], f"{type(exc).__name__}: {exc}")


def serve_stdio(kind: str, options: dict, workers: int = 4) -> None:
    """Answer requests concurrently; responses may come back out of order."""
    handler = make_stub(kind, options)
    jitter = float(options.get("jitter_s", 0.0))
    hang = set(options.get("hang_ids", ()))
    out_lock = threading.Lock()
    rng = random.Random(options.get("seed", 0))

    def work(line: str):
        req_id = json.loads(line).get("id")
        if req_id in hang:
            return
        if jitter:
            time.sleep(rng.random() * jitter)
        resp = _answer(line, handler)
        with out_lock:
            sys.stdout.write(resp + "\n")
            sys.stdout.flush()

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for line in sys.stdin:
            if line.strip():
                pool.submit(work, line)


def serve_http(kind: str, options: dict = None, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Start an HTTP stub in a daemon thread; returns the bound server."""
    handler = make_stub(kind, options)

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = self.rfile.read(int(self.headers.get("Content-Length", 0))).decode("utf-8")
            try:
                resp = _answer(body, handler).encode("utf-8")
                code = 200
            except BackendError as exc:
                resp, code = json.dumps({"error": str(exc)}).encode(), 400
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(resp)))
            self.end_headers()
            self.wfile.write(resp)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description="Deterministic stub backend speaking the NDJSON protocol on stdio.")
    p.add_argument("kind", choices=sorted(_HANDLERS))
    p.add_argument("--options", default="{}", help="JSON object of stub options")
    p.add_argument("--workers", type=int, default=4)
    args = p.parse_args(argv)
    serve_stdio(args.kind, json.loads(args.options), args.workers)


if __name__ == "__main__":
    main()
