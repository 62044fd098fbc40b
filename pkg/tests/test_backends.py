import json
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from conftest import stub_client
from dialektpipe import synthetic
from dialektpipe.audio import AudioBuffer, concat, silence, tone, write_wav
from dialektpipe.backends import (
    BackendClient,
    BackendSpec,
    CompletionLog,
    check_embedding_dims,
    diarize,
    embed_speaker,
    load_backend_conf,
    phonemize,
    phonemize_batch,
    run_batch,
    synthesize,
    transcribe,
    transcribe_batch,
)
from dialektpipe.backends.protocol import decode_request, decode_response, encode_request
from dialektpipe.backends.stubs import serve_http
from dialektpipe.errors import BackendError, ConfigError, DataError
from dialektpipe.model import DialectRegion
from dialektpipe.segmentation import parse_rttm


@pytest.fixture
def wav(tmp_path):
    p = tmp_path / "clip.wav"
    write_wav(tone(synthetic.speaker_frequency(DialectRegion.BERN, 1), 1.0, 8000), p)
    return p


# ------------------------------------------------------------------ protocol


def test_protocol_round_trip_and_violations():
    line = encode_request("r1", "asr", {"audio_path": "x"})
    assert decode_request(line) == {"id": "r1", "kind": "asr", "payload": {"audio_path": "x"}}
    assert decode_response('{"id": "r1", "ok": true, "result": {}}', "r1")["ok"]
    for bad in ["nope", '{"id": 1, "ok": true}', '{"id": "r1", "ok": true}', '{"id": "r1", "ok": false}',
                '{"id": "r2", "ok": true, "result": {}}']:
        with pytest.raises(BackendError, match="protocol violation"):
            decode_response(bad, "r1")
    with pytest.raises(BackendError):
        encode_request("r", "tts2", {})


def test_spec_validation():
    with pytest.raises(ConfigError):
        BackendSpec("asr", "carrier-pigeon", "x")
    with pytest.raises(ConfigError):
        BackendSpec("asr", "http", "x", timeout_s=0)
    with pytest.raises(ConfigError):
        BackendSpec("asr", "http", "x", max_parallel=0)


def test_backend_conf_from_env(tmp_path, monkeypatch):
    p = tmp_path / "b.yaml"
    p.write_text("asr:\n  transport: http\n  endpoint: http://localhost:1/\n  max_parallel: 3\n")
    monkeypatch.setenv("DIALEKTPIPE_BACKEND_CONF", str(p))
    specs = load_backend_conf()
    assert specs["asr"].max_parallel == 3 and specs["asr"].transport == "http"
    monkeypatch.delenv("DIALEKTPIPE_BACKEND_CONF")
    with pytest.raises(ConfigError):
        load_backend_conf()


# ------------------------------------------------------------------ stub contracts


def test_transcribe_canned_and_failures(wav):
    c = stub_client("asr", canned={"seg1": "Grüezi mitenand"}, fail_ids=["x"])
    assert transcribe(c, "seg1", wav).text == "Grüezi mitenand"
    r = transcribe(c, "x", wav)
    assert r.failed and r.text is None and "configured failure" in r.reason
    with pytest.raises(BackendError):
        transcribe(stub_client("tts"), "seg1", wav)


def test_random_failure_rate_removed(wav):
    c = stub_client("asr", fail_rate=0.0015, seed=1)
    res = transcribe_batch(c, [(f"s{i:05d}", wav) for i in range(10000)])
    failed = [r for r in res if r.failed]
    assert 5 <= len(failed) <= 30
    assert all(r.text is None for r in failed) and all(r.text for r in res if not r.failed)


def test_phonemize_contracts(tmp_path, wav):
    c = stub_client("phonemizer", canned={"fixture": "a b c"})
    fixture = tmp_path / "fixture.wav"
    write_wav(silence(0.5, 8000), fixture)
    assert phonemize(c, fixture).value == "a b c"
    empty = tmp_path / "empty.wav"
    write_wav(AudioBuffer(np.zeros(0), 8000), empty)
    r = phonemize(c, empty)
    assert r.failed and r.value == ""
    res = phonemize_batch(c, [(f"i{k}", wav) for k in range(7)])
    assert [r.item_id for r in res] == [f"i{k}" for k in range(7)]
    assert phonemize(c, wav).value == phonemize(c, wav).value


def test_synthesize_contracts(tmp_path, wav):
    c = stub_client("tts")
    a = synthesize(c, "Hallo Welt", [wav], DialectRegion.VALAIS, tmp_path / "a.wav")
    b = synthesize(c, "Hallo Welt", [wav], DialectRegion.VALAIS, tmp_path / "b.wav")
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()
    assert not a.failed and not b.failed and a.value.endswith("a.wav")
    with pytest.raises(DataError):
        synthesize(c, "Hallo", [], DialectRegion.VALAIS, tmp_path / "c.wav")
    with pytest.raises(DataError):
        synthesize(c, "Hallo", [wav] * 6, DialectRegion.VALAIS, tmp_path / "c.wav")


def test_embedder_contracts(tmp_path, wav):
    c = stub_client("embedder")
    other = tmp_path / "other.wav"
    write_wav(tone(synthetic.speaker_frequency(DialectRegion.BASEL, 0), 0.7, 8000), other)
    same = tmp_path / "same.wav"
    write_wav(tone(synthetic.speaker_frequency(DialectRegion.BERN, 1), 0.3, 16000), same)
    e1, e2, e3 = embed_speaker(c, wav), embed_speaker(c, same), embed_speaker(c, other)
    assert e1.value == e2.value and e1.value != e3.value
    assert check_embedding_dims([e1, e3]) == 16
    e4 = embed_speaker(stub_client("embedder", dim=8), wav)
    with pytest.raises(BackendError, match="dimension"):
        check_embedding_dims([e1, e4])


def test_diarize_contracts(tmp_path):
    rate = 8000
    one = tmp_path / "one.wav"
    write_wav(concat([tone(300, 2.0, rate), silence(1.0, rate), tone(300, 2.0, rate)]), one)
    c = stub_client("diarizer")
    turns = parse_rttm(diarize(c, one).value)
    assert len(turns) == 2 and len({t.speaker_tag for t in turns}) == 1
    two = tmp_path / "two.wav"
    f1 = synthetic.speaker_frequency(DialectRegion.BASEL, 0)
    f2 = synthetic.speaker_frequency(DialectRegion.ZURICH, 1)
    write_wav(concat([tone(f1, 3, rate), silence(0.5, rate), tone(f2, 3, rate), silence(0.5, rate), tone(f1, 3, rate)]), two)
    turns = parse_rttm(diarize(c, two).value)
    assert [t.speaker_tag for t in turns] == ["spk200", "spk910", "spk200"]
    bounds = [float(x) for t in turns for x in (t.start_s, t.end_s)]
    assert bounds == pytest.approx([0, 3, 3.5, 6.5, 7, 10], abs=0.05)
    empty = tmp_path / "empty.wav"
    write_wav(AudioBuffer(np.zeros(0), rate), empty)
    assert diarize(c, empty).value == ""


# ------------------------------------------------------------------ transports


def test_subprocess_pipelined_out_of_order_keeps_input_order(wav):
    c = stub_client("asr", transport="subprocess", max_parallel=8, canned={f"s{i}": f"text {i}" for i in range(40)},
                    jitter_s=0.05)
    with c:
        res = transcribe_batch(c, [(f"s{i}", wav) for i in range(40)])
    assert [r.text for r in res] == [f"text {i}" for i in range(40)]


def test_subprocess_timeout_is_per_item_failure(wav):
    c = stub_client("asr", transport="subprocess", max_parallel=2, timeout_s=0.5, hang_ids=["slow"],
                    canned={"fast": "ok"})
    with c:
        res = transcribe_batch(c, [("fast", wav), ("slow", wav)])
    assert res[0].text == "ok"
    assert res[1].failed and "timeout" in res[1].reason


def _write_backend(tmp_path, body):
    script = tmp_path / "bad_backend.py"
    script.write_text(textwrap.dedent(body))
    return f"{sys.executable} {script}"


def test_subprocess_protocol_violation_is_hard_error(tmp_path, wav):
    cmd = _write_backend(tmp_path, """
        import sys
        for line in sys.stdin:
            print("this is not json", flush=True)
    """)
    c = BackendClient(BackendSpec("asr", "subprocess", cmd, timeout_s=5))
    with c, pytest.raises(BackendError, match="protocol violation"):
        transcribe(c, "a", wav)


def test_subprocess_missing_result_field_is_hard_error(tmp_path, wav):
    cmd = _write_backend(tmp_path, """
        import json, sys
        for line in sys.stdin:
            req = json.loads(line)
            print(json.dumps({"id": req["id"], "ok": True, "result": {"txt": "x"}}), flush=True)
    """)
    c = BackendClient(BackendSpec("asr", "subprocess", cmd, timeout_s=5))
    with c, pytest.raises(BackendError, match="text"):
        transcribe(c, "a", wav)


def test_subprocess_crash_is_backend_error(tmp_path, wav):
    cmd = _write_backend(tmp_path, "import sys; sys.stdin.readline(); sys.exit(4)\n")
    c = BackendClient(BackendSpec("asr", "subprocess", cmd, timeout_s=5))
    with c, pytest.raises(BackendError):
        transcribe(c, "a", wav)


def test_http_transport(wav):
    server = serve_http("asr", {"canned": {"h1": "über http"}})
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/"
        c = BackendClient(BackendSpec("asr", "http", url, timeout_s=5, max_parallel=4))
        res = transcribe_batch(c, [("h1", wav)] + [(f"x{i}", wav) for i in range(10)])
        assert res[0].text == "über http" and len(res) == 11
    finally:
        server.shutdown()


def test_http_unreachable_is_backend_error(wav):
    c = BackendClient(BackendSpec("asr", "http", "http://127.0.0.1:9/", timeout_s=2))
    with pytest.raises(BackendError):
        transcribe(c, "a", wav)


# ------------------------------------------------------------------ checkpointing


def test_completion_log_tolerates_torn_tail(tmp_path):
    p = tmp_path / "log.jsonl"
    log = CompletionLog(p)
    log.append({"id": "a", "ok": True, "result": {}})
    with open(p, "a") as fh:
        fh.write('{"id": "b", "ok": tr')
    assert set(log.load()) == {"a"}
    log.append({"id": "c", "ok": True, "result": {}})
    assert set(log.load()) == {"a", "c"}
    p.write_text('garbage\n{"id": "a", "ok": true, "result": {}}\n')
    with pytest.raises(DataError, match="line 1"):
        log.load()


class Boom(Exception):
    pass


def test_interrupted_batch_resumes_without_reprocessing(tmp_path, wav):
    items = [(f"s{i:03d}", {"audio_path": str(wav), "id_hint": f"s{i:03d}"}) for i in range(50)]
    ref = run_batch(stub_client("asr"), items)
    log = tmp_path / "asr.jsonl"
    done = []

    def die_after_17(resp):
        done.append(resp["id"])
        if len(done) == 17:
            raise Boom()

    with pytest.raises(Boom):
        run_batch(stub_client("asr"), items, log, on_complete=die_after_17)
    c = stub_client("asr")
    handler = c.transport.handler
    out = run_batch(c, items, log)
    assert handler.calls["n"] == 50 - 17
    assert out == ref


def test_sigkill_mid_batch_then_restart(tmp_path, wav):
    """Kill the process hard at several points; every restart finishes the rest exactly once."""
    log = tmp_path / "asr.jsonl"
    script = tmp_path / "run.py"
    script.write_text(textwrap.dedent(f"""
        import json, os, signal, sys
        sys.path.insert(0, {str(tmp_path)!r})
        from dialektpipe.backends import BackendClient, BackendSpec, run_batch
        kill_at = int(sys.argv[1])
        c = BackendClient(BackendSpec("asr", "inproc", "stub", max_parallel=4))
        items = [(f"s{{i:03d}}", {{"audio_path": {str(wav)!r}, "id_hint": f"s{{i:03d}}"}}) for i in range(60)]
        n = [0]
        def hook(resp):
            n[0] += 1
            if n[0] == kill_at:
                os.kill(os.getpid(), signal.SIGKILL)
        out = run_batch(c, items, {str(log)!r}, on_complete=hook)
        print(json.dumps({{"calls": c.transport.handler.calls["n"], "ids": [r["id"] for r in out]}}))
    """))
    completed = 0
    for kill_at in (7, 11, 1):
        proc = subprocess.run([sys.executable, str(script), str(kill_at)], capture_output=True, text=True)
        assert proc.returncode == -9
        now = len(CompletionLog(log).load())
        assert now >= completed + kill_at
        completed = now
    proc = subprocess.run([sys.executable, str(script), "0"], capture_output=True, text=True)
    out = json.loads(proc.stdout)
    assert out["calls"] == 60 - completed
    assert out["ids"] == [f"s{i:03d}" for i in range(60)]
    lines = [json.loads(l) for l in log.read_text().splitlines() if l.strip()]
    assert sorted(r["id"] for r in lines) == [f"s{i:03d}" for i in range(60)]
