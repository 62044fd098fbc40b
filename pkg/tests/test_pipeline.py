import os
import subprocess
import sys

import pytest

from pipeline_fixture import GOLDEN, make_inputs, products, write_config
from dialektpipe import synthetic
from dialektpipe.errors import ConfigError
from dialektpipe.model import read_manifest
from dialektpipe.pipeline import STAGES, LockError, PipelineStopped, load_config, run_pipeline


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    make_inputs(root)
    return root


def cfg(root, ws, **over):
    return load_config(write_config(root, **over), {"workspace": str(ws)})


def ran(results):
    return [r.stage for r in results if r.ran]


def test_full_run_matches_golden_and_ground_truth(inputs, tmp_path):
    res = run_pipeline(cfg(inputs, tmp_path / "ws"))
    assert ran(res) == list(STAGES)
    out = products(tmp_path / "ws")
    assert out["manifest.jsonl"] == (GOLDEN / "manifest.jsonl").read_bytes()
    assert out["reports/stats.txt"] == (GOLDEN / "stats.txt").read_bytes()
    assert (tmp_path / "ws" / "reports" / "stats.png").exists()
    m = read_manifest(tmp_path / "ws" / "manifest.jsonl")
    for s in m:
        # stub speaker tags encode the tone frequency of the synthetic speaker
        assert s.dialect == synthetic.dialect_from_frequency(int(s.speaker_tag[3:]))
        assert s.transcript and (tmp_path / "ws" / s.audio_path).exists()
    assert ran(run_pipeline(cfg(inputs, tmp_path / "ws"))) == []


def test_stop_after_then_resume(inputs, tmp_path):
    ws = tmp_path / "ws"
    with pytest.raises(PipelineStopped):
        run_pipeline(cfg(inputs, ws), stop_after="segment")
    assert not (ws / "manifests" / "transcribed.jsonl").exists()
    assert ran(run_pipeline(cfg(inputs, ws))) == ["transcribe", "dialect-id", "stats"]
    assert products(ws)["manifest.jsonl"] == (GOLDEN / "manifest.jsonl").read_bytes()


def test_stage_subset_needs_only_its_backends(inputs, tmp_path):
    ws = tmp_path / "ws"
    res = run_pipeline(cfg(inputs, ws, stages=["ingest", "diarize", "segment"],
                           backends={"diarizer": {"transport": "inproc", "endpoint": "stub"}}))
    assert ran(res) == ["ingest", "diarize", "segment"]
    assert len(read_manifest(ws / "manifests" / "segmented.jsonl")) == 10


def test_damaged_output_reruns_only_that_stage(inputs, tmp_path):
    ws = tmp_path / "ws"
    run_pipeline(cfg(inputs, ws))
    (ws / "reports" / "stats.txt").write_text("tampered")
    assert ran(run_pipeline(cfg(inputs, ws))) == ["stats"]
    assert products(ws)["reports/stats.txt"] == (GOLDEN / "stats.txt").read_bytes()
    assert ran(run_pipeline(cfg(inputs, ws), force=["transcribe"])) == ["transcribe"]
    assert ran(run_pipeline(cfg(inputs, ws, stats_units="scaled"))) == list(STAGES)


def test_asr_failures_drop_segments(inputs, tmp_path):
    ws = tmp_path / "ws"
    b = {
        "diarizer": {"transport": "inproc", "endpoint": "stub"},
        "asr": {"transport": "inproc", "endpoint": "stub", "options": {"fail_ids": ["eb38538b721ab985"]}},
        "phonemizer": {"transport": "inproc", "endpoint": "stub"},
    }
    run_pipeline(cfg(inputs, ws, backends=b))
    ids = [s.segment_id for s in read_manifest(ws / "manifest.jsonl")]
    assert len(ids) == 9 and "eb38538b721ab985" not in ids


@pytest.mark.parametrize("over, match", [
    ({"stages": ["ingest", "bogus"]}, "unknown stages"),
    ({"stages": ["segment", "ingest"]}, "pipeline order"),
    ({"did_train_corpus": "missing.tsv"}, "does not exist"),
    ({"backends": {"diarizer": {"transport": "inproc", "endpoint": "stub"}}}, "asr backend"),
    ({"min_speakers": 0}, "min_speakers"),
    ({"frobnicate": 1}, "unknown config keys"),
    ({"stats_units": "kg"}, "stats_units"),
])
def test_config_errors_before_any_work(inputs, tmp_path, over, match):
    with pytest.raises(ConfigError, match=match):
        cfg(inputs, tmp_path / "ws", **over)
    assert not (tmp_path / "ws").exists()


def test_workspace_from_env(inputs, tmp_path, monkeypatch):
    monkeypatch.setenv("DIALEKTPIPE_WORKSPACE", str(tmp_path / "envws"))
    c = load_config(write_config(inputs, stages=["ingest"]))
    run_pipeline(c)
    assert (tmp_path / "envws" / "episodes.jsonl").exists()


def test_lock(inputs, tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    (ws / ".lock").write_text(f"{os.getppid()}\n")
    with pytest.raises(LockError, match="locked"):
        run_pipeline(cfg(inputs, ws, stages=["ingest"]))
    dead = subprocess.run([sys.executable, "-c", "import os; print(os.getpid())"], capture_output=True, text=True)
    (ws / ".lock").write_text(dead.stdout)
    assert ran(run_pipeline(cfg(inputs, ws, stages=["ingest"]))) == ["ingest"]
    assert not (ws / ".lock").exists()
