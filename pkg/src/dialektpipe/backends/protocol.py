"""Wire format shared by every backend transport.

Request:  {"id": str, "kind": str, "payload": {...}}
Response: {"id": str, "ok": true, "result": {...}} or {"id": str, "ok": false, "error": str}

Over stdio each message is one line of JSON; over HTTP each POST body is one
request object and the response body one response object.
"""

from __future__ import annotations

import json

from ..errors import BackendError

KINDS = ("asr", "diarizer", "phonemizer", "tts", "embedder")


def encode_request(req_id: str, kind: str, payload: dict) -> str:
    if kind not in KINDS:
        raise BackendError(f"unknown backend kind {kind!r}")
    return json.dumps({"id": req_id, "kind": kind, "payload": payload}, ensure_ascii=False, sort_keys=True)


def decode_request(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise BackendError(f"malformed request: {exc.msg}") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("id"), str) or obj.get("kind") not in KINDS:
        raise BackendError("request must carry string 'id' and a known 'kind'")
    if not isinstance(obj.get("payload"), dict):
        raise BackendError(f"request {obj['id']}: 'payload' must be an object")
    return obj


def ok_response(req_id: str, result: dict) -> str:
    return json.dumps({"id": req_id, "ok": True, "result": result}, ensure_ascii=False, sort_keys=True)


def error_response(req_id: str, error: str) -> str:
    return json.dumps({"id": req_id, "ok": False, "error": error}, ensure_ascii=False, sort_keys=True)


def decode_response(line: str, expected_id: str = None) -> dict:
    """Parse and validate a response; any deviation is a hard BackendError."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise BackendError(f"protocol violation: response is not JSON ({exc.msg})") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("id"), str) or not isinstance(obj.get("ok"), bool):
        raise BackendError("protocol violation: response needs string 'id' and boolean 'ok'")
    if expected_id is not None and obj["id"] != expected_id:
        raise BackendError(f"protocol violation: response id {obj['id']!r} does not match request {expected_id!r}")
    if obj["ok"] and not isinstance(obj.get("result"), dict):
        raise BackendError(f"protocol violation: response {obj['id']} has ok=true but no 'result' object")
    if not obj["ok"] and not isinstance(obj.get("error"), str):
        raise BackendError(f"protocol violation: response {obj['id']} has ok=false but no 'error' string")
    return obj
