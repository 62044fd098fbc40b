"""Checkpointed batch execution against a backend.

Progress is an append-only JSONL completion log keyed by item id. A run that
is killed part-way leaves every finished item in the log; the next run skips
those ids and only issues the rest.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from ..errors import BackendError, DataError
from .client import BackendClient

log = logging.getLogger(__name__)


class CompletionLog:
    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self) -> Dict[str, dict]:
        """Completed responses by id. A torn final line (crash mid-write) is ignored."""
        done = {}
        if not self.path.exists():
            return done
        raw = self.path.read_text(encoding="utf-8")
        lines = raw.split("\n")
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    log.warning("%s: ignoring torn final record", self.path)
                    continue
                raise DataError(f"{self.path}: corrupt completion record on line {i + 1}") from None
            done[rec["id"]] = rec
        if raw and not raw.endswith("\n"):
            # drop the torn tail so later appends start on a fresh line
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(lines[:-1]) + ("\n" if len(lines) > 1 else ""))
        return done

    def append(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())


def run_batch(
    client: BackendClient,
    items: Sequence[Tuple[str, dict]],
    log_path=None,
    on_complete: Optional[Callable[[dict], None]] = None,
) -> List[dict]:
    """Send every ``(id, payload)`` not already in the log; return responses in input order.

    Per-item failures come back as ``ok=false`` records and are logged like
    successes, so they are not retried on restart.
    """
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise DataError("batch item ids must be unique")
    clog = CompletionLog(log_path) if log_path else None
    done = clog.load() if clog else {}
    todo = [(i, p) for i, p in items if i not in done]
    results: Dict[str, dict] = {i: done[i] for i in ids if i in done}
    if todo:
        log.info("%s: %d of %d items to process", client.spec.kind, len(todo), len(items))

    def work(item):
        req_id, payload = item
        resp = client.call(payload, req_id=req_id)
        if resp["id"] != req_id:
            raise BackendError(f"protocol violation: response id {resp['id']!r} for request {req_id!r}")
        if clog:
            clog.append(resp)
        results[req_id] = resp
        if on_complete:
            on_complete(resp)
        return resp

    if client.spec.max_parallel == 1:
        for item in todo:
            work(item)
    elif todo:
        with ThreadPoolExecutor(max_workers=client.spec.max_parallel) as pool:
            futures = [pool.submit(work, item) for item in todo]
            finished, pending = wait(futures, return_when=FIRST_EXCEPTION)
            for f in pending:
                f.cancel()
            for f in futures:
                if f.done() and not f.cancelled() and f.exception():
                    raise f.exception()
    return [results[i] for i in ids]
