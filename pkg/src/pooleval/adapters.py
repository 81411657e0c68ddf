"""Remote model adapters and the content-addressed response cache.

Every remote adapter speaks one HTTP+JSON shape::

    POST endpoint  {"kind": ..., "model": ..., "inputs": [...], "params": {...}}
    200            {"outputs": [...]}          # one output per input

Responses are cached in an append-only JSONL log keyed by a hash of
``(kind, model, prompt_version, input)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from pathlib import Path
from typing import Any

import httpx

logger = logging.getLogger(__name__)

API_KEY_ENV = "POOLEVAL_API_KEY"
_MISSING = object()
_NO_DEFAULT = object()


class AdapterError(Exception):
    """Base class for adapter failures."""


class TransportError(AdapterError):
    """A single remote call failed; the caller may retry."""


class RetriesExhausted(AdapterError):
    pass


class OfflineCacheMiss(AdapterError):
    """Raised in offline mode when a response is not already cached."""


def content_key(kind: str, model: str, prompt_version: str, payload: Any) -> str:
    blob = json.dumps([kind, model, prompt_version, payload], sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only JSONL log with an in-memory hash index (last write wins).

    ``path=None`` keeps everything in memory.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._index: dict[str, Any] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._index[rec["key"]] = rec["output"]

    def __len__(self) -> int:
        return len(self._index)

    def get(self, key: str, default: Any = _NO_DEFAULT) -> Any:
        with self._lock:
            if key in self._index:
                self.hits += 1
                return self._index[key]
            self.misses += 1
        if default is _NO_DEFAULT:
            raise KeyError(key)
        return default

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def put(self, key: str, output: Any, meta: dict | None = None) -> None:
        rec = {"key": key, "output": output}
        if meta:
            rec["meta"] = meta
        with self._lock:
            if self._index.get(key, _MISSING) == output:
                return
            self._index[key] = output
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


class RemoteAdapter:
    """Blocking client for the adapter endpoint with retries and a bounded in-flight limit."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        prompt_version: str = "v1",
        timeout: float = 30.0,
        retries: int = 2,
        max_inflight: int = 4,
        cache: ResponseCache | None = None,
        offline: bool = False,
        backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.prompt_version = prompt_version
        self.retries = retries
        self.cache = cache
        self.offline = offline
        self.backoff = backoff
        self.remote_calls = 0  # inputs actually sent over the wire
        self.requests = 0
        self._gate = threading.Semaphore(max(1, max_inflight))
        self._count_lock = threading.Lock()
        headers = {}
        if os.environ.get(API_KEY_ENV):
            headers["Authorization"] = f"Bearer {os.environ[API_KEY_ENV]}"
        self._client = httpx.Client(timeout=timeout, transport=transport, headers=headers)

    def _post(self, kind: str, inputs: list, params: dict) -> list:
        body = {"kind": kind, "model": self.model, "inputs": inputs, "params": params}
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._gate:
                    with self._count_lock:
                        self.requests += 1
                        self.remote_calls += len(inputs)
                    resp = self._client.post(self.endpoint, json=body)
                if resp.status_code >= 500:
                    raise TransportError(f"{kind}: HTTP {resp.status_code}")
                resp.raise_for_status()
                outputs = resp.json()["outputs"]
                if len(outputs) != len(inputs):
                    raise TransportError(f"{kind}: expected {len(inputs)} outputs, got {len(outputs)}")
                return outputs
            except (httpx.TransportError, TransportError, ValueError, KeyError) as exc:
                last_exc = exc
                logger.warning("%s call failed (attempt %d/%d): %s", kind, attempt + 1, self.retries + 1, exc)
                if attempt < self.retries and self.backoff:
                    time.sleep(self.backoff * 2**attempt)
            except httpx.HTTPStatusError as exc:
                raise AdapterError(f"{kind}: {exc}") from exc
        raise RetriesExhausted(f"{kind}: gave up after {self.retries + 1} attempts: {last_exc}")

    def call(self, kind: str, inputs: list, params: dict | None = None, *, use_cache: bool = True) -> list:
        """One output per input; cached inputs never hit the network."""
        params = params or {}
        keys = [content_key(kind, self.model, self.prompt_version, [x, params]) for x in inputs]
        outputs: list[Any] = [_MISSING] * len(inputs)
        if use_cache and self.cache is not None:
            outputs = [self.cache.get(k, _MISSING) for k in keys]
        pending = [i for i, o in enumerate(outputs) if o is _MISSING]
        if pending:
            if self.offline:
                raise OfflineCacheMiss(f"{kind}: {len(pending)} uncached inputs in offline mode")
            fresh = self._post(kind, [inputs[i] for i in pending], params)
            for i, out in zip(pending, fresh):
                outputs[i] = out
                if use_cache and self.cache is not None:
                    self.cache.put(keys[i], out, {"kind": kind, "model": self.model})
        return outputs

    def close(self) -> None:
        self._client.close()
