"""Single-turn completion client with an on-disk response cache.

Responses are stored as a JSON object ``{sha256(query): response_text}``.
The same file format serves as a record/replay fixture: ``ReplayTransport``
answers only from such a file, so extraction can run fully offline.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from pathlib import Path

from .errors import LLMError, MissingInputError

log = logging.getLogger(__name__)


def query_hash(query: str) -> str:
    return hashlib.sha256(query.encode("utf-8")).hexdigest()


class ReplayTransport:
    """Serves recorded responses; unknown queries are an error."""

    def __init__(self, fixture_path):
        self.path = Path(fixture_path)
        if not self.path.exists():
            raise MissingInputError("replay fixture not found", stage="extract-semantics",
                                    path=str(self.path))
        self.responses = json.loads(self.path.read_text())
        self.requests = 0

    def __call__(self, query: str) -> str:
        self.requests += 1
        key = query_hash(query)
        if key not in self.responses:
            raise LLMError(f"query not in replay fixture: {query!r}", stage="extract-semantics",
                           path=str(self.path))
        return self.responses[key]


class HttpTransport:
    """POSTs an OpenAI-style chat request; the key is read from an environment variable."""

    def __init__(self, endpoint: str, model: str = "gpt-4", key_env: str = "STYLESYNTH_LLM_KEY",
                 retries: int = 3, timeout: float = 60.0, backoff: float = 2.0):
        self.endpoint = endpoint
        self.model = model
        self.key_env = key_env
        self.retries = retries
        self.timeout = timeout
        self.backoff = backoff
        self.requests = 0

    def __call__(self, query: str) -> str:
        import httpx

        headers = {}
        key = os.environ.get(self.key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {"model": self.model, "temperature": 0,
                   "messages": [{"role": "user", "content": query}]}
        last = None
        for attempt in range(self.retries):
            self.requests += 1
            try:
                resp = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                return _completion_text(resp.json())
            except (httpx.HTTPError, ValueError, KeyError) as exc:
                last = exc
                log.warning("LLM request failed (attempt %d/%d): %s", attempt + 1, self.retries, exc)
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (attempt + 1))
        raise LLMError(f"LLM request failed after {self.retries} attempts: {last}",
                       stage="extract-semantics", path=self.endpoint)


def _completion_text(body: dict) -> str:
    choice = body["choices"][0]
    if "message" in choice:
        return choice["message"]["content"]
    return choice["text"]


class LLMClient:
    """Cache in front of a transport. Thread-safe; writes are serialised."""

    def __init__(self, transport, cache_path=None):
        self.transport = transport
        self.cache_path = Path(cache_path) if cache_path else None
        self._lock = threading.Lock()
        self.cache: dict[str, str] = {}
        self.requests = 0
        if self.cache_path and self.cache_path.exists():
            self.cache = json.loads(self.cache_path.read_text())

    @classmethod
    def from_config(cls, config) -> "LLMClient":
        if config.llm_fixture:
            transport = ReplayTransport(config.llm_fixture)
        elif config.llm_endpoint:
            transport = HttpTransport(config.llm_endpoint, config.llm_model, config.llm_key_env)
        else:
            raise LLMError("llm extractor needs llm_endpoint or llm_fixture",
                           stage="extract-semantics")
        return cls(transport, config.llm_cache)

    def complete(self, query: str) -> str:
        key = query_hash(query)
        with self._lock:
            if key in self.cache:
                return self.cache[key]
        text = self.transport(query)
        with self._lock:
            self.requests += 1
            self.cache[key] = text
            if self.cache_path:
                self.cache_path.parent.mkdir(parents=True, exist_ok=True)
                self.cache_path.write_text(json.dumps(self.cache, indent=2, sort_keys=True))
        return text
