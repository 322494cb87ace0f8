"""Pluggable LLM backends used to rank entity descriptions.

A backend only needs a stable ``backend_id`` and ``complete(prompt) -> str``.
"""
from __future__ import annotations

import hashlib
import re
import threading
from typing import Callable, Protocol

from .errors import RankingError


class LlmBackend(Protocol):
    backend_id: str

    def complete(self, prompt: str) -> str: ...


class TransportError(RankingError):
    """Raised by a backend when the request itself failed (retryable)."""


_NUMBERED = re.compile(r"^(\d+)\. ", re.MULTILINE)


class MockBackend:
    """Deterministic offline backend.

    Without a script, the reply is a pure function of ``(prompt, seed)``: a
    1-based index among the numbered candidate lines of the prompt. ``reply``
    may be a fixed string or a callable ``prompt -> str`` for scripted tests.
    """

    def __init__(self, seed: int = 0, reply: str | Callable[[str], str] | None = None,
                 backend_id: str | None = None):
        self.seed = seed
        self.reply = reply
        self.backend_id = backend_id or f"mock:{seed}"
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.calls += 1
        if callable(self.reply):
            return self.reply(prompt)
        if self.reply is not None:
            return self.reply
        n = len(_NUMBERED.findall(prompt))
        if n == 0:
            return "1"
        digest = hashlib.blake2b(f"{self.seed}\x00{prompt}".encode(), digest_size=8).digest()
        return str(int.from_bytes(digest, "big") % n + 1)


class HttpBackend:
    """OpenAI-compatible ``/chat/completions`` client (GPT-3.5, LLaMA servers, ...)."""

    def __init__(self, endpoint: str, model: str, api_key: str | None = None, seed: int = 0,
                 timeout: float = 60.0, session=None):
        if session is None:
            import requests
            session = requests.Session()
        self.session = session
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.seed = seed
        self.timeout = timeout
        self.backend_id = f"http:{model}"

    def complete(self, prompt: str) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "seed": self.seed,
        }
        try:
            resp = self.session.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        except Exception as exc:
            raise TransportError(f"request to {self.endpoint} failed: {exc}") from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransportError(f"{self.endpoint} answered HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise RankingError(f"{self.endpoint} rejected the request: HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            # unparsable body is treated like an unparsable reply: fallback downstream
            return ""


def make_backend(cfg: dict) -> LlmBackend:
    """Build a backend from ``{"backend": "mock"|"http", "endpoint", "model", "seed", ...}``."""
    kind = cfg.get("backend", "mock")
    seed = int(cfg.get("seed", 0))
    if kind == "mock":
        return MockBackend(seed=seed)
    if kind == "http":
        if not cfg.get("endpoint") or not cfg.get("model"):
            raise ValueError("http backend needs 'endpoint' and 'model'")
        return HttpBackend(cfg["endpoint"], cfg["model"], api_key=cfg.get("api_key"), seed=seed)
    raise ValueError(f"unknown backend {kind!r}")
