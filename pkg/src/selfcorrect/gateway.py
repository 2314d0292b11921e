"""Uniform access to chat-completion text generation.

Two interchangeable gateways: an HTTP client speaking the common
chat-completions wire shape, and a scripted stub that replays canned
completions keyed by request fingerprint so pipelines are reproducible
without a network.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import requests

ENV_API_BASE = "LM_API_BASE"
ENV_API_KEY = "LM_API_KEY"
ENV_MODEL = "LM_MODEL"


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """All delivery attempts failed; `attempts` counts the tries made."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (attempts={attempts})")
        self.attempts = attempts


class AuthenticationError(GatewayError):
    pass


class MalformedReplyError(GatewayError):
    """The endpoint replied but not in the expected shape; carries a body excerpt."""

    def __init__(self, message: str, body: str = ""):
        excerpt = body[:200]
        super().__init__(f"{message}; body: {excerpt!r}" if excerpt else message)
        self.body_excerpt = excerpt


class StubScriptError(GatewayError):
    """The scripted stub has no (or not enough) completions for a fingerprint."""


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.8
    top_p: float = 0.95
    n: int = 1
    max_tokens: int = 512

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "n": self.n,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class LMRequest:
    messages: tuple[dict, ...]
    params: SamplingParams = field(default_factory=SamplingParams)
    model_name: str = ""
    #: Stable key for the scripted stub (question id by convention); HTTP ignores it.
    fingerprint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(dict(m) for m in self.messages))
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for m in self.messages:
            if m.get("role") not in ("system", "user", "assistant"):
                raise ValueError(f"bad message role {m.get('role')!r}")
            if "content" not in m:
                raise ValueError("message missing content")
        if self.messages[-1]["role"] != "user":
            raise ValueError("last message must have role user")


@dataclass(frozen=True)
class LMResponse:
    completions: tuple[str, ...]
    usage: dict | None = None
    latency: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "completions", tuple(self.completions))
        if not self.completions:
            raise ValueError("completions must be non-empty")


def message_fingerprint(text: str) -> str:
    """Stable fingerprint of a message body (whitespace-normalized sha256 prefix)."""
    normalized = re.sub(r"\s+", " ", text).strip()
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()[:16]


def _requests_transport(url: str, headers: dict, payload: dict, timeout: float) -> tuple[int, str]:
    try:
        resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    except requests.RequestException as exc:
        raise ConnectionError(str(exc)) from exc
    return resp.status_code, resp.text


#: transport(url, headers, payload, timeout) -> (status_code, body); raises OSError on failure.
Transport = Callable[[str, dict, dict, float], tuple[int, str]]


class HttpChatGateway:
    """Chat-completions HTTP client with bounded retry and exponential backoff.

    Transient transport failures (connection errors, timeouts, 408/429/5xx)
    are retried up to `max_retries` extra attempts; authentication errors
    (401/403) are never retried. Completion-count mismatches are surfaced as
    malformed replies, never padded.
    """

    _RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model_name: str | None = None,
        max_retries: int = 2,
        backoff: float = 0.5,
        timeout: float = 60.0,
        transport: Transport | None = None,
    ):
        self.base_url = (base_url or os.environ.get(ENV_API_BASE, "")).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.model_name = model_name or os.environ.get(ENV_MODEL, "")
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self._transport = transport or _requests_transport

    def complete(self, req: LMRequest) -> LMResponse:
        if not self.base_url:
            raise GatewayError(f"no endpoint configured (set {ENV_API_BASE} or pass base_url)")
        url = f"{self.base_url}/v1/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": req.model_name or self.model_name,
            "messages": [dict(m) for m in req.messages],
            "temperature": req.params.temperature,
            "top_p": req.params.top_p,
            "n": req.params.n,
            "max_tokens": req.params.max_tokens,
        }
        attempts = 0
        last_error: Exception | None = None
        started = time.monotonic()
        while attempts <= self.max_retries:
            if attempts:
                time.sleep(self.backoff * (2 ** (attempts - 1)))
            attempts += 1
            try:
                status, body = self._transport(url, headers, payload, self.timeout)
            except OSError as exc:
                last_error = exc
                continue
            if status in (401, 403):
                raise AuthenticationError(f"endpoint rejected credentials (HTTP {status})")
            if status in self._RETRYABLE_STATUS:
                last_error = GatewayError(f"HTTP {status}")
                continue
            if status >= 400:
                raise GatewayError(f"HTTP {status}: {body[:200]}")
            return self._parse_reply(body, req.params.n, time.monotonic() - started)
        raise TransportError(f"request failed: {last_error}", attempts=attempts)

    @staticmethod
    def _parse_reply(body: str, n: int, latency: float) -> LMResponse:
        try:
            doc = json.loads(body)
            choices = doc["choices"]
            completions = [str(c["message"]["content"]) for c in choices]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise MalformedReplyError("reply is not a chat-completions document", body) from None
        if len(completions) != n:
            raise MalformedReplyError(
                f"expected {n} completions, endpoint returned {len(completions)}", body
            )
        usage = doc.get("usage") if isinstance(doc.get("usage"), dict) else None
        return LMResponse(completions=tuple(completions), usage=usage, latency=latency)


class StubGateway:
    """Deterministic scripted gateway for tests and offline runs.

    The script maps a fingerprint to an ordered list of completions which are
    consumed in request order; asking for more than the script holds is an
    error rather than an invented reply. The script itself is immutable after
    load; the per-key read cursor is guarded by a lock.
    """

    def __init__(self, script: Mapping[str, Sequence[str]], model_name: str = "stub"):
        self._script: dict[str, tuple[str, ...]] = {}
        for key, completions in script.items():
            if not isinstance(completions, (list, tuple)) or not all(
                isinstance(c, str) for c in completions
            ):
                raise StubScriptError(f"stub entry {key!r} must be a list of strings")
            self._script[str(key)] = tuple(completions)
        self.model_name = model_name
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, model_name: str = "stub") -> "StubGateway":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise StubScriptError(f"stub file {path} must hold a JSON object")
        return cls(doc, model_name=model_name)

    def complete(self, req: LMRequest) -> LMResponse:
        key = req.fingerprint or message_fingerprint(req.messages[-1]["content"])
        with self._lock:
            if key not in self._script:
                raise StubScriptError(f"no stub script for fingerprint {key!r}")
            entries = self._script[key]
            pos = self._cursor.get(key, 0)
            n = req.params.n
            if pos + n > len(entries):
                raise StubScriptError(
                    f"stub script for {key!r} exhausted: need {n} more, {len(entries) - pos} left"
                )
            chunk = entries[pos : pos + n]
            self._cursor[key] = pos + n
        return LMResponse(completions=chunk, usage=None, latency=0.0)


def sample_answers(cq, k: int, params: SamplingParams, gateway) -> list[str]:
    """Draw exactly k completions for a composed question, batching via params.n."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out: list[str] = []
    while len(out) < k:
        n = min(params.n, k - len(out))
        req = LMRequest(
            messages=({"role": "user", "content": cq.text},),
            params=replace(params, n=n),
            fingerprint=cq.question_id,
        )
        out.extend(gateway.complete(req).completions)
    return out[:k]
