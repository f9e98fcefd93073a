"""Chat-completion access to OpenAI-compatible backends, with record/replay.

A Cassette maps request fingerprints to recorded replies.  Replay mode never
touches the network: a miss is an error.  Fingerprints cover the model name
and ordered message contents only, never credentials or endpoints, so a
cassette recorded against one deployment replays against any other.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

import httpx

from .errors import BackendConfigError, ContractError, ReplayMissError, TransportError


@dataclass(frozen=True)
class ModelConfig:
    endpoint: str = "http://localhost:8000/v1"
    model: str = "local-model"
    temperature: float = 0.0
    timeout: float = 120.0
    max_retries: int = 2
    credential_env: str = "PEERQDA_API_KEY"
    requests_per_minute: float | None = None
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.timeout <= 0:
            raise ContractError("timeout must be positive")
        if self.max_retries < 0:
            raise ContractError("max_retries must be >= 0")

    def to_json(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "model": self.model,
            "temperature": self.temperature,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "credential_env": self.credential_env,
            "requests_per_minute": self.requests_per_minute,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})


def fingerprint(messages: list[dict], config: ModelConfig) -> str:
    """Stable digest over (model name, ordered message contents)."""
    payload = json.dumps(
        [config.model, [[m["role"], m["content"]] for m in messages]],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class CassetteMode(str, Enum):
    RECORD = "record"
    REPLAY = "replay"


class Cassette:
    """Fingerprint-keyed store of recorded replies; one JSON file per run."""

    def __init__(self, mode: CassetteMode, entries: dict[str, str] | None = None,
                 path: Path | None = None):
        self.mode = mode
        self.entries = dict(entries or {})
        self.path = Path(path) if path else None
        self.lookups = 0
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path, mode: CassetteMode = CassetteMode.REPLAY) -> "Cassette":
        data = json.loads(Path(path).read_text("utf-8"))
        return cls(mode=mode, entries=data.get("entries", {}), path=Path(path))

    def save(self, path: str | Path | None = None) -> Path:
        target = Path(path) if path else self.path
        if target is None:
            raise ContractError("cassette has no path to save to")
        with self._lock:
            body = json.dumps(
                {"format": 1, "entries": dict(sorted(self.entries.items()))},
                indent=2,
                ensure_ascii=False,
            )
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(body + "\n", "utf-8")
        return target

    def lookup(self, fp: str) -> str | None:
        with self._lock:
            self.lookups += 1
            hit = self.entries.get(fp)
        if hit is None and self.mode is CassetteMode.REPLAY:
            raise ReplayMissError(fp)
        return hit

    def store(self, fp: str, reply: str) -> None:
        with self._lock:
            self.entries[fp] = reply


class _RateLimiter:
    """Token bucket serializing request bursts per gateway."""

    def __init__(self, per_minute: float):
        self.interval = 60.0 / per_minute
        self._lock = threading.Lock()
        self._next_at = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_at - now
            self._next_at = max(now, self._next_at) + self.interval
        if wait > 0:
            time.sleep(wait)


#: In-process transport signature, used by tests and the offline backend.
Transport = Callable[[list[dict], ModelConfig], str]


class ChatGateway:
    """complete() with cassette record/replay, retries, and rate limiting."""

    def __init__(
        self,
        config: ModelConfig,
        cassette: Cassette | None = None,
        transport: Transport | None = None,
    ):
        self.config = config
        self.cassette = cassette
        self.transport = transport
        self.live_calls = 0
        self._limiter = (
            _RateLimiter(config.requests_per_minute) if config.requests_per_minute else None
        )
        self._lock = threading.Lock()

    def complete(self, messages: list[dict]) -> str:
        if not messages:
            raise ContractError("messages must be non-empty")
        if self.cassette is not None:
            fp = fingerprint(messages, self.config)
            hit = self.cassette.lookup(fp)
            if hit is not None:
                return hit
            reply = self._live(messages)
            self.cassette.store(fp, reply)
            return reply
        return self._live(messages)

    def _live(self, messages: list[dict]) -> str:
        with self._lock:
            self.live_calls += 1
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if self._limiter:
                self._limiter.acquire()
            try:
                if self.transport is not None:
                    return self.transport(messages, self.config)
                return self._http_call(messages)
            except (TransportError, httpx.TransportError, httpx.TimeoutException) as e:
                last_error = e
                if attempt < self.config.max_retries:
                    time.sleep(self.config.backoff_base * (2**attempt))
        raise TransportError(f"backend unreachable after {self.config.max_retries + 1} attempts: {last_error}")

    def _http_call(self, messages: list[dict]) -> str:
        headers = {"Content-Type": "application/json"}
        credential = os.environ.get(self.config.credential_env, "")
        if credential:
            headers["Authorization"] = f"Bearer {credential}"
        payload = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        }
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        try:
            response = httpx.post(url, json=payload, headers=headers, timeout=self.config.timeout)
        except httpx.TimeoutException as e:
            raise TransportError(f"timeout after {self.config.timeout}s") from e
        if 400 <= response.status_code < 500:
            raise BackendConfigError(f"backend rejected request: HTTP {response.status_code}")
        if response.status_code >= 500:
            raise TransportError(f"backend error: HTTP {response.status_code}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as e:
            raise TransportError(f"malformed completion response: {e}") from e


def replayed(cassette_path: str | Path, config: ModelConfig | None = None) -> ChatGateway:
    """Gateway bound to a replay cassette; guaranteed zero network activity."""
    cassette = Cassette.load(cassette_path, CassetteMode.REPLAY)
    return ChatGateway(config or ModelConfig(), cassette=cassette)
