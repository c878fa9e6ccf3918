"""Chat-completion client with retries, per-provider adapters and record/replay.

Requests are ``POST {base_url}/chat/completions`` with a JSON body holding
``model`` and ``messages``; the answer is read from
``choices[0].message.content``. The API key is read from an environment
variable and only ever travels in the ``Authorization`` header.

``RecordReplayTransport`` is an httpx transport that either forwards requests
and stores the exchanges on disk (record) or answers from that store (replay),
so the whole pipeline can run without network access.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

from .prompt import PromptBundle

log = logging.getLogger(__name__)

API_KEY_ENV = "KPM_LLM_API_KEY"
BASE_URL_ENV = "KPM_LLM_BASE_URL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
BACKOFF_BASE = 1.0
MAX_IN_FLIGHT = 4
EXCERPT_CHARS = 200


class GatewayError(RuntimeError):
    pass


class AuthError(GatewayError):
    """401/403 from the provider. Never retried."""


class TransportError(GatewayError):
    """Timeouts, connection failures, or retryable statuses that outlived the retry budget."""


class ParseError(GatewayError):
    def __init__(self, message: str, excerpt: str = ""):
        super().__init__(f"{message}; body excerpt: {excerpt!r}")
        self.excerpt = excerpt


class ReplayMissError(GatewayError):
    def __init__(self, key: str):
        super().__init__(f"replay store has no response for request {key[:16]}")
        self.key = key


@dataclass(frozen=True)
class ProviderConfig:
    model: str
    base_url: str = DEFAULT_BASE_URL
    provider: str = "generic"          # openai, deepseek, mistral, gemini or generic
    api_key_env: str = API_KEY_ENV     # name of the variable, never the key itself
    reasoning_enabled: bool = False
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.2
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.provider not in ADAPTERS:
            raise ValueError(f"unknown provider {self.provider!r}; choose from {sorted(ADAPTERS)}")

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"

    @classmethod
    def from_env(cls, model: str, env: Mapping[str, str] | None = None, **kw) -> "ProviderConfig":
        env = os.environ if env is None else env
        if "base_url" not in kw and env.get(BASE_URL_ENV):
            kw["base_url"] = env[BASE_URL_ENV]
        return cls(model=model, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


# Provider adapters adjust the request body; all share the chat-completion wire shape.

def _warn_no_reasoning(body: dict, cfg: ProviderConfig) -> dict:
    if cfg.reasoning_enabled:
        log.warning("provider %s has no reasoning toggle; reasoning_enabled ignored", cfg.provider)
    return body


def _reasoning_effort(body: dict, cfg: ProviderConfig) -> dict:
    if cfg.reasoning_enabled:
        body["reasoning_effort"] = "medium"
    return body


def _deepseek(body: dict, cfg: ProviderConfig) -> dict:
    # reasoning is a separate model on this provider
    if cfg.reasoning_enabled and body["model"] == "deepseek-chat":
        body["model"] = "deepseek-reasoner"
    return body


ADAPTERS: dict[str, Callable[[dict, ProviderConfig], dict]] = {
    "openai": _reasoning_effort,
    "gemini": _reasoning_effort,
    "deepseek": _deepseek,
    "mistral": _warn_no_reasoning,
    "generic": _warn_no_reasoning,
}


def build_request_body(bundle: PromptBundle, cfg: ProviderConfig) -> dict:
    body = {"model": cfg.model, "messages": bundle.messages(),
            "temperature": cfg.temperature, "max_tokens": cfg.max_tokens}
    return ADAPTERS[cfg.provider](body, cfg)


@dataclass(frozen=True)
class InsightText:
    text: str
    provider: str
    model: str
    latency_ms: float
    usage: dict | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("insight text must be non-empty")

    def to_dict(self) -> dict:
        return asdict(self)


def parse_completion(raw: bytes | str) -> tuple[str, dict | None]:
    text = raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw
    excerpt = text[:EXCERPT_CHARS]
    try:
        data = json.loads(text)
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ParseError(f"malformed completion response ({type(exc).__name__})", excerpt) from None
    if not isinstance(content, str) or not content.strip():
        raise ParseError("completion response has empty content", excerpt)
    usage = data.get("usage") if isinstance(data.get("usage"), dict) else None
    return content, usage


class LlmClient:
    """Thread-safe client; at most ``max_in_flight`` requests run at once."""

    def __init__(self, config: ProviderConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.perf_counter,
                 jitter: float = 0.1, seed: int | None = None,
                 max_in_flight: int = MAX_IN_FLIGHT, env: Mapping[str, str] | None = None):
        self.config = config
        self._env = os.environ if env is None else env
        self._http = httpx.Client(transport=transport, timeout=config.timeout)
        self._sleep = sleep
        self._clock = clock
        self._jitter = jitter
        self._rng = random.Random(seed)
        self._rng_lock = threading.Lock()
        self.max_in_flight = max_in_flight
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = self._env.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _delay(self, attempt: int) -> float:
        with self._rng_lock:
            u = self._rng.uniform(-1.0, 1.0)
        return BACKOFF_BASE * 2 ** attempt * (1.0 + self._jitter * u)

    def complete(self, bundle: PromptBundle) -> InsightText:
        cfg = self.config
        body = build_request_body(bundle, cfg)
        content = json.dumps(body, ensure_ascii=False).encode("utf-8")
        with self._slots:
            start = self._clock()
            for attempt in range(cfg.max_retries + 1):
                last = attempt == cfg.max_retries
                try:
                    resp = self._http.post(cfg.url, content=content, headers=self._headers())
                except httpx.TimeoutException:
                    problem = f"timeout after {cfg.timeout:g} s"
                except httpx.TransportError as exc:
                    problem = f"transport failure ({type(exc).__name__})"
                else:
                    status = resp.status_code
                    if status in (401, 403):
                        raise AuthError(f"provider rejected credentials (HTTP {status})")
                    if 200 <= status < 300:
                        text, usage = parse_completion(resp.content)
                        latency = (self._clock() - start) * 1000.0
                        return InsightText(text, cfg.provider, cfg.model, latency, usage)
                    if status != 429 and status < 500:
                        raise GatewayError(f"provider returned HTTP {status}: {resp.text[:EXCERPT_CHARS]!r}")
                    problem = f"HTTP {status}"
                if last:
                    raise TransportError(f"{problem}; gave up after {cfg.max_retries} retries")
                delay = self._delay(attempt)
                log.info("attempt %d failed (%s); retrying in %.2f s", attempt + 1, problem, delay)
                self._sleep(delay)
        raise AssertionError("unreachable")

    def complete_many(self, bundles: Sequence[PromptBundle]) -> list[InsightText]:
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(self.complete, bundles))


def complete(bundle: PromptBundle, config: ProviderConfig,
             transport: httpx.BaseTransport | None = None, **kw) -> InsightText:
    with LlmClient(config, transport, **kw) as client:
        return client.complete(bundle)


# ---- record / replay -------------------------------------------------------

def request_key(content: bytes) -> str:
    """sha256 of the canonical JSON form of a request body."""
    try:
        canon = json.dumps(json.loads(content), sort_keys=True, ensure_ascii=False,
                           separators=(",", ":")).encode("utf-8")
    except ValueError:
        canon = content
    return hashlib.sha256(canon).hexdigest()


@dataclass
class _Store:
    path: Path
    entries: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path) -> "_Store":
        if path.exists():
            data = json.loads(path.read_text(encoding="utf-8"))
            return cls(path, dict(data.get("entries", {})))
        return cls(path)

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        doc = {"version": 1, "entries": self.entries}
        tmp.write_text(json.dumps(doc, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
                       encoding="utf-8")
        os.replace(tmp, self.path)


class RecordReplayTransport(httpx.BaseTransport):
    """``mode="record"`` forwards to ``inner`` and persists; ``mode="replay"`` answers from disk."""

    def __init__(self, path: str | Path, mode: str = "replay",
                 inner: httpx.BaseTransport | None = None):
        if mode not in ("record", "replay"):
            raise ValueError("mode must be 'record' or 'replay'")
        self.path = Path(path)
        self.mode = mode
        if mode == "record":
            self.inner = inner or httpx.HTTPTransport()
        else:
            self.inner = None
            if not self.path.exists():
                raise FileNotFoundError(f"replay store not found: {self.path}")
        self.store = _Store.load(self.path)
        self._lock = threading.Lock()

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        content = request.read()
        key = request_key(content)
        if self.mode == "replay":
            entry = self.store.entries.get(key)
            if entry is None:
                raise ReplayMissError(key)
            return httpx.Response(entry["status"], headers={"content-type": "application/json"},
                                  content=entry["body"].encode("utf-8"), request=request)
        resp = self.inner.handle_request(request)
        body = resp.read()
        with self._lock:
            self.store.entries[key] = {"request": json.loads(content),
                                       "status": resp.status_code,
                                       "body": body.decode("utf-8", errors="replace")}
            self.store.save()
        return httpx.Response(resp.status_code, headers={"content-type": "application/json"},
                              content=body, request=request)


def record_replay(session_path: str | Path, mode: str = "replay",
                  inner: httpx.BaseTransport | None = None) -> RecordReplayTransport:
    return RecordReplayTransport(session_path, mode, inner)


def canned_transport(text: str, usage: dict | None = None) -> httpx.MockTransport:
    """A provider stand-in that answers every request with ``text``."""
    def handler(request: httpx.Request) -> httpx.Response:
        body = {"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}
        if usage is not None:
            body["usage"] = usage
        return httpx.Response(200, json=body)
    return httpx.MockTransport(handler)

