"""Chat-completion transport: providers, retry/backoff, in-flight cap, record/replay.

Nothing else in the package touches the network. Offline runs swap the HTTP
transport for :class:`ReplayTransport` or :class:`MockTransport`.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol

import httpx

from .errors import (
    AuthError,
    ConfigError,
    FixtureMissing,
    GatewayError,
    HashMismatch,
    NetworkForbidden,
    ProviderError,
    RateLimited,
    Timeout,
)

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
FIXTURE_VERSION = 1


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 1.0
    seed: int | None = None
    provider: str = "openai"

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple((r, c) for r, c in self.messages))
        if not self.messages or self.messages[0][0] != "system":
            raise ConfigError("the first message must be the system prompt")
        for i, (role, _) in enumerate(self.messages):
            if role not in ROLES:
                raise ConfigError(f"unknown role {role!r}")
            if i > 0 and role == "system":
                raise ConfigError("only the first message may be a system message")
        if not 0 <= self.temperature <= 2:
            raise ConfigError(f"temperature {self.temperature} outside [0, 2]")

    def canonical(self) -> dict:
        # Provider is routing, not content; it is left out of the hash.
        return {
            "model": self.model,
            "messages": [[r, c] for r, c in self.messages],
            "temperature": repr(float(self.temperature)),
            "seed": self.seed,
        }

    @property
    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TransportPolicy:
    max_in_flight: int = 4
    retry_budget: int = 4
    backoff_base: float = 1.0
    backoff_multiplier: float = 2.0
    timeout: float = 60.0

    def __post_init__(self) -> None:
        if self.max_in_flight < 1 or self.retry_budget < 0:
            raise ConfigError("max_in_flight must be >= 1 and retry_budget >= 0")
        if self.backoff_base <= 0 or self.backoff_multiplier <= 0 or self.timeout <= 0:
            raise ConfigError("backoff and timeout values must be positive")

    def delay(self, attempt: int) -> float:
        return self.backoff_base * self.backoff_multiplier**attempt


class Transport(Protocol):
    def send(self, request: ChatRequest, timeout: float) -> str: ...


# --- HTTP providers -----------------------------------------------------------


@dataclass(frozen=True)
class Provider:
    dialect: str  # "chat" (chat-completions) or "messages"
    base_url: str
    key_env: str


PROVIDERS: dict[str, Provider] = {
    "openai": Provider("chat", "https://api.openai.com/v1", "OPENAI_API_KEY"),
    "anthropic": Provider("messages", "https://api.anthropic.com/v1", "ANTHROPIC_API_KEY"),
    "openrouter": Provider("chat", "https://openrouter.ai/api/v1", "OPENROUTER_API_KEY"),
    "gemini": Provider("chat", "https://generativelanguage.googleapis.com/v1beta/openai", "GEMINI_API_KEY"),
}


class HttpTransport:
    """One provider endpoint speaking either the chat-completions or the messages dialect."""

    def __init__(self, provider: str, base_url: str | None = None, client: httpx.Client | None = None,
                 max_tokens: int = 1024) -> None:
        try:
            self.provider = PROVIDERS[provider]
        except KeyError:
            raise ConfigError(f"unknown provider {provider!r}") from None
        self.name = provider
        self.base_url = (base_url or self.provider.base_url).rstrip("/")
        self._client = client
        self.max_tokens = max_tokens

    def api_key(self) -> str:
        key = os.environ.get(self.provider.key_env, "").strip()
        if not key:
            raise AuthError(f"{self.provider.key_env} is not set")
        return key

    def _build(self, request: ChatRequest, key: str) -> tuple[str, dict, dict]:
        if self.provider.dialect == "messages":
            payload = {
                "model": request.model,
                "system": request.messages[0][1],
                "messages": [{"role": r, "content": c} for r, c in request.messages[1:]],
                "max_tokens": self.max_tokens,
                "temperature": request.temperature,
            }
            headers = {"x-api-key": key, "anthropic-version": "2023-06-01"}
            return f"{self.base_url}/messages", payload, headers
        payload = {
            "model": request.model,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
        }
        if request.seed is not None and self.name == "openai":
            payload["seed"] = request.seed % (2**63)
        return f"{self.base_url}/chat/completions", payload, {"Authorization": f"Bearer {key}"}

    def _extract(self, body: dict) -> str:
        try:
            if self.provider.dialect == "messages":
                return "".join(b.get("text", "") for b in body["content"] if b.get("type") == "text")
            return body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise ProviderError(200, json.dumps(body)[:500]) from None

    def preflight(self, request: ChatRequest) -> None:
        self.api_key()

    def send(self, request: ChatRequest, timeout: float) -> str:
        key = self.api_key()
        url, payload, headers = self._build(request, key)
        client = self._client or httpx.Client()
        try:
            resp = client.post(url, json=payload, headers=headers, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise Timeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise ProviderError(503, f"transport error: {exc}") from exc
        finally:
            if self._client is None:
                client.close()
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code == 429:
            raise RateLimited(resp.text[:200])
        if resp.status_code == 408:
            raise Timeout(resp.text[:200])
        if resp.status_code >= 400:
            raise ProviderError(resp.status_code, resp.text)
        return self._extract(resp.json())


class RoutingTransport:
    """Dispatches on ``request.provider``."""

    def __init__(self, routes: Mapping[str, Transport]) -> None:
        self.routes = dict(routes)

    def _pick(self, request: ChatRequest) -> Transport:
        try:
            return self.routes[request.provider]
        except KeyError:
            raise ConfigError(f"no transport for provider {request.provider!r}") from None

    def preflight(self, request: ChatRequest) -> None:
        _preflight(self._pick(request), request)

    def send(self, request: ChatRequest, timeout: float) -> str:
        return self._pick(request).send(request, timeout)


def _preflight(transport: Transport, request: ChatRequest) -> None:
    check = getattr(transport, "preflight", None)
    if check is not None:
        check(request)


class PoisonedTransport:
    """Fails on any use; proves a code path stays offline."""

    def __init__(self) -> None:
        self.touched = 0

    def send(self, request: ChatRequest, timeout: float) -> str:
        self.touched += 1
        raise NetworkForbidden("network access is forbidden in this context")


# --- the gateway ------------------------------------------------------------


@dataclass
class GatewayStats:
    calls: int = 0
    attempts: int = 0
    retries: int = 0
    peak_in_flight: int = 0


class Gateway:
    """Routes requests to transports with retry/backoff and a global in-flight cap."""

    def __init__(
        self,
        transport: Transport | Mapping[str, Transport],
        policy: TransportPolicy | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if isinstance(transport, Mapping):
            transport = RoutingTransport(transport)
        self.transport: Transport = transport
        self.policy = policy or TransportPolicy()
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(self.policy.max_in_flight)
        self._lock = threading.Lock()
        self._in_flight = 0
        self.stats = GatewayStats()

    def _send_once(self, transport: Transport, request: ChatRequest) -> str:
        with self._slots:
            with self._lock:
                self._in_flight += 1
                self.stats.attempts += 1
                self.stats.peak_in_flight = max(self.stats.peak_in_flight, self._in_flight)
            try:
                return transport.send(request, self.policy.timeout)
            finally:
                with self._lock:
                    self._in_flight -= 1

    def chat_complete(self, request: ChatRequest) -> str:
        transport = self.transport
        _preflight(transport, request)  # e.g. missing credentials, before any network use
        with self._lock:
            self.stats.calls += 1
        attempt = 0
        while True:
            try:
                return self._send_once(transport, request)
            except GatewayError as exc:
                if not exc.transient or attempt >= self.policy.retry_budget:
                    raise
                delay = self.policy.delay(attempt)
                log.warning("transient %s on %s; retry %d in %.1fs", type(exc).__name__,
                            request.model, attempt + 1, delay)
                with self._lock:
                    self.stats.retries += 1
                attempt += 1
                self._sleep(delay)


def live_transports(base_urls: Mapping[str, str] | None = None) -> RoutingTransport:
    base_urls = base_urls or {}
    return RoutingTransport({name: HttpTransport(name, base_urls.get(name)) for name in PROVIDERS})


# --- record / replay --------------------------------------------------------


class Mode(str, enum.Enum):
    RECORD = "record"
    REPLAY = "replay"
    PASSTHROUGH = "passthrough"


def _entry(request: ChatRequest, response: str) -> dict:
    return {"hash": request.hash, "request": request.canonical(), "response": response}


def read_fixture(path: str | Path) -> tuple[dict, list[dict]]:
    """Parse a fixture file into its header and entries.

    Format: UTF-8 JSON lines. Line 1 is ``{"fixture_version": 1, "session": ...}``;
    every later line is ``{"hash", "request", "response"}`` where ``hash`` is
    the sha256 of the canonical request JSON.
    """
    path = Path(path)
    if not path.is_file():
        raise FixtureMissing(f"no fixture file at {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FixtureMissing(f"fixture {path} is empty")
    header = json.loads(lines[0])
    if header.get("fixture_version") != FIXTURE_VERSION:
        raise FixtureMissing(f"fixture {path} has unsupported version {header.get('fixture_version')!r}")
    return header, [json.loads(line) for line in lines[1:] if line.strip()]


class RecordingTransport:
    """Forwards to ``inner`` and keeps every (request, response) pair for :meth:`save`."""

    def __init__(self, inner: Transport, path: str | Path, session: str | None = None) -> None:
        self.inner = inner
        self.path = Path(path)
        self.session = session or self.path.stem
        self._entries: list[dict] = []
        self._lock = threading.Lock()

    def preflight(self, request: ChatRequest) -> None:
        _preflight(self.inner, request)

    def send(self, request: ChatRequest, timeout: float) -> str:
        response = self.inner.send(request, timeout)
        with self._lock:
            self._entries.append(_entry(request, response))
        return response

    def save(self) -> Path:
        # Stable order whatever the completion order was.
        entries = sorted(self._entries, key=lambda e: e["hash"])
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"fixture_version": FIXTURE_VERSION, "session": self.session}) + "\n")
            for e in entries:
                fh.write(json.dumps(e, ensure_ascii=False, sort_keys=True) + "\n")
        return self.path


class ReplayTransport:
    """Serves recorded responses; any unrecorded request is an error."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.header, entries = read_fixture(self.path)
        self._responses: dict[str, list[str]] = defaultdict(list)
        for e in entries:
            self._responses[e["hash"]].append(e["response"])
        self._served: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return sum(len(v) for v in self._responses.values())

    def send(self, request: ChatRequest, timeout: float) -> str:
        h = request.hash
        with self._lock:
            recorded = self._responses.get(h)
            if not recorded:
                raise HashMismatch(f"request {h[:12]} ({request.model}) is not in fixture {self.path.name}")
            k = self._served[h]
            if k >= len(recorded):
                raise HashMismatch(f"request {h[:12]} replayed more often than it was recorded")
            self._served[h] = k + 1
            return recorded[k]


def record_replay(
    session_id: str,
    mode: Mode | str,
    fixture_dir: str | Path = ".",
    inner: Transport | None = None,
) -> Transport:
    """Wrap ``inner`` for the given mode. Fixture file: ``<fixture_dir>/<session_id>.jsonl``."""
    mode = Mode(mode)
    path = Path(fixture_dir) / f"{session_id}.jsonl"
    if mode is Mode.REPLAY:
        return ReplayTransport(path)
    if inner is None:
        raise ConfigError(f"{mode.value} mode needs an inner transport")
    if mode is Mode.RECORD:
        return RecordingTransport(inner, path, session=session_id)
    return inner


# --- deterministic stand-in model --------------------------------------------


_COOPERATIVE = ("collective welfare", "mutual benefit")
_SELFISH = ("self payoff", "self-payoff", "individual point accumulation")


@dataclass
class MockTransport:
    """Offline stand-in for a chat model.

    Replies are a pure function of the request hash. Game prompts get a JSON
    decision whose level follows the persona sentence in the system prompt;
    anything else is treated as a sentiment-judge call and gets a score.
    """

    calls: int = field(default=0)

    def send(self, request: ChatRequest, timeout: float) -> str:
        self.calls += 1
        digest = hashlib.sha256(request.hash.encode()).digest()
        system = request.messages[0][1]
        if "'contribution'" in system:
            return self._decision(system, digest)
        return self._score(request.messages[-1][1], digest)

    @staticmethod
    def _decision(system: str, digest: bytes) -> str:
        lowered = system.lower()
        base = 5
        if any(s in lowered for s in _COOPERATIVE):
            base = 8
        elif any(s in lowered for s in _SELFISH):
            base = 2
        c = min(10, max(0, base + digest[0] % 5 - 2))
        if "'reasoning'" not in system:
            return json.dumps({"contribution": c})
        if c >= 6:
            why = f"Contributing {c} generously should keep the other player cooperative."
        elif c >= 4:
            why = f"Putting in {c} balances my payoff against the shared pool."
        else:
            why = f"Keeping {10 - c} points protects me if the other player free-rides."
        return json.dumps({"reasoning": why, "contribution": c})

    @staticmethod
    def _score(text: str, digest: bytes) -> str:
        lowered = text.lower()
        score = 0.5
        if "generous" in lowered or "cooperat" in lowered:
            score = 0.8
        elif "protect" in lowered or "free-ride" in lowered:
            score = 0.2
        jitter = (digest[1] % 3 - 1) / 10
        return f"{min(1.0, max(0.0, score + jitter)):.1f}"
