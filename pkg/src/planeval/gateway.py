"""Uniform access to judge backends with caching, rate limiting, retries,
and format re-prompting.

A backend is anything with `complete(request) -> str`. Production uses
HttpJudge (a minimal chat-shaped POST with a configurable response path);
tests and offline replays use ScriptedJudge, a deterministic pattern ->
response table over the user prompt.

Responses are cached verbatim, keyed by (model, prompt digest, seed), one
file per key under the cache root (or an in-memory dict when no directory
is configured). The cache is append-only; nothing is ever evicted.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .errors import BackendUnavailable, FormatUnrecoverable, QuotaExceeded, UnknownRole

CACHE_DIR_ENV = "PLANEVAL_CACHE_DIR"
API_KEY_ENV = "PLANEVAL_API_KEY"

_FORMAT_RETRY_MARKER = (
    "\n\n[format retry {n}] The previous response did not follow the required "
    "output format. Answer again, following the output format exactly."
)


@dataclass(frozen=True)
class DecodingConfig:
    temperature: float
    top_p: float
    max_tokens: int
    seed: int

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class JudgeRequest:
    system_prompt: str
    user_prompt: str
    model_id: str
    decoding: DecodingConfig

    def __post_init__(self):
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")

    def with_retry_marker(self, attempt: int) -> "JudgeRequest":
        return JudgeRequest(
            system_prompt=self.system_prompt,
            user_prompt=self.user_prompt + _FORMAT_RETRY_MARKER.format(n=attempt),
            model_id=self.model_id,
            decoding=self.decoding,
        )


def cache_key(request: JudgeRequest) -> str:
    """Stable digest over (model, system+user prompts, seed)."""
    payload = json.dumps(
        {
            "model": request.model_id,
            "system": request.system_prompt,
            "user": request.user_prompt,
            "seed": request.decoding.seed,
        },
        ensure_ascii=False,
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# decoding presets

EVALUATOR_ROLES = ("metric-eval", "one-shot-judge", "step-evaluator", "plan-optimizer")
GENERATOR_ROLES = ("query-generation", "plan-generation")


def presets(seed: int = 0) -> dict[str, DecodingConfig]:
    """Decoding configuration per role: evaluators decode deterministically,
    generators run at low temperature."""
    table: dict[str, DecodingConfig] = {}
    for role in EVALUATOR_ROLES:
        table[role] = DecodingConfig(temperature=0.0, top_p=1.0, max_tokens=4096, seed=seed)
    for role in GENERATOR_ROLES:
        table[role] = DecodingConfig(temperature=0.2, top_p=1.0, max_tokens=4096, seed=seed)
    return table


def preset_for(role: str, seed: int = 0) -> DecodingConfig:
    table = presets(seed)
    if role not in table:
        raise UnknownRole(f"no decoding preset for role {role!r}; known roles: {sorted(table)}")
    return table[role]


# ---------------------------------------------------------------------------
# backends


class Backend(Protocol):
    def complete(self, request: JudgeRequest) -> str: ...


class TransportError(Exception):
    """Retryable backend failure (connection problems, 5xx)."""


class QuotaError(Exception):
    """Retryable rate/quota signal (429)."""


@dataclass(frozen=True)
class ScriptedRule:
    pattern: str
    response: str


@dataclass(frozen=True)
class ScriptedJudge:
    """Deterministic judge: the first rule whose pattern matches the user
    prompt (regex search) wins; otherwise the default response. A pure
    function of the request, so replays are byte-stable."""

    rules: tuple[ScriptedRule, ...]
    default_response: str = ""

    def complete(self, request: JudgeRequest) -> str:
        for rule in self.rules:
            if re.search(rule.pattern, request.user_prompt, flags=re.DOTALL):
                return rule.response
        return self.default_response

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedJudge":
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = tuple(ScriptedRule(r["pattern"], r["response"]) for r in spec.get("rules", []))
        return cls(rules=rules, default_response=spec.get("default_response", ""))


@dataclass
class FunctionBackend:
    """Adapter turning any callable(request) -> str into a backend."""

    fn: Callable[[JudgeRequest], str]

    def complete(self, request: JudgeRequest) -> str:
        return self.fn(request)


@dataclass
class HttpJudge:
    """Minimal chat-style HTTP backend. The payload shape and the path to
    the response text are configuration, so provider differences stay out
    of the code."""

    url: str
    api_key: str | None = None
    response_path: tuple = ("choices", 0, "message", "content")
    extra_headers: dict = field(default_factory=dict)
    timeout: float = 120.0
    session: object | None = None  # requests.Session-compatible, injectable

    def _session(self):
        if self.session is None:
            import requests

            self.session = requests.Session()
        return self.session

    def complete(self, request: JudgeRequest) -> str:
        headers = {"Content-Type": "application/json", **self.extra_headers}
        key = self.api_key or os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "max_tokens": request.decoding.max_tokens,
            "seed": request.decoding.seed,
        }
        try:
            resp = self._session().post(self.url, json=payload, headers=headers, timeout=self.timeout)
        except Exception as exc:  # connection-level failure
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            raise QuotaError("rate limited (429)")
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendUnavailable(f"backend rejected request: {resp.status_code} {resp.text[:200]}")
        body = resp.json()
        node = body
        for part in self.response_path:
            node = node[part]
        if not isinstance(node, str):
            raise TransportError("response text not found at configured path")
        return node


# ---------------------------------------------------------------------------
# cache


class _MemoryCache:
    def __init__(self):
        self._data: dict[str, str] = {}
        self._lock = threading.Lock()

    def get(self, key: str) -> str | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, value: str, meta: dict) -> None:
        with self._lock:
            self._data.setdefault(key, value)


class _FileCache:
    """One file per cache key plus an append-only index manifest. Writes go
    through a temp file and an atomic rename."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "entries").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / "entries" / key

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if path.exists():
            return path.read_text(encoding="utf-8")
        return None

    def put(self, key: str, value: str, meta: dict) -> None:
        path = self._path(key)
        with self._lock:
            if path.exists():
                return
            tmp = path.with_suffix(".tmp")
            tmp.write_text(value, encoding="utf-8")
            os.replace(tmp, path)
            with open(self.root / "manifest.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"key": key, **meta}, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# rate limiting


class TokenBucket:
    """Per-model token bucket. rate is tokens/second; acquisition blocks
    (via the injected sleeper) until a token is available."""

    def __init__(self, rate: float, capacity: float | None = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


# ---------------------------------------------------------------------------
# gateway


@dataclass
class GatewayStats:
    cache_hits: int = 0
    cache_misses: int = 0
    backend_calls: int = 0
    transport_retries: int = 0
    format_retries: int = 0


class JudgeGateway:
    """The one shared-mutable component: safe to invoke from many workers.

    invoke() resolves a request from the cache when possible; on a miss it
    calls the backend with exponential backoff on transport errors, and when
    the caller's validator rejects a response it re-prompts (appending a
    deterministic format reminder so the retry is a distinct request/cache
    entry) up to max_format_retries times.
    """

    def __init__(
        self,
        backend: Backend,
        cache_dir: str | Path | None = None,
        rate_limit_per_model: dict[str, float] | None = None,
        max_concurrency: int = 8,
        max_transport_retries: int = 5,
        backoff_base: float = 1.0,
        backoff_factor: float = 2.0,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.backend = backend
        if cache_dir is None:
            cache_dir = os.environ.get(CACHE_DIR_ENV)
        self.cache = _FileCache(cache_dir) if cache_dir else _MemoryCache()
        self._rates = dict(rate_limit_per_model or {})
        self._buckets: dict[str, TokenBucket] = {}
        self._bucket_lock = threading.Lock()
        self._semaphore = threading.BoundedSemaphore(max_concurrency)
        self.max_concurrency = max_concurrency
        self.max_transport_retries = max_transport_retries
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self._sleep = sleep
        self._clock = clock
        self.stats = GatewayStats()
        self._stats_lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight_seen = 0

    def _bucket(self, model_id: str) -> TokenBucket | None:
        rate = self._rates.get(model_id)
        if rate is None:
            return None
        with self._bucket_lock:
            if model_id not in self._buckets:
                self._buckets[model_id] = TokenBucket(rate, clock=self._clock, sleep=self._sleep)
            return self._buckets[model_id]

    def _call_backend(self, request: JudgeRequest) -> str:
        bucket = self._bucket(request.model_id)
        delay = self.backoff_base
        last_quota = False
        for attempt in range(self.max_transport_retries + 1):
            if attempt:
                self._sleep(delay)
                delay *= self.backoff_factor
                with self._stats_lock:
                    self.stats.transport_retries += 1
            if bucket is not None:
                bucket.acquire()
            with self._semaphore:
                with self._stats_lock:
                    self._in_flight += 1
                    self.max_in_flight_seen = max(self.max_in_flight_seen, self._in_flight)
                try:
                    with self._stats_lock:
                        self.stats.backend_calls += 1
                    return self.backend.complete(request)
                except QuotaError:
                    last_quota = True
                except TransportError:
                    last_quota = False
                finally:
                    with self._stats_lock:
                        self._in_flight -= 1
        if last_quota:
            raise QuotaExceeded(f"quota retries exhausted for model {request.model_id!r}")
        raise BackendUnavailable(f"transport retries exhausted for model {request.model_id!r}")

    def _resolve(self, request: JudgeRequest) -> str:
        key = cache_key(request)
        cached = self.cache.get(key)
        if cached is not None:
            with self._stats_lock:
                self.stats.cache_hits += 1
            return cached
        with self._stats_lock:
            self.stats.cache_misses += 1
        raw = self._call_backend(request)
        self.cache.put(key, raw, {"model": request.model_id, "seed": request.decoding.seed})
        return raw

    def invoke(
        self,
        request: JudgeRequest,
        validator: Callable[[str], bool] | None = None,
        max_format_retries: int = 0,
    ) -> str:
        attempt = 0
        current = request
        while True:
            raw = self._resolve(current)
            if validator is None or validator(raw):
                return raw
            attempt += 1
            if attempt > max_format_retries:
                raise FormatUnrecoverable(
                    f"validator rejected all {attempt} response(s) for model {request.model_id!r}",
                    last_response=raw,
                )
            with self._stats_lock:
                self.stats.format_retries += 1
            current = request.with_retry_marker(attempt)
