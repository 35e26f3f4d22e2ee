"""Provider-agnostic chat-completion client with scripted and replay backends.

Exactly one backend drives a client: a generic HTTP chat endpoint (bearer token
via the `NL2SQL_PO_API_KEY` env var), a deterministic scripted oracle, or a
content-addressed replay cache. Live calls can be recorded into the cache so CI
runs replay them without secrets.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

logger = logging.getLogger(__name__)

API_KEY_ENV = "NL2SQL_PO_API_KEY"

# Decoding defaults: deterministic SQL generation, creative proposals.
DEFAULT_SQL_TEMPERATURE = 0.0
DEFAULT_PROPOSER_TEMPERATURE = 0.7


class LLMClientError(Exception):
    """Base error for client and backend failures."""


class AuthenticationError(LLMClientError):
    """HTTP auth failure or missing credential; never retried."""


class RetryExhaustedError(LLMClientError):
    """Transient transport failures persisted past the retry cap."""


class ReplayMissError(LLMClientError):
    """Request not present in the replay cache (strict replay mode)."""


class PolicyError(LLMClientError):
    """A scripted policy could not interpret the prompt it was given."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


@dataclass(frozen=True)
class CompletionRequest:
    prompt_text: str
    temperature: float = DEFAULT_SQL_TEMPERATURE
    max_output_tokens: int = 1024
    model_id: str = "default"
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt_text:
            raise LLMClientError("prompt_text must be non-empty")
        if self.temperature < 0:
            raise LLMClientError(f"temperature must be ≥ 0, got {self.temperature}")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    latency: float
    est_prompt_tokens: int
    est_output_tokens: int
    source: str  # live | replay | scripted


def estimate_tokens(text: str) -> int:
    """Cheap deterministic token estimate: ⌈utf-8 bytes / 4⌉."""
    if not text:
        return 0
    return math.ceil(len(text.encode("utf-8")) / 4)


def cache_key(model_id: str, temperature: float, prompt_text: str) -> str:
    material = json.dumps(
        {"model_id": model_id, "temperature": temperature, "prompt_text": prompt_text},
        sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class TokenBucket:
    """Token-bucket admission control for live calls (requests per minute)."""

    def __init__(self, requests_per_minute: float, burst: float = 1.0,
                 clock=time.monotonic, sleeper=time.sleep):
        if requests_per_minute <= 0:
            raise LLMClientError("requests_per_minute must be positive")
        self._rate = requests_per_minute / 60.0
        self._burst = burst
        self._tokens = burst
        self._clock = clock
        self._sleeper = sleeper
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            self._tokens = min(self._burst, self._tokens + (now - self._last) * self._rate)
            self._last = now
            if self._tokens < 1.0:
                wait = (1.0 - self._tokens) / self._rate
                self._sleeper(wait)
                self._last = self._clock()
                self._tokens = 1.0
            self._tokens -= 1.0


def _default_transport(url: str, payload: dict, headers: dict, timeout: float):
    import requests

    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    return resp.status_code, resp.text


class HttpBackend:
    """Generic HTTP chat-completion endpoint (OpenAI-style wire format)."""

    kind = "live"

    def __init__(self, endpoint_url: str, api_key_env: str = API_KEY_ENV,
                 timeout: float = 60.0, max_retries: int = 4,
                 backoff_base: float = 0.5, transport=None, sleeper=time.sleep):
        self.endpoint_url = endpoint_url
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.transport = transport or _default_transport
        self.sleeper = sleeper

    def complete(self, request: CompletionRequest) -> tuple[str, float, str]:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise AuthenticationError(f"environment variable {self.api_key_env} is not set")
        payload = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {api_key}",
                   "Content-Type": "application/json"}
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.sleeper(self.backoff_base * 2 ** (attempt - 1))
            start = time.perf_counter()
            try:
                status, body = self.transport(self.endpoint_url, payload, headers,
                                              self.timeout)
            except Exception as exc:  # transport-level failure: retry
                last_error = exc
                logger.warning("transport failure (attempt %d): %s", attempt + 1, exc)
                continue
            latency = time.perf_counter() - start
            if status in (401, 403):
                raise AuthenticationError(f"HTTP {status} from {self.endpoint_url}")
            if status == 200:
                try:
                    text = json.loads(body)["choices"][0]["message"]["content"]
                except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
                    raise LLMClientError(f"malformed completion response: {exc}") from exc
                return text, latency, "live"
            last_error = LLMClientError(f"HTTP {status} from {self.endpoint_url}")
            logger.warning("HTTP %s (attempt %d)", status, attempt + 1)
        raise RetryExhaustedError(
            f"gave up after {self.max_retries + 1} attempts: {last_error}")


class ScriptedBackend:
    """Deterministic backend: response is a pure function of the prompt text."""

    kind = "scripted"

    def __init__(self, policy: Callable[[str], str]):
        self.policy = policy

    def complete(self, request: CompletionRequest) -> tuple[str, float, str]:
        return self.policy(request.prompt_text), 0.0, "scripted"


def scripted_oracle(policy: Callable[[str], str]) -> ScriptedBackend:
    """Wrap a deterministic prompt→text policy as a client backend."""
    return ScriptedBackend(policy)


class ReplayBackend:
    """Serves completions from a directory of recorded cache entries."""

    kind = "replay"

    def __init__(self, cache_dir):
        self.cache_dir = Path(cache_dir)

    def complete(self, request: CompletionRequest) -> tuple[str, float, str]:
        key = cache_key(request.model_id, request.temperature, request.prompt_text)
        path = self.cache_dir / f"{key}.json"
        if not path.is_file():
            raise ReplayMissError(f"no cached completion for key {key} "
                                  f"(tag={request.tag!r})")
        entry = json.loads(path.read_text(encoding="utf-8"))
        return entry["text"], float(entry.get("latency", 0.0)), "replay"


class LLMClient:
    """Chat-completion client over exactly one backend, with optional recording.

    Safe for concurrent calls; a token-bucket limiter serializes admission to
    the live backend, scripted and replay backends are contention-free.
    """

    def __init__(self, backend, model_id: str = "default",
                 temperature: float = DEFAULT_SQL_TEMPERATURE,
                 max_output_tokens: int = 1024, cache_dir=None, record: bool = False,
                 requests_per_minute: float | None = None,
                 token_estimator: Callable[[str], int] = estimate_tokens):
        self.backend = backend
        self.model_id = model_id
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.record = record
        if record and self.cache_dir is None:
            raise LLMClientError("recording requires a cache_dir")
        self._limiter = (TokenBucket(requests_per_minute)
                         if requests_per_minute and backend.kind == "live" else None)
        self._estimator = token_estimator
        self._stats: dict[str, dict[str, int]] = {}
        self._stats_lock = threading.Lock()

    def request(self, prompt_text: str, *, temperature: float | None = None,
                max_output_tokens: int | None = None, tag: str = "") -> CompletionRequest:
        return CompletionRequest(
            prompt_text=prompt_text,
            temperature=self.temperature if temperature is None else temperature,
            max_output_tokens=self.max_output_tokens if max_output_tokens is None
            else max_output_tokens,
            model_id=self.model_id,
            tag=tag,
        )

    def complete(self, request: CompletionRequest) -> CompletionResult:
        if self._limiter is not None:
            self._limiter.acquire()
        text, latency, source = self.backend.complete(request)
        text = text.rstrip()
        result = CompletionResult(
            text=text,
            latency=latency,
            est_prompt_tokens=self._estimator(request.prompt_text),
            est_output_tokens=self._estimator(text),
            source=source,
        )
        if self.record and source != "replay":
            self._write_cache_entry(request, result)
        self._track(request, result)
        return result

    def complete_text(self, prompt_text: str, *, temperature: float | None = None,
                      max_output_tokens: int | None = None,
                      tag: str = "") -> CompletionResult:
        return self.complete(self.request(prompt_text, temperature=temperature,
                                          max_output_tokens=max_output_tokens, tag=tag))

    def estimate_tokens(self, text: str) -> int:
        return self._estimator(text)

    @property
    def stats(self) -> dict[str, dict[str, int]]:
        with self._stats_lock:
            return {tag: dict(v) for tag, v in self._stats.items()}

    def _track(self, request: CompletionRequest, result: CompletionResult) -> None:
        with self._stats_lock:
            bucket = self._stats.setdefault(
                request.tag, {"calls": 0, "prompt_tokens": 0, "output_tokens": 0})
            bucket["calls"] += 1
            bucket["prompt_tokens"] += result.est_prompt_tokens
            bucket["output_tokens"] += result.est_output_tokens

    def _write_cache_entry(self, request: CompletionRequest,
                           result: CompletionResult) -> None:
        key = cache_key(request.model_id, request.temperature, request.prompt_text)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        entry = {
            "model_id": request.model_id,
            "temperature": request.temperature,
            "prompt_text": request.prompt_text,
            "text": result.text,
            "latency": result.latency,
        }
        tmp = self.cache_dir / f"{key}.json.tmp"
        tmp.write_text(json.dumps(entry, sort_keys=True, ensure_ascii=False, indent=2),
                       encoding="utf-8")
        os.replace(tmp, self.cache_dir / f"{key}.json")


# --- scripted oracle policies -------------------------------------------------

_AGGREGATE_RE = re.compile(r"\b(COUNT|SUM|AVG|MIN|MAX)\s*\(|\bGROUP\s+BY\b",
                           re.IGNORECASE)
_JOIN_RE = re.compile(r"\bJOIN\b", re.IGNORECASE)

WRONG_SQL = "SELECT 'wrong-answer'"


def construct_tag(sql: str) -> str:
    """Classify a statement by its dominant construct: join, aggregate, or filter."""
    if _JOIN_RE.search(sql):
        return "join"
    if _AGGREGATE_RE.search(sql):
        return "aggregate"
    return "filter"


def _prompt_sections(prompt_text: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in prompt_text.splitlines():
        stripped = line.strip()
        if stripped in ("#Instruction", "#Exemplars", "#Query"):
            current = sections.setdefault(stripped[1:].lower(), [])
            continue
        if current is not None:
            current.append(line)
    return sections


def _query_nlq(sections: dict[str, list[str]]) -> str:
    for line in sections.get("query", []):
        if line.startswith("NLQ: "):
            return line[len("NLQ: "):].strip()
    raise PolicyError("missing-query-nlq", "prompt has no parsable `#Query` NLQ line")


def _exemplar_sqls(sections: dict[str, list[str]]) -> list[str]:
    return [line[len("SQL: "):].strip()
            for line in sections.get("exemplars", []) if line.startswith("SQL: ")]


def fixed_response_policy(text: str) -> Callable[[str], str]:
    """Answer every prompt with the same text."""
    def policy(_prompt: str) -> str:
        return text
    return policy


class GoldLookupPolicy:
    """Answer the gold SQL iff the prompt exemplars cover the query's construct tag.

    The policy resolves the `#Query` NLQ against a known corpus; when no
    exemplar in the prompt shares the query's tag it answers a deliberately
    wrong (but executable) statement.
    """

    def __init__(self, items, wrong_sql: str = WRONG_SQL):
        # items: iterable of objects with .nlq and .gold_sql (e.g. Exemplar)
        self.by_nlq = {it.nlq: (it.gold_sql, construct_tag(it.gold_sql))
                       for it in items}
        self.wrong_sql = wrong_sql

    def __call__(self, prompt_text: str) -> str:
        sections = _prompt_sections(prompt_text)
        nlq = _query_nlq(sections)
        if nlq not in self.by_nlq:
            raise PolicyError("unknown-query", f"query NLQ not in oracle corpus: {nlq!r}")
        gold_sql, tag = self.by_nlq[nlq]
        covered = {construct_tag(sql) for sql in _exemplar_sqls(sections)}
        return gold_sql if tag in covered else self.wrong_sql


def default_radii(n: int, zero_fraction: float = 0.42,
                  max_radius: int = 16) -> list[int]:
    """Tolerance radii for a k-dependent oracle: a block of exact-optimum items
    plus a small-radius-heavy graded tail, so any evaluation subset yields a
    strict peak at k_opt with usable gradient everywhere else."""
    n_zero = round(n * zero_fraction)
    tail_size = max(0, n - n_zero)
    tail = [max(1, math.ceil(max_radius * ((i + 1) / tail_size) ** 1.7))
            for i in range(tail_size)]
    return [0] * n_zero + tail


class KDependentPolicy:
    """Accuracy surface driven only by the exemplar count k in the prompt.

    Each known item carries a tolerance radius: the item is answered correctly
    iff |k − k_opt| ≤ radius. Any evaluation subset therefore scores highest at
    exactly k = k_opt, with accuracy falling off as k moves away.
    """

    def __init__(self, items, k_opt: int = 5, radii: list[int] | None = None,
                 wrong_sql: str = WRONG_SQL):
        items = list(items)
        if radii is None:
            radii = default_radii(len(items))
        if len(radii) != len(items):
            raise LLMClientError("radii must match the number of items")
        self.k_opt = k_opt
        self.wrong_sql = wrong_sql
        self.by_nlq = {it.nlq: (it.gold_sql, radius)
                       for it, radius in zip(items, radii)}

    def expected_accuracy(self, k: int, nlqs=None) -> float:
        """Brute-force surface value over `nlqs` (default: all known items)."""
        pool = [self.by_nlq[n][1] for n in (nlqs or self.by_nlq)]
        hits = sum(1 for radius in pool if abs(k - self.k_opt) <= radius)
        return hits / len(pool)

    def __call__(self, prompt_text: str) -> str:
        sections = _prompt_sections(prompt_text)
        nlq = _query_nlq(sections)
        if nlq not in self.by_nlq:
            raise PolicyError("unknown-query", f"query NLQ not in oracle corpus: {nlq!r}")
        gold_sql, radius = self.by_nlq[nlq]
        k = len(_exemplar_sqls(sections))
        return gold_sql if abs(k - self.k_opt) <= radius else self.wrong_sql
