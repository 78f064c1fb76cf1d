"""Chat-completion backends for stage-1 emotion classification.

Remote calls go to an OpenAI-compatible chat endpoint with the credential
read from an environment variable.  Responses are cached on disk keyed by
a content hash of (model id, exact message sequence), so reruns are free
and deterministic.  Classification may fan out over a bounded thread pool
with token-bucket rate limiting; results are assembled in utterance order.

Outputs that fail to normalize to a known label are retried once (bypassing
the cache) and then fall back to ``neutral``, keeping the pipeline total;
the raw output and the fallback are recorded on the result.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Conversation
from .errors import BackendError, ConfigError
from .labels import EmotionLabel, normalize_label
from .errors import NormalizationError
from .prompts import PromptTemplate, build_prompt

REMOTE_KINDS = ("remote-zero-shot", "remote-few-shot", "remote-finetuned")


@dataclass
class ClassificationResult:
    index: int
    label: EmotionLabel
    raw_output: str
    backend_kind: str
    cache_hit: bool = False
    fallback_used: bool = False


class ResponseCache:
    """On-disk key-value store of raw completions, safe for concurrent use."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @staticmethod
    def key(model: str, messages: list[dict]) -> str:
        payload = json.dumps({"model": model, "messages": messages}, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def get(self, model: str, messages: list[dict]) -> str | None:
        path = self.directory / f"{self.key(model, messages)}.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))["response"]
        return None

    def put(self, model: str, messages: list[dict], response: str) -> None:
        path = self.directory / f"{self.key(model, messages)}.json"
        tmp = path.with_name(path.name + ".tmp")
        with self._lock:
            tmp.write_text(json.dumps({"response": response}), encoding="utf-8")
            tmp.replace(path)


class TokenBucket:
    """Minimal thread-safe rate limiter; rate <= 0 disables limiting."""

    def __init__(self, rate_per_second: float, capacity: float | None = None):
        self.rate = rate_per_second
        self.capacity = capacity if capacity is not None else max(rate_per_second, 1.0)
        self._tokens = self.capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


@dataclass
class ClassifierBackend:
    """Backend configuration for classify_conversation."""

    kind: str  # remote-zero-shot | remote-few-shot | remote-finetuned | local
    model: str
    endpoint: str = ""
    api_key_env: str = "ECPE_API_KEY"
    temperature: float = 0.0
    max_output_tokens: int = 4
    max_retries: int = 2
    max_concurrency: int = 4
    requests_per_second: float = 0.0  # 0 disables rate limiting
    #: test/injection hook: callable(messages) -> str replacing the HTTP call
    completion_fn: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in REMOTE_KINDS + ("local",):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind in REMOTE_KINDS and not (self.endpoint or self.completion_fn):
            raise ConfigError(f"backend kind {self.kind} requires an endpoint")

    def complete(self, messages: list[dict]) -> str:
        if self.completion_fn is not None:
            return self.completion_fn(messages)  # type: ignore[operator]
        return self._complete_http(messages)

    def _complete_http(self, messages: list[dict]) -> str:
        import httpx

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise BackendError(f"credential environment variable {self.api_key_env} is not set")
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = httpx.post(
                    self.endpoint,
                    json=body,
                    headers={"Authorization": f"Bearer {api_key}"},
                    timeout=60.0,
                )
                response.raise_for_status()
                return response.json()["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001 - rewrapped below
                last_error = exc
                time.sleep(min(2.0**attempt, 8.0))
        raise BackendError(f"chat completion failed after {self.max_retries + 1} attempts: {last_error}")


def _check_template_mode(backend: ClassifierBackend, template: PromptTemplate) -> None:
    if backend.kind == "remote-few-shot" and not template.exemplars:
        raise ConfigError("few-shot backend requires at least one exemplar")
    if backend.kind == "remote-zero-shot" and template.exemplars:
        raise ConfigError("zero-shot backend requires an exemplar-free template")


def classify_conversation(
    conv: Conversation,
    backend: ClassifierBackend,
    template: PromptTemplate,
    cache: ResponseCache | None = None,
) -> list[ClassificationResult]:
    """One emotion label per utterance, in order."""
    _check_template_mode(backend, template)
    bucket = TokenBucket(backend.requests_per_second)

    def classify_one(t: int) -> ClassificationResult:
        messages = build_prompt(template, conv, t)
        cache_hit = False
        raw = cache.get(backend.model, messages) if cache is not None else None
        if raw is not None:
            cache_hit = True
        else:
            bucket.acquire()
            try:
                raw = backend.complete(messages)
            except BackendError as exc:
                raise BackendError(
                    f"conversation {conv.id}, utterance {t}: {exc}"
                ) from exc
            if cache is not None:
                cache.put(backend.model, messages, raw)
        try:
            label = normalize_label(raw)
            fallback = False
        except NormalizationError:
            # retry once without the cache, then default to neutral
            try:
                bucket.acquire()
                retry_raw = backend.complete(messages)
                label = normalize_label(retry_raw)
                raw = retry_raw
                fallback = False
                if cache is not None:
                    cache.put(backend.model, messages, retry_raw)
            except (NormalizationError, BackendError):
                label = EmotionLabel.NEUTRAL
                fallback = True
        return ClassificationResult(
            index=t,
            label=label,
            raw_output=raw,
            backend_kind=backend.kind,
            cache_hit=cache_hit,
            fallback_used=fallback,
        )

    indices = range(1, len(conv) + 1)
    if backend.max_concurrency > 1 and len(conv) > 1:
        with ThreadPoolExecutor(max_workers=backend.max_concurrency) as pool:
            return list(pool.map(classify_one, indices))
    return [classify_one(t) for t in indices]
