"""Label-conditioned candidate generators: an offline file source and a
chat-completions HTTP client with an on-disk cache and rate limiting."""
from __future__ import annotations

import collections
import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests

from .corpus import ClassLabel, LabelVocab, Origin, TextRecord, load_jsonl, normalize
from .pate_kd import PrivacyViolation

log = logging.getLogger(__name__)

LABEL_PLACEHOLDER = "[LABEL]"
DEFAULT_TEMPLATE = (
    "You are a professional medical transcriber. Please generate a medical transcription "
    "for [LABEL] and do not reveal the patient's name. The text length of medical "
    "transcription is approximately 400 words and at least 200 words."
)


class GenerationError(RuntimeError):
    pass


class SourceExhausted(GenerationError):
    def __init__(self, label: str, wanted: int, available: int):
        self.label = label
        super().__init__(f"candidate source exhausted for label {label!r}: wanted {wanted}, {available} left")


class TransportError(GenerationError):
    def __init__(self, message: str, status: int | None = None):
        self.status = status
        super().__init__(f"{message} (last status: {status})")


class ShortResponseError(GenerationError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    label: ClassLabel
    count: int
    template: str = DEFAULT_TEMPLATE
    target_words: int = 400
    min_words: int = 200

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.template.count(LABEL_PLACEHOLDER) != 1:
            raise ValueError(f"template must contain exactly one {LABEL_PLACEHOLDER} placeholder")

    def prompt(self) -> str:
        return self.template.replace(LABEL_PLACEHOLDER, self.label.name)

    def template_digest(self) -> str:
        return hashlib.sha256(self.template.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SourceConfig:
    kind: str = "file"  # "file" | "http"
    path: str | None = None
    endpoint: str | None = None
    model: str = "gpt-3.5-turbo"
    api_key_env: str | None = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    cache_dir: str | None = None
    rate_limit: int = 60  # requests per minute
    max_tokens: int = 1024
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in ("file", "http"):
            raise ValueError(f"source kind must be 'file' or 'http', got {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ValueError("file source needs a corpus path")
        if self.kind == "http":
            if not self.endpoint:
                raise ValueError("http source needs an endpoint")
            if not self.api_key_env:
                raise ValueError("http source needs the name of the environment variable holding the key")
            if not self.cache_dir:
                raise ValueError("http source needs a cache directory")


def as_synthetic(r: TextRecord) -> TextRecord:
    if r.origin is Origin.PRIVATE:
        raise PrivacyViolation(f"record {r.id!r} is private and cannot be a candidate")
    return TextRecord(r.id, normalize(r.text), r.label, Origin.SYNTHETIC)


class FileSource:
    """Serves stored candidates per label in file order; single consumer."""

    def __init__(self, records: Sequence[TextRecord]):
        self._queues: dict[int, collections.deque] = collections.defaultdict(collections.deque)
        for r in records:
            self._queues[r.label.index].append(as_synthetic(r))

    @classmethod
    def from_jsonl(cls, path, vocab: LabelVocab) -> "FileSource":
        return cls(load_jsonl(path, vocab))

    def available(self, label: ClassLabel) -> int:
        return len(self._queues[label.index])

    def next_batch(self, request: GenerationRequest) -> list[TextRecord]:
        q = self._queues[request.label.index]
        if len(q) < request.count:
            raise SourceExhausted(request.label.name, request.count, len(q))
        return [q.popleft() for _ in range(request.count)]

    def advance(self, request: GenerationRequest):
        """Skip ``request.count`` records consumed by an earlier process."""
        self.next_batch(request)


class RateLimiter:
    """At most ``limit`` acquisitions in any window of ``window`` seconds."""

    def __init__(self, limit: int, window: float = 60.0, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if limit < 1:
            raise ValueError(f"rate limit must be >= 1, got {limit}")
        self.limit = limit
        self.window = window
        self.clock = clock
        self.sleep = sleep
        self._stamps: collections.deque[float] = collections.deque()

    def acquire(self):
        now = self.clock()
        while self._stamps and now - self._stamps[0] >= self.window:
            self._stamps.popleft()
        if len(self._stamps) >= self.limit:
            self.sleep(self._stamps[0] + self.window - now)
            now = self.clock()
            while self._stamps and now - self._stamps[0] >= self.window:
                self._stamps.popleft()
        self._stamps.append(now)


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class HttpSource:
    """Chat-completions client; one generated text per request.

    Responses are cached as one JSON file per sample keyed by
    (template digest, label, ordinal), so a rerun replays from disk.
    """

    def __init__(self, config: SourceConfig, session: requests.Session | None = None,
                 limiter: RateLimiter | None = None):
        self.config = config
        self.session = session or requests.Session()
        self.limiter = limiter or RateLimiter(config.rate_limit)
        self.cache_dir = Path(config.cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._next_ordinal: dict[tuple[str, int], int] = collections.defaultdict(int)
        self.network_calls = 0

    def _cache_path(self, request: GenerationRequest, ordinal: int) -> Path:
        key = f"{request.template_digest()}|{request.label.name}|{ordinal}"
        return self.cache_dir / (hashlib.sha256(key.encode()).hexdigest() + ".json")

    def _post(self, prompt: str) -> str:
        key = os.environ.get(self.config.api_key_env or "", "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.config.max_tokens,
            "temperature": self.config.temperature,
        }
        self.limiter.acquire()
        self.network_calls += 1
        resp = self.session.post(self.config.endpoint, json=body, headers=headers, timeout=self.config.timeout)
        if resp.status_code != 200:
            raise TransportError("chat completion request failed", resp.status_code)
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError):
            raise TransportError("malformed chat completion response", resp.status_code) from None

    def _generate(self, request: GenerationRequest) -> str:
        status = None
        short = False
        for attempt in range(self.config.max_retries + 1):
            try:
                text = self._post(request.prompt())
            except TransportError as exc:
                status, short = exc.status, False
                log.warning("attempt %d for %s failed with status %s", attempt + 1, request.label.name, status)
                continue
            except requests.RequestException as exc:
                status, short = None, False
                log.warning("attempt %d for %s failed: %s", attempt + 1, request.label.name, exc)
                continue
            words = len(normalize(text).split())
            if words >= request.min_words:
                return text
            short = True
            log.info("rejected %d-word response for %s (minimum %d)", words, request.label.name, request.min_words)
        if short:
            raise ShortResponseError(
                f"no response of >= {request.min_words} words for {request.label.name!r} "
                f"after {self.config.max_retries + 1} attempts"
            )
        raise TransportError(f"generation for {request.label.name!r} failed after retries", status)

    def advance(self, request: GenerationRequest):
        """Skip ``request.count`` ordinals consumed by an earlier process."""
        self._next_ordinal[(request.template_digest(), request.label.index)] += request.count

    def next_batch(self, request: GenerationRequest) -> list[TextRecord]:
        slot = (request.template_digest(), request.label.index)
        out = []
        for _ in range(request.count):
            ordinal = self._next_ordinal[slot]
            path = self._cache_path(request, ordinal)
            if path.exists():
                text = json.loads(path.read_text(encoding="utf-8"))["text"]
            else:
                text = self._generate(request)
                entry = {"label": request.label.name, "ordinal": ordinal, "model": self.config.model,
                         "template_sha256": slot[0], "text": text}
                _atomic_write(path, json.dumps(entry, ensure_ascii=False, sort_keys=True))
            self._next_ordinal[slot] = ordinal + 1
            rid = f"syn-{slot[0][:8]}-{request.label.index:03d}-{ordinal:06d}"
            out.append(TextRecord(rid, normalize(text), request.label, Origin.SYNTHETIC))
        return out


def make_source(config: SourceConfig, vocab: LabelVocab, **kwargs):
    if config.kind == "file":
        return FileSource.from_jsonl(config.path, vocab)
    return HttpSource(config, **kwargs)


def next_batch(request: GenerationRequest, source: FileSource | HttpSource) -> list[TextRecord]:
    return source.next_batch(request)
