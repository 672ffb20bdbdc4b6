"""Model access: chat-completions HTTP client, content-addressed cache, and an offline mock."""

from __future__ import annotations

import base64
import hashlib
import json
import mimetypes
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import requests

DEFAULT_REFUSAL = "I'm sorry, I can't help with that."

_MAGIC = (
    (b"\x89PNG\r\n\x1a\n", "image/png"),
    (b"\xff\xd8\xff", "image/jpeg"),
    (b"GIF87a", "image/gif"),
    (b"GIF89a", "image/gif"),
)
SUPPORTED_MEDIA_TYPES = {"image/png", "image/jpeg", "image/gif", "image/webp"}
# older platform tables lack webp
mimetypes.add_type("image/webp", ".webp")


class QueryFailed(RuntimeError):
    """A query gave up: exhausted retries, a non-retryable status, or an unreadable image."""

    def __init__(self, message: str, status: int | None = None, attempts: int = 0) -> None:
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class CacheMiss(QueryFailed):
    pass


@dataclass(frozen=True)
class ImagePayload:
    data: bytes
    media_type: str
    ref: str = ""

    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode('ascii')}"


def sniff_media_type(data: bytes, ref: str = "") -> str | None:
    for magic, mt in _MAGIC:
        if data.startswith(magic):
            return mt
    if data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return "image/webp"
    guessed, _ = mimetypes.guess_type(ref)
    return guessed if guessed in SUPPORTED_MEDIA_TYPES else None


def load_image(ref: str, timeout: float = 30.0) -> ImagePayload:
    """Read image bytes from a path or an http(s) URL."""
    try:
        if re.match(r"^https?://", ref):
            resp = requests.get(ref, timeout=timeout)
            resp.raise_for_status()
            data = resp.content
        else:
            data = Path(ref).read_bytes()
    except (OSError, requests.RequestException) as exc:
        raise QueryFailed(f"cannot read image {ref!r}: {exc}") from exc
    media_type = sniff_media_type(data, ref)
    if media_type is None:
        raise QueryFailed(f"unsupported image type for {ref!r}")
    return ImagePayload(data, media_type, ref)


def cache_key(model_id: str, prompt: str, image: bytes | None) -> str:
    """sha256 over length-prefixed fields, so no two distinct inputs share a byte stream."""
    h = hashlib.sha256()
    for part in (model_id.encode("utf-8"), prompt.encode("utf-8"), image or b""):
        h.update(len(part).to_bytes(8, "big"))
        h.update(part)
    return h.hexdigest()


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    base_backoff: float = 1.0
    max_backoff: float = 60.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def delay(self, attempt: int) -> float:
        return min(self.max_backoff, self.base_backoff * 2 ** (attempt - 1))


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_id: str
    auth_env: str | None = "OPENAI_API_KEY"
    max_parallel: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    request_timeout: float = 120.0
    temperature: float = 0.0
    max_tokens: int = 4096
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"

    def __post_init__(self) -> None:
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")

    @property
    def url(self) -> str:
        base = self.base_url.rstrip("/")
        return base if base.endswith("/chat/completions") else base + "/chat/completions"


@dataclass(frozen=True)
class QueryResult:
    text: str
    usage: dict[str, int] | None = None
    attempt_count: int = 1
    cached: bool = False
    cache_key: str = ""


@dataclass(frozen=True)
class QueryRecord:
    cache_key: str
    model_id: str
    prompt: str
    image_ref: str
    response_text: str
    usage: dict[str, int] | None
    timestamp: str
    attempt_count: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "QueryRecord":
        return cls(**{k: d.get(k) for k in cls.__dataclass_fields__})  # type: ignore[arg-type]


class Backend(Protocol):
    model_id: str

    def query(self, prompt: str, image: ImagePayload | None, *, sample_id: str = "", tag: str = "") -> QueryResult:
        ...


def _parse_usage(raw: Mapping[str, Any] | None) -> dict[str, int] | None:
    if not raw:
        return None
    inp = raw.get("prompt_tokens", raw.get("input_tokens"))
    out = raw.get("completion_tokens", raw.get("output_tokens"))
    if inp is None and out is None:
        return None
    return {"input_tokens": int(inp or 0), "output_tokens": int(out or 0)}


def _message_text(payload: Mapping[str, Any]) -> str:
    content = payload["choices"][0]["message"]["content"]
    if isinstance(content, list):
        return "".join(p.get("text", "") for p in content if isinstance(p, dict))
    return content or ""


# one limiter per (url, model) shared by every client in the process
_LIMITERS: dict[tuple[str, str], threading.BoundedSemaphore] = {}
_LIMITERS_LOCK = threading.Lock()


def _limiter(endpoint: ModelEndpoint) -> threading.BoundedSemaphore:
    key = (endpoint.url, endpoint.model_id)
    with _LIMITERS_LOCK:
        if key not in _LIMITERS:
            _LIMITERS[key] = threading.BoundedSemaphore(endpoint.max_parallel)
        return _LIMITERS[key]


class HttpBackend:
    """Chat-completions client. Retries 429, 5xx and transport errors with exponential backoff."""

    def __init__(self, endpoint: ModelEndpoint, session: requests.Session | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        self.endpoint = endpoint
        self.model_id = endpoint.model_id
        self.session = session or requests.Session()
        self.sleep = sleep
        self.network_calls = 0
        self._count_lock = threading.Lock()
        self._limiter = _limiter(endpoint)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.endpoint.auth_env:
            key = os.environ.get(self.endpoint.auth_env)
            if key:
                headers[self.endpoint.auth_header] = f"{self.endpoint.auth_scheme} {key}".strip()
        return headers

    def _body(self, prompt: str, image: ImagePayload | None) -> dict[str, Any]:
        content: list[dict[str, Any]] = [{"type": "text", "text": prompt}]
        if image is not None:
            content.append({"type": "image_url", "image_url": {"url": image.data_url()}})
        return {
            "model": self.endpoint.model_id,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.endpoint.temperature,
            "max_tokens": self.endpoint.max_tokens,
        }

    def query(self, prompt: str, image: ImagePayload | None, *, sample_id: str = "", tag: str = "") -> QueryResult:
        if not prompt:
            raise ValueError("empty prompt")
        body = self._body(prompt, image)
        policy = self.endpoint.retry
        last_status: int | None = None
        last_error = ""
        for attempt in range(1, policy.max_attempts + 1):
            wait = policy.delay(attempt)
            with self._limiter:
                with self._count_lock:
                    self.network_calls += 1
                try:
                    resp = self.session.post(self.endpoint.url, json=body, headers=self._headers(),
                                             timeout=self.endpoint.request_timeout)
                except requests.RequestException as exc:
                    resp = None
                    last_status, last_error = None, str(exc)
            if resp is not None:
                last_status = resp.status_code
                if resp.status_code == 200:
                    try:
                        payload = resp.json()
                        return QueryResult(_message_text(payload), _parse_usage(payload.get("usage")), attempt)
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise QueryFailed(f"unreadable response body: {exc}", 200, attempt) from exc
                last_error = resp.text[:200]
                if resp.status_code != 429 and resp.status_code < 500:
                    raise QueryFailed(f"HTTP {resp.status_code}: {last_error}", resp.status_code, attempt)
                retry_after = resp.headers.get("Retry-After")
                if retry_after:
                    try:
                        wait = max(wait, float(retry_after))
                    except ValueError:
                        pass
            if attempt < policy.max_attempts:
                self.sleep(wait)
        raise QueryFailed(f"gave up after {policy.max_attempts} attempts (last status {last_status}): {last_error}",
                          last_status, policy.max_attempts)


class MockBackend:
    """Scripted responses for offline runs.

    Lookup order per query: ``"{sample_id}:{tag}"``, ``sample_id``, ``"sha256:{prompt hash}"``, then
    ``default``. ``failures`` maps the same matchers to an HTTP status that is raised as a
    failed query instead.
    """

    def __init__(self, script: Mapping[str, str] | None = None, default: str = DEFAULT_REFUSAL,
                 model_id: str = "mock", failures: Mapping[str, int] | None = None,
                 delay: float = 0.0) -> None:
        self.script = dict(script or {})
        self.default = default
        self.model_id = model_id
        self.failures = dict(failures or {})
        self.delay = delay
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> "MockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if "responses" in data:
            kwargs.setdefault("default", data.get("default", DEFAULT_REFUSAL))
            kwargs.setdefault("model_id", data.get("model_id", "mock"))
            kwargs.setdefault("failures", data.get("failures"))
            return cls(data["responses"], **kwargs)
        return cls(data, **kwargs)

    def _match(self, table: Mapping[str, Any], prompt: str, sample_id: str, tag: str) -> Any:
        for k in (f"{sample_id}:{tag}", sample_id, f"sha256:{prompt_hash(prompt)}"):
            if k and k in table:
                return table[k]
        return None

    def query(self, prompt: str, image: ImagePayload | None, *, sample_id: str = "", tag: str = "") -> QueryResult:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            status = self._match(self.failures, prompt, sample_id, tag)
            if status is not None:
                raise QueryFailed(f"scripted HTTP {status}", int(status), 1)
            text = self._match(self.script, prompt, sample_id, tag)
            return QueryResult(self.default if text is None else text, None, 1)
        finally:
            with self._lock:
                self.in_flight -= 1


class BoundedBackend:
    """Caps concurrent calls into an inner backend that has no limiter of its own."""

    def __init__(self, inner: Backend, max_parallel: int) -> None:
        self.inner = inner
        self.model_id = inner.model_id
        self._sem = threading.BoundedSemaphore(max_parallel)

    def query(self, prompt: str, image: ImagePayload | None, *, sample_id: str = "", tag: str = "") -> QueryResult:
        with self._sem:
            return self.inner.query(prompt, image, sample_id=sample_id, tag=tag)


def _safe_dirname(model_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", model_id) or "_"


class ResponseCache:
    """One JSON file per query record at ``{root}/{model_id}/{key}.json``."""

    def __init__(self, root: str | Path, model_id: str) -> None:
        self.dir = Path(root) / _safe_dirname(model_id)
        self.model_id = model_id

    def path(self, key: str) -> Path:
        return self.dir / f"{key}.json"

    def get(self, key: str) -> QueryRecord | None:
        try:
            return QueryRecord.from_dict(json.loads(self.path(key).read_text(encoding="utf-8")))
        except FileNotFoundError:
            return None
        except (ValueError, TypeError):
            return None  # torn or foreign file; treat as absent and overwrite

    def put(self, record: QueryRecord) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        final = self.path(record.cache_key)
        tmp = final.with_name(f".{final.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(json.dumps(record.to_dict(), ensure_ascii=False, indent=1), encoding="utf-8")
        os.replace(tmp, final)

    def __len__(self) -> int:
        return len(list(self.dir.glob("*.json"))) if self.dir.exists() else 0


class CachedBackend:
    """Serves repeated queries from disk; only misses reach ``inner``."""

    def __init__(self, inner: Backend, cache_dir: str | Path) -> None:
        self.inner = inner
        self.model_id = inner.model_id
        self.cache = ResponseCache(cache_dir, inner.model_id)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def query(self, prompt: str, image: ImagePayload | None, *, sample_id: str = "", tag: str = "") -> QueryResult:
        key = cache_key(self.model_id, prompt, image.data if image else None)
        rec = self.cache.get(key)
        if rec is not None:
            with self._lock:
                self.hits += 1
            return QueryResult(rec.response_text, rec.usage, rec.attempt_count, True, key)
        with self._lock:
            self.misses += 1
        result = self.inner.query(prompt, image, sample_id=sample_id, tag=tag)
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.cache.put(QueryRecord(key, self.model_id, prompt, image.ref if image else "",
                                   result.text, result.usage, stamp, result.attempt_count))
        return QueryResult(result.text, result.usage, result.attempt_count, False, key)


class CacheOnlyBackend:
    """Read-only view of a cache; a miss is a failed query, never a network call."""

    def __init__(self, cache_dir: str | Path, model_id: str) -> None:
        self.model_id = model_id
        self.cache = ResponseCache(cache_dir, model_id)

    def query(self, prompt: str, image: ImagePayload | None, *, sample_id: str = "", tag: str = "") -> QueryResult:
        key = cache_key(self.model_id, prompt, image.data if image else None)
        rec = self.cache.get(key)
        if rec is None:
            raise CacheMiss(f"no cached response for {sample_id or key}")
        return QueryResult(rec.response_text, rec.usage, rec.attempt_count, True, key)
