"""Clients for popularity signals with record/replay fixtures.

Two endpoints are spoken, both returning JSON:

``trends``   params ``terms`` (comma-joined, at most five), ``start``, ``end``;
             body ``{"dates": [ISO dates], "series": {term: [values]}}``
``siterank`` params ``url``;
             body ``{"url": str, "alexa_rank": int | null, "monthly_uniques": int | null}``

A provider with a different wire format is adapted by a proxy that emits
these bodies; the pipeline never sees provider-specific payloads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
import time
import urllib.parse
from collections import deque
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from .errors import MalformedResponseError, TransportError, UnrecordedRequestError, ValidationError
from .features import MAX_BATCH_TERMS, TrendsSeries, normalize_trends_batch, summarize_trends

log = logging.getLogger(__name__)

SITES_PER_BATCH = MAX_BATCH_TERMS - 1
INDEX_FILE = "index.json"

RESPONSE_SCHEMA = {
    "trends": {
        "params": ["terms", "start", "end"],
        "body": {"dates": "list of ISO dates", "series": "map term -> list of non-negative numbers"},
    },
    "siterank": {
        "params": ["url"],
        "body": {"url": "str", "alexa_rank": "int or null", "monthly_uniques": "int or null"},
    },
}


@dataclass(frozen=True)
class FetchPlan:
    sites: tuple[str, ...]
    anchor: str
    window: tuple[date, date]
    batches: tuple[tuple[str, ...], ...]


def plan_batches(sites: Sequence[str], anchor: str,
                 window: tuple[date, date] = (date(2019, 9, 1), date(2020, 9, 1))) -> FetchPlan:
    """Chunk sites four at a time and prepend the anchor to every chunk."""
    sites = tuple(sites)
    if not sites:
        raise ValidationError("no sites to fetch")
    if anchor in sites:
        raise ValidationError(f"anchor {anchor!r} must not be listed among the sites")
    if len(set(sites)) != len(sites):
        raise ValidationError("duplicate site in fetch list")
    batches = tuple(
        (anchor,) + sites[i:i + SITES_PER_BATCH] for i in range(0, len(sites), SITES_PER_BATCH)
    )
    return FetchPlan(sites, anchor, window, batches)


def request_key(endpoint: str, params: Sequence[tuple[str, str]]) -> str:
    return json.dumps({"endpoint": endpoint, "params": [list(p) for p in params]},
                      separators=(",", ":"))


class FixtureStore:
    """Directory of recorded response bodies keyed by canonical request descriptor."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._lock = threading.Lock()
        self._index = self._load_index()

    def _load_index(self) -> dict:
        path = self.directory / INDEX_FILE
        if not path.exists():
            return {"schema": RESPONSE_SCHEMA, "entries": {}}
        return json.loads(path.read_text(encoding="utf-8"))

    @staticmethod
    def filename(key: str) -> str:
        return hashlib.sha256(key.encode("utf-8")).hexdigest()[:24] + ".body"

    def __contains__(self, key: str) -> bool:
        return key in self._index["entries"]

    def get(self, endpoint: str, params: Sequence[tuple[str, str]]) -> bytes:
        key = request_key(endpoint, params)
        entry = self._index["entries"].get(key)
        if entry is None:
            raise UnrecordedRequestError(f"no recording for {key} in {self.directory}")
        return (self.directory / entry["file"]).read_bytes()

    def put(self, endpoint: str, params: Sequence[tuple[str, str]], body: bytes,
            captured_at: str) -> None:
        key = request_key(endpoint, params)
        name = self.filename(key)
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            (self.directory / name).write_bytes(body)
            self._index["entries"][key] = {"file": name, "captured_at": captured_at}
            tmp = self.directory / (INDEX_FILE + ".tmp")
            tmp.write_text(json.dumps(self._index, indent=1, sort_keys=True) + "\n",
                           encoding="utf-8")
            tmp.replace(self.directory / INDEX_FILE)

    def digest(self) -> str:
        """Hash over the index and every body, for report headers."""
        h = hashlib.sha256()
        for key in sorted(self._index["entries"]):
            entry = self._index["entries"][key]
            h.update(key.encode("utf-8"))
            h.update(hashlib.sha256((self.directory / entry["file"]).read_bytes()).digest())
        return h.hexdigest()


class RateLimiter:
    """Sliding-window limiter: at most `max_requests` per `interval` seconds per host."""

    def __init__(self, max_requests: int = 1, interval: float = 2.0, jitter: float = 0.5,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep, seed: int = 0):
        if max_requests < 1 or interval <= 0 or jitter < 0:
            raise ValidationError("invalid rate-limit settings")
        self.max_requests = max_requests
        self.interval = interval
        self.jitter = jitter
        self.clock = clock
        self.sleep = sleep
        self._rng = random.Random(seed)
        self._history: dict[str, deque] = {}
        self._host_locks: dict[str, threading.Lock] = {}
        self._lock = threading.Lock()

    def acquire(self, host: str) -> float:
        """Block until a request to `host` is allowed; returns the granted timestamp."""
        with self._lock:
            hist = self._history.setdefault(host, deque())
            host_lock = self._host_locks.setdefault(host, threading.Lock())
        with host_lock:
            now = self.clock()
            while hist and hist[0] + self.interval <= now:
                hist.popleft()
            not_before = now
            if len(hist) >= self.max_requests:
                # the oldest slot frees at hist[0] + interval; no re-check of the
                # clock afterwards, which float rounding could keep a hair short
                not_before = hist.popleft() + self.interval
                self.sleep(not_before - now)
            if self.jitter:
                with self._lock:
                    pause = self._rng.uniform(0, self.jitter)
                self.sleep(pause)
            granted = max(self.clock(), not_before)
            hist.append(granted)
            return granted


class Transport(Protocol):
    def request(self, endpoint: str, params: Sequence[tuple[str, str]]) -> bytes: ...


class ReplayTransport:
    def __init__(self, store: FixtureStore):
        self.store = store

    def request(self, endpoint: str, params: Sequence[tuple[str, str]]) -> bytes:
        return self.store.get(endpoint, params)


def _requests_get(url: str, timeout: float) -> tuple[int, bytes]:
    import requests

    resp = requests.get(url, timeout=timeout)
    return resp.status_code, resp.content


class LiveTransport:
    """HTTP transport with per-host rate limiting, retries and optional recording.

    `providers` maps endpoint name to a base URL; request params are sent as
    the query string.
    """

    def __init__(self, providers: dict[str, str], store: Optional[FixtureStore] = None,
                 limiter: Optional[RateLimiter] = None, max_retries: int = 3,
                 backoff: float = 1.0, timeout: float = 30.0,
                 http_get: Callable[[str, float], tuple[int, bytes]] = _requests_get,
                 sleep: Callable[[float], None] = time.sleep):
        self.providers = providers
        self.store = store
        self.limiter = limiter or RateLimiter()
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self.http_get = http_get
        self.sleep = sleep
        self._host_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _host_lock(self, host: str) -> threading.Lock:
        with self._locks_guard:
            return self._host_locks.setdefault(host, threading.Lock())

    def request(self, endpoint: str, params: Sequence[tuple[str, str]]) -> bytes:
        base = self.providers.get(endpoint)
        if not base:
            raise TransportError(f"no provider URL configured for endpoint {endpoint!r}")
        url = base + ("&" if "?" in base else "?") + urllib.parse.urlencode(list(params))
        host = urllib.parse.urlsplit(url).netloc
        last = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            with self._host_lock(host):
                self.limiter.acquire(host)
                try:
                    status, body = self.http_get(url, self.timeout)
                except Exception as exc:  # network errors of any client library
                    last = f"{type(exc).__name__}: {exc}"
                    log.warning("fetch %s failed (attempt %d): %s", url, attempt + 1, last)
                    continue
            if status == 200:
                if self.store is not None:
                    self.store.put(endpoint, params, body,
                                   datetime.now(timezone.utc).isoformat(timespec="seconds"))
                return body
            last = f"HTTP {status}"
            if status < 500 and status != 429:
                break
            log.warning("fetch %s returned %s (attempt %d)", url, status, attempt + 1)
        raise TransportError(f"{endpoint} request to {url} failed: {last}")


# ---------------------------------------------------------------------------
# typed fetches


def _decode(body: bytes, what: str) -> dict:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedResponseError(f"{what}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise MalformedResponseError(f"{what}: expected a JSON object")
    return doc


def parse_trends_response(body: bytes, terms: Sequence[str], anchor: str) -> list[TrendsSeries]:
    doc = _decode(body, "trends response")
    try:
        dates = tuple(date.fromisoformat(d) for d in doc["dates"])
        series = doc["series"]
        out = []
        for term in terms:
            values = tuple(float(v) for v in series[term])
            out.append(TrendsSeries(term, dates, values, anchor_site=anchor))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponseError(f"trends response for {list(terms)}: {exc!r}") from None
    return out


def _trends_params(batch: Sequence[str], window: tuple[date, date]) -> list[tuple[str, str]]:
    return [("terms", ",".join(batch)), ("start", window[0].isoformat()),
            ("end", window[1].isoformat())]


def fetch_trends(plan: FetchPlan, transport: Transport) -> list[list[TrendsSeries]]:
    """Raw series for every term of every batch, in plan order."""
    start, end = plan.window
    if end < start:
        raise ValidationError(f"empty trends window {start}..{end}")
    out = []
    for batch in plan.batches:
        body = transport.request("trends", _trends_params(batch, plan.window))
        out.append(parse_trends_response(body, batch, plan.anchor))
    return out


def normalized_trends(plan: FetchPlan, transport: Transport) -> dict[str, TrendsSeries]:
    """Anchor-normalized series per site; the anchor's own series comes from the first batch."""
    out: dict[str, TrendsSeries] = {}
    for raw in fetch_trends(plan, transport):
        for s in normalize_trends_batch(raw, plan.anchor):
            if s.site not in out:
                out[s.site] = s
    return out


def trends_features(series: dict[str, TrendsSeries]) -> dict[str, tuple[float, float]]:
    return {site: summarize_trends(s) for site, s in series.items()}


def _optional_int(doc: dict, key: str, url: str) -> Optional[int]:
    v = doc.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v) or v < 0:
        raise MalformedResponseError(f"siterank response for {url}: bad {key} {v!r}")
    return int(v)


def fetch_siterank(url: str, transport: Transport) -> tuple[Optional[int], Optional[int]]:
    if not url:
        raise ValidationError("empty url")
    doc = _decode(transport.request("siterank", [("url", url)]), f"siterank response for {url}")
    rank = _optional_int(doc, "alexa_rank", url)
    if rank == 0:
        raise MalformedResponseError(f"siterank response for {url}: alexa_rank must be >= 1")
    return rank, _optional_int(doc, "monthly_uniques", url)
