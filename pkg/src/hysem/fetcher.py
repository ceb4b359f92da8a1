"""Rate-limited open-access PDF acquisition over a pluggable transport."""

from __future__ import annotations

import base64
import collections
import hashlib
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

from .jsonio import read_json, write_json

logger = logging.getLogger(__name__)

UNPAYWALL_URL = "https://api.unpaywall.org/v2/{doi}"

STATUS_SAVED = "Saved"
STATUS_METADATA_FAIL = "Unpaywall_fail"
STATUS_NO_PDF = "No_PDF"

_UNSAFE_FILENAME_CHARS = re.compile(r'[\\/*?:"<>|()]+')


class Transport(Protocol):
    def fetch_json(self, url: str) -> Any | None: ...

    def download(self, url: str) -> bytes | None: ...


class Clock(Protocol):
    def monotonic(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class SimulatedClock:
    """Clock whose ``sleep`` advances time instantly; thread-safe."""

    def __init__(self, start: float = 0.0) -> None:
        self._now = start
        self._lock = threading.Lock()

    def monotonic(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("sleep length must be non-negative")
        with self._lock:
            self._now += seconds

    def advance(self, seconds: float) -> None:
        self.sleep(seconds)


@dataclass(frozen=True)
class RateLimit:
    max_per_second: int

    def __post_init__(self) -> None:
        if int(self.max_per_second) != self.max_per_second or self.max_per_second < 1:
            raise ValueError("max_per_second must be a positive integer")


class RateLimiter:
    """Admit at most ``max_per_second`` starts in any half-open 1 s window.

    A token bucket of ``max_per_second`` tokens in which each spent token comes
    back exactly one second after it was spent. Callers waiting for a token
    are serialized, so admission times are non-decreasing.
    """

    WINDOW = 1.0

    def __init__(self, limit: RateLimit, clock: Clock | None = None) -> None:
        self.limit = limit
        self.clock = clock or SystemClock()
        self._spent: collections.deque[float] = collections.deque()
        self._lock = threading.Lock()
        self.history: list[float] = []

    def acquire(self) -> float:
        """Block until a start is allowed; return the admission timestamp."""
        with self._lock:
            while True:
                now = self.clock.monotonic()
                while self._spent and now - self._spent[0] >= self.WINDOW:
                    self._spent.popleft()
                if len(self._spent) < self.limit.max_per_second:
                    self._spent.append(now)
                    self.history.append(now)
                    return now
                wait = self._spent[0] + self.WINDOW - now
                # Guard against float rounding leaving us one ulp short.
                self.clock.sleep(max(wait, 1e-9))


@dataclass(frozen=True)
class FetchTask:
    row_idx: int
    doi: str
    title: str = ""


@dataclass(frozen=True)
class FetchOutcome:
    row_idx: int
    pdf_path: str | None
    status: str

    def __post_init__(self) -> None:
        if (self.status == STATUS_SAVED) != (self.pdf_path is not None):
            raise ValueError("pdf_path must be set exactly when status is Saved")

    def to_dict(self) -> dict[str, Any]:
        return {"row_idx": self.row_idx, "pdf_path": self.pdf_path, "status": self.status}


def plan_candidates(response: dict[str, Any] | None) -> list[str]:
    """Candidate PDF URLs: best location first, then every listed location.

    Locations without ``url_for_pdf`` are skipped. Duplicates are kept, so the
    best location may be tried twice.
    """
    if not response:
        return []
    locations = []
    best = response.get("best_oa_location")
    if best:
        locations.append(best)
    locations.extend(response.get("oa_locations") or [])
    return [loc["url_for_pdf"] for loc in locations if loc and loc.get("url_for_pdf")]


def sanitize_filename(title: str, doi: str, row_idx: int) -> str:
    safe = _UNSAFE_FILENAME_CHARS.sub("", title or "")[:100] or doi
    return f"{safe}_{row_idx}.pdf"


CallLog = Callable[[float, str, str], None]


def rate_limited_execute(
    tasks: Sequence[FetchTask],
    limit: RateLimit,
    max_concurrency: int,
    transport: Transport,
    clock: Clock | None = None,
    pdf_dir: str | Path = "pdfs",
    on_call: CallLog | None = None,
) -> list[FetchOutcome]:
    """Run every task's OA lookup and download under a shared rate limit.

    Each transport call (metadata lookup or download) is admitted by one
    :class:`RateLimiter`; ``on_call(timestamp, kind, url)`` is invoked at each
    admission. Outcomes are returned in task order. Transport exceptions are
    converted to failure statuses and never abort the batch.
    """
    if max_concurrency < 1:
        raise ValueError("max_concurrency must be >= 1")
    if not tasks:
        return []

    limiter = RateLimiter(limit, clock)
    pdf_dir = Path(pdf_dir)
    log_lock = threading.Lock()

    def admitted(kind: str, url: str) -> None:
        ts = limiter.acquire()
        if on_call is not None:
            with log_lock:
                on_call(ts, kind, url)

    def worker(task: FetchTask) -> FetchOutcome:
        api_url = UNPAYWALL_URL.format(doi=task.doi)
        admitted("metadata", api_url)
        try:
            data = transport.fetch_json(api_url)
        except Exception as exc:
            logger.warning("metadata lookup failed for %s: %s", task.doi, exc)
            data = None
        if not data:
            return FetchOutcome(task.row_idx, None, STATUS_METADATA_FAIL)

        for pdf_url in plan_candidates(data):
            admitted("download", pdf_url)
            try:
                payload = transport.download(pdf_url)
            except Exception as exc:
                logger.warning("download failed for %s: %s", pdf_url, exc)
                continue
            if payload:
                path = pdf_dir / sanitize_filename(task.title, task.doi, task.row_idx)
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(payload)
                return FetchOutcome(task.row_idx, str(path), STATUS_SAVED)
        return FetchOutcome(task.row_idx, None, STATUS_NO_PDF)

    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        return list(pool.map(worker, tasks))


def url_key(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()[:24]


class FixtureTransport:
    """Transport backed by a directory of JSON fixture files.

    Each file is named ``<url_key(url)>.json`` and holds either
    ``{"url": ..., "json": <payload>}`` for metadata lookups or
    ``{"url": ..., "bytes_b64": <base64>}`` for downloads. Unknown URLs
    behave like a failed request (``None``).
    """

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"fixture directory not found: {self.directory}")

    def _load(self, url: str) -> dict[str, Any] | None:
        path = self.directory / f"{url_key(url)}.json"
        if not path.exists():
            return None
        return read_json(path)

    def fetch_json(self, url: str) -> Any | None:
        entry = self._load(url)
        return None if entry is None else entry.get("json")

    def download(self, url: str) -> bytes | None:
        entry = self._load(url)
        if entry is None or "bytes_b64" not in entry:
            return None
        return base64.b64decode(entry["bytes_b64"])


def write_fixture(
    directory: str | Path, url: str, *, json: Any = None, data: bytes | None = None
) -> Path:
    """Store one fixture response for ``url`` (exactly one of json/data)."""
    if (json is None) == (data is None):
        raise ValueError("provide exactly one of json= or data=")
    entry: dict[str, Any] = {"url": url}
    if json is not None:
        entry["json"] = json
    else:
        entry["bytes_b64"] = base64.b64encode(data).decode("ascii")
    path = Path(directory) / f"{url_key(url)}.json"
    write_json(path, entry)
    return path
