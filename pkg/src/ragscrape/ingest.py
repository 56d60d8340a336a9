"""Page fetching under a politeness policy, and HTML-to-text normalization.

The fetcher handles http(s) URLs and local file paths behind one call,
honors robots.txt, enforces a per-host minimum request interval, and can
cache responses on disk keyed by URL hash. `html_to_text` turns HTML into
plain text with explicit "\\n\\n" block separators, which line up with the
chunker's largest delimiter.
"""

from __future__ import annotations

import hashlib
import html as html_lib
import json
import re
import threading
import time
import urllib.robotparser
from dataclasses import dataclass, field
from datetime import datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from urllib.parse import urlsplit

import requests

from .errors import FetchFailed, InvalidConfig, NotFound, RobotsDisallowed, Timeout

DEFAULT_USER_AGENT = "ragscrape/0.1"
HOST_MIN_INTERVAL = 1.0  # seconds between requests to one host

MODE_EXTRACTED = "extracted_text"
MODE_RAW = "raw_html"

BLOCK_TAGS = frozenset(
    {"p", "div", "li", "tr", "h1", "h2", "h3", "h4", "h5", "h6",
     "section", "article", "table", "ul", "ol", "blockquote", "pre"}
)
SKIP_TAGS = frozenset({"script", "style", "noscript", "head"})

_WS_RUN = re.compile(r"\s+")
_TAG = re.compile(r"<[^>]*>")


@dataclass(frozen=True)
class FetchPolicy:
    respect_robots: bool = True
    timeout: float = 30.0
    max_retries: int = 2
    user_agent: str = DEFAULT_USER_AGENT
    cache_dir: str | None = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise InvalidConfig("timeout must be positive")
        if not 0 <= self.max_retries <= 10:
            raise InvalidConfig("max_retries must be between 0 and 10")


@dataclass(frozen=True)
class RawPage:
    url: str
    status: int  # HTTP status, 0 for local files
    html: str
    fetched_at: datetime
    decode_lossy: bool = False


@dataclass(frozen=True)
class NormalizedText:
    source_url: str
    text: str
    mode: str


@dataclass
class _HostState:
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_request: float = 0.0
    robots: urllib.robotparser.RobotFileParser | None = None


class Fetcher:
    """Fetches pages with robots.txt checks, retries, caching, and rate limiting.

    Distinct hosts may be fetched concurrently; requests to one host are
    serialized and spaced at least `min_interval` seconds apart.
    """

    def __init__(self, min_interval: float = HOST_MIN_INTERVAL):
        self.min_interval = min_interval
        self._hosts: dict[str, _HostState] = {}
        self._hosts_lock = threading.Lock()

    def _host_state(self, host: str) -> _HostState:
        with self._hosts_lock:
            state = self._hosts.get(host)
            if state is None:
                state = self._hosts[host] = _HostState()
            return state

    def _wait_turn(self, state: _HostState) -> None:
        delay = state.last_request + self.min_interval - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        state.last_request = time.monotonic()

    def _get(self, url: str, policy: FetchPolicy, state: _HostState) -> requests.Response:
        last_exc: Exception | None = None
        timed_out = False
        for attempt in range(policy.max_retries + 1):
            if attempt:
                time.sleep(min(0.05 * 2 ** (attempt - 1), 2.0))
            self._wait_turn(state)
            try:
                resp = requests.get(
                    url,
                    timeout=policy.timeout,
                    headers={"User-Agent": policy.user_agent},
                )
            except requests.Timeout as exc:
                last_exc, timed_out = exc, True
                continue
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 400:
                last_exc = FetchFailed(resp.status_code, url)
                continue
            return resp
        if isinstance(last_exc, FetchFailed):
            raise last_exc
        if timed_out:
            raise Timeout(f"timed out fetching {url}")
        raise FetchFailed(0, f"{url} ({last_exc})")

    def _robots_allow(self, url: str, policy: FetchPolicy, state: _HostState) -> bool:
        if state.robots is None:
            parts = urlsplit(url)
            robots_url = f"{parts.scheme}://{parts.netloc}/robots.txt"
            parser = urllib.robotparser.RobotFileParser()
            try:
                resp = self._get(robots_url, FetchPolicy(
                    respect_robots=False,
                    timeout=policy.timeout,
                    max_retries=0,
                    user_agent=policy.user_agent,
                ), state)
                parser.parse(resp.text.splitlines())
            except (FetchFailed, Timeout):
                parser.allow_all = True  # unreadable robots.txt: do not block
            state.robots = parser
        return state.robots.can_fetch(policy.user_agent, url)

    def _cache_paths(self, cache_dir: str, url: str) -> tuple[Path, Path]:
        digest = hashlib.sha256(url.encode("utf-8")).hexdigest()
        base = Path(cache_dir)
        return base / f"{digest}.html", base / f"{digest}.meta.json"

    def _cache_read(self, policy: FetchPolicy, url: str) -> RawPage | None:
        if not policy.cache_dir:
            return None
        body_path, meta_path = self._cache_paths(policy.cache_dir, url)
        if not (body_path.exists() and meta_path.exists()):
            return None
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        return RawPage(
            url=meta["url"],
            status=int(meta["status"]),
            html=body_path.read_text(encoding="utf-8"),
            fetched_at=datetime.fromisoformat(meta["fetched_at"]),
            decode_lossy=bool(meta.get("decode_lossy", False)),
        )

    def _cache_write(self, policy: FetchPolicy, page: RawPage) -> None:
        if not policy.cache_dir:
            return
        body_path, meta_path = self._cache_paths(policy.cache_dir, page.url)
        body_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = body_path.with_suffix(".html.tmp")
        tmp.write_text(page.html, encoding="utf-8")
        tmp.replace(body_path)
        meta_path.write_text(
            json.dumps(
                {
                    "url": page.url,
                    "status": page.status,
                    "fetched_at": page.fetched_at.isoformat(),
                    "decode_lossy": page.decode_lossy,
                }
            ),
            encoding="utf-8",
        )

    def fetch(self, url: str, policy: FetchPolicy) -> RawPage:
        """Fetch one page; local paths read directly with status 0."""
        if not url.startswith(("http://", "https://")):
            return _read_local(url)
        cached = self._cache_read(policy, url)
        if cached is not None:
            return cached
        host = urlsplit(url).netloc
        state = self._host_state(host)
        with state.lock:
            if policy.respect_robots and not self._robots_allow(url, policy, state):
                raise RobotsDisallowed(f"robots.txt disallows {url} for {policy.user_agent!r}")
            resp = self._get(url, policy, state)
        text, lossy = _decode_utf8(resp.content)
        page = RawPage(
            url=url,
            status=resp.status_code,
            html=text,
            fetched_at=datetime.now(timezone.utc),
            decode_lossy=lossy,
        )
        self._cache_write(policy, page)
        return page


_default_fetcher = Fetcher()


def fetch_page(url: str, policy: FetchPolicy) -> RawPage:
    """Fetch via a process-wide default Fetcher (shared politeness state)."""
    return _default_fetcher.fetch(url, policy)


def _read_local(path_str: str) -> RawPage:
    path = Path(path_str)
    if not path.is_file():
        raise NotFound(f"no such file: {path_str}")
    text, lossy = _decode_utf8(path.read_bytes())
    return RawPage(
        url=path_str,
        status=0,
        html=text,
        fetched_at=datetime.now(timezone.utc),
        decode_lossy=lossy,
    )


def _decode_utf8(data: bytes) -> tuple[str, bool]:
    try:
        return data.decode("utf-8"), False
    except UnicodeDecodeError:
        return data.decode("utf-8", errors="replace"), True


class _TextExtractor(HTMLParser):
    """Streams HTML into block-separated plain text.

    Block-level tags (and <br>) flush the running text buffer as one block;
    inline tags contribute their text with no separator. Content under
    script/style/noscript/head and comments is dropped; alt and title
    attribute values are emitted in place. Whitespace runs collapse to one
    space inside a block, except inside <pre>.
    """

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.blocks: list[str] = []
        self._buf: list[str] = []
        self._skip: list[str] = []
        self._pre = 0

    def _flush(self) -> None:
        text = "".join(self._buf)
        self._buf.clear()
        if self._pre:
            if text.strip():
                self.blocks.append(text)
        else:
            collapsed = _WS_RUN.sub(" ", text).strip()
            if collapsed:
                self.blocks.append(collapsed)

    def handle_starttag(self, tag, attrs):
        if tag == "body" and self._skip == ["head"]:
            self._skip.clear()  # implicit </head> in tolerant parsing
        if tag in SKIP_TAGS:
            self._skip.append(tag)
            return
        if self._skip:
            return
        if tag == "br" or tag in BLOCK_TAGS:
            self._flush()
        if tag == "pre":
            self._pre += 1
        for name, value in attrs:
            if name in ("alt", "title") and value:
                self._buf.append(value)

    def handle_endtag(self, tag):
        if tag in SKIP_TAGS:
            if tag in self._skip:
                for i in range(len(self._skip) - 1, -1, -1):
                    if self._skip[i] == tag:
                        del self._skip[i]
                        break
            return
        if self._skip:
            return
        if tag in BLOCK_TAGS:
            self._flush()
        if tag == "pre":
            self._pre = max(0, self._pre - 1)

    def handle_data(self, data):
        if not self._skip:
            self._buf.append(data)

    def result(self) -> str:
        self._flush()
        return "\n\n".join(self.blocks)


def _strip_tags(html: str) -> str:
    text = html_lib.unescape(_TAG.sub(" ", html))
    return _WS_RUN.sub(" ", text).strip()


def html_to_text(page: RawPage, mode: str = MODE_EXTRACTED) -> NormalizedText:
    """Normalize a page to plain text.

    `raw_html` passes the document through byte-for-byte. `extracted_text`
    drops script/style/noscript/head content and comments, decodes entities,
    and emits each block's text separated by "\\n\\n".
    """
    if mode == MODE_RAW:
        return NormalizedText(source_url=page.url, text=page.html, mode=mode)
    if mode != MODE_EXTRACTED:
        raise InvalidConfig(f"unknown text mode: {mode!r}")
    extractor = _TextExtractor()
    try:
        extractor.feed(page.html)
        extractor.close()
        text = extractor.result()
    except Exception:
        text = _strip_tags(page.html)
    return NormalizedText(source_url=page.url, text=text, mode=mode)
