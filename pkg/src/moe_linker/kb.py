"""Knowledge-base clients that list same-name entities with their descriptions."""
from __future__ import annotations

import json
import logging
import time
from collections import defaultdict
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol, TypeVar

from .errors import DataLoadError, ParseError, RetrievalError

log = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class DescriptionCandidate:
    qid: str
    description: str = ""

    def __post_init__(self):
        if not self.qid:
            raise ValueError("candidate qid is empty")


class KbClient(Protocol):
    def lookup(self, label: str) -> list[DescriptionCandidate]: ...


def with_retries(fn: Callable[[], T], *, attempts: int = 3, base_delay: float = 0.5,
                 retry_on: tuple[type[BaseException], ...] = (Exception,),
                 sleep: Callable[[float], None] = time.sleep) -> T:
    """Call ``fn`` up to ``attempts`` times with exponential backoff."""
    for attempt in range(attempts):
        try:
            return fn()
        except retry_on as exc:
            if attempt == attempts - 1:
                raise
            delay = base_delay * 2 ** attempt
            log.warning("attempt %d/%d failed (%s); retrying in %.2fs", attempt + 1, attempts, exc, delay)
            sleep(delay)
    raise AssertionError("unreachable")


class FixtureKb:
    """Offline KB backed by a JSON-lines file of ``{"label", "qid", "description"}``.

    Candidates for a label are returned in file order. Never raises on lookup.
    """

    def __init__(self, records: dict[str, list[DescriptionCandidate]] | None = None):
        self._by_label = {k: list(v) for k, v in (records or {}).items()}

    @classmethod
    def from_file(cls, path) -> "FixtureKb":
        path = Path(path)
        if not path.is_file():
            raise DataLoadError(f"no such file: {path}")
        table: dict[str, list[DescriptionCandidate]] = defaultdict(list)
        with path.open(encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                    label, qid = obj["label"], obj["qid"]
                    desc = obj.get("description") or ""
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ParseError(path, line_no, f"bad KB record ({exc})") from None
                table[label].append(DescriptionCandidate(qid, desc))
        return cls(dict(table))

    @classmethod
    def packaged(cls) -> "FixtureKb":
        ref = resources.files("moe_linker.resources").joinpath("kb_fixture.jsonl")
        with resources.as_file(ref) as path:
            return cls.from_file(path)

    def lookup(self, label: str) -> list[DescriptionCandidate]:
        return list(self._by_label.get(label, ()))

    def labels(self) -> list[str]:
        return list(self._by_label)


class WikidataKb:
    """Live lookup through the ``wbsearchentities`` API.

    Only exact (case-insensitive) label matches are kept, in API order.
    """

    API = "https://www.wikidata.org/w/api.php"

    def __init__(self, session=None, language: str = "en", limit: int = 20,
                 timeout: float = 10.0, attempts: int = 3, base_delay: float = 0.5,
                 endpoint: str | None = None, sleep=time.sleep):
        if session is None:
            import requests
            session = requests.Session()
            session.headers["User-Agent"] = "moe-linker/0.1 (entity description lookup)"
        self.session = session
        self.language = language
        self.limit = limit
        self.timeout = timeout
        self.attempts = attempts
        self.base_delay = base_delay
        self.endpoint = endpoint or self.API
        self._sleep = sleep

    def _search(self, label: str) -> dict:
        params = {
            "action": "wbsearchentities", "search": label, "language": self.language,
            "uselang": self.language, "type": "item", "limit": self.limit, "format": "json",
        }
        resp = self.session.get(self.endpoint, params=params, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()

    def lookup(self, label: str) -> list[DescriptionCandidate]:
        try:
            payload = with_retries(lambda: self._search(label), attempts=self.attempts,
                                   base_delay=self.base_delay, sleep=self._sleep)
        except Exception as exc:
            raise RetrievalError(f"wikidata lookup failed for {label!r}: {exc}") from exc
        out = []
        wanted = label.casefold()
        for hit in payload.get("search", []):
            names = [hit.get("label", "")] + [hit.get("match", {}).get("text", "")]
            if any(n.casefold() == wanted for n in names if n):
                out.append(DescriptionCandidate(hit["id"], hit.get("description", "") or ""))
        return out


def retrieve_candidates(mention_word: str, kb: KbClient) -> list[DescriptionCandidate]:
    if not mention_word:
        raise ValueError("mention_word must be non-empty")
    return kb.lookup(mention_word)
