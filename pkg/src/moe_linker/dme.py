"""Description-aware mention enhancement.

For each mention: look up same-name KB entities, ask an LLM which description
fits the mention's context best, and append that description to the context.
Runs once, offline, before encoding; selections are cached per backend.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .data import DatasetSplit, MentionRecord, replace_mention, write_json_lines
from .errors import DataLoadError, EnhancementError, LinkerError, ParseError, RankingError
from .kb import DescriptionCandidate, KbClient, retrieve_candidates, with_retries
from .llm import LlmBackend, TransportError

log = logging.getLogger(__name__)

DEFAULT_SEPARATOR = " [SEP] "
CONTEXT_HASH = "blake2b-64"

_FIRST_INT = re.compile(r"-?\d+")


def context_hash(text: str, algorithm: str = CONTEXT_HASH) -> str:
    """Stable 64-bit hex digest of a context string."""
    if algorithm != "blake2b-64":
        raise ValueError(f"unsupported context hash {algorithm!r}")
    return hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest()


@dataclass(frozen=True)
class CandidateSelection:
    chosen_index: int
    chosen: DescriptionCandidate
    backend_id: str
    fallback_used: bool = False

    def __post_init__(self):
        if self.chosen_index < 0:
            raise ValueError("chosen_index must be >= 0")
        if self.fallback_used and self.chosen_index != 0:
            raise ValueError("fallback selections always pick index 0")


def build_ranking_prompt(mention_word: str, context: str,
                         candidates: list[DescriptionCandidate]) -> str:
    if not candidates:
        raise ValueError("cannot build a ranking prompt without candidates")
    lines = [
        "You are linking an ambiguous mention to a knowledge-base entry.",
        f"Mention: {mention_word}",
        f"Context: {context}",
        "Candidate entries:",
    ]
    for i, cand in enumerate(candidates, start=1):
        desc = " ".join(cand.description.split()) or "(no description)"
        lines.append(f"{i}. {cand.qid}: {desc}")
    lines.append(
        f"Which entry best matches the mention in this context? "
        f"Answer with exactly one index between 1 and {len(candidates)}."
    )
    return "\n".join(lines)


def parse_choice(reply: str, n_candidates: int) -> int | None:
    """0-based index from the first integer in ``reply``; None if absent or out of range."""
    match = _FIRST_INT.search(reply or "")
    if match is None:
        return None
    value = int(match.group())
    if 1 <= value <= n_candidates:
        return value - 1
    return None


class EnhancementCache:
    """Thread-safe store ``(mention_word, context_hash, backend_id) -> CandidateSelection``.

    Concurrent requests for a key that is being computed wait for the first
    computation instead of issuing a second backend call, so the miss count
    always equals the number of distinct keys seen.
    """

    def __init__(self):
        self._store: dict[tuple[str, str, str], CandidateSelection] = {}
        self._pending: dict[tuple[str, str, str], Future] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(mention_word: str, context: str, backend_id: str) -> tuple[str, str, str]:
        return (mention_word, context_hash(context), backend_id)

    def __len__(self):
        return len(self._store)

    def __contains__(self, key):
        return key in self._store

    def get(self, key) -> CandidateSelection | None:
        with self._lock:
            return self._store.get(key)

    def put(self, key, selection: CandidateSelection) -> None:
        if key[2] != selection.backend_id:
            raise ValueError("cache key backend does not match the selection backend")
        with self._lock:
            self._store[key] = selection

    def get_or_compute(self, key, compute) -> CandidateSelection:
        with self._lock:
            if key in self._store:
                self.hits += 1
                return self._store[key]
            pending = self._pending.get(key)
            if pending is None:
                self.misses += 1
                pending = self._pending[key] = Future()
                owner = True
            else:
                self.hits += 1
                owner = False
        if not owner:
            return pending.result()
        try:
            value = compute()
        except BaseException as exc:
            with self._lock:
                del self._pending[key]
                # a failed key may be retried later; it is no longer "seen"
                self.misses -= 1
            pending.set_exception(exc)
            raise
        with self._lock:
            self._store[key] = value
            del self._pending[key]
        pending.set_result(value)
        return value

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def reset_counters(self) -> None:
        with self._lock:
            self.hits = self.misses = 0

    def save(self, path) -> None:
        with self._lock:
            items = sorted(self._store.items())
        write_json_lines(path, (
            {"key": list(k), "chosen_index": s.chosen_index, "qid": s.chosen.qid,
             "description": s.chosen.description, "fallback": s.fallback_used}
            for k, s in items
        ))

    @classmethod
    def load(cls, path) -> "EnhancementCache":
        path = Path(path)
        if not path.is_file():
            raise DataLoadError(f"no such file: {path}")
        cache = cls()
        with path.open(encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                    key = tuple(obj["key"])
                    if len(key) != 3:
                        raise ValueError("key must have 3 parts")
                    sel = CandidateSelection(
                        chosen_index=int(obj["chosen_index"]),
                        chosen=DescriptionCandidate(obj["qid"], obj["description"]),
                        backend_id=key[2],
                        fallback_used=bool(obj["fallback"]),
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ParseError(path, line_no, f"bad cache record ({exc})") from None
                cache._store[key] = sel
        return cache


def rank_descriptions(mention_word: str, context: str, candidates: list[DescriptionCandidate],
                      backend: LlmBackend, cache: EnhancementCache | None = None,
                      attempts: int = 3, base_delay: float = 0.5, sleep=None) -> CandidateSelection:
    """Ask ``backend`` for the best candidate; unparsable replies fall back to index 0."""
    if not candidates:
        raise ValueError("candidates must be non-empty")

    def compute():
        prompt = build_ranking_prompt(mention_word, context, candidates)
        kwargs = {"sleep": sleep} if sleep is not None else {}
        try:
            reply = with_retries(lambda: backend.complete(prompt), attempts=attempts,
                                 base_delay=base_delay, retry_on=(TransportError,), **kwargs)
        except TransportError as exc:
            raise RankingError(f"backend {backend.backend_id} failed after {attempts} attempts: {exc}") from exc
        idx = parse_choice(reply, len(candidates))
        if idx is None:
            log.debug("unparsable reply %r for %r; falling back to first candidate", reply, mention_word)
            return CandidateSelection(0, candidates[0], backend.backend_id, fallback_used=True)
        return CandidateSelection(idx, candidates[idx], backend.backend_id)

    if cache is None:
        return compute()
    return cache.get_or_compute(EnhancementCache.key(mention_word, context, backend.backend_id), compute)


def enhance_mention(record: MentionRecord, selection: CandidateSelection,
                    separator: str = DEFAULT_SEPARATOR) -> MentionRecord:
    """Return a copy whose enhanced context is ``context + separator + description``."""
    if record.enhanced_context is not None:
        raise ValueError(f"mention {record.id!r} is already enhanced")
    return replace_mention(record, enhanced_context=record.context + separator + selection.chosen.description)


@dataclass
class EnhancementReport:
    total: int = 0
    enhanced: int = 0
    no_candidates: int = 0
    already_enhanced: int = 0
    fallbacks: int = 0
    errors: dict = field(default_factory=dict)

    @property
    def error_fraction(self) -> float:
        return len(self.errors) / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {
            "total": self.total, "enhanced": self.enhanced, "no_candidates": self.no_candidates,
            "already_enhanced": self.already_enhanced, "fallbacks": self.fallbacks,
            "errors": dict(sorted(self.errors.items())),
        }


def enhance_split(split: DatasetSplit, kb: KbClient, backend: LlmBackend,
                  cache: EnhancementCache | None = None, *, separator: str = DEFAULT_SEPARATOR,
                  max_inflight: int = 1, max_error_fraction: float = 0.0,
                  attempts: int = 3) -> tuple[DatasetSplit, EnhancementReport]:
    """Enhance every mention of ``split``; returns the new split and a report.

    Mentions with no KB candidates keep ``enhanced_context == context``.
    Per-record failures leave the record untouched and are collected; the call
    only raises when their fraction exceeds ``max_error_fraction``.
    """
    if cache is None:
        cache = EnhancementCache()

    def one(rec: MentionRecord):
        if rec.enhanced_context is not None:
            return rec, "already", None
        cands = retrieve_candidates(rec.mention_word, kb)
        if not cands:
            return replace_mention(rec, enhanced_context=rec.context), "empty", None
        sel = rank_descriptions(rec.mention_word, rec.context, cands, backend, cache, attempts=attempts)
        return enhance_mention(rec, sel, separator), "ok", sel

    def guarded(rec):
        try:
            return one(rec)
        except LinkerError as exc:
            return rec, "error", exc

    if max_inflight > 1:
        with ThreadPoolExecutor(max_workers=max_inflight) as pool:
            outcomes = list(pool.map(guarded, split.mentions))
    else:
        outcomes = [guarded(r) for r in split.mentions]

    report = EnhancementReport(total=len(split))
    out = []
    for rec, status, extra in outcomes:
        out.append(rec)
        if status == "ok":
            report.enhanced += 1
            report.fallbacks += int(extra.fallback_used)
        elif status == "empty":
            report.no_candidates += 1
        elif status == "already":
            report.already_enhanced += 1
        else:
            report.errors[rec.id] = str(extra)
    if report.error_fraction > max_error_fraction:
        raise EnhancementError(
            f"{len(report.errors)}/{report.total} mentions failed enhancement "
            f"(allowed fraction {max_error_fraction})"
        )
    return DatasetSplit(split.split_name, tuple(out)), report
