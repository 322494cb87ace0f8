"""Mention datasets, entity catalogs, validation against known statistics and
low-resource subsampling.

Both mention and entity files are JSON-lines, one record per line::

    {"id": ..., "mention_word": ..., "context": ..., "image": str|null,
     "gold_entity": ..., "enhanced_context": str|null}
    {"entity_id": ..., "name": ..., "attributes": ..., "image": str|null,
     "qid": str|null}
"""
from __future__ import annotations

import dataclasses
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Any

import numpy as np

from .errors import DataLoadError, IntegrityError, ParseError

SPLIT_NAMES = ("train", "valid", "test")

# Bit generators accepted for subsampling; the name is recorded in RunConfig so
# a split can be regenerated on another machine.
SUBSAMPLE_RNGS = {"PCG64": np.random.PCG64, "Philox": np.random.Philox}


@dataclass(frozen=True)
class MentionRecord:
    id: str
    mention_word: str
    context: str
    gold_entity_id: str
    image_ref: str | None = None
    enhanced_context: str | None = None

    def __post_init__(self):
        if not self.mention_word:
            raise ValueError(f"mention {self.id!r}: mention_word is empty")
        if not self.gold_entity_id:
            raise ValueError(f"mention {self.id!r}: gold entity id is empty")
        if self.enhanced_context is not None and not self.enhanced_context.startswith(self.context):
            raise ValueError(f"mention {self.id!r}: enhanced_context does not extend context")

    @property
    def text_context(self) -> str:
        """Context used for encoding: the enhanced one when available."""
        return self.context if self.enhanced_context is None else self.enhanced_context

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "mention_word": self.mention_word,
            "context": self.context,
            "image": self.image_ref,
            "gold_entity": self.gold_entity_id,
            "enhanced_context": self.enhanced_context,
        }


@dataclass(frozen=True)
class EntityRecord:
    entity_id: str
    name: str
    attributes: str = ""
    image_ref: str | None = None
    kb_qid: str | None = None

    def __post_init__(self):
        if not self.entity_id:
            raise ValueError("entity_id is empty")
        if not self.name:
            raise ValueError(f"entity {self.entity_id!r}: name is empty")

    def to_json(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "name": self.name,
            "attributes": self.attributes,
            "image": self.image_ref,
            "qid": self.kb_qid,
        }


@dataclass(frozen=True)
class DatasetSplit:
    split_name: str
    mentions: tuple[MentionRecord, ...]

    def __post_init__(self):
        if self.split_name not in SPLIT_NAMES:
            raise ValueError(f"split_name must be one of {SPLIT_NAMES}, got {self.split_name!r}")
        object.__setattr__(self, "mentions", tuple(self.mentions))
        seen = set()
        for m in self.mentions:
            if m.id in seen:
                raise IntegrityError(f"duplicate mention id {m.id!r} in {self.split_name} split")
            seen.add(m.id)

    def __len__(self):
        return len(self.mentions)

    def __iter__(self):
        return iter(self.mentions)

    @property
    def ids(self) -> list[str]:
        return [m.id for m in self.mentions]


class EntityCatalog(Mapping):
    """Id-keyed, insertion-ordered, read-only collection of entities."""

    def __init__(self, entities: Iterable[EntityRecord] = ()):
        table: dict[str, EntityRecord] = {}
        for e in entities:
            if e.entity_id in table:
                raise IntegrityError(f"duplicate entity id {e.entity_id!r}")
            table[e.entity_id] = e
        self._entities = MappingProxyType(table)

    @property
    def entities(self) -> Mapping[str, EntityRecord]:
        return self._entities

    @property
    def image_coverage(self) -> float:
        if not self._entities:
            return 0.0
        with_image = sum(1 for e in self._entities.values() if e.image_ref is not None)
        return with_image / len(self._entities)

    def __getitem__(self, key):
        return self._entities[key]

    def __iter__(self):
        return iter(self._entities)

    def __len__(self):
        return len(self._entities)

    def __repr__(self):
        return f"EntityCatalog(n={len(self)}, image_coverage={self.image_coverage:.4f})"


# --------------------------------------------------------------------------
# JSON-lines IO
# --------------------------------------------------------------------------

def _iter_json_lines(path: Path):
    path = Path(path)
    if not path.is_file():
        raise DataLoadError(f"no such file: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(path, line_no, "record is not a JSON object")
            yield line_no, obj


def _req_str(obj: dict, key: str, path, line_no, allow_empty=False) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise ParseError(path, line_no, f"field {key!r} missing or not a string")
    if not allow_empty and not value:
        raise ParseError(path, line_no, f"field {key!r} is empty")
    return value


def _opt_str(obj: dict, key: str, path, line_no) -> str | None:
    value = obj.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise ParseError(path, line_no, f"field {key!r} must be a string or null")
    return value


def _opt_image(obj, key, path, line_no):
    # absent images are None, never ""
    return _opt_str(obj, key, path, line_no) or None


def load_dataset(path, split_name: str) -> DatasetSplit:
    """Load one split from a mention file, preserving file order."""
    if split_name not in SPLIT_NAMES:
        raise ValueError(f"split_name must be one of {SPLIT_NAMES}, got {split_name!r}")
    mentions = []
    seen = set()
    for line_no, obj in _iter_json_lines(path):
        mid = _req_str(obj, "id", path, line_no)
        enhanced = _opt_str(obj, "enhanced_context", path, line_no)
        context = _req_str(obj, "context", path, line_no, allow_empty=True)
        if enhanced is not None and not enhanced.startswith(context):
            raise ParseError(path, line_no, "enhanced_context does not start with context")
        if mid in seen:
            raise IntegrityError(f"{path}:{line_no}: duplicate mention id {mid!r}")
        seen.add(mid)
        mentions.append(MentionRecord(
            id=mid,
            mention_word=_req_str(obj, "mention_word", path, line_no),
            context=context,
            gold_entity_id=_req_str(obj, "gold_entity", path, line_no),
            image_ref=_opt_image(obj, "image", path, line_no),
            enhanced_context=enhanced,
        ))
    return DatasetSplit(split_name, tuple(mentions))


def save_dataset(split: DatasetSplit, path) -> None:
    write_json_lines(path, (m.to_json() for m in split.mentions))


def build_entity_catalog(path) -> EntityCatalog:
    records = []
    seen = set()
    for line_no, obj in _iter_json_lines(path):
        eid = _req_str(obj, "entity_id", path, line_no)
        if eid in seen:
            raise IntegrityError(f"{path}:{line_no}: duplicate entity id {eid!r}")
        seen.add(eid)
        records.append(EntityRecord(
            entity_id=eid,
            name=_req_str(obj, "name", path, line_no),
            attributes=_req_str(obj, "attributes", path, line_no, allow_empty=True),
            image_ref=_opt_image(obj, "image", path, line_no),
            kb_qid=_opt_str(obj, "qid", path, line_no),
        ))
    return EntityCatalog(records)


def save_entity_catalog(catalog: EntityCatalog, path) -> None:
    write_json_lines(path, (e.to_json() for e in catalog.values()))


def write_json_lines(path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False))
            fh.write("\n")


# --------------------------------------------------------------------------
# Statistics validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StatsReport:
    mentions: int
    mentions_with_image: int
    unresolved_gold: int
    unresolved_ids: tuple[str, ...]
    checks: dict = field(default_factory=dict)

    @property
    def image_coverage(self) -> float:
        return self.mentions_with_image / self.mentions if self.mentions else 0.0

    @property
    def passed(self) -> bool:
        return self.unresolved_gold == 0 and all(c["ok"] for c in self.checks.values())

    def to_json(self) -> dict:
        return {
            "mentions": self.mentions,
            "mentions_with_image": self.mentions_with_image,
            "image_coverage": self.image_coverage,
            "unresolved_gold": self.unresolved_gold,
            "checks": self.checks,
            "passed": self.passed,
        }


def validate_dataset(split: DatasetSplit | Sequence[DatasetSplit], catalog: EntityCatalog,
                     expected: Mapping[str, Any] | None = None) -> StatsReport:
    """Count mentions, image-bearing mentions and unresolved gold ids.

    ``split`` may also be a sequence of splits, which are pooled; this is how
    whole-dataset rows of a statistics table are checked. ``expected`` maps
    ``mentions`` / ``mentions_with_image`` to integer targets (missing or None
    keys are not checked). Mismatches are reported, never raised.
    """
    splits = [split] if isinstance(split, DatasetSplit) else list(split)
    n = n_img = 0
    unresolved = []
    for s in splits:
        for m in s.mentions:
            n += 1
            if m.image_ref is not None:
                n_img += 1
            if m.gold_entity_id not in catalog:
                unresolved.append(m.id)
    actual = {"mentions": n, "mentions_with_image": n_img}
    checks = {}
    for key, target in (expected or {}).items():
        if target is None or key not in actual:
            continue
        checks[key] = {"expected": int(target), "actual": actual[key], "ok": actual[key] == int(target)}
    return StatsReport(n, n_img, len(unresolved), tuple(unresolved), checks)


def load_stats_spec(path) -> dict:
    """Stats spec file: ``{split: {"mentions": int, "mentions_with_image": int}}``."""
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        raise DataLoadError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None
    if not isinstance(spec, dict):
        raise ParseError(path, 1, "stats spec must be a JSON object")
    return spec


def benchmark_stats(name: str | None = None) -> dict:
    """Published statistics of the WikiMEL, RichpediaMEL and WikiDiverse benchmarks."""
    text = resources.files("moe_linker.resources").joinpath("benchmark_stats.json").read_text("utf-8")
    table = json.loads(text)
    return table if name is None else table[name]


# --------------------------------------------------------------------------
# Low-resource subsampling
# --------------------------------------------------------------------------

def subsample_size(n: int, fraction: float) -> int:
    # decimal arithmetic so that e.g. 0.29 * 100 floors to 29, not 28
    return math.floor(Decimal(repr(float(fraction))) * n)


def subsample_low_resource(train: DatasetSplit, fraction: float, seed: int,
                           rng_name: str = "PCG64") -> DatasetSplit:
    """Uniformly sample ``floor(fraction * len(train))`` mentions without replacement.

    Selected mentions keep their original relative order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if rng_name not in SUBSAMPLE_RNGS:
        raise ValueError(f"unknown rng {rng_name!r}; choose from {sorted(SUBSAMPLE_RNGS)}")
    n = subsample_size(len(train), fraction)
    rng = np.random.Generator(SUBSAMPLE_RNGS[rng_name](seed))
    picked = np.sort(rng.choice(len(train), size=n, replace=False))
    return DatasetSplit(train.split_name, tuple(train.mentions[i] for i in picked))


def replace_mention(record: MentionRecord, **changes) -> MentionRecord:
    return dataclasses.replace(record, **changes)
