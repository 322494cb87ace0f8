"""Grid search over the hyperparameter lattice."""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

from .config import SEARCH_SPACE, RunConfig
from .data import DatasetSplit, EntityCatalog
from .errors import LinkerError
from .evaluation import evaluate_split

log = logging.getLogger(__name__)

# learning rate is searched too but has no fixed candidate set
SEARCHABLE = set(SEARCH_SPACE) | {"learning_rate"}


@dataclass
class Candidate:
    position: int
    overrides: dict
    mrr: float | None = None
    hits1: float | None = None
    error: str | None = None

    def to_json(self) -> dict:
        return {"position": self.position, "overrides": self.overrides, "mrr": self.mrr,
                "hits1": self.hits1, "error": self.error}


def lattice(space: Mapping[str, Sequence]) -> Iterator[dict]:
    """Cartesian product in key order then value order (the serialization order)."""
    for key, values in space.items():
        if key not in SEARCHABLE:
            raise ValueError(f"{key!r} is not a searchable hyperparameter")
        if key in SEARCH_SPACE and not set(values) <= set(SEARCH_SPACE[key]):
            raise ValueError(f"{key} values {list(values)} fall outside {list(SEARCH_SPACE[key])}")
        if len(values) == 0:
            raise ValueError(f"{key} has no candidate values")
    keys = list(space)
    for combo in itertools.product(*(space[k] for k in keys)):
        yield dict(zip(keys, combo))


def lattice_size(space: Mapping[str, Sequence] = SEARCH_SPACE) -> int:
    n = 1
    for values in space.values():
        n *= len(values)
    return n


def load_space(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        space = json.load(fh)
    if not isinstance(space, dict) or not all(isinstance(v, list) for v in space.values()):
        raise ValueError(f"{path}: search space must map names to lists")
    return space


def grid_search(space: Mapping[str, Sequence], base_config: RunConfig, train: DatasetSplit,
                valid: DatasetSplit, catalog: EntityCatalog, budget: int | None = None,
                train_fn=None) -> tuple[RunConfig | None, list[Candidate]]:
    """Train every lattice point (up to ``budget``) and rank by validation MRR.

    Ties keep enumeration order. Failed candidates are listed after the
    successful ones with their error message.
    """
    from .training import train as default_train
    train_fn = train_fn or default_train
    done: list[Candidate] = []
    for pos, overrides in enumerate(lattice(space)):
        if budget is not None and pos >= budget:
            break
        cand = Candidate(pos, overrides)
        try:
            cfg = base_config.replace(**overrides)
            model, _ = train_fn(cfg, train, valid, catalog)
            report, _ = evaluate_split(valid, catalog, model, cfg)
            cand.mrr, cand.hits1 = report.mrr, report.hits1
        except (LinkerError, ValueError, ArithmeticError) as exc:
            log.warning("candidate %s failed: %s", overrides, exc)
            cand.error = f"{type(exc).__name__}: {exc}"
        done.append(cand)
    ok = sorted((c for c in done if c.error is None), key=lambda c: (-c.mrr, c.position))
    board = ok + [c for c in done if c.error is not None]
    best = base_config.replace(**ok[0].overrides) if ok else None
    return best, board
