"""Ranking of catalog entities, MRR / Hits@n, and ablation sweeps."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ABLATIONS, RunConfig
from .data import DatasetSplit, EntityCatalog, MentionRecord, write_json_lines
from .encoders import EncodedSide, EncoderAdapter, encode_entities, encode_mentions, make_encoder
from .errors import IntegrityError, LinkerError

log = logging.getLogger(__name__)

HITS_AT = (1, 3, 5)


@dataclass(frozen=True)
class RankedResult:
    mention_id: str
    entity_ids: tuple[str, ...]
    scores: tuple[float, ...]
    gold_rank: int


@dataclass(frozen=True)
class MetricsReport:
    mrr: float
    hits1: float
    hits3: float
    hits5: float
    n_mentions: int
    per_mention: tuple = ()
    toggles: tuple[str, ...] = ()
    config_fingerprint: str = ""

    def to_json(self) -> dict:
        return {
            "mrr": self.mrr,
            "hits": {"1": self.hits1, "3": self.hits3, "5": self.hits5},
            "n_mentions": self.n_mentions,
            "config_fingerprint": self.config_fingerprint,
            "toggles": list(self.toggles),
        }

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


def order_by_score(scores: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, ties by ascending entity id.

    ``id_rank[j]`` is the position of entity j's id in sorted id order.
    """
    return np.lexsort((id_rank, -scores))


def rank_from_scores(mention_id: str, gold_id: str, scores: np.ndarray, entity_ids: Sequence[str],
                     id_rank: np.ndarray | None = None, keep: int | None = None) -> RankedResult:
    if id_rank is None:
        id_rank = np.argsort(np.argsort(np.asarray(entity_ids, dtype=object)))
    order = order_by_score(scores, id_rank)
    ids = [entity_ids[j] for j in order]
    try:
        rank = ids.index(gold_id) + 1
    except ValueError:
        raise IntegrityError(f"gold entity {gold_id!r} of mention {mention_id!r} is not in the catalog") from None
    if keep is not None:
        order = order[:keep]
        ids = ids[:keep]
    return RankedResult(mention_id, tuple(ids), tuple(float(scores[j]) for j in order), rank)


def compute_metrics(results: Sequence[RankedResult] | Sequence[int]) -> MetricsReport:
    """MRR = mean reciprocal gold rank; Hits@n = fraction with gold rank <= n."""
    if len(results) == 0:
        raise ValueError("compute_metrics needs at least one result")
    ranks = np.array([r.gold_rank if isinstance(r, RankedResult) else int(r) for r in results])
    if np.any(ranks < 1):
        raise ValueError("ranks are 1-based")
    mrr = float(np.mean(1.0 / ranks))
    hits = {n: float(np.mean(ranks <= n)) for n in HITS_AT}
    detail = tuple(
        (r.mention_id if isinstance(r, RankedResult) else str(i), int(k))
        for i, (r, k) in enumerate(zip(results, ranks))
    )
    return MetricsReport(mrr, hits[1], hits[3], hits[5], len(ranks), detail)


class Ranker:
    """Scores mentions against a fixed, pre-encoded catalog."""

    def __init__(self, model, catalog: EntityCatalog, encoder: EncoderAdapter | None = None,
                 entity_features: EncodedSide | None = None):
        self.model = model
        self.config: RunConfig = model.config
        self.catalog = catalog
        if len(catalog) == 0:
            raise ValueError("catalog is empty")
        self.encoder = encoder or make_encoder(self.config.encoder_config())
        self.entities = entity_features or encode_entities(catalog.values(), self.encoder,
                                                           self.config.max_text_len)
        self.entity_ids = list(self.entities.ids)
        self.id_rank = np.argsort(np.argsort(np.asarray(self.entity_ids, dtype=object)))

    def scores(self, mentions: Sequence[MentionRecord] | EncodedSide) -> np.ndarray:
        feats = mentions if isinstance(mentions, EncodedSide) else \
            encode_mentions(mentions, self.encoder, self.config.max_text_len)
        return self.model.overall_scores(feats, self.entities, chunk=self.config.eval_chunk)

    def rank(self, mentions: Sequence[MentionRecord], keep: int | None = None,
             features: EncodedSide | None = None) -> list[RankedResult]:
        mentions = list(mentions)
        for m in mentions:
            if m.gold_entity_id not in self.catalog:
                raise IntegrityError(f"gold entity {m.gold_entity_id!r} of mention {m.id!r} is not in the catalog")
        S = self.scores(features if features is not None else mentions)
        return [rank_from_scores(m.id, m.gold_entity_id, S[i], self.entity_ids, self.id_rank, keep)
                for i, m in enumerate(mentions)]


def rank_entities(mention: MentionRecord, catalog: EntityCatalog, model,
                  encoder: EncoderAdapter | None = None) -> RankedResult:
    return Ranker(model, catalog, encoder).rank([mention])[0]


def evaluate_split(split: DatasetSplit, catalog: EntityCatalog, model, config: RunConfig | None = None,
                   encoder: EncoderAdapter | None = None, ranker: Ranker | None = None,
                   top: int = 3) -> tuple[MetricsReport, list[dict]]:
    """Metrics over ``split`` plus a top-``top`` prediction dump per mention."""
    config = config or model.config
    ranker = ranker or Ranker(model, catalog, encoder)
    results = ranker.rank(split.mentions)
    base = compute_metrics(results)
    report = MetricsReport(base.mrr, base.hits1, base.hits3, base.hits5, base.n_mentions,
                           base.per_mention, config.toggles, config.fingerprint())
    preds = [
        {"mention_id": r.mention_id, "gold_rank": r.gold_rank,
         "top": [{"entity_id": eid, "score": sc} for eid, sc in zip(r.entity_ids[:top], r.scores[:top])]}
        for r in results
    ]
    return report, preds


def save_predictions(preds: list[dict], path) -> None:
    write_json_lines(path, preds)


# --------------------------------------------------------------------------
# Ablations
# --------------------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    mrr: float | None = None
    hits1: float | None = None
    hits3: float | None = None
    hits5: float | None = None
    deltas: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> dict:
        return {"variant": self.variant, "mrr": self.mrr, "hits1": self.hits1, "hits3": self.hits3,
                "hits5": self.hits5, "deltas": self.deltas, "error": self.error}


def signed(x: float) -> str:
    return f"{x:+.4f}"


def ablation_sweep(base_config: RunConfig, toggles: Sequence[str], train: DatasetSplit,
                   valid: DatasetSplit, catalog: EntityCatalog, eval_split: DatasetSplit | None = None,
                   train_fn=None) -> list[AblationRow]:
    """Train and evaluate the base model and one variant per toggle.

    Returns rows (base first) whose ``deltas`` are ``variant - base`` per metric,
    formatted with an explicit sign. A failing variant is recorded, not raised.
    """
    from .training import train as default_train
    train_fn = train_fn or default_train
    eval_split = eval_split or valid
    for t in toggles:
        if t not in ABLATIONS:
            raise ValueError(f"unknown ablation {t!r}; choose from {list(ABLATIONS)}")

    def run(cfg):
        model, _ = train_fn(cfg, train, valid, catalog)
        report, _ = evaluate_split(eval_split, catalog, model, cfg)
        return report

    base_report = run(base_config)
    metrics = ("mrr", "hits1", "hits3", "hits5")
    rows = [AblationRow("base", *(getattr(base_report, k) for k in metrics))]
    for t in toggles:
        try:
            cfg = base_config.replace(**ABLATIONS[t])
            rep = run(cfg)
        except (LinkerError, ValueError) as exc:
            log.warning("ablation %s failed: %s", t, exc)
            rows.append(AblationRow(t, error=str(exc)))
            continue
        vals = [getattr(rep, k) for k in metrics]
        deltas = {k: signed(v - getattr(base_report, k)) for k, v in zip(metrics, vals)}
        rows.append(AblationRow(t, *vals, deltas=deltas))
    return rows


def format_ablation_table(rows: list[AblationRow]) -> str:
    lines = [f"{'variant':<16} {'MRR':>8} {'H@1':>8} {'H@3':>8} {'H@5':>8}  delta MRR"]
    for r in rows:
        if r.error:
            lines.append(f"{r.variant:<16} failed: {r.error}")
            continue
        lines.append(f"{r.variant:<16} {r.mrr:8.4f} {r.hits1:8.4f} {r.hits3:8.4f} {r.hits5:8.4f}  "
                     f"{r.deltas.get('mrr', '')}")
    return "\n".join(lines)
