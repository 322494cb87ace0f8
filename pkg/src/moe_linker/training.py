"""Contrastive objective and the optimisation loop."""
from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import DatasetSplit, EntityCatalog
from .encoders import EncoderAdapter, encode_entities, encode_mentions, make_encoder
from .errors import IntegrityError, NumericError, ShapeError, TrainingError
from .evaluation import Ranker, compute_metrics
from .model import DTYPE, MatchingModel, build_model

log = logging.getLogger(__name__)

CHANNELS = ("O", "T", "V", "C")


def contrastive_loss(score_row, positive_index: int) -> torch.Tensor:
    """``-log softmax(score_row)[positive_index]`` via log-sum-exp."""
    s = score_row if isinstance(score_row, torch.Tensor) else torch.as_tensor(score_row, dtype=DTYPE)
    if s.ndim != 1 or s.numel() == 0:
        raise ShapeError("score_row must be a non-empty vector")
    if not 0 <= positive_index < s.numel():
        raise IndexError(f"positive_index {positive_index} out of range for {s.numel()} scores")
    if not torch.isfinite(s).all():
        raise NumericError("non-finite score in contrastive loss")
    return (torch.logsumexp(s, dim=0) - s[positive_index]).clamp_min(0.0)


def channel_loss(S: torch.Tensor) -> torch.Tensor:
    """Mean in-batch contrastive loss of a square matrix whose diagonal holds the positives."""
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"score matrix must be square, got {tuple(S.shape)}")
    if not torch.isfinite(S).all():
        raise NumericError("non-finite score in contrastive loss")
    per_row = torch.logsumexp(S, dim=1) - torch.diagonal(S)
    return per_row.clamp_min(0.0).mean()


def total_loss(matrices: dict, channels=CHANNELS) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Sum of the per-channel losses over ``channels`` (subset of O, T, V, C)."""
    channels = tuple(channels)
    if not channels:
        raise ValueError("at least one loss channel must be enabled")
    breakdown = {}
    for c in channels:
        if c not in CHANNELS:
            raise ValueError(f"unknown loss channel {c!r}")
        breakdown[c] = channel_loss(matrices[c])
    total = breakdown[channels[0]]
    for c in channels[1:]:
        total = total + breakdown[c]
    return total, breakdown


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    L_O: float | None
    L_T: float | None
    L_V: float | None
    L_C: float | None
    val_mrr: float
    val_hits1: float
    wall_seconds: float


def train(config: RunConfig, train_split: DatasetSplit, valid_split: DatasetSplit,
          catalog: EntityCatalog, *, encoder: EncoderAdapter | None = None, log_path=None,
          checkpoint_path=None) -> tuple[MatchingModel, list[EpochRecord]]:
    """Mini-batch AdamW on in-batch-negative score matrices.

    Each batch scores its mentions against their own gold entities, so the
    positives sit on the diagonal. Validation MRR is measured against the
    full catalog after every epoch and the best epoch's parameters are
    returned (earliest epoch on ties).
    """
    model = build_model(config)
    history: list[EpochRecord] = []
    if config.epochs == 0:
        if checkpoint_path:
            save_checkpoint(model, checkpoint_path)
        return model, history
    if len(train_split) == 0 or len(valid_split) == 0:
        raise ValueError("training needs non-empty train and valid splits")
    channels = config.enabled_channels
    if not channels:
        raise TrainingError("every loss channel is disabled")

    encoder = encoder or make_encoder(config.encoder_config())
    L = config.max_text_len
    entities = encode_entities(catalog.values(), encoder, L)
    index = {eid: i for i, eid in enumerate(entities.ids)}
    try:
        gold = np.array([index[m.gold_entity_id] for m in train_split], dtype=np.int64)
    except KeyError as exc:
        raise IntegrityError(f"training gold entity {exc.args[0]!r} missing from catalog") from None
    mentions = encode_mentions(train_split, encoder, L)
    valid_feats = encode_mentions(valid_split, encoder, L)
    ranker = Ranker(model, catalog, encoder, entity_features=entities)

    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2),
                            weight_decay=config.weight_decay)
    gen = torch.Generator().manual_seed(config.seed)
    log_fh = None
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_fh = open(log_path, "w", encoding="utf-8")

    best_mrr, best_state, stale = -math.inf, copy.deepcopy(model.state_dict()), 0
    n = len(train_split)
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            perm = torch.randperm(n, generator=gen).numpy()
            sums = dict.fromkeys(("total",) + channels, 0.0)
            n_batches = 0
            for start in range(0, n, config.batch_size):
                idx = perm[start:start + config.batch_size]
                mats = model.score_matrix(mentions.take(idx), entities.take(gold[idx]))
                loss, parts = total_loss(mats, channels)
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}: "
                                        + ", ".join(f"L_{c}={v.item()}" for c, v in parts.items()))
                opt.zero_grad()
                loss.backward()
                opt.step()
                sums["total"] += loss.item()
                for c, v in parts.items():
                    sums[c] += v.item()
                n_batches += 1
            with torch.no_grad():
                val = compute_metrics(ranker.rank(valid_split.mentions, features=valid_feats))
            rec = EpochRecord(
                epoch, sums["total"] / n_batches,
                *(sums[c] / n_batches if c in channels else None for c in CHANNELS),
                val.mrr, val.hits1, time.perf_counter() - t0,
            )
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(asdict(rec)) + "\n")
                log_fh.flush()
            log.info("epoch %d loss %.5f val_mrr %.4f", epoch, rec.train_loss, rec.val_mrr)
            if val.mrr > best_mrr:
                best_mrr, best_state, stale = val.mrr, copy.deepcopy(model.state_dict()), 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    log.info("early stop after %d epochs without improvement", stale)
                    break
    finally:
        if log_fh:
            log_fh.close()
    model.load_state_dict(best_state)
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path)
    return model, history


def loss_on_batch(model: MatchingModel, mentions, entities, channels=CHANNELS) -> torch.Tensor:
    """Total loss of one aligned batch (mention i pairs with entity i)."""
    return total_loss(model.score_matrix(mentions, entities), channels)[0]
