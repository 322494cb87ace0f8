"""Synthetic datasets: a separable toy linking task and benchmark-shaped manifests."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import (DatasetSplit, EntityCatalog, EntityRecord, MentionRecord, benchmark_stats,
                   save_dataset, save_entity_catalog)

SPLITS = ("train", "valid", "test")
_FILLER_TRAIN = ("alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel")
_FILLER_VALID = ("india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa")


def toy_separable_task(root, n: int = 20, seed: int = 0, context_words: int = 4
                       ) -> tuple[DatasetSplit, DatasetSplit, EntityCatalog]:
    """``n`` entities with one train and one valid mention each.

    Entity i and its mentions share a unique key token and byte-identical
    image files, while filler words are shared across entities (and differ
    between train and valid), so the gold entity is the unique nearest
    neighbour on both modalities.
    """
    root = Path(root)
    img_dir = root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entities, train, valid = [], [], []
    for i in range(n):
        key = f"key{i:02d}"
        ent_img, men_img = img_dir / f"entity_{i:02d}.bin", img_dir / f"mention_{i:02d}.bin"
        payload = f"toy-image-{i}".encode()
        ent_img.write_bytes(payload)
        men_img.write_bytes(payload)
        entities.append(EntityRecord(f"E{i:02d}", key, f"{key} thing", str(ent_img)))
        for pool, bucket, tag in ((_FILLER_TRAIN, train, "t"), (_FILLER_VALID, valid, "v")):
            filler = " ".join(rng.choice(pool, size=context_words))
            bucket.append(MentionRecord(f"{tag}{i:02d}", key, f"{filler} {key}", f"E{i:02d}", str(men_img)))
    return DatasetSplit("train", tuple(train)), DatasetSplit("valid", tuple(valid)), EntityCatalog(entities)


def _spread(total: int, sizes: list[int]) -> list[int]:
    """Split ``total`` flagged items across groups proportionally (largest remainder)."""
    n = sum(sizes)
    raw = [total * s / n for s in sizes]
    out = [int(r) for r in raw]
    for i in sorted(range(len(sizes)), key=lambda i: out[i] - raw[i])[: total - sum(out)]:
        out[i] += 1
    return out


def write_benchmark_manifest(name: str, out_dir) -> dict[str, Path]:
    """Write placeholder mention and catalog files with a benchmark's published counts.

    Only the counted quantities are faithful (mentions per split, mentions
    and entities carrying an image); the text is filler. Returns paths keyed
    by ``train``/``valid``/``test``/``catalog``/``stats``.
    """
    stats = benchmark_stats(name)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_ent, n_ent_img = stats["entities"], stats["entities_with_image"]
    catalog = EntityCatalog(
        EntityRecord(f"{name}:E{j}", f"entity {j}", "", f"img/e{j}.jpg" if j < n_ent_img else None)
        for j in range(n_ent)
    )
    paths = {"catalog": out / "entities.jsonl"}
    save_entity_catalog(catalog, paths["catalog"])
    sizes = [stats[s]["mentions"] for s in SPLITS]
    with_img = _spread(stats["total"]["mentions_with_image"], sizes)
    offset = 0
    for split, size, n_img in zip(SPLITS, sizes, with_img):
        mentions = tuple(
            MentionRecord(f"{split}{i}", f"mention {offset + i}", "", f"{name}:E{(offset + i) % n_ent}",
                          f"img/m{offset + i}.jpg" if i < n_img else None)
            for i in range(size)
        )
        paths[split] = out / f"{split}.jsonl"
        save_dataset(DatasetSplit(split, mentions), paths[split])
        offset += size
    paths["stats"] = out / "stats.json"
    spec = {s: stats[s] for s in SPLITS} | {"total": stats["total"]}
    paths["stats"].write_text(json.dumps(spec, indent=2) + "\n", encoding="utf-8")
    return paths
