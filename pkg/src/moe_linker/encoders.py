"""Coarse and fine-grained feature extraction.

The toy encoder stands in for a pretrained vision-language model: it maps
whitespace tokens and image-file digests to seeded pseudo-random embeddings,
which is enough to exercise everything downstream of the encoder. Pretrained
adapters plug in through :func:`register_encoder`.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import EncodingError, ShapeError

TEXT, VISUAL = "text", "visual"
MENTION, ENTITY = "mention", "entity"
TEXT_SEPARATOR = "[SEP]"


@dataclass(frozen=True)
class FeatureBundle:
    """Features of one modality of one object.

    ``coarse`` is the sequence summary (length d), ``fine`` holds one row per
    token or patch and ``mask`` flags real rows (False = padding).
    """
    coarse: np.ndarray
    fine: np.ndarray
    mask: np.ndarray
    modality: str = TEXT
    side: str = MENTION

    def __post_init__(self):
        if self.fine.ndim != 2 or self.coarse.ndim != 1:
            raise ShapeError("coarse must be a vector and fine a matrix")
        if self.coarse.shape[0] != self.fine.shape[1]:
            raise ShapeError(f"coarse length {self.coarse.shape[0]} != fine width {self.fine.shape[1]}")
        if self.mask.shape != (self.fine.shape[0],):
            raise ShapeError("mask length must equal the number of fine rows")
        if self.modality not in (TEXT, VISUAL) or self.side not in (MENTION, ENTITY):
            raise ValueError(f"bad modality/side {self.modality!r}/{self.side!r}")

    @property
    def dim(self) -> int:
        return self.coarse.shape[0]


class EncoderAdapter(Protocol):
    native_dim: int

    def encode_text(self, text: str, max_len: int) -> FeatureBundle: ...

    def encode_image(self, image_ref: str | None) -> FeatureBundle: ...


def _seeded_vector(key: str, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim) / np.sqrt(dim)


@lru_cache(maxsize=65536)
def _token_vector(token: str, seed: int, dim: int) -> np.ndarray:
    v = _seeded_vector(f"tok\x00{seed}\x00{token}", dim)
    v.setflags(write=False)
    return v


def toy_encode_text(text: str, max_len: int, seed: int = 0, native_dim: int = 32,
                    side: str = MENTION) -> FeatureBundle:
    """Whitespace-tokenize, truncate to ``max_len`` and embed each token.

    The coarse vector is the mean of the unpadded rows (zero for empty text).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    tokens = text.split()[:max_len]
    fine = np.zeros((max_len, native_dim))
    mask = np.zeros(max_len, dtype=bool)
    for i, tok in enumerate(tokens):
        fine[i] = _token_vector(tok, seed, native_dim)
        mask[i] = True
    coarse = fine[mask].mean(axis=0) if tokens else np.zeros(native_dim)
    return FeatureBundle(coarse, fine, mask, TEXT, side)


def toy_encode_image(image_ref: str | None, num_patches: int, seed: int = 0,
                     native_dim: int = 32, side: str = MENTION) -> FeatureBundle:
    """Patch embeddings keyed by the file's byte digest.

    A missing image becomes a single seeded placeholder patch; the remaining
    rows are padding.
    """
    if num_patches < 1:
        raise ValueError("num_patches must be >= 1")
    fine = np.zeros((num_patches, native_dim))
    mask = np.zeros(num_patches, dtype=bool)
    if image_ref is None:
        fine[0] = _seeded_vector(f"placeholder\x00{seed}", native_dim)
        mask[0] = True
    else:
        try:
            payload = Path(image_ref).read_bytes()
        except OSError as exc:
            raise EncodingError(f"cannot read image {image_ref!r}: {exc}") from exc
        digest = hashlib.sha256(payload).hexdigest()
        for p in range(num_patches):
            fine[p] = _seeded_vector(f"img\x00{seed}\x00{digest}\x00{p}", native_dim)
        mask[:] = True
    coarse = fine[mask].mean(axis=0)
    return FeatureBundle(coarse, fine, mask, VISUAL, side)


class ToyEncoder:
    def __init__(self, native_dim: int = 32, num_patches: int = 32, seed: int = 0):
        self.native_dim = native_dim
        self.num_patches = num_patches
        self.seed = seed

    def encode_text(self, text: str, max_len: int, side: str = MENTION) -> FeatureBundle:
        return toy_encode_text(text, max_len, self.seed, self.native_dim, side)

    def encode_image(self, image_ref: str | None, side: str = MENTION) -> FeatureBundle:
        return toy_encode_image(image_ref, self.num_patches, self.seed, self.native_dim, side)


def project_to_model_dim(bundle: FeatureBundle, d: int, weights) -> FeatureBundle:
    """Apply the linear map ``weights`` (native_dim x d) to coarse and fine rows."""
    weights = np.asarray(weights)
    if weights.shape != (bundle.dim, d):
        raise ShapeError(f"projection must be {bundle.dim}x{d}, got {weights.shape}")
    return FeatureBundle(bundle.coarse @ weights, bundle.fine @ weights, bundle.mask.copy(),
                         bundle.modality, bundle.side)


# name -> factory(config_dict) -> EncoderAdapter
_ENCODERS: dict[str, Callable[[dict], EncoderAdapter]] = {
    "toy": lambda cfg: ToyEncoder(cfg.get("native_dim", 32), cfg.get("num_patches", 32),
                                  cfg.get("encoder_seed", 0)),
}


def register_encoder(name: str, factory: Callable[[dict], EncoderAdapter]) -> None:
    """Make a pretrained adapter available under ``name`` (e.g. ``"pretrained"``)."""
    _ENCODERS[name] = factory


def make_encoder(cfg: dict) -> EncoderAdapter:
    name = cfg.get("encoder", "toy")
    try:
        factory = _ENCODERS[name]
    except KeyError:
        raise ValueError(
            f"no encoder registered under {name!r}; register a pretrained adapter "
            f"with moe_linker.encoders.register_encoder first"
        ) from None
    enc = factory(cfg)
    if enc.native_dim != cfg.get("native_dim", enc.native_dim):
        raise ShapeError(f"encoder native_dim {enc.native_dim} != configured {cfg['native_dim']}")
    return enc


# --------------------------------------------------------------------------
# Record -> padded batch arrays
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EncodedSide:
    """Stacked native-dimension features for N objects (mentions or entities)."""
    ids: tuple[str, ...]
    text_coarse: np.ndarray   # (N, D)
    text_fine: np.ndarray     # (N, L, D)
    text_mask: np.ndarray     # (N, L)
    vis_coarse: np.ndarray    # (N, D)
    vis_fine: np.ndarray      # (N, P, D)
    vis_mask: np.ndarray      # (N, P)

    def __len__(self):
        return len(self.ids)

    def take(self, idx) -> "EncodedSide":
        idx = np.asarray(idx, dtype=np.int64)
        return EncodedSide(tuple(self.ids[i] for i in idx), self.text_coarse[idx], self.text_fine[idx],
                           self.text_mask[idx], self.vis_coarse[idx], self.vis_fine[idx], self.vis_mask[idx])


def stack_bundles(ids, text_bundles, vis_bundles) -> EncodedSide:
    return EncodedSide(
        tuple(ids),
        np.stack([b.coarse for b in text_bundles]),
        np.stack([b.fine for b in text_bundles]),
        np.stack([b.mask for b in text_bundles]),
        np.stack([b.coarse for b in vis_bundles]),
        np.stack([b.fine for b in vis_bundles]),
        np.stack([b.mask for b in vis_bundles]),
    )


def mention_text(mention_word: str, context: str) -> str:
    return f"{mention_word} {TEXT_SEPARATOR} {context}"


def entity_text(name: str, attributes: str) -> str:
    return f"{name} {TEXT_SEPARATOR} {attributes}"


def encode_mentions(mentions, encoder: EncoderAdapter, max_text_len: int) -> EncodedSide:
    mentions = list(mentions)
    text = [encoder.encode_text(mention_text(m.mention_word, m.text_context), max_text_len)
            for m in mentions]
    vis = [encoder.encode_image(m.image_ref) for m in mentions]
    return stack_bundles([m.id for m in mentions], text, vis)


def encode_entities(entities, encoder: EncoderAdapter, max_text_len: int) -> EncodedSide:
    entities = list(entities)
    text = [encoder.encode_text(entity_text(e.name, e.attributes), max_text_len) for e in entities]
    vis = [encoder.encode_image(e.image_ref) for e in entities]
    return stack_bundles([e.entity_id for e in entities], text, vis)
