"""Mention-entity matching scores.

Batched functions take mention tensors with a leading ``Bm`` axis and entity
tensors with a leading ``Be`` axis and return ``(Bm, Be)`` score matrices;
row i, column j scores mention i against entity j. Single-pair helpers wrap
the batched path with batch size 1, so both always agree.
"""
from __future__ import annotations

import math
import warnings

import torch
import torch.nn as nn

from .errors import ShapeError


class AttentionParams(nn.Module):
    """Single-head query/key/value maps (d x d, no bias)."""

    def __init__(self, d: int, dtype=torch.float64):
        super().__init__()
        self.W_q = nn.Parameter(torch.empty(d, d, dtype=dtype))
        self.W_k = nn.Parameter(torch.empty(d, d, dtype=dtype))
        self.W_v = nn.Parameter(torch.empty(d, d, dtype=dtype))
        for w in (self.W_q, self.W_k, self.W_v):
            nn.init.normal_(w, std=d ** -0.5)

    @classmethod
    def identity(cls, d: int, dtype=torch.float64) -> "AttentionParams":
        p = cls(d, dtype)
        with torch.no_grad():
            for w in (p.W_q, p.W_k, p.W_v):
                w.copy_(torch.eye(d, dtype=dtype))
        return p


class LayerNorm(nn.Module):
    """LayerNorm over the last axis with learnable affine and eps=1e-5."""

    def __init__(self, d: int, eps: float = 1e-5, dtype=torch.float64):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(d, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(d, dtype=dtype))

    def normalize(self, x):
        mean = x.mean(dim=-1, keepdim=True)
        var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
        return (x - mean) / torch.sqrt(var + self.eps)

    def forward(self, x):
        return self.normalize(x) * self.weight + self.bias


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax over positions where ``mask`` is True; masked positions get exactly 0.

    A slice with no valid position yields all zeros.
    """
    mask = mask.expand_as(logits)
    neg_inf = torch.tensor(float("-inf"), dtype=logits.dtype)
    filled = torch.where(mask, logits, neg_inf)
    peak = filled.amax(dim=dim, keepdim=True)
    peak = torch.where(torch.isfinite(peak), peak, torch.zeros_like(peak)).detach()
    expo = torch.where(mask, torch.exp(filled - peak), torch.zeros_like(logits))
    denom = expo.sum(dim=dim, keepdim=True)
    return expo / torch.where(denom > 0, denom, torch.ones_like(denom))


def _check_width(*tensors):
    d = tensors[0].shape[-1]
    if any(t.shape[-1] != d for t in tensors):
        raise ShapeError("feature widths differ: " + ", ".join(str(tuple(t.shape)) for t in tensors))
    return d


# --------------------------------------------------------------------------
# Intra-level matching
# --------------------------------------------------------------------------

def coarse_match(h_e: torch.Tensor, h_m: torch.Tensor) -> torch.Tensor:
    if h_e.shape != h_m.shape:
        raise ShapeError(f"coarse vectors differ in shape: {tuple(h_e.shape)} vs {tuple(h_m.shape)}")
    return (h_e * h_m).sum(-1)


def coarse_match_matrix(h_m: torch.Tensor, h_e: torch.Tensor) -> torch.Tensor:
    _check_width(h_m, h_e)
    return h_m @ h_e.T


def fine_match_matrix(H_m, mask_m, H_e, mask_e, h_e, params: AttentionParams) -> torch.Tensor:
    """Attention-based fine-grained score for every mention/entity pair.

    Entity tokens query mention tokens: ``A = softmax(H_e W_q (H_m W_k)^T / sqrt(d))``
    over unpadded mention tokens, ``G`` is the mean of ``A H_m W_v`` over
    unpadded entity tokens and the score is ``h_e . G``. Shapes: H_m (Bm, L1, d),
    H_e (Be, L2, d), h_e (Be, d).
    """
    d = _check_width(H_m, H_e, h_e, params.W_q)
    M = H_e @ params.W_q                    # (Be, L2, d)
    K = H_m @ params.W_k                    # (Bm, L1, d)
    V = H_m @ params.W_v                    # (Bm, L1, d)
    X = torch.einsum("eqd,mkd->meqk", M, K) / math.sqrt(d)
    A = masked_softmax(X, mask_m[:, None, None, :])
    AV = torch.einsum("meqk,mkd->meqd", A, V)
    w = mask_e.to(AV.dtype)
    count = w.sum(-1)
    G = torch.einsum("meqd,eq->med", AV, w) / torch.where(count > 0, count, torch.ones_like(count))[None, :, None]
    return torch.einsum("med,ed->me", G, h_e)


def fine_match(H_e, mask_e, H_m, mask_m, h_e, params: AttentionParams) -> torch.Tensor:
    """Single-pair fine-grained score; 0 with a warning if the mention has no valid token."""
    if not bool(mask_m.any()):
        warnings.warn("fine_match: mention side is fully masked; score defined as 0", RuntimeWarning)
    return fine_match_matrix(H_m[None], mask_m[None], H_e[None], mask_e[None], h_e[None], params)[0, 0]


def attention_weights(H_e, H_m, mask_m, params: AttentionParams) -> torch.Tensor:
    """The (L2, L1) assignment matrix of a single pair, for inspection."""
    d = H_e.shape[-1]
    X = (H_e @ params.W_q) @ (H_m @ params.W_k).T / math.sqrt(d)
    return masked_softmax(X, mask_m[None, :])


# --------------------------------------------------------------------------
# Inter-level matching
# --------------------------------------------------------------------------

def gated_fuse(h: torch.Tensor, H: torch.Tensor, mask: torch.Tensor, ln: LayerNorm) -> torch.Tensor:
    """Gate one modality's coarse vector with the other's fine rows.

    ``E = LayerNorm(tanh(h) * h + softmax(h . H^T) H)``, softmax over unmasked
    rows. Batched over a leading axis: h (B, d), H (B, P, d), mask (B, P).
    A fully masked row set falls back to attending the first (placeholder) row.
    """
    _check_width(h, H)
    empty = ~mask.any(dim=-1)
    if bool(empty.any()):
        mask = mask.clone()
        mask[empty, 0] = True
    gated = torch.tanh(h) * h
    logits = torch.einsum("bd,bpd->bp", h, H)
    a = masked_softmax(logits, mask)
    attended = torch.einsum("bp,bpd->bd", a, H)
    return ln(gated + attended)


def gated_match_matrix(E_m: torch.Tensor, E_e: torch.Tensor) -> torch.Tensor:
    return E_m @ E_e.T
