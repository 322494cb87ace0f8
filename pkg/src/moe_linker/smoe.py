"""Switch mixture-of-experts over fused coarse + fine features.

One block does three things:

1. fuse: the coarse vector is appended to the fine rows as one extra token
   and a row-wise MLP is applied;
2. route: every valid token is sent to its top-k experts (full softmax over
   all K router logits, truncated to the selected experts and renormalised);
3. split: the coarse token is taken back out, leaving the fine rows in order.

Padding rows are never routed; they pass through each layer unchanged and
cannot influence any valid row.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NumericError, ShapeError


class ExpertFFN(nn.Module):
    """Two affine maps with a GELU in between, d -> hidden -> d."""

    def __init__(self, d: int, hidden: int, dtype=torch.float64):
        super().__init__()
        self.fc1 = nn.Linear(d, hidden, dtype=dtype)
        self.fc2 = nn.Linear(hidden, d, dtype=dtype)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


# the fusion MLP has the same shape as an expert
FuseMLP = ExpertFFN


@dataclass(frozen=True)
class GateVector:
    weights: torch.Tensor   # (K,) full softmax
    selected: tuple[int, ...]


def fuse(fine: torch.Tensor, coarse: torch.Tensor, mlp=None) -> tuple[torch.Tensor, int]:
    """Append ``coarse`` as an extra row of ``fine`` and apply ``mlp`` row-wise.

    Works on a single object (``fine`` L x d, ``coarse`` d) or a batch
    (B x L x d, B x d). Returns ``(P, coarse_slot)``; the slot is always the
    last row.
    """
    if fine.shape[-1] != coarse.shape[-1] or fine.shape[:-2] != coarse.shape[:-1]:
        raise ShapeError(f"cannot fuse fine {tuple(fine.shape)} with coarse {tuple(coarse.shape)}")
    P = torch.cat([fine, coarse.unsqueeze(-2)], dim=-2)
    if mlp is not None:
        P = mlp(P)
    return P, P.shape[-2] - 1


def split(Q: torch.Tensor, coarse_slot: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Inverse of :func:`fuse`: ``(h, H)`` with H's rows in their original order."""
    n = Q.shape[-2]
    if not 0 <= coarse_slot < n:
        raise ShapeError(f"coarse slot {coarse_slot} out of range for {n} rows")
    h = Q[..., coarse_slot, :]
    H = torch.cat([Q[..., :coarse_slot, :], Q[..., coarse_slot + 1:, :]], dim=-2)
    return h, H


def top_k_indices(weights: torch.Tensor, k: int) -> torch.Tensor:
    """Indices of the k largest entries per row; ties go to the lower index."""
    order = torch.sort(weights, dim=-1, descending=True, stable=True).indices
    return order[..., :k]


def route(token: torch.Tensor, router_weight: torch.Tensor, k: int) -> GateVector:
    """Softmax gate of a single token over all K experts plus its top-k set."""
    if token.shape[-1] != router_weight.shape[0]:
        raise ShapeError("token length does not match router input dimension")
    if not torch.isfinite(token).all():
        raise NumericError("non-finite token passed to router")
    K = router_weight.shape[1]
    weights = torch.softmax(token @ router_weight, dim=-1)
    selected = top_k_indices(weights, min(k, K))
    return GateVector(weights, tuple(int(i) for i in selected))


class SmoeLayer(nn.Module):
    """Sparse top-k layer of K independent expert FFNs with a linear router."""

    def __init__(self, d: int, num_experts: int, k: int, hidden: int | None = None,
                 dtype=torch.float64):
        super().__init__()
        if not 1 <= k <= num_experts:
            raise ValueError(f"need 1 <= k <= K, got k={k}, K={num_experts}")
        self.d = d
        self.k = k
        self.router = nn.Parameter(torch.empty(d, num_experts, dtype=dtype))
        nn.init.normal_(self.router, std=d ** -0.5)
        self.experts = nn.ModuleList(ExpertFFN(d, hidden or 4 * d, dtype) for _ in range(num_experts))

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    def gate(self, X: torch.Tensor):
        """Full softmax weights (N, K) and top-k selection (N, k) for rows of X."""
        if not torch.isfinite(X).all():
            raise NumericError("non-finite values reached the router")
        weights = torch.softmax(X @ self.router, dim=-1)
        return weights, top_k_indices(weights.detach(), self.k)

    def forward(self, P: torch.Tensor, mask: torch.Tensor | None = None,
                selected: torch.Tensor | None = None, return_selection: bool = False):
        """Route the valid rows of ``P`` (..., n, d).

        ``selected`` (one row of k expert indices per valid row) freezes the
        routing decision, e.g. for finite-difference checks.
        """
        if P.shape[-1] != self.d:
            raise ShapeError(f"expected rows of width {self.d}, got {P.shape[-1]}")
        flat = P.reshape(-1, self.d)
        if mask is None:
            rows = torch.arange(flat.shape[0])
        else:
            rows = torch.nonzero(mask.reshape(-1), as_tuple=False).squeeze(-1)
        X = flat.index_select(0, rows)
        weights, top = self.gate(X)
        if selected is not None:
            if selected.shape != top.shape:
                raise ShapeError(f"fixed selection has shape {tuple(selected.shape)}, expected {tuple(top.shape)}")
            top = selected
        gates = weights.gather(-1, top)
        gates = gates / gates.sum(dim=-1, keepdim=True)

        mixed = torch.zeros_like(X)
        for e, expert in enumerate(self.experts):
            hit_row, hit_slot = torch.nonzero(top == e, as_tuple=True)
            if hit_row.numel() == 0:
                continue
            y = expert(X.index_select(0, hit_row))
            mixed = mixed.index_add(0, hit_row, gates[hit_row, hit_slot].unsqueeze(-1) * y)
        out = flat.index_copy(0, rows, mixed).reshape(P.shape)
        return (out, top) if return_selection else out


class SmoeBlock(nn.Module):
    """fuse -> ``num_layers`` stacked SMoE layers -> split."""

    def __init__(self, d: int, num_experts: int, k: int, num_layers: int = 1,
                 expert_hidden_mult: int = 4, fuse_hidden_mult: int = 1, dtype=torch.float64):
        super().__init__()
        self.fuse_mlp = FuseMLP(d, fuse_hidden_mult * d, dtype)
        self.layers = nn.ModuleList(
            SmoeLayer(d, num_experts, min(k, num_experts), expert_hidden_mult * d, dtype)
            for _ in range(num_layers)
        )

    def forward(self, fine: torch.Tensor, coarse: torch.Tensor, mask: torch.Tensor | None = None,
                selections=None, return_selections: bool = False):
        P, slot = fuse(fine, coarse, self.fuse_mlp)
        full_mask = None
        if mask is not None:
            ones = torch.ones(mask.shape[:-1] + (1,), dtype=torch.bool)
            full_mask = torch.cat([mask, ones], dim=-1)
        used = []
        Q = P
        for i, layer in enumerate(self.layers):
            fixed = None if selections is None else selections[i]
            Q, sel = layer(Q, full_mask, selected=fixed, return_selection=True)
            used.append(sel)
        h, H = split(Q, slot)
        return (h, H, used) if return_selections else (h, H)


def dense_mixture(layer: SmoeLayer, P: torch.Tensor) -> torch.Tensor:
    """Reference: every expert evaluated, weighted by the full softmax."""
    X = P.reshape(-1, layer.d)
    weights = torch.softmax(X @ layer.router, dim=-1)
    out = sum(weights[:, e:e + 1] * expert(X) for e, expert in enumerate(layer.experts))
    return out.reshape(P.shape)
