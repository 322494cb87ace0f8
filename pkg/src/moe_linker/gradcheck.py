"""Central finite-difference checks of autograd gradients.

Each component is wrapped as a scalar probe ``sum(w * f(inputs, params))``
with a fixed random weighting ``w``; every input and parameter tensor is a
leaf. Relative error per element is ``|a - n| / max(|a| + |n|, floor)``.
"""
from __future__ import annotations

from typing import Callable

import torch

from .matching import AttentionParams, LayerNorm, coarse_match, fine_match, gated_fuse
from .smoe import SmoeBlock

COMPONENTS = ("projection", "coarse_match", "fine_match", "gated_fuse", "contrastive_loss", "smoe")
ERROR_FLOOR = 1e-7
DTYPE = torch.float64


def _probe(seed: int, component: str, dim: int, length: int, experts: int, top_k: int
           ) -> tuple[Callable[[], torch.Tensor], dict[str, torch.Tensor]]:
    g = torch.Generator().manual_seed(seed)
    rand = lambda *shape: torch.randn(*shape, generator=g, dtype=DTYPE)
    leaves: dict[str, torch.Tensor] = {}

    if component == "projection":
        leaves = {"x": rand(length, dim + 1), "W": rand(dim + 1, dim)}
        w = rand(length, dim)
        f = lambda: (w * (leaves["x"] @ leaves["W"])).sum()

    elif component == "coarse_match":
        leaves = {"h_e": rand(dim), "h_m": rand(dim)}
        f = lambda: coarse_match(leaves["h_e"], leaves["h_m"])

    elif component == "fine_match":
        attn = AttentionParams(dim)
        with torch.no_grad():
            for p in attn.parameters():
                p.copy_(rand(*p.shape) / dim ** 0.5)
        mask_m = torch.ones(length + 1, dtype=torch.bool)
        mask_m[-1] = False
        mask_e = torch.ones(length, dtype=torch.bool)
        leaves = {"H_e": rand(length, dim), "H_m": rand(length + 1, dim), "h_e": rand(dim),
                  **{f"attn.{k}": p for k, p in attn.named_parameters()}}
        f = lambda: fine_match(leaves["H_e"], mask_e, leaves["H_m"], mask_m, leaves["h_e"], attn)

    elif component == "gated_fuse":
        ln = LayerNorm(dim)
        with torch.no_grad():
            ln.weight.copy_(1 + 0.1 * rand(dim))
            ln.bias.copy_(0.1 * rand(dim))
        mask = torch.ones(1, length + 1, dtype=torch.bool)
        mask[0, -1] = False
        leaves = {"h": rand(1, dim), "H": rand(1, length + 1, dim),
                  **{f"ln.{k}": p for k, p in ln.named_parameters()}}
        w = rand(1, dim)
        f = lambda: (w * gated_fuse(leaves["h"], leaves["H"], mask, ln)).sum()

    elif component == "contrastive_loss":
        from .training import contrastive_loss
        leaves = {"scores": rand(length + 1)}
        f = lambda: contrastive_loss(leaves["scores"], 0)

    elif component == "smoe":
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            block = SmoeBlock(dim, experts, top_k, num_layers=1, expert_hidden_mult=2)
        fine, coarse = rand(length, dim), rand(dim)
        mask = torch.ones(length, dtype=torch.bool)
        with torch.no_grad():
            _, _, frozen = block(fine, coarse, mask, return_selections=True)
        leaves = {"fine": fine, "coarse": coarse, **{f"smoe.{k}": p for k, p in block.named_parameters()}}
        w_h, w_H = rand(dim), rand(length, dim)

        def f():
            h, H = block(leaves["fine"], leaves["coarse"], mask, selections=frozen)
            return (w_h * h).sum() + (w_H * H).sum()

    else:
        raise ValueError(f"unknown component {component!r}; choose from {COMPONENTS}")
    return f, leaves


def grad_check_report(component: str, dim: int = 4, eps: float = 1e-5, seed: int = 0, length: int = 3,
                      experts: int = 2, top_k: int = 2) -> dict[str, float]:
    """Max relative error per leaf tensor."""
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    f, leaves = _probe(seed, component, dim, length, experts, top_k)
    for t in leaves.values():
        t.requires_grad_(True)
        t.grad = None
    f().backward()
    # an expert no token was routed to has no grad; its true gradient is zero
    analytic = {k: torch.zeros_like(t) if t.grad is None else t.grad.detach().clone() for k, t in leaves.items()}
    report = {}
    with torch.no_grad():
        for name, t in leaves.items():
            flat = t.view(-1)
            numeric = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * eps)
            a = analytic[name].view(-1)
            rel = (a - numeric).abs() / torch.clamp(a.abs() + numeric.abs(), min=ERROR_FLOOR)
            report[name] = float(rel.max())
    return report


def grad_check(component: str, dim: int = 4, eps: float = 1e-5, seed: int = 0, **kw) -> float:
    """Max relative error between analytic and finite-difference gradients."""
    return max(grad_check_report(component, dim, eps, seed, **kw).values())
