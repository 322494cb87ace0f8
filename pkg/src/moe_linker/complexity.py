"""Parameter and FLOP accounting.

Convention: a multiply-add counts as 2 FLOPs, an elementwise multiply or add
as 1. Transcendentals (exp, tanh, GELU), softmax normalisation and LayerNorm
statistics are not counted. Every text input is assumed to fill
``max_text_len`` tokens and every image ``num_patches`` patches, and one
"pair" is one mention scored against one entity including both sides'
feature computation.
"""
from __future__ import annotations

from .config import ABLATIONS, RunConfig
from .model import MatchingModel, build_model

FLOP_CONVENTION = ("multiply-add = 2 FLOPs; elementwise op = 1; transcendentals, softmax "
                   "normalisation and LayerNorm statistics excluded; inputs at full length")
REPORT_ROWS = ("full", "w/o IntraMoE-T", "w/o IntraMoE-V", "w/o InterMoE", "w/o SMoE")


def affine_params(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def ffn_params(d: int, hidden: int) -> int:
    """d -> hidden -> d with biases."""
    return affine_params(d, hidden) + affine_params(hidden, d)


def _ffn_flops(d: int, hidden: int) -> int:
    # two matmuls plus bias adds, per row
    return 2 * d * hidden + hidden + 2 * hidden * d + d


def smoe_block_flops(c: RunConfig, fine_rows: int) -> int:
    d, n = c.embed_dim, fine_rows + 1
    k = c.effective_top_k
    fuse = n * _ffn_flops(d, c.fuse_hidden_mult * d)
    per_layer = n * (2 * d * c.experts_K + k * _ffn_flops(d, c.expert_hidden_mult * d) + (2 * k - 1) * d)
    return fuse + c.smoe_layers * per_layer


def gated_fuse_flops(d: int, rows: int) -> int:
    # tanh(h)*h, logits, weighted sum, residual add, LayerNorm affine
    return d + 2 * rows * d + 2 * rows * d + d + 2 * d


def fine_match_flops(d: int, L_e: int, L_m: int) -> int:
    proj = 2 * L_e * d * d + 2 * 2 * L_m * d * d
    scores = 2 * L_e * L_m * d + L_e * L_m
    attend = 2 * L_e * L_m * d
    mean = L_e * d + d
    return proj + scores + attend + mean + 2 * d


def flops_per_pair(c: RunConfig) -> int:
    d, L, P = c.embed_dim, c.max_text_len, c.num_patches
    block = (lambda rows: smoe_block_flops(c, rows)) if c.use_smoe else (lambda rows: 0)
    per_side = 2 * (L + 1) * c.native_dim * d + 2 * (P + 1) * c.native_dim * d
    pair = 0
    if c.use_intra_text:
        per_side += block(L)
        pair += 2 * d + fine_match_flops(d, L, L) + 2
    if c.use_intra_visual:
        per_side += block(P)
        pair += 2 * d + fine_match_flops(d, P, P) + 2
    if c.use_inter:
        per_side += block(P) + block(L) + gated_fuse_flops(d, P) + gated_fuse_flops(d, L)
        pair += 2 * d + 2 * d + 2
    return 2 * per_side + pair + 2


def complexity_report(model: MatchingModel, config: RunConfig | None = None) -> dict:
    """Exact parameter count of ``model`` plus FLOPs per pair, with ablation rows."""
    config = config or model.config
    rows = []
    for name in REPORT_ROWS:
        try:
            cfg = config if name == "full" else config.replace(**ABLATIONS[name])
        except ValueError as exc:
            rows.append({"variant": name, "error": str(exc)})
            continue
        count = model.param_count() if name == "full" else build_model(cfg).param_count()
        rows.append({"variant": name, "param_count": count, "flops_per_pair": flops_per_pair(cfg)})
    return {
        "param_count": model.param_count(),
        "flops_per_pair": flops_per_pair(config),
        "convention": FLOP_CONVENTION,
        "rows": rows,
    }


def format_complexity(report: dict) -> str:
    lines = [f"# {report['convention']}", f"{'variant':<16} {'params':>12} {'FLOPs/pair':>16}"]
    for r in report["rows"]:
        if "error" in r:
            lines.append(f"{r['variant']:<16} n/a ({r['error']})")
        else:
            lines.append(f"{r['variant']:<16} {r['param_count']:>12,} {r['flops_per_pair']:>16,}")
    return "\n".join(lines)
