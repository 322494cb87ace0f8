import pytest

from moe_linker.complexity import (REPORT_ROWS, complexity_report, ffn_params, flops_per_pair,
                                   format_complexity, smoe_block_flops)
from moe_linker.config import RunConfig
from moe_linker.model import build_model
from moe_linker.smoe import ExpertFFN


def test_ffn_hand_case():
    assert ffn_params(4, 8) == (4 * 8 + 8) + (8 * 4 + 4) == 76
    assert sum(p.numel() for p in ExpertFFN(4, 8).parameters()) == 76


def test_param_count_is_tensor_sum(small_config):
    model = build_model(small_config)
    rep = complexity_report(model)
    assert rep["param_count"] == sum(t.numel() for t in model.state_dict().values())
    assert [r["variant"] for r in rep["rows"]] == list(REPORT_ROWS)
    assert "multiply-add = 2" in format_complexity(rep)


def test_doubling_experts(small_config):
    cfg = small_config.replace(experts_K=2, top_k=1)
    wide = cfg.replace(experts_K=4)

    def expert_params(c):
        return sum(t.numel() for k, t in build_model(c).state_dict().items() if ".experts." in k)
    assert expert_params(wide) == 2 * expert_params(cfg)
    d, blocks = cfg.embed_dim, 4
    rows = 2 * ((cfg.max_text_len + 1) * 2 + (cfg.num_patches + 1) * 2)  # both sides, four blocks
    router_delta = rows * 2 * d * (wide.experts_K - cfg.experts_K)
    assert flops_per_pair(wide) - flops_per_pair(cfg) == router_delta
    assert blocks == 4


def test_block_flops_by_hand():
    c = RunConfig(seed=0, embed_dim=2, experts_K=2, top_k=1, expert_hidden_mult=1, fuse_hidden_mult=1)
    # rows = 1 fine + 1 coarse; ffn(2,2) = 2*2*2 + 2 + 2*2*2 + 2 = 20
    fuse = 2 * 20
    layer = 2 * (2 * 2 * 2 + 1 * 20 + 1 * 2)
    assert smoe_block_flops(c, 1) == fuse + layer


def test_ablations_reduce_cost(small_config):
    rows = {r["variant"]: r for r in complexity_report(build_model(small_config))["rows"]}
    for name in REPORT_ROWS[1:]:
        assert rows[name]["param_count"] < rows["full"]["param_count"]
        assert rows[name]["flops_per_pair"] < rows["full"]["flops_per_pair"]
