import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from moe_linker.config import ABLATIONS
from moe_linker.encoders import ToyEncoder, encode_entities, encode_mentions
from moe_linker.data import EntityRecord, MentionRecord
from moe_linker.matching import AttentionParams, LayerNorm
from moe_linker.model import ScoreSet, build_model, inter_score, intra_score
from moe_linker.smoe import SmoeBlock


def _sides(cfg, n_m=3, n_e=4):
    enc = ToyEncoder(cfg.native_dim, cfg.num_patches, 0)
    ments = [MentionRecord(f"m{i}", f"w{i}", "a b c" if i % 2 else "x", "E0") for i in range(n_m)]
    ents = [EntityRecord(f"E{j}", f"n{j}", "attr q" * (j % 2)) for j in range(n_e)]
    return encode_mentions(ments, enc, cfg.max_text_len), encode_entities(ents, enc, cfg.max_text_len)


class TestScoreSet:
    def test_sum(self):
        s = ScoreSet.from_components(cm_T=1, fm_T=1, cm_V=2, fm_V=2, tvm=3, vtm=3)
        assert (s.s_T, s.s_V, s.s_C, s.s_O) == (1, 2, 3, 6)

    def test_without_inter(self):
        s = ScoreSet.from_components(cm_T=1, fm_T=1, cm_V=2, fm_V=2, tvm=3, vtm=3, channels="TV")
        assert s.s_O == s.s_T + s.s_V == 3

    def test_averages(self):
        assert ScoreSet.from_components(cm_T=4, fm_T=2).s_T == 3
        assert ScoreSet.from_components(tvm=1, vtm=3).s_C == 2


class TestModel:
    def test_identities_hold(self, small_config):
        model = build_model(small_config)
        m, e = _sides(small_config)
        for row in model.score_sets(m, e):
            for s in row:
                assert abs(s.s_T - (s.cm_T + s.fm_T) / 2) <= 1e-6
                assert abs(s.s_V - (s.cm_V + s.fm_V) / 2) <= 1e-6
                assert abs(s.s_C - (s.tvm + s.vtm) / 2) <= 1e-6
                assert abs(s.s_O - (s.s_T + s.s_V + s.s_C)) <= 1e-6

    def test_singleton_equals_pair(self, small_config):
        model = build_model(small_config)
        m, e = _sides(small_config, 1, 1)
        assert model.score_sets(m, e)[0][0] == model.score_pair(m, e)

    def test_cardinality(self, small_config):
        m, e = _sides(small_config, 4, 4)
        rows = build_model(small_config).score_sets(m, e)
        assert len(rows) == 4 and all(len(r) == 4 for r in rows)

    def test_deterministic(self, small_config):
        m, e = _sides(small_config, 1, 1)
        assert build_model(small_config).score_pair(m, e) == build_model(small_config).score_pair(m, e)

    @given(st.permutations(range(4)))
    def test_entity_permutation_permutes_columns(self, small_config, perm):
        model = build_model(small_config)
        m, e = _sides(small_config)
        with torch.no_grad():
            S = model.score_matrix(m, e)["O"]
            Sp = model.score_matrix(m, e.take(list(perm)))["O"]
        assert torch.allclose(Sp, S[:, list(perm)], rtol=1e-12, atol=1e-12)

    def test_without_inter_drops_channel(self, small_config):
        cfg = small_config.replace(**ABLATIONS["w/o InterMoE"])
        model = build_model(cfg)
        assert not hasattr(model, "inter_tv")
        m, e = _sides(cfg)
        with torch.no_grad():
            S = model.score_matrix(m, e)
        assert not S["C"].any() and torch.equal(S["O"], S["T"] + S["V"])

    def test_without_smoe_has_no_experts(self, small_config):
        model = build_model(small_config.replace(use_smoe=False))
        assert not any("experts" in k for k in model.state_dict())

    def test_overall_scores_tiling(self, small_config):
        model = build_model(small_config)
        m, e = _sides(small_config, 5, 7)
        with torch.no_grad():
            full = model.score_matrix(m, e)["O"].numpy()
        tiled = model.overall_scores(m, e, chunk=3, mention_chunk=2)
        assert np.allclose(full, tiled, rtol=1e-12, atol=1e-12)

    def test_padded_row_perturbation_bit_identical(self, small_config):
        model = build_model(small_config)
        m, e = _sides(small_config)
        with torch.no_grad():
            base = model.score_matrix(m, e)["O"]
        noisy = {}
        rng = np.random.default_rng(0)
        for side in (m, e):
            tf, vf = side.text_fine.copy(), side.vis_fine.copy()
            tf[~side.text_mask] = rng.standard_normal(tf[~side.text_mask].shape) * 100
            vf[~side.vis_mask] = rng.standard_normal(vf[~side.vis_mask].shape) * 100
            noisy[id(side)] = type(side)(side.ids, side.text_coarse, tf, side.text_mask, side.vis_coarse, vf,
                                         side.vis_mask)
        assert (~m.text_mask).any() and (~e.vis_mask).any()
        with torch.no_grad():
            again = model.score_matrix(noisy[id(m)], noisy[id(e)])["O"]
        assert torch.equal(base, again)


def _bundle_pair(enc, text_m, text_e):
    return enc.encode_text(text_m, 4), enc.encode_text(text_e, 4)


def test_intra_score_average_and_identity_reduction():
    enc = ToyEncoder(native_dim=4)
    bm, be = _bundle_pair(enc, "a b", "b c d")
    attn = AttentionParams.identity(4)
    cm, fm, s = intra_score(bm, be, None, attn)
    assert s == (cm + fm) / 2
    assert cm == pytest.approx(float(bm.coarse @ be.coarse), rel=1e-12)


def test_intra_score_modality_mismatch():
    enc = ToyEncoder(native_dim=4, num_patches=2)
    with pytest.raises(ValueError):
        intra_score(enc.encode_text("a", 2), enc.encode_image(None), None, AttentionParams(4))


def test_intra_score_placeholder_image():
    enc = ToyEncoder(native_dim=4, num_patches=3)
    block = SmoeBlock(4, 2, 1)
    cm, fm, s = intra_score(enc.encode_image(None), enc.encode_image(None), block, AttentionParams(4))
    assert np.isfinite([cm, fm, s]).all()


def test_inter_score_symmetry():
    # the same features offered as both modalities, through shared transforms
    from moe_linker.encoders import VISUAL, FeatureBundle
    enc = ToyEncoder(native_dim=4)
    t = enc.encode_text("a b", 3)
    v = FeatureBundle(t.coarse, t.fine, t.mask, VISUAL)
    block, ln = SmoeBlock(4, 2, 2), LayerNorm(4)
    tvm, vtm, s = inter_score(t, v, t, v, (block, block), (ln, ln))
    assert tvm == vtm and s == (tvm + vtm) / 2


def test_inter_score_zero_visual_is_finite():
    from moe_linker.encoders import VISUAL, FeatureBundle
    enc = ToyEncoder(native_dim=4, num_patches=3)
    t = enc.encode_text("a b", 3)
    v = enc.encode_image(None)
    z = FeatureBundle(v.coarse, np.zeros_like(v.fine), v.mask, VISUAL)
    blocks, norms = (SmoeBlock(4, 2, 2), SmoeBlock(4, 2, 2)), (LayerNorm(4), LayerNorm(4))
    a = inter_score(t, v, t, v, blocks, norms)
    b = inter_score(t, z, t, z, blocks, norms)
    assert np.isfinite(b).all() and a[0] != b[0]
