import math
import warnings

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from moe_linker.errors import ShapeError
from moe_linker.matching import (AttentionParams, LayerNorm, attention_weights, coarse_match, fine_match,
                                 fine_match_matrix, gated_fuse, masked_softmax)

from oracles import fine_match_np, gated_fuse_np

D = torch.float64


def _rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=D)


def _attn(d, seed=0):
    p = AttentionParams(d)
    with torch.no_grad():
        for i, w in enumerate(p.parameters()):
            w.copy_(_rand(d, d, seed=seed + i) / math.sqrt(d))
    return p


class TestCoarse:
    def test_unit(self):
        v = torch.tensor([0.6, 0.8], dtype=D)
        assert float(coarse_match(v, v)) == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert float(coarse_match(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 2.0]))) == 0.0

    def test_hand(self):
        assert float(coarse_match(torch.tensor([1.0, 2.0]), torch.tensor([3.0, 4.0]))) == 11.0

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            coarse_match(torch.zeros(2), torch.zeros(3))


class TestFine:
    def test_single_key_identity(self):
        H_e, H_m, h_e = _rand(1, 4), _rand(1, 4, seed=1), _rand(4, seed=2)
        one = torch.ones(1, dtype=torch.bool)
        p = AttentionParams.identity(4)
        assert torch.equal(attention_weights(H_e, H_m, one, p), torch.ones(1, 1, dtype=D))
        assert float(fine_match(H_e, one, H_m, one, h_e, p)) == pytest.approx(float(h_e @ H_m[0]), abs=1e-14)

    def test_zero_value_map(self):
        p = _attn(4)
        with torch.no_grad():
            p.W_v.zero_()
        m = torch.ones(3, dtype=torch.bool)
        assert float(fine_match(_rand(3, 4), m, _rand(3, 4, seed=1), m, _rand(4, seed=2), p)) == 0.0

    def test_matches_numpy_oracle(self):
        p = _attn(8)
        H_e, H_m, h_e = _rand(3, 8), _rand(4, 8, seed=1), _rand(8, seed=2)
        me = torch.tensor([1, 1, 0], dtype=torch.bool)
        mm = torch.tensor([1, 0, 1, 1], dtype=torch.bool)
        got = float(fine_match(H_e, me, H_m, mm, h_e, p))
        ref = fine_match_np(H_e.numpy(), me.numpy(), H_m.numpy(), mm.numpy(), h_e.numpy(),
                            *(w.detach().numpy() for w in (p.W_q, p.W_k, p.W_v)))
        assert got == pytest.approx(ref, rel=1e-12)

    def test_duplicating_padded_row_bit_identical(self):
        p = _attn(4)
        H_e, H_m, h_e = _rand(2, 4), _rand(3, 4, seed=1), _rand(4, seed=2)
        me = torch.ones(2, dtype=torch.bool)
        mm = torch.tensor([1, 1, 0], dtype=torch.bool)
        base = fine_match(H_e, me, H_m, mm, h_e, p)
        H_dup = torch.cat([H_m, H_m[2:3]])
        dup = fine_match(H_e, me, H_dup, torch.cat([mm, mm[2:3]]), h_e, p)
        assert torch.equal(base, dup)

    @given(st.floats(-1e6, 1e6, allow_nan=False), st.permutations([2, 3, 4]))
    def test_padded_rows_are_invisible(self, fill, perm):
        p = _attn(4)
        H_e, H_m, h_e = _rand(2, 4), _rand(5, 4, seed=1), _rand(4, seed=2)
        me = torch.tensor([1, 0], dtype=torch.bool)
        mm = torch.tensor([1, 1, 0, 0, 0], dtype=torch.bool)
        base = fine_match(H_e, me, H_m, mm, h_e, p)
        H2 = H_m.clone()
        H2[2:] = H_m[perm] * 0 + fill
        E2 = H_e.clone()
        E2[1] = fill
        assert torch.equal(base, fine_match(E2, me, H2, mm, h_e, p))

    def test_all_masked_mention_warns_and_zero(self):
        p = _attn(4)
        with pytest.warns(RuntimeWarning):
            s = fine_match(_rand(2, 4), torch.ones(2, dtype=torch.bool), _rand(2, 4, seed=1),
                           torch.zeros(2, dtype=torch.bool), _rand(4, seed=2), p)
        assert float(s) == 0.0

    def test_batched_equals_pairwise(self):
        p = _attn(4)
        H_m, H_e = _rand(3, 2, 4), _rand(2, 3, 4, seed=1)
        mm = torch.tensor([[1, 1], [1, 0], [0, 1]], dtype=torch.bool)
        me = torch.tensor([[1, 1, 1], [1, 0, 0]], dtype=torch.bool)
        h_e = _rand(2, 4, seed=2)
        S = fine_match_matrix(H_m, mm, H_e, me, h_e, p)
        for i in range(3):
            for j in range(2):
                assert float(S[i, j]) == pytest.approx(float(fine_match(H_e[j], me[j], H_m[i], mm[i], h_e[j], p)),
                                                       rel=1e-12, abs=1e-14)


@given(st.lists(st.booleans(), min_size=1, max_size=8), st.integers(0, 1000))
def test_masked_softmax_rows(mask_bits, seed):
    mask = torch.tensor(mask_bits)
    a = masked_softmax(_rand(3, len(mask_bits), seed=seed) * 10, mask[None, :])
    assert torch.all(a[:, ~mask] == 0)
    if mask.any():
        assert torch.allclose(a.sum(-1), torch.ones(3, dtype=D), atol=1e-6)
    else:
        assert not a.any()


class TestGated:
    def _ln(self, d):
        return LayerNorm(d)

    def test_zero_text_gives_mean_patch(self):
        H = _rand(1, 4, 5)
        mask = torch.tensor([[1, 1, 1, 0]], dtype=torch.bool)
        ln = self._ln(5)
        E = gated_fuse(torch.zeros(1, 5, dtype=D), H, mask, ln)
        assert torch.allclose(E, ln(H[:, :3].mean(1)), atol=1e-12)

    def test_single_patch(self):
        H = _rand(1, 1, 5)
        ln = self._ln(5)
        for seed in range(3):
            h = _rand(1, 5, seed=seed + 10)
            E = gated_fuse(h, H, torch.ones(1, 1, dtype=torch.bool), ln)
            assert torch.allclose(E, ln(torch.tanh(h) * h + H[:, 0]), atol=1e-12)

    def test_layernorm_moments(self):
        ln = self._ln(6)
        y = ln.normalize(_rand(4, 6) * 5 + 3)
        assert torch.allclose(y.mean(-1), torch.zeros(4, dtype=D), atol=1e-5)
        assert torch.allclose(y.var(-1, unbiased=False), torch.ones(4, dtype=D), atol=1e-5)

    def test_matches_numpy_oracle(self):
        ln = self._ln(4)
        with torch.no_grad():
            ln.weight.copy_(_rand(4, seed=5))
            ln.bias.copy_(_rand(4, seed=6))
        h, H = _rand(1, 4), _rand(1, 3, 4, seed=1)
        mask = torch.tensor([[1, 0, 1]], dtype=torch.bool)
        got = gated_fuse(h, H, mask, ln)[0].detach().numpy()
        ref = gated_fuse_np(h[0].numpy(), H[0].numpy(), mask[0].numpy(), ln.weight.detach().numpy(),
                            ln.bias.detach().numpy())
        assert np.allclose(got, ref, atol=1e-12)

    def test_all_masked_uses_placeholder_row(self):
        ln = self._ln(4)
        h, H = _rand(1, 4), _rand(1, 3, 4, seed=1)
        E = gated_fuse(h, H, torch.zeros(1, 3, dtype=torch.bool), ln)
        assert torch.allclose(E, ln(torch.tanh(h) * h + H[:, 0]), atol=1e-12)

    def test_zero_visual_finite(self):
        E = gated_fuse(_rand(1, 4), torch.zeros(1, 3, 4, dtype=D), torch.ones(1, 3, dtype=torch.bool), self._ln(4))
        assert torch.isfinite(E).all()
