import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moe_linker.encoders import (ENTITY, VISUAL, FeatureBundle, ToyEncoder, make_encoder, project_to_model_dim,
                                 register_encoder, toy_encode_image, toy_encode_text)
from moe_linker.errors import EncodingError, ShapeError


class TestText:
    def test_two_tokens(self):
        b = toy_encode_text("a b", max_len=4)
        assert b.fine.shape == (4, 32) and b.mask.tolist() == [True, True, False, False]
        assert np.array_equal(b.coarse, b.fine[:2].mean(axis=0))

    def test_deterministic(self):
        a, b = toy_encode_text("x y z", 5, seed=2), toy_encode_text("x y z", 5, seed=2)
        assert np.array_equal(a.fine, b.fine) and np.array_equal(a.coarse, b.coarse)

    def test_empty(self):
        b = toy_encode_text("", 3)
        assert not b.mask.any() and np.array_equal(b.coarse, np.zeros(32))

    def test_truncation(self):
        b = toy_encode_text("a b c d e", 3)
        assert b.mask.all() and np.array_equal(b.fine[2], toy_encode_text("c", 1).fine[0])

    def test_bad_len(self):
        with pytest.raises(ValueError):
            toy_encode_text("a", 0)


class TestImage:
    def test_placeholder(self):
        b = toy_encode_image(None, 32)
        assert b.mask.sum() == 1 and b.mask[0] and b.modality == VISUAL

    def test_patch_count(self, tmp_path):
        p = tmp_path / "i.bin"
        p.write_bytes(b"pixels")
        b = toy_encode_image(str(p), 32)
        assert b.fine.shape[0] == 32 and b.mask.all()

    def test_byte_identical_files(self, tmp_path):
        (tmp_path / "a").write_bytes(b"same")
        (tmp_path / "b").write_bytes(b"same")
        (tmp_path / "c").write_bytes(b"other")
        a, b, c = (toy_encode_image(str(tmp_path / n), 4) for n in "abc")
        assert np.array_equal(a.fine, b.fine) and not np.array_equal(a.fine, c.fine)

    def test_unreadable(self, tmp_path):
        with pytest.raises(EncodingError):
            toy_encode_image(str(tmp_path / "missing.jpg"), 4)


class TestProjection:
    def test_identity(self):
        b = toy_encode_text("a b", 3, native_dim=5)
        out = project_to_model_dim(b, 5, np.eye(5))
        assert np.array_equal(out.fine, b.fine) and np.array_equal(out.coarse, b.coarse)

    def test_zero(self):
        b = toy_encode_text("a b", 3, native_dim=5)
        out = project_to_model_dim(b, 7, np.zeros((5, 7)))
        assert not out.fine.any() and not out.coarse.any() and np.array_equal(out.mask, b.mask)

    def test_d96(self):
        b = toy_encode_text("a", 2)
        assert project_to_model_dim(b, 96, np.ones((32, 96))).coarse.shape == (96,)

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            project_to_model_dim(toy_encode_text("a", 2), 4, np.ones((3, 4)))

    @given(arrays(np.float64, (3, 4), elements=st.floats(-10, 10)),
           arrays(np.float64, (3, 4), elements=st.floats(-10, 10)),
           st.floats(-5, 5), st.floats(-5, 5))
    def test_linear(self, x, y, alpha, beta):
        W = np.random.default_rng(0).standard_normal((4, 6))
        mk = lambda f: FeatureBundle(f[0], f, np.ones(3, bool))
        lhs = project_to_model_dim(mk(alpha * x + beta * y), 6, W).fine
        rhs = alpha * project_to_model_dim(mk(x), 6, W).fine + beta * project_to_model_dim(mk(y), 6, W).fine
        scale = np.abs(alpha * x).sum() + np.abs(beta * y).sum() + 1e-12
        assert np.all(np.abs(lhs - rhs) <= 1e-6 * scale * np.abs(W).max())


def test_bundle_invariants():
    with pytest.raises(ShapeError):
        FeatureBundle(np.zeros(3), np.zeros((2, 4)), np.ones(2, bool))
    with pytest.raises(ShapeError):
        FeatureBundle(np.zeros(4), np.zeros((2, 4)), np.ones(3, bool))
    with pytest.raises(ValueError):
        FeatureBundle(np.zeros(4), np.zeros((2, 4)), np.ones(2, bool), modality="audio")


def test_registry():
    assert isinstance(make_encoder({"encoder": "toy", "native_dim": 8}), ToyEncoder)
    with pytest.raises(ValueError, match="register"):
        make_encoder({"encoder": "pretrained"})
    register_encoder("fixed", lambda cfg: ToyEncoder(native_dim=cfg["native_dim"]))
    assert make_encoder({"encoder": "fixed", "native_dim": 5}).native_dim == 5
    assert ToyEncoder().encode_text("a", 2, side=ENTITY).side == ENTITY
