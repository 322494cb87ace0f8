"""The trainable matcher: projections, SMoE blocks, attention and gating params.

Every SMoE block is shared between the mention and the entity side. Module
toggles in :class:`RunConfig` decide which sub-networks exist at all, so an
ablated model has exactly the parameters it uses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import RunConfig
from .encoders import VISUAL, EncodedSide, FeatureBundle
from .errors import ShapeError
from .matching import (AttentionParams, LayerNorm, coarse_match_matrix, fine_match_matrix,
                       gated_fuse, gated_match_matrix)
from .smoe import SmoeBlock

DTYPE = torch.float64
COMPONENTS = ("cm_T", "fm_T", "cm_V", "fm_V", "tvm", "vtm")


@dataclass(frozen=True)
class ScoreSet:
    s_T: float
    s_V: float
    s_C: float
    s_O: float
    cm_T: float = 0.0
    fm_T: float = 0.0
    cm_V: float = 0.0
    fm_V: float = 0.0
    tvm: float = 0.0
    vtm: float = 0.0

    @classmethod
    def from_components(cls, cm_T=0.0, fm_T=0.0, cm_V=0.0, fm_V=0.0, tvm=0.0, vtm=0.0,
                        channels="TVC") -> "ScoreSet":
        s_T = (cm_T + fm_T) / 2 if "T" in channels else 0.0
        s_V = (cm_V + fm_V) / 2 if "V" in channels else 0.0
        s_C = (tvm + vtm) / 2 if "C" in channels else 0.0
        return cls(s_T, s_V, s_C, s_T + s_V + s_C, cm_T, fm_T, cm_V, fm_V, tvm, vtm)


@dataclass
class Side:
    """Projected (model-dimension) features of one batch side, as tensors."""
    text_coarse: torch.Tensor
    text_fine: torch.Tensor
    text_mask: torch.Tensor
    vis_coarse: torch.Tensor
    vis_fine: torch.Tensor
    vis_mask: torch.Tensor


class MatchingModel(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        d, D = config.embed_dim, config.native_dim
        self.text_proj = nn.Parameter(torch.empty(D, d, dtype=DTYPE))
        self.vis_proj = nn.Parameter(torch.empty(D, d, dtype=DTYPE))
        nn.init.normal_(self.text_proj, std=D ** -0.5)
        nn.init.normal_(self.vis_proj, std=D ** -0.5)

        def block():
            if not config.use_smoe:
                return None
            return SmoeBlock(d, config.experts_K, config.effective_top_k, config.smoe_layers,
                             config.expert_hidden_mult, config.fuse_hidden_mult, DTYPE)

        if config.use_intra_text:
            self.intra_text = block()
            self.attn_text = AttentionParams(d, DTYPE)
        if config.use_intra_visual:
            self.intra_visual = block()
            self.attn_visual = AttentionParams(d, DTYPE)
        if config.use_inter:
            self.inter_tv = block()
            self.inter_vt = block()
            self.ln_tv = LayerNorm(d, dtype=DTYPE)
            self.ln_vt = LayerNorm(d, dtype=DTYPE)

    @property
    def channels(self) -> str:
        c = self.config
        return "T" * c.use_intra_text + "V" * c.use_intra_visual + "C" * c.use_inter

    def _run(self, name, fine, coarse, mask):
        blk = getattr(self, name, None)
        if blk is None:
            return coarse, fine
        return blk(fine, coarse, mask)

    def project(self, enc: EncodedSide) -> Side:
        t = lambda a: torch.as_tensor(a, dtype=DTYPE)
        return Side(
            t(enc.text_coarse) @ self.text_proj,
            t(enc.text_fine) @ self.text_proj,
            torch.as_tensor(enc.text_mask, dtype=torch.bool),
            t(enc.vis_coarse) @ self.vis_proj,
            t(enc.vis_fine) @ self.vis_proj,
            torch.as_tensor(enc.vis_mask, dtype=torch.bool),
        )

    def side_features(self, s: Side) -> dict:
        """Per-side quantities that do not depend on the other side of a pair."""
        out = {}
        if self.config.use_intra_text:
            out["h_T"], out["H_T"] = self._run("intra_text", s.text_fine, s.text_coarse, s.text_mask)
            out["mask_T"] = s.text_mask
        if self.config.use_intra_visual:
            out["h_V"], out["H_V"] = self._run("intra_visual", s.vis_fine, s.vis_coarse, s.vis_mask)
            out["mask_V"] = s.vis_mask
        if self.config.use_inter:
            h_t, H_v = self._run("inter_tv", s.vis_fine, s.text_coarse, s.vis_mask)
            out["E_tvm"] = gated_fuse(h_t, H_v, s.vis_mask, self.ln_tv)
            h_v, H_t = self._run("inter_vt", s.text_fine, s.vis_coarse, s.text_mask)
            out["E_vtm"] = gated_fuse(h_v, H_t, s.text_mask, self.ln_vt)
        return out

    def score_features(self, m: dict, e: dict) -> dict[str, torch.Tensor]:
        """(Bm, Be) matrices for every sub-score and the channel scores."""
        out = {}
        zeros = None
        if self.config.use_intra_text:
            out["cm_T"] = coarse_match_matrix(m["h_T"], e["h_T"])
            out["fm_T"] = fine_match_matrix(m["H_T"], m["mask_T"], e["H_T"], e["mask_T"], e["h_T"], self.attn_text)
            out["T"] = (out["cm_T"] + out["fm_T"]) / 2
        if self.config.use_intra_visual:
            out["cm_V"] = coarse_match_matrix(m["h_V"], e["h_V"])
            out["fm_V"] = fine_match_matrix(m["H_V"], m["mask_V"], e["H_V"], e["mask_V"], e["h_V"], self.attn_visual)
            out["V"] = (out["cm_V"] + out["fm_V"]) / 2
        if self.config.use_inter:
            out["tvm"] = gated_match_matrix(m["E_tvm"], e["E_tvm"])
            out["vtm"] = gated_match_matrix(m["E_vtm"], e["E_vtm"])
            out["C"] = (out["tvm"] + out["vtm"]) / 2
        for c in "TVC":
            if c in out:
                zeros = torch.zeros_like(out[c])
                break
        for c in "TVC":
            out.setdefault(c, zeros)
        out["O"] = out["T"] + out["V"] + out["C"]
        return out

    def score_matrix(self, mentions: EncodedSide, entities: EncodedSide) -> dict[str, torch.Tensor]:
        if len(mentions) == 0 or len(entities) == 0:
            raise ShapeError("score_matrix needs at least one mention and one entity")
        m = self.side_features(self.project(mentions))
        e = self.side_features(self.project(entities))
        return self.score_features(m, e)

    def score_sets(self, mentions: EncodedSide, entities: EncodedSide) -> list[list[ScoreSet]]:
        with torch.no_grad():
            mats = self.score_matrix(mentions, entities)
        arrays = {k: v.numpy() for k, v in mats.items()}
        rows = []
        for i in range(len(mentions)):
            row = []
            for j in range(len(entities)):
                comp = {k: float(arrays[k][i, j]) for k in COMPONENTS if k in arrays}
                row.append(ScoreSet(float(arrays["T"][i, j]), float(arrays["V"][i, j]),
                                    float(arrays["C"][i, j]), float(arrays["O"][i, j]), **comp))
            rows.append(row)
        return rows

    def score_pair(self, mention: EncodedSide, entity: EncodedSide) -> ScoreSet:
        if len(mention) != 1 or len(entity) != 1:
            raise ShapeError("score_pair takes exactly one mention and one entity")
        return self.score_sets(mention, entity)[0][0]

    def overall_scores(self, mentions: EncodedSide, entities: EncodedSide, chunk: int = 256,
                       mention_chunk: int = 32) -> np.ndarray:
        """Inference-only ``S_O`` matrix, tiled to bound attention memory."""
        out = np.empty((len(mentions), len(entities)))
        with torch.no_grad():
            m = self.side_features(self.project(mentions))
            for j0 in range(0, len(entities), chunk):
                part = entities.take(range(j0, min(j0 + chunk, len(entities))))
                e = self.side_features(self.project(part))
                for i0 in range(0, len(mentions), mention_chunk):
                    mi = {k: v[i0:i0 + mention_chunk] for k, v in m.items()}
                    out[i0:i0 + mention_chunk, j0:j0 + len(part)] = self.score_features(mi, e)["O"].numpy()
        return out

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self.state_dict().items()}

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(config: RunConfig) -> MatchingModel:
    """Construct with parameters initialised from ``config.seed`` only."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        return MatchingModel(config)


# --------------------------------------------------------------------------
# Pair-level helpers on individual feature bundles
# --------------------------------------------------------------------------

def _bundle_tensors(b: FeatureBundle):
    return (torch.as_tensor(b.coarse, dtype=DTYPE)[None], torch.as_tensor(b.fine, dtype=DTYPE)[None],
            torch.as_tensor(b.mask, dtype=torch.bool)[None])


def _enhance(block, fine, coarse, mask):
    return (coarse, fine) if block is None else block(fine, coarse, mask)


def intra_score(mention: FeatureBundle, entity: FeatureBundle, block: SmoeBlock | None,
                attn: AttentionParams) -> tuple[float, float, float]:
    """``(cm, fm, (cm + fm) / 2)`` for one pair within a single modality."""
    if mention.modality != entity.modality:
        raise ValueError(f"modality mismatch: {mention.modality} vs {entity.modality}")
    cm_, Fm, mm = _bundle_tensors(mention)
    ce, Fe, me = _bundle_tensors(entity)
    with torch.no_grad():
        h_m, H_m = _enhance(block, Fm, cm_, mm)
        h_e, H_e = _enhance(block, Fe, ce, me)
        cm = float(coarse_match_matrix(h_m, h_e)[0, 0])
        fm = float(fine_match_matrix(H_m, mm, H_e, me, h_e, attn)[0, 0])
    return cm, fm, (cm + fm) / 2


def inter_score(m_text: FeatureBundle, m_vis: FeatureBundle, e_text: FeatureBundle, e_vis: FeatureBundle,
                blocks: tuple, norms: tuple) -> tuple[float, float, float]:
    """``(tvm, vtm, (tvm + vtm) / 2)``; ``blocks``/``norms`` are (text->visual, visual->text)."""
    if m_vis.modality != VISUAL or e_vis.modality != VISUAL:
        raise ValueError("second and fourth bundles must be visual")
    block_tv, block_vt = blocks
    ln_tv, ln_vt = norms
    with torch.no_grad():
        E = {}
        for side, tb, vb in (("m", m_text, m_vis), ("e", e_text, e_vis)):
            tc, tf, tm = _bundle_tensors(tb)
            vc, vf, vm = _bundle_tensors(vb)
            h_t, H_v = _enhance(block_tv, vf, tc, vm)
            h_v, H_t = _enhance(block_vt, tf, vc, tm)
            E[side] = (gated_fuse(h_t, H_v, vm, ln_tv), gated_fuse(h_v, H_t, tm, ln_vt))
        tvm = float(gated_match_matrix(E["m"][0], E["e"][0])[0, 0])
        vtm = float(gated_match_matrix(E["m"][1], E["e"][1])[0, 0])
    return tvm, vtm, (tvm + vtm) / 2
