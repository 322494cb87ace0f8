"""Independent reference implementations used as test oracles.

Everything here is plain Python/numpy written from the definitions, sharing
no code with the package.
"""
import math

import numpy as np


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def naive_contrastive(scores, pos):
    # -log(exp(s_pos) / sum exp(s)) evaluated literally
    return -math.log(math.exp(scores[pos]) / sum(math.exp(s) for s in scores))


def brute_force_rank(scores, entity_ids, gold):
    """1-based rank of ``gold`` by repeated selection of the best remaining entity."""
    remaining = list(range(len(scores)))
    rank = 0
    while remaining:
        best = remaining[0]
        for j in remaining[1:]:
            if scores[j] > scores[best] or (scores[j] == scores[best] and entity_ids[j] < entity_ids[best]):
                best = j
        rank += 1
        if entity_ids[best] == gold:
            return rank
        remaining.remove(best)
    raise KeyError(gold)


def brute_force_metrics(ranks):
    n = len(ranks)
    mrr = sum(1.0 / r for r in ranks) / n
    hits = {k: sum(1 for r in ranks if r <= k) / n for k in (1, 3, 5)}
    return mrr, hits


def gelu(x):
    return 0.5 * x * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))


def ffn(x, W1, b1, W2, b2):
    """torch.nn.Linear convention: weights are (out, in)."""
    return gelu(x @ W1.T + b1) @ W2.T + b2


def masked_softmax_np(logits, mask):
    out = np.zeros_like(logits)
    if not mask.any():
        return out
    z = logits[mask]
    e = np.exp(z - z.max())
    out[mask] = e / e.sum()
    return out


def fine_match_np(H_e, mask_e, H_m, mask_m, h_e, Wq, Wk, Wv):
    """Score of one pair, looping over entity rows."""
    d = H_e.shape[1]
    K, V = H_m @ Wk, H_m @ Wv
    acc, count = np.zeros(d), 0
    for q in range(H_e.shape[0]):
        if not mask_e[q]:
            continue
        a = masked_softmax_np((H_e[q] @ Wq) @ K.T / math.sqrt(d), mask_m)
        acc += a @ V
        count += 1
    G = acc / max(count, 1)
    return float(h_e @ G)


def layernorm_np(x, w, b, eps=1e-5):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return (x - mu) / math.sqrt(var + eps) * w + b


def gated_fuse_np(h, H, mask, w, b):
    a = masked_softmax_np(H @ h, mask)
    return layernorm_np(np.tanh(h) * h + a @ H, w, b)
