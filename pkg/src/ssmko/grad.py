"""Hand-derived reverse-mode gradients for the trainable model kinds.

Everything runs on equal-length batches ``B x L x H``; :func:`loss_and_grads`
groups a ragged batch by length. The loss is mean cross-entropy of the answer
token at the final position.

SSD layers are differentiated through their quadratic (masked attention)
form; the mask ``L[p, q] = exp(sum_{t=q+1..p} log a_t)`` carries the
dependence on ``a_log`` and the step sizes.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Mapping, Sequence

import numpy as np

from .config import ModelSpec
from .errors import ContractError
from .numerics import gelu, gelu_grad, sigmoid, softplus


def _rms_fwd(x, g, eps):
    r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x / r * g, (x, r)


def _rms_bwd(dy, cache, g):
    x, r = cache
    H = x.shape[-1]
    gdy = dy * g
    dx = gdy / r - x * np.sum(gdy * x, axis=-1, keepdims=True) / (H * r**3)
    dg = np.sum(dy * x / r, axis=tuple(range(dy.ndim - 1)))
    return dx, dg


def _decay_mask(log_a):
    """``exp`` of segment sums along the last axis, zero above the diagonal."""
    L = log_a.shape[-1]
    cum = np.cumsum(log_a, axis=-1)
    seg = cum[..., :, None] - cum[..., None, :]
    lower = np.tril(np.ones((L, L), dtype=bool))
    return np.where(lower, np.exp(np.where(lower, seg, 0.0)), 0.0)


# -- SSD ----------------------------------------------------------------------

def _ssd_fwd(P, p, Xn, use_skip):
    wq, wk, wv = P[p + "wq"], P[p + "wk"], P[p + "wv"]
    Q = np.einsum("blh,ahk->balk", Xn, wq)
    K = np.einsum("blh,ahk->balk", Xn, wk)
    V = np.einsum("blh,ahk->balk", Xn, wv)
    s = (Xn @ P[p + "delta_w"] + P[p + "delta_bias"]).transpose(0, 2, 1)   # B a L
    delta = softplus(s)
    A = np.exp(P[p + "a_log"])
    log_a = -A[None, :, None] * delta
    Lm = _decay_mask(log_a)                                                  # B a L L
    S = Q @ K.transpose(0, 1, 3, 2)
    att = Lm * S
    Y = att @ V
    if use_skip:
        Y = Y + P[p + "skip_d"][None, :, None, None] * V
    B, a, L, dv = Y.shape
    Ycat = Y.transpose(0, 2, 1, 3).reshape(B, L, a * dv)
    out = Ycat @ P[p + "out_proj"]
    cache = (Xn, Q, K, V, s, delta, A, Lm, S, att, Ycat)
    return out, cache


def _ssd_bwd(P, p, dout, cache, use_skip, G):
    Xn, Q, K, V, s, delta, A, Lm, S, att, Ycat = cache
    B, a, L, dv = V.shape
    G[p + "out_proj"] += np.einsum("blk,blh->kh", Ycat, dout)
    dY = (dout @ P[p + "out_proj"].T).reshape(B, L, a, dv).transpose(0, 2, 1, 3)
    datt = dY @ V.transpose(0, 1, 3, 2)
    dV = att.transpose(0, 1, 3, 2) @ dY
    if use_skip:
        dV += P[p + "skip_d"][None, :, None, None] * dY
        G[p + "skip_d"] += np.einsum("balv,balv->a", dY, V)
    dS = datt * Lm
    dLm = datt * S
    dQ = dS @ K
    dK = dS.transpose(0, 1, 3, 2) @ Q
    dseg = dLm * Lm
    dcum = dseg.sum(axis=-1) - dseg.sum(axis=-2)
    dlog_a = np.flip(np.cumsum(np.flip(dcum, -1), axis=-1), -1)
    ddelta = -A[None, :, None] * dlog_a
    G[p + "a_log"] += -A * np.einsum("bal,bal->a", delta, dlog_a)
    ds = (ddelta * sigmoid(s)).transpose(0, 2, 1)                      # B L a
    G[p + "delta_w"] += np.einsum("blh,bla->ha", Xn, ds)
    G[p + "delta_bias"] += ds.sum(axis=(0, 1))
    dXn = ds @ P[p + "delta_w"].T
    for name, d in (("wq", dQ), ("wk", dK), ("wv", dV)):
        G[p + name] += np.einsum("blh,balk->ahk", Xn, d)
        dXn += np.einsum("balk,ahk->blh", d, P[p + name])
    return dXn


# -- softmax attention block ----------------------------------------------------

def _attn_block_fwd(P, p, R, eps):
    Xn1, c1 = _rms_fwd(R, P[p + "norm1"], eps)
    Q = np.einsum("blh,ahk->balk", Xn1, P[p + "wq"])
    K = np.einsum("blh,ahk->balk", Xn1, P[p + "wk"])
    V = np.einsum("blh,ahk->balk", Xn1, P[p + "wv"])
    dh = Q.shape[-1]
    L = R.shape[1]
    scores = Q @ K.transpose(0, 1, 3, 2) / np.sqrt(dh)
    causal = np.tril(np.ones((L, L), dtype=bool))
    scores = np.where(causal, scores, -np.inf)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    Pr = e / e.sum(axis=-1, keepdims=True)
    O = Pr @ V
    attn = np.einsum("bald,adh->blh", O, P[p + "wo"])
    hid = R + attn
    Xn2, c2 = _rms_fwd(hid, P[p + "norm2"], eps)
    h1 = Xn2 @ P[p + "ff_w1"] + P[p + "ff_b1"]
    g = gelu(h1)
    f = g @ P[p + "ff_w2"] + P[p + "ff_b2"]
    cache = (Xn1, c1, Q, K, V, Pr, O, c2, Xn2, h1, g)
    return R + attn + f, cache


def _attn_block_bwd(P, p, dRout, cache, G):
    Xn1, c1, Q, K, V, Pr, O, c2, Xn2, h1, g = cache
    dh = Q.shape[-1]
    df = dRout
    G[p + "ff_w2"] += np.einsum("blf,blh->fh", g, df)
    G[p + "ff_b2"] += df.sum(axis=(0, 1))
    dh1 = (df @ P[p + "ff_w2"].T) * gelu_grad(h1)
    G[p + "ff_w1"] += np.einsum("blh,blf->hf", Xn2, dh1)
    G[p + "ff_b1"] += dh1.sum(axis=(0, 1))
    dXn2 = dh1 @ P[p + "ff_w1"].T
    dhid, dg2 = _rms_bwd(dXn2, c2, P[p + "norm2"])
    G[p + "norm2"] += dg2
    dattn = dRout + dhid
    dR = dRout + dhid
    G[p + "wo"] += np.einsum("bald,blh->adh", O, dattn)
    dO = np.einsum("blh,adh->bald", dattn, P[p + "wo"])
    dPr = dO @ V.transpose(0, 1, 3, 2)
    dV = Pr.transpose(0, 1, 3, 2) @ dO
    dS = Pr * (dPr - np.sum(dPr * Pr, axis=-1, keepdims=True)) / np.sqrt(dh)
    dQ = dS @ K
    dK = dS.transpose(0, 1, 3, 2) @ Q
    dXn1 = np.zeros_like(Xn1)
    for name, d in (("wq", dQ), ("wk", dK), ("wv", dV)):
        G[p + name] += np.einsum("blh,balk->ahk", Xn1, d)
        dXn1 += np.einsum("balk,ahk->blh", d, P[p + name])
    dR1, dg1 = _rms_bwd(dXn1, c1, P[p + "norm1"])
    G[p + "norm1"] += dg1
    return dR + dR1


# -- whole model ------------------------------------------------------------------

def forward_batch(spec: ModelSpec, P: Mapping[str, np.ndarray], ids: np.ndarray, keep_cache: bool = False):
    """Final-position logits (``B x vocab``) for an equal-length id batch."""
    if spec.layer_kind == "mamba1":
        raise ContractError("Mamba-1 models are not trainable")
    eps = spec.norm_eps
    B, L = ids.shape
    R = P["embed"][ids]
    if spec.layer_kind == "softmax_attention":
        R = R + P["pos_embed"][:L]
    caches = []
    for i in range(spec.num_layers):
        p = f"layers.{i}."
        if spec.layer_kind == "ssd":
            Xn, cn = _rms_fwd(R, P[p + "norm"], eps)
            out, c = _ssd_fwd(P, p, Xn, spec.use_skip)
            caches.append((cn, c))
            R = R + out
        else:
            R, c = _attn_block_fwd(P, p, R, eps)
            caches.append(c)
    Rn, cf = _rms_fwd(R[:, -1], P["final_norm"], eps)
    W = P["embed"].T if spec.tied_unembedding else P["unembed"]
    logits = Rn @ W
    if keep_cache:
        return logits, (caches, cf, Rn)
    return logits


def _batch_loss_and_grads(spec, P, ids, answers, G, weight):
    logits, (caches, cf, Rn) = forward_batch(spec, P, ids, keep_cache=True)
    B, L = ids.shape
    m = logits.max(axis=-1, keepdims=True)
    logp = logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    loss = -np.mean(logp[np.arange(B), answers])
    dlogits = np.exp(logp)
    dlogits[np.arange(B), answers] -= 1.0
    dlogits *= weight / B
    if spec.tied_unembedding:
        G["embed"] += dlogits.T @ Rn
        dRn = dlogits @ P["embed"]
    else:
        G["unembed"] += Rn.T @ dlogits
        dRn = dlogits @ P["unembed"].T
    dlast, dgf = _rms_bwd(dRn, cf, P["final_norm"])
    G["final_norm"] += dgf
    dR = np.zeros((B, L, spec.embed_dim))
    dR[:, -1] = dlast
    for i in reversed(range(spec.num_layers)):
        p = f"layers.{i}."
        if spec.layer_kind == "ssd":
            cn, c = caches[i]
            dXn = _ssd_bwd(P, p, dR, c, spec.use_skip, G)
            dRi, dg = _rms_bwd(dXn, cn, P[p + "norm"])
            G[p + "norm"] += dg
            dR = dR + dRi
        else:
            dR = _attn_block_bwd(P, p, dR, caches[i], G)
    np.add.at(G["embed"], ids, dR)
    if spec.layer_kind == "softmax_attention":
        G["pos_embed"][:L] += dR.sum(axis=0)
    return loss


def group_by_length(batch: Sequence[tuple[Sequence[int], int]]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split ``(tokens, answer)`` pairs into equal-length arrays, ordered by length."""
    groups: dict[int, list] = defaultdict(list)
    for tokens, answer in batch:
        groups[len(tokens)].append((tuple(tokens), int(answer)))
    out = []
    for L in sorted(groups):
        ids = np.array([t for t, _ in groups[L]], dtype=np.int64)
        ans = np.array([a for _, a in groups[L]], dtype=np.int64)
        out.append((ids, ans))
    return out


def loss_and_grads(spec: ModelSpec, params: Mapping[str, np.ndarray], batch: Sequence[tuple[Sequence[int], int]]):
    """Mean final-position cross-entropy over ``batch`` and its gradient.

    ``batch`` holds ``(token_ids, answer_token)`` pairs of any lengths.
    Returns ``(loss, grads)`` with ``grads`` keyed like ``params``.
    """
    if len(batch) == 0:
        raise ContractError("batch must be non-empty")
    G = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
    total = len(batch)
    loss = 0.0
    for ids, ans in group_by_length(batch):
        w = len(ans) / total
        loss += w * _batch_loss_and_grads(spec, params, ids, ans, G, w)
    return float(loss), G
