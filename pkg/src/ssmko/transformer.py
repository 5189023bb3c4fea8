"""Causal softmax-attention baseline block (pre-norm attention + GELU MLP)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_sequence_matrix
from .numerics import gelu, rms_norm, softmax_rows

MASK_MODES = ("mask", "zero")


@dataclass(frozen=True)
class AttentionLayerParams:
    norm1: np.ndarray  # H
    wq: np.ndarray     # heads x H x dh
    wk: np.ndarray     # heads x H x dh
    wv: np.ndarray     # heads x H x dh
    wo: np.ndarray     # heads x dh x H
    norm2: np.ndarray  # H
    ff_w1: np.ndarray  # H x F
    ff_b1: np.ndarray  # F
    ff_w2: np.ndarray  # F x H
    ff_b2: np.ndarray  # H
    norm_eps: float = 1e-6

    @property
    def heads(self) -> int:
        return self.wq.shape[0]

    @property
    def units(self) -> int:
        return self.heads


def _edit_selector(edits, heads: int, L: int) -> np.ndarray | None:
    """Boolean ``heads x L x L`` array of (target, source) entries to knock out."""
    if edits is None or not edits.pairs.any():
        return None
    pairs = np.zeros((L, L), dtype=bool)
    n = min(L, edits.pairs.shape[0])
    pairs[:n, :n] = edits.pairs[:n, :n]
    sel = np.zeros((heads, L, L), dtype=bool)
    for h in edits.unit_indices(heads):
        sel[h] = pairs
    return sel


def attention_weights(layer: AttentionLayerParams, Xn: np.ndarray, edits=None, mode: str = "mask") -> np.ndarray:
    """Per-head ``L x L`` attention probabilities for a normalized input.

    ``mode="mask"`` puts ``-inf`` on knocked-out logits so rows renormalize;
    ``mode="zero"`` zeroes the probabilities after the softmax instead.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"mode must be one of {MASK_MODES}")
    L = Xn.shape[0]
    dh = layer.wq.shape[2]
    Q = np.einsum("lh,ahk->alk", Xn, layer.wq)
    K = np.einsum("lh,ahk->alk", Xn, layer.wk)
    scores = Q @ K.transpose(0, 2, 1) / np.sqrt(dh)
    causal = np.tril(np.ones((L, L), dtype=bool))
    scores = np.where(causal, scores, -np.inf)
    sel = _edit_selector(edits, layer.heads, L)
    if sel is not None and mode == "mask":
        scores = np.where(sel, -np.inf, scores)
    probs = softmax_rows(scores)
    if sel is not None and mode == "zero":
        probs = np.where(sel, 0.0, probs)
    return probs


def attention_layer_forward(layer: AttentionLayerParams, X, edits=None, mode: str = "mask") -> np.ndarray:
    """Residual update of one transformer block for residual stream ``X``.

    The block computes ``a = attn(norm1(X))`` and ``f = mlp(norm2(X + a))``
    and returns ``a + f``.
    """
    X = check_sequence_matrix(X, layer.wq.shape[1])
    Xn = rms_norm(X, layer.norm1, layer.norm_eps)
    probs = attention_weights(layer, Xn, edits, mode)
    V = np.einsum("lh,ahk->alk", Xn, layer.wv)
    heads_out = probs @ V
    attn = np.einsum("alk,akh->lh", heads_out, layer.wo)
    hidden = X + attn
    h2 = rms_norm(hidden, layer.norm2, layer.norm_eps)
    ff = gelu(h2 @ layer.ff_w1 + layer.ff_b1) @ layer.ff_w2 + layer.ff_b2
    return attn + ff
