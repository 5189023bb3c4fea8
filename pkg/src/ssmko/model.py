"""Full language models: embedding, stacked residual blocks, unembedding.

Parameters are held in a flat ``name -> ndarray`` mapping so that the weight
archive, the trainer and the optimizer all share one representation. Layer
parameter objects (:class:`~ssmko.ssm.Mamba1Layer` and friends) are built as
read-only views over that mapping.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._validation import check_tokens
from .config import ModelSpec
from .errors import ConfigError, InputError
from .numerics import make_rng, rms_norm, softplus_inverse
from .ssm import Mamba1Layer, SsdLayer, mamba1_layer_forward, ssd_layer_forward
from .transformer import AttentionLayerParams, attention_layer_forward


def parameter_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Every parameter name with its shape, in canonical order."""
    H, V = spec.embed_dim, spec.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embed": (V, H)}
    if spec.layer_kind == "softmax_attention":
        shapes["pos_embed"] = (spec.max_seq_len, H)
    for i in range(spec.num_layers):
        p = f"layers.{i}."
        if spec.layer_kind == "mamba1":
            D, n, k = spec.channels, spec.state_dim, spec.conv_kernel
            shapes.update({
                p + "norm": (H,),
                p + "in_proj": (H, D),
                p + "gate_proj": (H, D),
                p + "conv_weight": (D, k),
                p + "conv_bias": (D,),
                p + "delta_proj": (D, D),
                p + "delta_bias": (D,),
                p + "b_proj": (D, n),
                p + "c_proj": (D, n),
                p + "a_log": (D, n),
                p + "skip_d": (D,),
                p + "out_proj": (D, H),
            })
        elif spec.layer_kind == "ssd":
            a, d = spec.heads, spec.head_size
            shapes.update({
                p + "norm": (H,),
                p + "wq": (a, H, d),
                p + "wk": (a, H, d),
                p + "wv": (a, H, d),
                p + "delta_w": (H, a),
                p + "delta_bias": (a,),
                p + "a_log": (a,),
                p + "skip_d": (a,),
                p + "out_proj": (a * d, H),
            })
        else:
            a, d, F = spec.heads, spec.head_size, spec.ffn_size
            shapes.update({
                p + "norm1": (H,),
                p + "wq": (a, H, d),
                p + "wk": (a, H, d),
                p + "wv": (a, H, d),
                p + "wo": (a, d, H),
                p + "norm2": (H,),
                p + "ff_w1": (H, F),
                p + "ff_b1": (F,),
                p + "ff_w2": (F, H),
                p + "ff_b2": (H,),
            })
    shapes["final_norm"] = (H,)
    if not spec.tied_unembedding:
        shapes["unembed"] = (H, V)
    return shapes


@dataclass(frozen=True)
class ModelWeights:
    """An immutable model: spec plus read-only parameter arrays."""

    spec: ModelSpec
    params: Mapping[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = parameter_shapes(self.spec)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ConfigError(f"parameter set mismatch; missing={missing} extra={extra}")
        frozen = {}
        for name, shape in expected.items():
            arr = np.array(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "params", frozen)

    @property
    def num_layers(self) -> int:
        return self.spec.num_layers

    def layer(self, i: int):
        """Parameter view of layer ``i`` (mixer parameters, not the pre-norm)."""
        if not 0 <= i < self.spec.num_layers:
            raise IndexError(f"layer {i} out of range")
        p = f"layers.{i}."
        get = lambda k: self.params[p + k]  # noqa: E731
        kind = self.spec.layer_kind
        if kind == "mamba1":
            return Mamba1Layer(
                in_proj=get("in_proj"), gate_proj=get("gate_proj"),
                conv_weight=get("conv_weight"), conv_bias=get("conv_bias"),
                delta_proj=get("delta_proj"), delta_bias=get("delta_bias"),
                b_proj=get("b_proj"), c_proj=get("c_proj"), a_log=get("a_log"),
                skip_d=get("skip_d"), out_proj=get("out_proj"),
                use_gate=self.spec.use_gate, use_skip=self.spec.use_skip,
            )
        if kind == "ssd":
            return SsdLayer(
                wq=get("wq"), wk=get("wk"), wv=get("wv"),
                delta_w=get("delta_w"), delta_bias=get("delta_bias"),
                a_log=get("a_log"), skip_d=get("skip_d"), out_proj=get("out_proj"),
                use_skip=self.spec.use_skip,
            )
        return AttentionLayerParams(
            norm1=get("norm1"), wq=get("wq"), wk=get("wk"), wv=get("wv"), wo=get("wo"),
            norm2=get("norm2"), ff_w1=get("ff_w1"), ff_b1=get("ff_b1"),
            ff_w2=get("ff_w2"), ff_b2=get("ff_b2"), norm_eps=self.spec.norm_eps,
        )

    def fingerprint(self) -> str:
        """SHA-256 over the spec and every parameter's bytes."""
        h = hashlib.sha256(repr(sorted(self.spec.to_dict().items())).encode())
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()

    def replace(self, **updates: np.ndarray) -> "ModelWeights":
        params = dict(self.params)
        params.update(updates)
        return ModelWeights(self.spec, params)


def init_weights(spec: ModelSpec, seed: int = 0, std: float = 0.02, embed_std: float = 1.0) -> ModelWeights:
    """Random initialization, deterministic in ``seed``.

    Projections are ``N(0, std^2)``, embeddings ``N(0, embed_std^2)``, norm
    gains one. Decay parameters are spread so that units cover both slow and
    fast memory: Mamba-1 uses ``exp(a_log[d, s]) = (s + 1) * f_d`` with channel
    factors ``f_d`` log-spaced over ``[1/16, 1]``; SSD heads get
    ``exp(a_log)`` log-spaced over ``[1/16, 4]``.
    """
    rng = make_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(spec).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("norm", "norm1", "norm2", "final_norm"):
            params[name] = np.ones(shape)
        elif leaf in ("embed", "pos_embed"):
            scale = embed_std if leaf == "embed" else 0.1 * embed_std
            params[name] = rng.normal(0.0, scale, shape)
        elif leaf == "a_log":
            if spec.layer_kind == "mamba1":
                states = np.log(np.arange(1, shape[1] + 1, dtype=np.float64))
                params[name] = states[None, :] + np.linspace(np.log(1 / 16), 0.0, shape[0])[:, None]
            else:
                params[name] = np.linspace(np.log(1 / 16), np.log(4.0), shape[0])
        elif leaf == "delta_bias":
            dt = np.exp(rng.uniform(np.log(1e-2), np.log(1.0), shape))
            params[name] = softplus_inverse(dt)
        elif leaf == "skip_d":
            params[name] = np.ones(shape)
        elif leaf == "conv_weight":
            w = rng.normal(0.0, std, shape)
            w[:, -1] += 1.0
            params[name] = w
        elif leaf in ("conv_bias", "ff_b1", "ff_b2"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, std, shape)
    return ModelWeights(spec, params)


def zero_layer_weights(weights: ModelWeights) -> ModelWeights:
    """Copy with every per-layer projection zeroed (norm gains kept)."""
    updates = {}
    for name, arr in weights.params.items():
        if name.startswith("layers.") and name.rsplit(".", 1)[-1] not in ("norm", "norm1", "norm2", "a_log", "delta_bias"):
            updates[name] = np.zeros_like(arr)
    return weights.replace(**updates)


# -- forward pieces ---------------------------------------------------------

def embed_tokens(weights: ModelWeights, tokens) -> np.ndarray:
    ids = check_tokens(tokens, weights.spec.vocab_size)
    R = weights.params["embed"][ids].copy()
    if weights.spec.layer_kind == "softmax_attention":
        if ids.size > weights.spec.max_seq_len:
            raise InputError(f"sequence length {ids.size} exceeds max_seq_len {weights.spec.max_seq_len}")
        R += weights.params["pos_embed"][: ids.size]
    return R


def layer_input(weights: ModelWeights, i: int, R: np.ndarray) -> np.ndarray:
    """What layer ``i``'s mixer sees: the pre-normed residual (SSM kinds) or
    the raw residual (the transformer block normalizes internally)."""
    if weights.spec.layer_kind == "softmax_attention":
        return R
    return rms_norm(R, weights.params[f"layers.{i}.norm"], weights.spec.norm_eps)


def layer_update(weights: ModelWeights, i: int, R: np.ndarray) -> np.ndarray:
    """Residual update of layer ``i`` through the recurrent/native path."""
    layer = weights.layer(i)
    X = layer_input(weights, i, R)
    kind = weights.spec.layer_kind
    if kind == "mamba1":
        return mamba1_layer_forward(layer, X)
    if kind == "ssd":
        return ssd_layer_forward(layer, X)
    return attention_layer_forward(layer, X)


def unembed(weights: ModelWeights, R: np.ndarray) -> np.ndarray:
    Rn = rms_norm(R, weights.params["final_norm"], weights.spec.norm_eps)
    if weights.spec.tied_unembedding:
        return Rn @ weights.params["embed"].T
    return Rn @ weights.params["unembed"]


def model_forward(weights: ModelWeights, tokens) -> np.ndarray:
    """Next-token logits (``L x vocab``) at every position."""
    R = embed_tokens(weights, tokens)
    for i in range(weights.spec.num_layers):
        R = R + layer_update(weights, i, R)
    return unembed(weights, R)
