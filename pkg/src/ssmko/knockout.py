"""Attention knockout and feature knockout.

A :class:`KnockoutSpec` names a contiguous layer window, source and target
token positions, and which units (channels/heads) are affected. Within the
window every selected (target, source) kernel entry is zeroed for SSM layers;
for the softmax baseline the corresponding logits are set to ``-inf`` before
normalization (or, with ``baseline_mode="zero"``, the probabilities are
zeroed afterwards).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .attention import AttentionTensor, KnockoutMask, apply_mask, forward_via_attention, materialize
from .errors import ClassificationError, ContractError, SpecError, UndefinedBaselineError
from .model import ModelWeights, embed_tokens, layer_input, layer_update, model_forward, unembed
from .numerics import softmax_rows
from .ssm import Mamba1Layer, SsdLayer
from .transformer import MASK_MODES, attention_layer_forward

SCOPES = ("all", "context_dependent", "context_independent")


@dataclass(frozen=True)
class KnockoutSpec:
    """Declarative intervention.

    ``feature_scope`` is one of :data:`SCOPES` or a frozenset of explicit
    unit indices. Every source must precede or equal every target.
    """

    first_layer: int = 0
    window_size: int = 0
    source_positions: frozenset[int] = frozenset()
    target_positions: frozenset[int] = frozenset()
    feature_scope: str | frozenset[int] = "all"
    baseline_mode: str = "mask"

    def __post_init__(self):
        object.__setattr__(self, "source_positions", frozenset(int(p) for p in self.source_positions))
        object.__setattr__(self, "target_positions", frozenset(int(p) for p in self.target_positions))
        if not isinstance(self.feature_scope, str):
            object.__setattr__(self, "feature_scope", frozenset(int(u) for u in self.feature_scope))
        elif self.feature_scope not in SCOPES:
            raise SpecError(f"feature_scope must be one of {SCOPES} or a set of unit indices")
        if self.first_layer < 0 or self.window_size < 0:
            raise SpecError("first_layer and window_size must be non-negative")
        if self.baseline_mode not in MASK_MODES:
            raise SpecError(f"baseline_mode must be one of {MASK_MODES}")
        if any(p < 0 for p in self.source_positions | self.target_positions):
            raise SpecError("positions must be non-negative")
        if self.source_positions and self.target_positions:
            if max(self.source_positions) > min(self.target_positions):
                raise SpecError("every source position must be <= every target position")

    @property
    def layer_window(self) -> range:
        return range(self.first_layer, self.first_layer + self.window_size)

    @property
    def is_noop(self) -> bool:
        return (
            self.window_size == 0
            or not self.source_positions
            or not self.target_positions
            or (not isinstance(self.feature_scope, str) and not self.feature_scope)
        )

    def pairs(self) -> list[tuple[int, int]]:
        """(target, source) pairs, sorted."""
        return sorted((c, r) for c in self.target_positions for r in self.source_positions if r <= c)

    def to_dict(self) -> dict:
        scope = self.feature_scope if isinstance(self.feature_scope, str) else sorted(self.feature_scope)
        return {
            "first_layer": self.first_layer,
            "window_size": self.window_size,
            "source_positions": sorted(self.source_positions),
            "target_positions": sorted(self.target_positions),
            "feature_scope": scope,
            "baseline_mode": self.baseline_mode,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "KnockoutSpec":
        unknown = set(data) - {
            "first_layer", "window_size", "source_positions", "target_positions",
            "feature_scope", "baseline_mode",
        }
        if unknown:
            raise SpecError(f"unknown knockout fields: {sorted(unknown)}")
        scope = data.get("feature_scope", "all")
        if not isinstance(scope, str):
            scope = frozenset(scope)
        return cls(
            first_layer=int(data.get("first_layer", 0)),
            window_size=int(data.get("window_size", 0)),
            source_positions=frozenset(data.get("source_positions", ())),
            target_positions=frozenset(data.get("target_positions", ())),
            feature_scope=scope,
            baseline_mode=data.get("baseline_mode", "mask"),
        )

    @classmethod
    def from_json(cls, text: str) -> "KnockoutSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class FeatureClassification:
    layer_index: int
    order: tuple[int, ...]       # unit indices sorted by descending score
    scores: tuple[float, ...]    # score per unit index
    context_dependent: frozenset[int]
    middle: frozenset[int]
    context_independent: frozenset[int]


def classify_scores(scores: Iterable[float], layer_index: int = 0) -> FeatureClassification:
    """Split units into thirds by descending score; ties go to the lower index first."""
    scores = tuple(float(s) for s in scores)
    n = len(scores)
    if n < 3:
        raise ClassificationError(f"need at least 3 units to classify, got {n}")
    order = tuple(sorted(range(n), key=lambda u: (-scores[u], u)))
    k = n // 3
    return FeatureClassification(
        layer_index=layer_index,
        order=order,
        scores=scores,
        context_dependent=frozenset(order[:k]),
        middle=frozenset(order[k:n - k]),
        context_independent=frozenset(order[n - k:]),
    )


def decay_scores(layer) -> np.ndarray:
    """L1 norm of each unit's discrete decay ``Abar``."""
    if isinstance(layer, Mamba1Layer):
        return np.abs(layer.a_bar).sum(axis=1)
    if isinstance(layer, SsdLayer):
        return np.abs(layer.a_bar)
    raise ClassificationError(f"feature classification needs an SSM layer, got {type(layer).__name__}")


def classify_features(layer, layer_index: int = 0) -> FeatureClassification:
    return classify_scores(decay_scores(layer), layer_index)


def classify_model(model: ModelWeights) -> dict[int, FeatureClassification]:
    return {i: classify_features(model.layer(i), i) for i in range(model.num_layers)}


def scope_units(spec: KnockoutSpec, classification: FeatureClassification | None) -> frozenset[int] | None:
    """Units affected by ``spec`` in one layer (``None`` = all)."""
    scope = spec.feature_scope
    if not isinstance(scope, str):
        return scope
    if scope == "all":
        return None
    if classification is None:
        raise ClassificationError(f"scope {scope!r} requires a feature classification")
    return classification.context_dependent if scope == "context_dependent" else classification.context_independent


def knockout_mask(spec: KnockoutSpec, length: int, classification: FeatureClassification | None = None) -> KnockoutMask:
    bad = [p for p in spec.source_positions | spec.target_positions if p >= length]
    if bad:
        raise SpecError(f"positions {sorted(bad)} out of range for sequence length {length}")
    return KnockoutMask.from_pairs(length, spec.pairs(), scope_units(spec, classification))


def apply_knockout(
    attn: AttentionTensor, spec: KnockoutSpec, classification: FeatureClassification | None = None
) -> AttentionTensor:
    """Zero the selected entries of ``attn``; the input is left untouched."""
    if attn.layer_index not in spec.layer_window:
        raise SpecError(f"layer {attn.layer_index} lies outside window {spec.layer_window}")
    return apply_mask(attn, knockout_mask(spec, attn.length, classification))


def _check_window(model: ModelWeights, spec: KnockoutSpec) -> None:
    if spec.window_size and spec.first_layer + spec.window_size > model.num_layers:
        raise SpecError(
            f"window [{spec.first_layer}, {spec.first_layer + spec.window_size}) exceeds {model.num_layers} layers"
        )


def knocked_forward(
    model: ModelWeights,
    tokens,
    spec: KnockoutSpec,
    classifications: Mapping[int, FeatureClassification] | None = None,
) -> np.ndarray:
    """Logits with ``spec`` applied.

    Layers in the window with active edits go through the materialized kernel
    (or the masked softmax); all other layers use the recurrent path. A spec
    that edits nothing returns :func:`~ssmko.model.model_forward` exactly.
    """
    _check_window(model, spec)
    if spec.is_noop:
        return model_forward(model, tokens)
    needs_classes = isinstance(spec.feature_scope, str) and spec.feature_scope != "all"
    if needs_classes and classifications is None:
        classifications = classify_model(model)
    R = embed_tokens(model, tokens)
    L = R.shape[0]
    for i in range(model.num_layers):
        if i in spec.layer_window:
            cls = classifications.get(i) if classifications is not None else None
            mask = knockout_mask(spec, L, cls)
            if not mask.is_empty:
                layer = model.layer(i)
                X = layer_input(model, i, R)
                if model.spec.is_ssm:
                    R = R + forward_via_attention(layer, X, materialize(layer, X, i), mask)
                else:
                    R = R + attention_layer_forward(layer, X, mask, spec.baseline_mode)
                continue
        R = R + layer_update(model, i, R)
    return unembed(model, R)


def token_probability(logits: np.ndarray, token: int, position: int = -1) -> float:
    """Softmax probability of ``token`` at ``position``."""
    return float(softmax_rows(logits[position])[token])


def relative_change(p_base: float, p_ko: float) -> float:
    """Percent change of ``p_ko`` relative to ``p_base``."""
    if p_base == 0:
        raise UndefinedBaselineError("baseline probability is zero")
    if p_base < 0:
        raise ContractError("baseline probability must be positive")
    return 100.0 * (p_ko - p_base) / p_base
