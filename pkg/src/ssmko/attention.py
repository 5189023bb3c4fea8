"""Hidden-attention view of SSM layers.

Unrolling the recurrence gives a lower-triangular token-pair kernel per unit
(Mamba-1 channel or SSD head). Row ``p`` is the query position, column ``q``
the key position, and

* Mamba-1: ``M[d, p, q] = C(p) . (prod_{r=q+1..p} A_d(r)) . delta_d(q) B(q)``
* SSD:     ``M[h, p, q] = (prod_{r=q+1..p} a_h(r)) * (Q_p . K_q)``

so the SSM output is ``y_d(p) = sum_q M[d, p, q] u_d(q)`` (Mamba-1) or
``Y_h = M[h] @ V_h`` (SSD). Products of decays are evaluated in log space as
``Abar ** (sum of deltas)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from ._validation import check_sequence_matrix
from .archive import write_archive
from .errors import ContractError
from .ssm import (
    Mamba1Layer,
    SsdLayer,
    mamba1_branches,
    mamba1_layer_forward,
    mamba1_output,
    mamba1_terms,
    ssd_combine,
    ssd_layer_forward,
    ssd_terms,
)


@dataclass(frozen=True)
class KnockoutMask:
    """Concrete edit for one layer: ``pairs[target, source]`` selects kernel
    entries, ``units`` restricts them to a subset of channels/heads (``None``
    means every unit)."""

    pairs: np.ndarray
    units: frozenset[int] | None = None

    def unit_indices(self, n_units: int) -> list[int]:
        if self.units is None:
            return list(range(n_units))
        return sorted(u for u in self.units if 0 <= u < n_units)

    @property
    def is_empty(self) -> bool:
        return not self.pairs.any() or (self.units is not None and not self.units)

    @classmethod
    def from_pairs(cls, L: int, pairs: Iterable[tuple[int, int]], units=None) -> "KnockoutMask":
        m = np.zeros((L, L), dtype=bool)
        for c, r in pairs:
            m[c, r] = True
        return cls(m, None if units is None else frozenset(units))


@dataclass(frozen=True)
class AttentionTensor:
    layer_index: int
    unit_axis: str  # "channel" or "head"
    entries: np.ndarray = field(repr=False)  # units x L x L

    @property
    def units(self) -> int:
        return self.entries.shape[0]

    @property
    def length(self) -> int:
        return self.entries.shape[1]

    def with_entries(self, entries: np.ndarray) -> "AttentionTensor":
        return AttentionTensor(self.layer_index, self.unit_axis, entries)


def segment_sums(steps: np.ndarray) -> np.ndarray:
    """``out[..., p, q] = sum_{r=q+1..p} steps[..., r]`` for ``q <= p``, else ``+inf``.

    ``steps`` has positions on its last axis.
    """
    L = steps.shape[-1]
    cum = np.cumsum(steps, axis=-1)
    seg = cum[..., :, None] - cum[..., None, :]
    lower = np.tril(np.ones((L, L), dtype=bool))
    return np.where(lower, seg, np.inf)


def _mamba1_kernel(layer: Mamba1Layer, u: np.ndarray) -> np.ndarray:
    t = mamba1_terms(layer, u)
    seg = segment_sums(t.delta.T)                      # D x L x L
    log_a_bar = -np.exp(layer.a_log)                   # D x n
    decay = np.exp(seg[:, :, :, None] * log_a_bar[:, None, None, :])  # D x L x L x n
    decay = np.where(np.isfinite(seg)[..., None], decay, 0.0)
    # M[d,p,q] = sum_s C[p,s] decay[d,p,q,s] B[q,s] delta[q,d]
    M = np.einsum("ps,dpqs,qs->dpq", t.C, decay, t.B) * t.delta.T[:, None, :]
    return M


def _mask_from_log(log_a: np.ndarray) -> np.ndarray:
    seg = segment_sums(log_a)
    lower = np.isfinite(seg)
    return np.where(lower, np.exp(np.where(lower, seg, 0.0)), 0.0)


def _ssd_kernel(layer: SsdLayer, X: np.ndarray) -> np.ndarray:
    t = ssd_terms(layer, X)
    return _mask_from_log(t.log_a) * (t.Q @ t.K.transpose(0, 2, 1))


def decay_mask(layer: SsdLayer, X) -> np.ndarray:
    """The SSD mask ``L[h, p, q] = prod_{t=q+1..p} a_h(t)`` (zero above the diagonal)."""
    return _mask_from_log(ssd_terms(layer, X).log_a)


def materialize(layer, X, layer_index: int = 0) -> AttentionTensor:
    """Build the full per-unit ``L x L`` hidden-attention kernel of ``layer`` on ``X``."""
    if isinstance(layer, Mamba1Layer):
        u, _ = mamba1_branches(layer, X)
        return AttentionTensor(layer_index, "channel", _mamba1_kernel(layer, u))
    if isinstance(layer, SsdLayer):
        X = check_sequence_matrix(X, layer.wq.shape[1])
        return AttentionTensor(layer_index, "head", _ssd_kernel(layer, X))
    raise ContractError(f"no hidden-attention view for {type(layer).__name__}")


def apply_mask(attn: AttentionTensor, edits: KnockoutMask | None) -> AttentionTensor:
    """Copy of ``attn`` with the selected entries zeroed."""
    if edits is None or edits.is_empty:
        return attn
    L = attn.length
    if edits.pairs.shape != (L, L):
        raise ContractError(f"edit mask shape {edits.pairs.shape} does not match sequence length {L}")
    entries = attn.entries.copy()
    for u in edits.unit_indices(attn.units):
        entries[u][edits.pairs] = 0.0
    return attn.with_entries(entries)


def forward_via_attention(layer, X, attn: AttentionTensor, edits: KnockoutMask | None = None) -> np.ndarray:
    """Evaluate ``layer`` on ``X`` by multiplying through the (edited) kernel.

    Skip, gate and output projections are applied exactly as on the recurrent
    path; only the token-mixing term goes through ``attn``.
    """
    attn = apply_mask(attn, edits)
    if isinstance(layer, Mamba1Layer):
        u, z = mamba1_branches(layer, X)
        if attn.entries.shape != (layer.channels, u.shape[0], u.shape[0]):
            raise ContractError(f"attention shape {attn.entries.shape} does not fit layer/input")
        y = np.einsum("dpq,qd->pd", attn.entries, u)
        return mamba1_output(layer, y, u, z)
    if isinstance(layer, SsdLayer):
        t = ssd_terms(layer, X)
        L = t.Q.shape[1]
        if attn.entries.shape != (layer.heads, L, L):
            raise ContractError(f"attention shape {attn.entries.shape} does not fit layer/input")
        return ssd_combine(layer, attn.entries @ t.V, t.V)
    raise ContractError(f"no hidden-attention view for {type(layer).__name__}")


def recurrent_forward(layer, X) -> np.ndarray:
    if isinstance(layer, Mamba1Layer):
        return mamba1_layer_forward(layer, X)
    if isinstance(layer, SsdLayer):
        return ssd_layer_forward(layer, X)
    raise ContractError(f"no recurrent path for {type(layer).__name__}")


@dataclass
class DualPathReport:
    tolerance: float
    deviations: list[float]

    @property
    def passed(self) -> bool:
        return all(d <= self.tolerance for d in self.deviations)

    @property
    def failing_layers(self) -> list[int]:
        return [i for i, d in enumerate(self.deviations) if not d <= self.tolerance]

    def __str__(self) -> str:
        rows = [f"layer {i}: max |recurrent - attention| = {d:.3e}" for i, d in enumerate(self.deviations)]
        verdict = "PASS" if self.passed else f"FAIL (layers {self.failing_layers})"
        return "\n".join(rows + [f"{verdict} at tolerance {self.tolerance:g}"])


def dual_path_check(
    model,
    tokens,
    tolerance: float = 1e-10,
    attention_hook: Callable[[AttentionTensor], AttentionTensor] | None = None,
) -> DualPathReport:
    """Compare recurrent and materialized evaluation of every layer.

    Both paths see the same residual stream, which is advanced with the
    recurrent output. ``attention_hook`` may replace a materialized kernel
    before use (fault injection).
    """
    from .model import embed_tokens, layer_input

    if tolerance <= 0:
        raise ContractError("tolerance must be positive")
    R = embed_tokens(model, tokens)
    deviations = []
    for i in range(model.num_layers):
        layer = model.layer(i)
        X = layer_input(model, i, R)
        rec = recurrent_forward(layer, X)
        attn = materialize(layer, X, i)
        if attention_hook is not None:
            attn = attention_hook(attn)
        via = forward_via_attention(layer, X, attn)
        deviations.append(float(np.max(np.abs(rec - via))))
        R = R + rec
    return DualPathReport(tolerance, deviations)


def dump_attention(attn: AttentionTensor, path) -> None:
    """Write a kernel in the tensor archive format for offline inspection."""
    write_archive(
        path,
        {"entries": attn.entries},
        {"layer_index": attn.layer_index, "unit_axis": attn.unit_axis, "shape": list(attn.entries.shape)},
    )
