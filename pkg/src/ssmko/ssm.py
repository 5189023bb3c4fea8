"""Selective state-space layers evaluated through their recurrences.

Two layer kinds live here:

* :class:`Mamba1Layer` -- ``channels`` independent selective SSMs, each with a
  diagonal ``state_dim`` state, preceded by a causal depthwise convolution and
  followed by a SiLU gate.
* :class:`SsdLayer` -- Mamba-2 style heads with a scalar decay per head; the
  recurrence carries a ``head_dim x head_dim`` state per head.

Recurrence convention: ``x(t) = A(t) x(t-1) + B(t) u(t)`` and
``y(t) = C(t) x(t)`` with ``x(0) = 0``, so ``y(t)`` already sees ``u(t)``.
Decay is parameterized as ``Abar = exp(-exp(a_log))`` and
``A(t) = Abar ** delta(t)`` with ``delta(t) = softplus(...) > 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_sequence_matrix
from .numerics import silu, softplus


@dataclass(frozen=True)
class SelectiveSsmChannel:
    """One channel of a Mamba-1 layer.

    ``b_proj``, ``c_proj`` map the full SSM input vector (width ``D``) to the
    ``n``-dimensional input/output maps; ``delta_proj`` (width ``D``) and
    ``delta_bias`` produce the step size. ``index`` selects which component
    of the input vector is this channel's scalar signal.
    """

    a_log: np.ndarray
    b_proj: np.ndarray
    c_proj: np.ndarray
    delta_proj: np.ndarray
    delta_bias: float
    index: int = 0

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[0]

    @property
    def a_bar(self) -> np.ndarray:
        return np.exp(-np.exp(self.a_log))

    @property
    def log_a_bar(self) -> np.ndarray:
        return -np.exp(self.a_log)


def discretize(channel: SelectiveSsmChannel, u_t) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Per-step ``(A_t, B_t, C_t, delta_t)`` for one channel.

    ``B_t`` is Euler-scaled by ``delta_t``.
    """
    u_t = np.asarray(u_t, dtype=np.float64)
    delta = float(softplus(u_t @ channel.delta_proj + channel.delta_bias))
    a_t = np.exp(delta * channel.log_a_bar)
    b_t = delta * (u_t @ channel.b_proj)
    c_t = u_t @ channel.c_proj
    return a_t, b_t, c_t, delta


def selective_scan(A, B, C, u) -> np.ndarray:
    """Run the diagonal recurrence given per-step coefficients.

    ``A``, ``B``, ``C`` are ``L x n`` (or broadcast ``L x ... x n``); ``u`` is
    ``L`` (or ``L x ...``). Returns ``y`` with the shape of ``u``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    h = np.zeros(np.broadcast_shapes(A.shape[1:], B.shape[1:]))
    y = np.empty(u.shape)
    for t in range(u.shape[0]):
        h = A[t] * h + B[t] * u[t][..., None]
        y[t] = np.sum(h * C[t], axis=-1)
    return y


def recurrent_scan(channel: SelectiveSsmChannel, U) -> np.ndarray:
    """Evaluate a single channel over a sequence.

    ``U`` is the ``L x D`` SSM input (a 1-D array is taken as ``D = 1``); the
    channel's scalar signal is ``U[:, channel.index]``.
    """
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    steps = [discretize(channel, U[t]) for t in range(U.shape[0])]
    A = np.array([s[0] for s in steps])
    B = np.array([s[1] for s in steps])
    C = np.array([s[2] for s in steps])
    return selective_scan(A, B, C, U[:, channel.index])


@dataclass(frozen=True)
class Mamba1Layer:
    """Parameters of one Mamba-1 mixer (without its pre-norm)."""

    in_proj: np.ndarray      # H x D
    gate_proj: np.ndarray    # H x D
    conv_weight: np.ndarray  # D x k, last tap multiplies the current token
    conv_bias: np.ndarray    # D
    delta_proj: np.ndarray   # D x D
    delta_bias: np.ndarray   # D
    b_proj: np.ndarray       # D x n
    c_proj: np.ndarray       # D x n
    a_log: np.ndarray        # D x n
    skip_d: np.ndarray       # D
    out_proj: np.ndarray     # D x H
    use_gate: bool = True
    use_skip: bool = True

    @property
    def channels(self) -> int:
        return self.in_proj.shape[1]

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[1]

    @property
    def units(self) -> int:
        return self.channels

    @property
    def a_bar(self) -> np.ndarray:
        return np.exp(-np.exp(self.a_log))

    def channel(self, d: int) -> SelectiveSsmChannel:
        return SelectiveSsmChannel(
            a_log=self.a_log[d],
            b_proj=self.b_proj,
            c_proj=self.c_proj,
            delta_proj=self.delta_proj[:, d],
            delta_bias=float(self.delta_bias[d]),
            index=d,
        )


def causal_conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Depthwise causal convolution with zero left padding."""
    L = x.shape[0]
    k = weight.shape[1]
    padded = np.concatenate([np.zeros((k - 1, x.shape[1])), x], axis=0)
    out = np.tile(bias, (L, 1)).astype(np.float64)
    for j in range(k):
        out += weight[:, j] * padded[j:j + L]
    return out


def mamba1_branches(layer: Mamba1Layer, X) -> tuple[np.ndarray, np.ndarray]:
    """SSM input ``u`` (after conv and SiLU) and raw gate pre-activation ``z``."""
    X = check_sequence_matrix(X, layer.in_proj.shape[0])
    u = silu(causal_conv(X @ layer.in_proj, layer.conv_weight, layer.conv_bias))
    z = X @ layer.gate_proj
    return u, z


@dataclass(frozen=True)
class Mamba1Terms:
    """Discretized per-step quantities for every channel of a layer."""

    u: np.ndarray      # L x D   SSM input
    delta: np.ndarray  # L x D
    A: np.ndarray      # L x D x n
    B: np.ndarray      # L x n   (not yet scaled by delta)
    C: np.ndarray      # L x n


def mamba1_terms(layer: Mamba1Layer, u: np.ndarray) -> Mamba1Terms:
    delta = softplus(u @ layer.delta_proj + layer.delta_bias)
    A = np.exp(delta[:, :, None] * -np.exp(layer.a_log)[None])
    return Mamba1Terms(u=u, delta=delta, A=A, B=u @ layer.b_proj, C=u @ layer.c_proj)


def mamba1_output(layer: Mamba1Layer, y: np.ndarray, u: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Skip, gate and output projection applied to the SSM output ``y``."""
    if layer.use_skip:
        y = y + layer.skip_d * u
    if layer.use_gate:
        y = y * silu(z)
    return y @ layer.out_proj


def mamba1_layer_forward(layer: Mamba1Layer, X) -> np.ndarray:
    """Recurrent evaluation of a Mamba-1 mixer; returns the residual update."""
    u, z = mamba1_branches(layer, X)
    t = mamba1_terms(layer, u)
    B_bar = t.delta[:, :, None] * t.B[:, None, :]
    y = selective_scan(t.A, B_bar, t.C[:, None, :], u)
    return mamba1_output(layer, y, u, z)


@dataclass(frozen=True)
class SsdLayer:
    """Parameters of one Mamba-2 (SSD) mixer.

    Each head ``h`` has projections ``wq[h]``, ``wk[h]`` (``H x dk``) and
    ``wv[h]`` (``H x dv``), a scalar decay parameter ``a_log[h]`` and a step
    size from ``delta_w[:, h]`` / ``delta_bias[h]``.
    """

    wq: np.ndarray          # heads x H x dk
    wk: np.ndarray          # heads x H x dk
    wv: np.ndarray          # heads x H x dv
    delta_w: np.ndarray     # H x heads
    delta_bias: np.ndarray  # heads
    a_log: np.ndarray       # heads
    skip_d: np.ndarray      # heads
    out_proj: np.ndarray    # heads*dv x H
    use_skip: bool = True

    @property
    def heads(self) -> int:
        return self.wq.shape[0]

    @property
    def units(self) -> int:
        return self.heads

    @property
    def a_bar(self) -> np.ndarray:
        return np.exp(-np.exp(self.a_log))


@dataclass(frozen=True)
class SsdTerms:
    Q: np.ndarray      # heads x L x dk
    K: np.ndarray      # heads x L x dk
    V: np.ndarray      # heads x L x dv
    delta: np.ndarray  # heads x L
    log_a: np.ndarray  # heads x L, log of the per-step scalar decay


def ssd_terms(layer: SsdLayer, X) -> SsdTerms:
    X = check_sequence_matrix(X, layer.wq.shape[1])
    Q = np.einsum("lh,ahk->alk", X, layer.wq)
    K = np.einsum("lh,ahk->alk", X, layer.wk)
    V = np.einsum("lh,ahk->alk", X, layer.wv)
    delta = softplus(X @ layer.delta_w + layer.delta_bias).T
    log_a = -np.exp(layer.a_log)[:, None] * delta
    return SsdTerms(Q=Q, K=K, V=V, delta=delta, log_a=log_a)


def ssd_combine(layer: SsdLayer, Y: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Skip connection, head concatenation and output projection."""
    if layer.use_skip:
        Y = Y + layer.skip_d[:, None, None] * V
    heads, L, dv = Y.shape
    return Y.transpose(1, 0, 2).reshape(L, heads * dv) @ layer.out_proj


def ssd_layer_forward(layer: SsdLayer, X) -> np.ndarray:
    """Recurrent evaluation of an SSD mixer; returns the residual update.

    Per head the state ``S_p = a_p S_{p-1} + K_p^T V_p`` is read out as
    ``Y_p = Q_p S_p``.
    """
    t = ssd_terms(layer, X)
    heads, L, dk = t.Q.shape
    dv = t.V.shape[2]
    a = np.exp(t.log_a)
    state = np.zeros((heads, dk, dv))
    Y = np.empty((heads, L, dv))
    for p in range(L):
        state = a[:, p, None, None] * state + t.K[:, p, :, None] * t.V[:, p, None, :]
        Y[:, p] = np.einsum("ak,akv->av", t.Q[:, p], state)
    return ssd_combine(layer, Y, t.V)

