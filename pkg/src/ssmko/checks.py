"""Self-check suites: dual-path equivalence, decay identity, gradient check
and the knockout contract. Each suite returns a :class:`CheckResult`; the CLI
``check`` command prints them as a table.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .attention import KnockoutMask, dual_path_check, forward_via_attention, materialize
from .config import ModelSpec
from .grad import loss_and_grads
from .knockout import KnockoutSpec, knocked_forward
from .model import embed_tokens, init_weights, layer_input, model_forward
from .numerics import make_rng
from .ssm import (
    SelectiveSsmChannel,
    discretize,
    mamba1_branches,
    mamba1_output,
    mamba1_terms,
    ssd_combine,
    ssd_terms,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    cases: int
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<22} max_err={self.max_error:.3e}  tol={self.tolerance:.0e}  "
                f"cases={self.cases:<5d} {self.seconds:6.2f}s  {self.detail}")


def random_ssm_model(kind: str, rng: np.random.Generator, *, max_len: int = 64, conv_kernel: int = 1,
                     use_skip: bool = True, num_layers: int | None = None):
    """Random SSM model with state_dim <= 16 and heads <= 4 plus a token sequence.

    Weights are drawn at init scale (std 0.1 to 0.4) so activations stay
    O(1) and an absolute tolerance is meaningful.
    """
    H = int(rng.integers(2, 9))
    spec = ModelSpec(
        vocab_size=int(rng.integers(5, 30)),
        embed_dim=H,
        num_layers=num_layers or int(rng.integers(1, 4)),
        layer_kind=kind,
        state_dim=int(rng.integers(1, 17)),
        inner_dim=int(rng.integers(1, 9)),
        conv_kernel=conv_kernel,
        heads=int(rng.integers(1, 5)),
        head_dim=int(rng.integers(1, 6)),
        use_skip=use_skip,
    )
    w = init_weights(spec, int(rng.integers(0, 2**31)), std=float(rng.uniform(0.1, 0.4)))
    # randomize decays so units differ
    upd = {}
    for name, arr in w.params.items():
        if name.endswith("a_log"):
            upd[name] = rng.uniform(-3.0, 2.0, arr.shape)
        elif name.endswith("delta_bias"):
            upd[name] = rng.uniform(-3.0, 1.0, arr.shape)
    w = w.replace(**upd)
    L = int(rng.integers(1, max_len + 1))
    tokens = rng.integers(0, spec.vocab_size, size=L)
    return w, tokens


def check_dual_path(models_per_kind: int = 50, tolerance: float = 1e-10, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    for kind in ("mamba1", "ssd"):
        for _ in range(models_per_kind):
            w, tokens = random_ssm_model(kind, rng, conv_kernel=1)
            rep = dual_path_check(w, tokens, tolerance)
            worst = max(worst, max(rep.deviations))
    return CheckResult("dual-path", worst <= tolerance, worst, tolerance, 2 * models_per_kind,
                       time.perf_counter() - t0, "recurrent vs materialized, mamba1(k=1) + ssd")


def random_channel(rng: np.random.Generator, n: int | None = None, width: int | None = None) -> SelectiveSsmChannel:
    n = n or int(rng.integers(1, 17))
    D = width or int(rng.integers(1, 9))
    return SelectiveSsmChannel(
        a_log=rng.uniform(-3.0, 2.0, n),
        b_proj=rng.normal(0, 1, (D, n)),
        c_proj=rng.normal(0, 1, (D, n)),
        delta_proj=rng.normal(0, 1, D),
        delta_bias=float(rng.uniform(-2, 1)),
        index=int(rng.integers(0, D)),
    )


def check_decay_identity(samples: int = 1000, tolerance: float = 1e-12, seed: int = 1) -> CheckResult:
    """Product of per-step decays equals ``Abar ** (sum of deltas)``."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(samples):
        ch = random_channel(rng)
        L = int(rng.integers(2, 33))
        U = rng.normal(0, 1, (L, ch.b_proj.shape[0]))
        steps = [discretize(ch, U[t]) for t in range(L)]
        p = int(rng.integers(1, L))
        q = int(rng.integers(0, p))
        prod = np.ones(ch.state_dim)
        total = 0.0
        for r in range(q + 1, p + 1):
            prod = prod * steps[r][0]
            total += steps[r][3]
        closed = np.power(ch.a_bar, total)
        worst = max(worst, float(np.max(np.abs(prod - closed))))
    return CheckResult("decay-identity", worst <= tolerance, worst, tolerance, samples,
                       time.perf_counter() - t0, "prod A(r) vs Abar^(sum delta)")


def _fd_relative_errors(spec: ModelSpec, params: dict, batch, h: float = 1e-5) -> dict[str, float]:
    _, G = loss_and_grads(spec, params, batch)
    errors = {}
    for name in sorted(params):
        arr = params[name]
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp, _ = loss_and_grads(spec, params, batch)
            arr[idx] = old - h
            lm, _ = loss_and_grads(spec, params, batch)
            arr[idx] = old
            fd[idx] = (lp - lm) / (2 * h)
        scale = max(np.linalg.norm(fd), np.linalg.norm(G[name]))
        errors[name] = 0.0 if scale == 0 else float(np.linalg.norm(fd - G[name]) / scale)
    return errors


def gradient_errors(kind: str, seed: int = 2) -> dict[str, float]:
    """Per-parameter-group relative error ``|g - fd| / max(|g|, |fd|)`` on a
    2-layer, H=8 model with sequences of length 6."""
    rng = make_rng(seed)
    spec = ModelSpec(vocab_size=11, embed_dim=8, num_layers=2, layer_kind=kind, heads=2,
                     tied_unembedding=False, max_seq_len=8)
    w = init_weights(spec, seed, std=0.4)
    params = {k: np.array(v) for k, v in w.params.items()}
    for k in params:
        if k.endswith(("norm", "norm1", "norm2", "final_norm", "skip_d", "ff_b1", "ff_b2")):
            params[k] = params[k] + rng.normal(0, 0.3, params[k].shape)
    batch = [(tuple(int(t) for t in rng.integers(0, 11, 6)), int(rng.integers(0, 11))) for _ in range(3)]
    return _fd_relative_errors(spec, params, batch)


def check_gradients(tolerance: float = 1e-5, seed: int = 2) -> CheckResult:
    t0 = time.perf_counter()
    worst = 0.0
    groups = 0
    for kind in ("ssd", "softmax_attention"):
        errs = gradient_errors(kind, seed)
        groups += len(errs)
        worst = max(worst, max(errs.values()))
    return CheckResult("gradient", worst <= tolerance, worst, tolerance, groups,
                       time.perf_counter() - t0, "central differences, ssd + softmax, H=8, 2 layers")


def _mamba1_without(layer, X, p: int, q: int) -> np.ndarray:
    """Layer output recomputed from the discretized terms with source ``q``
    removed from position ``p``'s sum."""
    u, z = mamba1_branches(layer, X)
    t = mamba1_terms(layer, u)
    L, D = u.shape
    y = np.zeros((L, D))
    for pos in range(L):
        for s in range(pos + 1):
            if pos == p and s == q:
                continue
            decay = np.ones_like(t.A[0])
            for r in range(s + 1, pos + 1):
                decay = decay * t.A[r]
            y[pos] += np.sum(t.C[pos] * decay * t.B[s] * t.delta[s][:, None], axis=1) * u[s]
    return mamba1_output(layer, y, u, z)


def _ssd_without(layer, X, p: int, q: int) -> np.ndarray:
    t = ssd_terms(layer, X)
    heads, L, dv = t.V.shape
    a = np.exp(t.log_a)
    Y = np.zeros((heads, L, dv))
    for pos in range(L):
        for s in range(pos + 1):
            if pos == p and s == q:
                continue
            decay = np.prod(a[:, s + 1:pos + 1], axis=1)
            score = np.sum(t.Q[:, pos] * t.K[:, s], axis=1)
            Y[:, pos] += (decay * score)[:, None] * t.V[:, s]
    return ssd_combine(layer, Y, t.V)


def check_isolation(models_per_kind: int = 10, tolerance: float = 1e-10, seed: int = 4) -> CheckResult:
    """With conv k=1 and no skip, knocking out every non-self source of the
    final token in every layer reproduces the single-token logits."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    for kind in ("mamba1", "ssd"):
        for _ in range(models_per_kind):
            w, tokens = random_ssm_model(kind, rng, max_len=16, conv_kernel=1, use_skip=False)
            L = len(tokens)
            spec = KnockoutSpec(0, w.num_layers, frozenset(range(L - 1)), frozenset({L - 1}))
            got = knocked_forward(w, tokens, spec)[-1]
            want = model_forward(w, tokens[-1:])[-1]
            worst = max(worst, float(np.max(np.abs(got - want))))
    return CheckResult("isolation", worst <= tolerance, worst, tolerance, 2 * models_per_kind,
                       time.perf_counter() - t0, "all non-self sources -> last vs single-token run")


def check_single_entry(cases: int = 100, tolerance: float = 1e-10, seed: int = 3) -> CheckResult:
    """Single-entry knockout vs a recompute-without-source oracle, plus
    bitwise no-op checks for empty specs."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    failures = []
    for i in range(cases):
        kind = ("mamba1", "ssd")[i % 2]
        w, tokens = random_ssm_model(kind, rng, max_len=12, conv_kernel=int(rng.integers(1, 5)), num_layers=1)
        X = layer_input(w, 0, embed_tokens(w, tokens))
        layer = w.layer(0)
        L = X.shape[0]
        p = int(rng.integers(0, L))
        q = int(rng.integers(0, p + 1))
        attn = materialize(layer, X)
        edited = forward_via_attention(layer, X, attn, KnockoutMask.from_pairs(L, [(p, q)]))
        oracle = _mamba1_without(layer, X, p, q) if kind == "mamba1" else _ssd_without(layer, X, p, q)
        worst = max(worst, float(np.max(np.abs(edited - oracle))))
        for empty in (KnockoutSpec(0, 1, frozenset(), frozenset({L - 1})),
                      KnockoutSpec(0, 0, frozenset({0}), frozenset({L - 1}))):
            if not np.array_equal(knocked_forward(w, tokens, empty), model_forward(w, tokens)):
                failures.append(f"case {i}: empty spec changed logits")
    return CheckResult("single-entry", worst <= tolerance and not failures, worst, tolerance, cases,
                       time.perf_counter() - t0, "; ".join(failures) or "recompute-without-q oracle, empty specs")


def check_knockout_contract(cases: int = 100, tolerance: float = 1e-10, seed: int = 3) -> CheckResult:
    """Single-entry oracle, empty-spec no-ops and the full-isolation oracle."""
    parts = [check_single_entry(cases, tolerance, seed), check_isolation(10, tolerance, seed + 1)]
    return CheckResult(
        "knockout-contract", all(p.passed for p in parts), max(p.max_error for p in parts), tolerance,
        sum(p.cases for p in parts), sum(p.seconds for p in parts), "; ".join(p.detail for p in parts),
    )


SUITES = {
    "dual-path": check_dual_path,
    "decay-identity": check_decay_identity,
    "gradient": check_gradients,
    "knockout-contract": check_knockout_contract,
}
