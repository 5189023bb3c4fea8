import numpy as np
import pytest

from conftest import small_model
from ssmko.archive import read_archive
from ssmko.attention import KnockoutMask, dual_path_check, dump_attention, forward_via_attention, materialize, \
    recurrent_forward
from ssmko.checks import random_ssm_model
from ssmko.errors import ContractError
from ssmko.model import embed_tokens, layer_input
from ssmko.numerics import make_rng, silu, softplus_inverse
from ssmko.ssm import Mamba1Layer, mamba1_branches, mamba1_output, mamba1_terms, selective_scan, ssd_combine, \
    ssd_terms


def _scalar_layer(x=0.7):
    """D = n = 1, conv k=1 identity, B = C = 1 after the SiLU, delta = 1, Abar = 0.5."""
    c = float(silu(np.array(x)))
    return Mamba1Layer(
        in_proj=np.eye(1), gate_proj=np.zeros((1, 1)), conv_weight=np.ones((1, 1)), conv_bias=np.zeros(1),
        delta_proj=np.zeros((1, 1)), delta_bias=np.array([softplus_inverse(1.0)]),
        b_proj=np.array([[1 / c]]), c_proj=np.array([[1 / c]]), a_log=np.array([[np.log(np.log(2.0))]]),
        skip_d=np.zeros(1), out_proj=np.eye(1), use_gate=False, use_skip=False,
    )


def test_scalar_kernel_hand_computed():
    attn = materialize(_scalar_layer(), np.full((2, 1), 0.7))
    assert np.allclose(attn.entries[0], [[1.0, 0.0], [0.5, 1.0]], atol=1e-14)


def test_single_token_kernel_is_cb(rng):
    layer = small_model("mamba1").layer(0)
    X = rng.normal(size=(1, 8))
    u, _ = mamba1_branches(layer, X)
    t = mamba1_terms(layer, u)
    attn = materialize(layer, X)
    want = (t.C[0] @ t.B[0]) * t.delta[0]
    assert np.allclose(attn.entries[:, 0, 0], want, atol=1e-14)


def test_kernel_matches_perturbation_sensitivity(rng):
    layer = small_model("mamba1", seed=4).layer(1)
    X = rng.normal(size=(6, 8))
    u, _ = mamba1_branches(layer, X)
    t = mamba1_terms(layer, u)
    M = materialize(layer, X).entries
    h = 1e-6
    for d in range(layer.channels):
        Bbar = t.delta[:, d, None] * t.B
        for q in range(5):
            up = u[:, d].copy()
            up[q] += h
            dn = u[:, d].copy()
            dn[q] -= h
            sens = (selective_scan(t.A[:, d], Bbar, t.C, up) - selective_scan(t.A[:, d], Bbar, t.C, dn)) / (2 * h)
            assert np.max(np.abs(sens[q + 1:] - M[d, q + 1:, q])) <= 1e-6


@pytest.mark.parametrize("kind", ["mamba1", "ssd"])
def test_no_edit_matches_recurrent(rng, kind):
    layer = small_model(kind, conv_kernel=4).layer(0)
    X = rng.normal(size=(9, 8))
    via = forward_via_attention(layer, X, materialize(layer, X))
    assert np.max(np.abs(via - recurrent_forward(layer, X))) <= 1e-10


def test_zero_kernel_leaves_skip_and_gate(rng):
    layer = small_model("mamba1").layer(0)
    X = rng.normal(size=(5, 8))
    attn = materialize(layer, X)
    out = forward_via_attention(layer, X, attn.with_entries(np.zeros_like(attn.entries)))
    u, z = mamba1_branches(layer, X)
    assert np.array_equal(out, mamba1_output(layer, np.zeros_like(u), u, z))


def test_zero_kernel_ssd(rng):
    layer = small_model("ssd").layer(0)
    X = rng.normal(size=(5, 8))
    attn = materialize(layer, X)
    t = ssd_terms(layer, X)
    out = forward_via_attention(layer, X, attn.with_entries(np.zeros_like(attn.entries)))
    assert np.array_equal(out, ssd_combine(layer, np.zeros_like(t.V), t.V))


def test_row_keeps_only_diagonal(rng):
    layer = small_model("mamba1", seed=2).layer(0)
    X = rng.normal(size=(6, 8))
    p = 4
    edits = KnockoutMask.from_pairs(6, [(p, q) for q in range(p)])
    out = forward_via_attention(layer, X, materialize(layer, X), edits)
    u, z = mamba1_branches(layer, X)
    t = mamba1_terms(layer, u)
    y_p = (t.C[p] @ t.B[p]) * t.delta[p] * u[p]
    assert np.max(np.abs(out[p] - mamba1_output(layer, y_p[None], u[p:p + 1], z[p:p + 1])[0])) <= 1e-12


@pytest.mark.parametrize("kind", ["mamba1", "ssd"])
def test_dual_path_random_models(kind):
    rng = make_rng(11)
    for _ in range(3):
        w, _ = random_ssm_model(kind, rng, conv_kernel=1)
        toks = rng.integers(0, w.spec.vocab_size, 32)
        rep = dual_path_check(w, toks, 1e-10)
        assert rep.passed, str(rep)


def test_dual_path_fault_injection():
    w = small_model("ssd")

    def corrupt(attn):
        if attn.layer_index != 1:
            return attn
        e = attn.entries.copy()
        e[0, 3, 1] += 0.5
        return attn.with_entries(e)

    rep = dual_path_check(w, [1, 2, 3, 4, 5], 1e-10, attention_hook=corrupt)
    assert not rep.passed and rep.failing_layers == [1]
    assert "FAIL" in str(rep)


def test_contract_errors(rng):
    w = small_model("softmax_attention")
    with pytest.raises(ContractError):
        materialize(w.layer(0), rng.normal(size=(3, 8)))
    layer = small_model("ssd").layer(0)
    X = rng.normal(size=(4, 8))
    with pytest.raises(ContractError):
        forward_via_attention(layer, X[:3], materialize(layer, X))
    with pytest.raises(ContractError):
        dual_path_check(small_model("ssd"), [1], 0.0)


def test_dump_attention_roundtrip(tmp_path):
    w = small_model("mamba1")
    X = layer_input(w, 0, embed_tokens(w, [1, 2, 3]))
    attn = materialize(w.layer(0), X, 0)
    dump_attention(attn, tmp_path / "a.ssmko")
    tensors, meta = read_archive(tmp_path / "a.ssmko")
    assert np.array_equal(tensors["entries"], attn.entries)
    assert meta["unit_axis"] == "channel" and meta["layer_index"] == 0
