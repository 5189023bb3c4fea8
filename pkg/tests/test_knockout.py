import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_model
from ssmko.attention import AttentionTensor, forward_via_attention, materialize
from ssmko.checks import _mamba1_without, _ssd_without, random_ssm_model
from ssmko.errors import ClassificationError, SpecError, UndefinedBaselineError
from ssmko.knockout import KnockoutSpec, apply_knockout, classify_features, classify_model, classify_scores, \
    knocked_forward, relative_change, token_probability
from ssmko.model import embed_tokens, layer_input, model_forward
from ssmko.numerics import make_rng

SIX = [0.9, 0.8, 0.5, 0.4, 0.2, 0.1]


def test_classify_six_units():
    c = classify_scores(SIX)
    assert c.context_dependent == {0, 1} and c.middle == {2, 3} and c.context_independent == {4, 5}


def test_classify_ties_by_index():
    c = classify_scores([0.3] * 6)
    assert c.order == (0, 1, 2, 3, 4, 5)
    assert c.context_dependent == {0, 1} and c.context_independent == {4, 5}


def test_classify_seven_units_floor_rule():
    c = classify_scores([7, 6, 5, 4, 3, 2, 1])
    assert (len(c.context_dependent), len(c.middle), len(c.context_independent)) == (2, 3, 2)


def test_classify_errors():
    with pytest.raises(ClassificationError):
        classify_scores([1.0, 2.0])
    with pytest.raises(ClassificationError):
        classify_features(small_model("softmax_attention").layer(0))


@given(st.lists(st.floats(0, 16), min_size=3, max_size=40))
def test_classification_partitions(scores):
    c = classify_scores(scores)
    n = len(scores)
    assert c.context_dependent | c.middle | c.context_independent == set(range(n))
    assert len(c.context_dependent) == len(c.context_independent) == n // 3
    if c.context_dependent and c.context_independent:
        assert min(scores[u] for u in c.context_dependent) >= max(scores[u] for u in c.context_independent)


def test_mamba1_scores_are_l1_of_abar():
    layer = small_model("mamba1").layer(0)
    c = classify_features(layer)
    assert np.allclose(c.scores, np.abs(np.exp(-np.exp(layer.a_log))).sum(axis=1))


def _six_unit_attn(rng):
    return AttentionTensor(2, "head", rng.normal(size=(6, 5, 5)) * np.tril(np.ones((5, 5))))


def test_apply_knockout_empty_sources(rng):
    attn = _six_unit_attn(rng)
    spec = KnockoutSpec(2, 1, frozenset(), frozenset({4}))
    assert np.array_equal(apply_knockout(attn, spec).entries, attn.entries)


def test_apply_knockout_full_row(rng):
    attn = _six_unit_attn(rng)
    out = apply_knockout(attn, KnockoutSpec(2, 1, frozenset(range(5)), frozenset({4})))
    assert np.all(out.entries[:, 4] == 0)
    assert np.array_equal(out.entries[:, :4], attn.entries[:, :4])
    assert np.any(attn.entries[:, 4] != 0)  # input not mutated


@pytest.mark.parametrize("scope, edited", [("context_dependent", {0, 1}), ("context_independent", {4, 5})])
def test_apply_knockout_scoped(rng, scope, edited):
    attn = _six_unit_attn(rng)
    cls = classify_scores(SIX, 2)
    out = apply_knockout(attn, KnockoutSpec(2, 1, frozenset({0, 1}), frozenset({4}), scope), cls)
    for u in range(6):
        if u in edited:
            assert np.all(out.entries[u, 4, :2] == 0)
        else:
            assert np.array_equal(out.entries[u], attn.entries[u])


def test_apply_knockout_errors(rng):
    attn = _six_unit_attn(rng)
    with pytest.raises(SpecError):
        apply_knockout(attn, KnockoutSpec(0, 2, frozenset({0}), frozenset({4})))
    with pytest.raises(SpecError):
        apply_knockout(attn, KnockoutSpec(2, 1, frozenset({0}), frozenset({9})))


def test_spec_validation_and_json():
    with pytest.raises(SpecError):
        KnockoutSpec(0, 1, frozenset({3}), frozenset({2}))
    with pytest.raises(SpecError):
        KnockoutSpec(0, 1, feature_scope="middle")
    with pytest.raises(SpecError):
        KnockoutSpec.from_dict({"bogus": 1})
    spec = KnockoutSpec(1, 2, frozenset({0, 1}), frozenset({3}), frozenset({2, 0}), "zero")
    assert KnockoutSpec.from_json(spec.to_json()) == spec
    assert spec.pairs() == [(3, 0), (3, 1)]


@pytest.mark.parametrize("kind", ["mamba1", "ssd", "softmax_attention"])
def test_empty_window_is_bitwise_noop(kind):
    w = small_model(kind)
    toks = [1, 2, 3, 4]
    for spec in (KnockoutSpec(0, 0, frozenset({0}), frozenset({3})), KnockoutSpec(0, 3, frozenset(), frozenset({3})),
                 KnockoutSpec(1, 2, frozenset({0}), frozenset({3}), frozenset())):
        assert np.array_equal(knocked_forward(w, toks, spec), model_forward(w, toks))


def test_window_beyond_model():
    with pytest.raises(SpecError):
        knocked_forward(small_model(), [1, 2], KnockoutSpec(2, 2, frozenset({0}), frozenset({1})))


@pytest.mark.parametrize("kind", ["mamba1", "ssd"])
def test_full_isolation_oracle(kind):
    rng = make_rng(5)
    for _ in range(4):
        w, toks = random_ssm_model(kind, rng, max_len=12, conv_kernel=1, use_skip=False)
        L = len(toks)
        spec = KnockoutSpec(0, w.num_layers, frozenset(range(L - 1)), frozenset({L - 1}))
        got = knocked_forward(w, toks, spec)[-1]
        assert np.max(np.abs(got - model_forward(w, toks[-1:])[-1])) <= 1e-10


@pytest.mark.parametrize("kind", ["mamba1", "ssd"])
def test_single_entry_recompute_without_source(kind):
    rng = make_rng(9)
    for _ in range(5):
        w, toks = random_ssm_model(kind, rng, max_len=10, conv_kernel=3, num_layers=1)
        X = layer_input(w, 0, embed_tokens(w, toks))
        L = len(toks)
        p = L - 1
        q = int(rng.integers(0, L))
        spec = KnockoutSpec(0, 1, frozenset({q}), frozenset({p}))
        attn = apply_knockout(materialize(w.layer(0), X, 0), spec)
        got = forward_via_attention(w.layer(0), X, attn)
        oracle = (_mamba1_without if kind == "mamba1" else _ssd_without)(w.layer(0), X, p, q)
        assert np.max(np.abs(got - oracle)) <= 1e-10


def test_softmax_baseline_knockout_changes_only_targets():
    w = small_model("softmax_attention")
    toks = [1, 2, 3, 4, 5]
    base = model_forward(w, toks)
    for mode in ("mask", "zero"):
        ko = knocked_forward(w, toks, KnockoutSpec(0, 3, frozenset({0, 1}), frozenset({4}), baseline_mode=mode))
        assert np.array_equal(ko[:4], base[:4]) and not np.allclose(ko[4], base[4])


def test_scope_needs_three_units():
    w = small_model("ssd", heads=2)
    with pytest.raises(ClassificationError):
        knocked_forward(w, [1, 2], KnockoutSpec(0, 1, frozenset({0}), frozenset({1}), "context_dependent"))
    assert len(classify_model(small_model("mamba1"))) == 3


def test_relative_change_examples():
    assert relative_change(0.4, 0.1) == pytest.approx(-75.0, abs=1e-12)
    assert relative_change(0.3, 0.3) == 0.0
    assert relative_change(0.2, 0.5) == pytest.approx(150.0, abs=1e-12)
    with pytest.raises(UndefinedBaselineError):
        relative_change(0.0, 0.1)


def test_token_probability_is_softmax():
    logits = np.array([[0.0, 0.0], [np.log(3.0), 0.0]])
    assert token_probability(logits, 0) == pytest.approx(0.75)
    assert token_probability(logits, 1, position=0) == pytest.approx(0.5)
