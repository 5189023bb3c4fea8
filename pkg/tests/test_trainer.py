import math

import numpy as np
import pytest

from ssmko.checks import _fd_relative_errors
from ssmko.config import ModelSpec
from ssmko.errors import ConfigError, ContractError, TrainingFault
from ssmko.grad import forward_batch, loss_and_grads
from ssmko.model import ModelWeights, init_weights, model_forward
from ssmko.presets import ONE_FACT
from ssmko.trainer import TrainConfig, accuracy, train


def _spec(kind, **kw):
    return ModelSpec(vocab_size=9, embed_dim=8, num_layers=2, layer_kind=kind, heads=2, max_seq_len=8, **kw)


@pytest.mark.parametrize("kind", ["ssd", "softmax_attention"])
def test_zero_model_uniform_loss(kind):
    spec = _spec(kind)
    params = {k: np.zeros_like(v) for k, v in init_weights(spec).params.items()}
    loss, _ = loss_and_grads(spec, params, [((1, 2, 3), 4), ((5, 6), 0)])
    assert loss == pytest.approx(math.log(9), abs=1e-12)


@pytest.mark.parametrize("kind", ["ssd", "softmax_attention"])
@pytest.mark.parametrize("tied", [True, False])
def test_gradients_match_finite_differences(kind, tied):
    spec = ModelSpec(vocab_size=7, embed_dim=4, num_layers=1, layer_kind=kind, heads=2, max_seq_len=6,
                     tied_unembedding=tied)
    params = {k: np.array(v) for k, v in init_weights(spec, 3, std=0.5).params.items()}
    errs = _fd_relative_errors(spec, params, [((1, 2, 3, 4), 5), ((6, 0, 2), 1)])
    assert max(errs.values()) <= 1e-5, errs


def test_disconnected_parameter_has_zero_gradient():
    spec = _spec("softmax_attention", tied_unembedding=False)
    params = {k: np.array(v) for k, v in init_weights(spec, 1, std=0.3).params.items()}
    _, G = loss_and_grads(spec, params, [((1, 2, 3), 4)])
    assert np.all(G["pos_embed"][3:] == 0.0)
    assert np.all(G["embed"][[0, 5, 6, 7, 8]] == 0.0)


def test_forward_batch_matches_model_forward():
    spec = _spec("ssd")
    w = init_weights(spec, 2, std=0.3)
    ids = np.array([[1, 2, 3, 4], [4, 3, 2, 1]])
    want = np.stack([model_forward(w, row)[-1] for row in ids])
    assert np.max(np.abs(forward_batch(spec, w.params, ids) - want)) <= 1e-12


def test_mamba1_not_trainable():
    spec = ModelSpec(vocab_size=5, embed_dim=4, num_layers=1, layer_kind="mamba1")
    with pytest.raises(ContractError):
        loss_and_grads(spec, init_weights(spec).params, [((1, 2), 3)])


def test_one_fact_reaches_full_accuracy():
    spec, cfg, _, tr, ev = ONE_FACT.build(7)
    res = train(spec, tr, ev, cfg)
    assert res.reached_target and res.final_accuracy == 1.0
    assert accuracy(spec, res.weights.params, ev) == 1.0


def test_training_is_deterministic():
    spec, cfg, _, tr, ev = ONE_FACT.build(3)
    cfg = TrainConfig(**{**cfg.to_dict(), "target_accuracy": None, "steps": 25})
    a, b = train(spec, tr, ev, cfg), train(spec, tr, ev, cfg)
    assert a.weights.fingerprint() == b.weights.fingerprint()
    assert a.log == b.log and a.steps_run == 25


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_is_a_fault():
    spec, cfg, _, tr, ev = ONE_FACT.build(0)
    bad = init_weights(spec, 0)
    params = dict(bad.params)
    params["embed"] = np.full_like(params["embed"], np.nan)
    with pytest.raises(TrainingFault) as info:
        train(spec, tr, [], cfg, initial=ModelWeights(spec, params))
    assert info.value.step == 0 and len(info.value.log) == 1


def test_config_errors():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(beta2=1.0)
    spec, cfg, _, tr, ev = ONE_FACT.build(0)
    with pytest.raises(ConfigError):
        train(spec, [], ev, cfg)


def test_lr_schedule():
    cfg = TrainConfig(lr=1.0, warmup=10, steps=110, min_lr_ratio=0.1)
    assert cfg.lr_at(0) == pytest.approx(0.1)
    assert cfg.lr_at(10) == pytest.approx(1.0)
    assert cfg.lr_at(110) == pytest.approx(0.1)
