import numpy as np
import pytest
from hypothesis import settings

from ssmko.config import ModelSpec
from ssmko.model import init_weights
from ssmko.numerics import softplus_inverse
from ssmko.ssm import SelectiveSsmChannel

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


def scalar_channel(a_bar=0.5, delta=1.0) -> SelectiveSsmChannel:
    """n=1 channel with constant decay ``a_bar ** delta`` and B = C = identity."""
    return SelectiveSsmChannel(
        a_log=np.array([np.log(-np.log(a_bar))]),
        b_proj=np.array([[1.0]]),
        c_proj=np.array([[1.0]]),
        delta_proj=np.array([0.0]),
        delta_bias=float(softplus_inverse(delta)),
        index=0,
    )


def small_model(kind="ssd", seed=0, **kw):
    base = dict(vocab_size=13, embed_dim=8, num_layers=3, layer_kind=kind, heads=2, state_dim=4, inner_dim=6)
    base.update(kw)
    return init_weights(ModelSpec(**base), seed, std=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
