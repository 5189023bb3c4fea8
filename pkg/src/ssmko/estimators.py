"""scikit-learn style facade over training and knockout sweeps.

``FactRecallModel`` is a classifier over token sequences: ``X`` is a list of
(possibly ragged) token-id sequences and ``y`` the answer token of each.
``KnockoutSweep`` is a transformer over :class:`PromptRecord` lists that
maps each record to its relative-change grid.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_token_batch
from .config import ModelSpec
from .data import CATEGORIES, PromptRecord
from .errors import InputError
from .experiments import BaselineCache, info_flow_sweep
from .model import ModelWeights, model_forward
from .numerics import softmax_rows
from .trainer import TrainConfig, train


def _as_records(X: Sequence[np.ndarray], y=None) -> list[PromptRecord]:
    answers = np.zeros(len(X), dtype=np.int64) if y is None else y
    return [
        PromptRecord(f"{i:08d}", tuple(int(t) for t in seq), (0, 0), (0, 0), int(a))
        for i, (seq, a) in enumerate(zip(X, answers))
    ]


class FactRecallModel(ClassifierMixin, BaseEstimator):
    """Toy SSD or softmax-attention language model trained to emit the
    answer token at the final position."""

    def __init__(self, vocab_size=None, layer_kind="ssd", embed_dim=64, num_layers=4, heads=6,
                 steps=2000, lr=1e-3, batch_size=64, seed=0, target_accuracy=1.0):
        self.vocab_size = vocab_size
        self.layer_kind = layer_kind
        self.embed_dim = embed_dim
        self.num_layers = num_layers
        self.heads = heads
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.target_accuracy = target_accuracy

    def _vocab(self, X, y) -> int:
        if self.vocab_size is not None:
            return int(self.vocab_size)
        return int(max(max(int(np.max(s)) for s in X), int(np.max(y)))) + 1

    def fit(self, X, y):
        y = np.asarray(y)
        if len(X) != len(y):
            raise InputError(f"X has {len(X)} sequences but y has {len(y)} labels")
        vocab = self._vocab(X, y)
        seqs = check_token_batch(X, vocab)
        if y.ndim != 1 or y.min() < 0 or y.max() >= vocab:
            raise InputError(f"y must be 1-D token ids in [0, {vocab})")
        spec = ModelSpec(vocab_size=vocab, embed_dim=self.embed_dim, num_layers=self.num_layers,
                         layer_kind=self.layer_kind, heads=self.heads,
                         max_seq_len=max(64, max(len(s) for s in seqs)))
        records = _as_records(seqs, y)
        cfg = TrainConfig(seed=self.seed, steps=self.steps, lr=self.lr, batch_size=self.batch_size,
                          target_accuracy=self.target_accuracy)
        result = train(spec, records, records, cfg)
        self.weights_ = result.weights
        self.log_ = result.log
        self.train_accuracy_ = result.final_accuracy
        self.n_steps_ = result.steps_run
        self.classes_ = np.arange(vocab)
        return self

    def _final_logits(self, X) -> np.ndarray:
        check_is_fitted(self, "weights_")
        seqs = check_token_batch(X, len(self.classes_))
        return np.stack([model_forward(self.weights_, s)[-1] for s in seqs])

    def predict_proba(self, X) -> np.ndarray:
        return softmax_rows(self._final_logits(X))

    def predict(self, X) -> np.ndarray:
        logits = self._final_logits(X)
        return self.classes_[np.argmax(logits, axis=1)]


class KnockoutSweep(TransformerMixin, BaseEstimator):
    """Category -> last knockout sweep for a fixed model.

    ``fit`` computes baselines and the sweep on the given records;
    ``transform`` returns an array of shape
    ``(n_records, n_categories, n_window_starts)`` in percent, with NaN rows
    for records whose baseline probability is zero.
    """

    def __init__(self, model: ModelWeights | None = None, window_size=9, categories=CATEGORIES, scope="all",
                 relation_mode="complement", workers=1):
        self.model = model
        self.window_size = window_size
        self.categories = categories
        self.scope = scope
        self.relation_mode = relation_mode
        self.workers = workers

    def _window(self) -> int:
        if self.model is None:
            raise InputError("KnockoutSweep needs a model")
        L = self.model.num_layers
        return self.window_size if self.window_size <= L else max(1, L - 1)

    def _sweep(self, records):
        return info_flow_sweep(self.model, records, self._window(), tuple(self.categories), self.scope,
                               self.relation_mode, self.baselines_, self.workers)

    def fit(self, X, y=None):
        records = list(X)
        if not records:
            raise InputError("expected at least one record")
        self.baselines_ = BaselineCache(self.model)
        self.result_ = self._sweep(records)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "result_")
        records = list(X)
        res = self._sweep(records)
        starts = res.first_layers
        cats = list(res.categories)
        out = np.full((len(records), len(cats), len(starts)), np.nan)
        for ci, cat in enumerate(cats):
            for fi, fl in enumerate(starts):
                values = dict(res.raw[(cat, fl)])
                for ri, rec in enumerate(records):
                    out[ri, ci, fi] = values.get(rec.id, np.nan)
        return out
