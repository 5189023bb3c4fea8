"""Adam training of toy SSD / softmax-attention models on fact recall."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .config import ModelSpec
from .data import PromptRecord
from .errors import ConfigError, TrainingFault
from .grad import forward_batch, group_by_length, loss_and_grads
from .model import ModelWeights, init_weights
from .numerics import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings.

    The learning rate warms up linearly for ``warmup`` steps, then follows a
    cosine decay down to ``lr * min_lr_ratio`` at ``steps``. Adam uses
    ``beta1``, ``beta2``, ``adam_eps``; gradients are clipped to global norm
    ``grad_clip`` when it is positive.
    """

    seed: int = 0
    steps: int = 3000
    batch_size: int = 64
    lr: float = 3e-3
    warmup: int = 100
    min_lr_ratio: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    eval_every: int = 100
    target_accuracy: float | None = 1.0
    init_std: float = 0.02
    embed_std: float = 1.0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0 or self.eval_every < 1:
            raise ConfigError("steps >= 0, batch_size >= 1, lr > 0 and eval_every >= 1 are required")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")

    def lr_at(self, step: int) -> float:
        if step < self.warmup:
            return self.lr * (step + 1) / self.warmup
        span = max(1, self.steps - self.warmup)
        frac = min(1.0, (step - self.warmup) / span)
        lo = self.lr * self.min_lr_ratio
        return lo + 0.5 * (self.lr - lo) * (1 + math.cos(math.pi * frac))

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.config = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        c = self.config
        self.t += 1
        bc1 = 1 - c.beta1**self.t
        bc2 = 1 - c.beta2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.adam_eps)
            if c.weight_decay:
                update = update + c.weight_decay * params[k]
            params[k] -= lr * update


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def accuracy(spec: ModelSpec, params, records: Sequence[PromptRecord]) -> float:
    """Fraction of records whose final-position argmax is the answer token."""
    if not records:
        return 0.0
    hits = 0
    for ids, ans in group_by_length([(r.token_ids, r.answer_token) for r in records]):
        logits = forward_batch(spec, params, ids)
        hits += int(np.sum(np.argmax(logits, axis=-1) == ans))
    return hits / len(records)


@dataclass
class TrainResult:
    weights: ModelWeights
    log: list[dict] = field(default_factory=list)
    reached_target: bool = False
    final_accuracy: float = 0.0
    steps_run: int = 0

    def write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for entry in self.log:
                f.write(json.dumps(entry, sort_keys=True) + "\n")


def train(
    spec: ModelSpec,
    train_records: Sequence[PromptRecord],
    eval_records: Sequence[PromptRecord],
    config: TrainConfig,
    initial: ModelWeights | None = None,
) -> TrainResult:
    """Train from ``config.seed``; stop at ``config.steps`` or once eval accuracy
    reaches ``config.target_accuracy`` (checked every ``eval_every`` steps).

    Raises :class:`TrainingFault` on a non-finite loss; the fault carries the
    log collected so far.
    """
    if not train_records:
        raise ConfigError("training set is empty")
    if max(max(r.token_ids) for r in train_records) >= spec.vocab_size:
        raise ConfigError("training data uses token ids beyond the model vocabulary")
    rng = make_rng(config.seed)
    init_seed = int(rng.integers(0, 2**63))
    if initial is None:
        initial = init_weights(spec, init_seed, std=config.init_std, embed_std=config.embed_std)
    params = {k: np.array(v) for k, v in initial.params.items()}
    opt = Adam(params, config)
    examples = [(r.token_ids, r.answer_token) for r in train_records]
    order = rng.permutation(len(examples))
    cursor = 0
    log: list[dict] = []
    acc = accuracy(spec, params, eval_records)
    reached = config.target_accuracy is not None and acc >= config.target_accuracy
    step = 0
    while step < config.steps and not reached:
        idx = []
        while len(idx) < min(config.batch_size, len(examples)):
            if cursor == len(order):
                order = rng.permutation(len(examples))
                cursor = 0
            idx.append(int(order[cursor]))
            cursor += 1
        loss, grads = loss_and_grads(spec, params, [examples[i] for i in idx])
        entry = {"step": step, "loss": loss}
        if not math.isfinite(loss):
            log.append(entry)
            raise TrainingFault(f"non-finite loss at step {step}", step=step, log=log)
        entry["grad_norm"] = _clip(grads, config.grad_clip)
        lr = config.lr_at(step)
        entry["lr"] = lr
        opt.step(params, grads, lr)
        step += 1
        if step % config.eval_every == 0 or step == config.steps:
            acc = accuracy(spec, params, eval_records)
            entry["eval_accuracy"] = acc
            reached = config.target_accuracy is not None and acc >= config.target_accuracy
            logger.info("step %d loss %.4f eval acc %.4f", step, loss, acc)
        log.append(entry)
    return TrainResult(ModelWeights(spec, params), log, reached, acc, step)
