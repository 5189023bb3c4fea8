"""Named training recipes used by the CLI, the estimator facade and the
acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass

from .config import ModelSpec
from .tasks import TaskConfig, generate_task
from .trainer import TrainConfig


@dataclass(frozen=True)
class Recipe:
    name: str
    task: TaskConfig
    train: TrainConfig
    embed_dim: int = 64
    num_layers: int = 4
    layer_kind: str = "ssd"
    heads: int = 4
    accuracy_gate: float = 0.95

    def model_spec(self, vocab_size: int) -> ModelSpec:
        return ModelSpec(vocab_size=vocab_size, embed_dim=self.embed_dim, num_layers=self.num_layers,
                         layer_kind=self.layer_kind, heads=self.heads)

    def build(self, seed: int | None = None):
        """Return ``(spec, train_config, task, train_records, eval_records)``."""
        task, train, evaluation = generate_task(self.task)
        cfg = self.train if seed is None else TrainConfig(**{**self.train.to_dict(), "seed": seed})
        return self.model_spec(task.vocab_size), cfg, task, train, evaluation

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "task": self.task.to_dict(),
            "train": self.train.to_dict(),
            "model": {"embed_dim": self.embed_dim, "num_layers": self.num_layers,
                      "layer_kind": self.layer_kind, "heads": self.heads},
            "accuracy_gate": self.accuracy_gate,
        }


# 64 subjects x 8 relations = 512 facts; 4-layer SSD, H=64, 6 heads.
# Stops at 100% eval accuracy (about 1000 steps, 4 minutes on one CPU).
FACTS512 = Recipe(
    name="facts512",
    task=TaskConfig(),
    train=TrainConfig(seed=0, steps=2000, lr=1e-3, batch_size=64, eval_every=100, target_accuracy=1.0),
    heads=6,
)

# A single fact: the degenerate smoke-test task.
ONE_FACT = Recipe(
    name="one-fact",
    task=TaskConfig(num_subjects=1, num_relations=1, num_attributes=2, subject_vocab=2, relation_vocab=2,
                    subject_tokens=(1, 1), relation_tokens=(1, 1)),
    train=TrainConfig(seed=0, steps=200, lr=1e-2, batch_size=1, warmup=10, eval_every=10, target_accuracy=1.0),
    embed_dim=16,
    num_layers=2,
    heads=2,
    accuracy_gate=1.0,
)

RECIPES = {r.name: r for r in (FACTS512, ONE_FACT)}
