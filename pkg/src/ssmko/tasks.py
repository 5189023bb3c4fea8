"""Synthetic factual-recall corpora.

Token layout of a prompt::

    [BOS, subject tokens (1-3), relation tokens (1-3), QUERY]  ->  attribute

Vocabulary ids: ``0`` BOS, ``1`` QUERY, then the subject pool, the relation
pool and finally one token per attribute.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import PromptRecord
from .errors import ConfigError
from .numerics import make_rng

BOS = 0
QUERY = 1


@dataclass(frozen=True)
class TaskConfig:
    num_subjects: int = 64
    num_relations: int = 8
    num_attributes: int = 32
    subject_vocab: int = 32
    relation_vocab: int = 16
    subject_tokens: tuple[int, int] = (1, 3)
    relation_tokens: tuple[int, int] = (1, 3)
    phrasings: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "subject_tokens", tuple(self.subject_tokens))
        object.__setattr__(self, "relation_tokens", tuple(self.relation_tokens))
        for name in ("num_subjects", "num_relations", "num_attributes", "subject_vocab", "relation_vocab", "phrasings"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("subject_tokens", "relation_tokens"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ConfigError(f"{name} must satisfy 1 <= min <= max")
        if _name_capacity(self.subject_vocab, self.subject_tokens) < self.num_subjects:
            raise ConfigError("subject vocabulary too small for the requested number of distinct subjects")
        if _name_capacity(self.relation_vocab, self.relation_tokens) < self.num_relations * self.phrasings:
            raise ConfigError("relation vocabulary too small for the requested relations x phrasings")

    @property
    def vocab_size(self) -> int:
        return 2 + self.subject_vocab + self.relation_vocab + self.num_attributes

    @property
    def attribute_offset(self) -> int:
        return 2 + self.subject_vocab + self.relation_vocab

    def to_dict(self) -> dict:
        return asdict(self)


def _name_capacity(pool: int, lengths: tuple[int, int]) -> int:
    return sum(pool**k for k in range(lengths[0], lengths[1] + 1))


def _distinct_names(rng: np.random.Generator, count: int, pool: int, lengths: tuple[int, int], offset: int) -> list[tuple[int, ...]]:
    names: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    while len(names) < count:
        k = int(rng.integers(lengths[0], lengths[1] + 1))
        if pool**k <= sum(1 for n in seen if len(n) == k):
            continue
        name = tuple(int(t) + offset for t in rng.integers(0, pool, size=k))
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


@dataclass(frozen=True)
class SyntheticFactTask:
    config: TaskConfig
    subjects: tuple[tuple[int, ...], ...]
    relations: tuple[tuple[tuple[int, ...], ...], ...]  # relation -> phrasings
    facts: dict  # (subject, relation) -> attribute index

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    def answer_token(self, subject: int, relation: int) -> int:
        return self.config.attribute_offset + self.facts[(subject, relation)]

    def record(self, subject: int, relation: int, phrasing: int = 0) -> PromptRecord:
        s = self.subjects[subject]
        r = self.relations[relation][phrasing]
        tokens = (BOS,) + s + r + (QUERY,)
        return PromptRecord(
            id=f"s{subject:04d}-r{relation:03d}-p{phrasing}",
            token_ids=tokens,
            subject_span=(1, 1 + len(s)),
            relation_span=(1 + len(s), 1 + len(s) + len(r)),
            answer_token=self.answer_token(subject, relation),
        )


def generate_task(config: TaskConfig, rng: np.random.Generator | None = None):
    """Build a task and its ``(train, eval)`` record splits.

    Every fact appears in the training split. With a single phrasing per
    relation the evaluation split is the training prompts themselves
    (memorized-fact recall); with several phrasings one phrasing per fact is
    held out for evaluation.
    """
    if rng is None:
        rng = make_rng(config.seed)
    subjects = _distinct_names(rng, config.num_subjects, config.subject_vocab, config.subject_tokens, 2)
    flat = _distinct_names(
        rng, config.num_relations * config.phrasings, config.relation_vocab, config.relation_tokens,
        2 + config.subject_vocab,
    )
    relations = tuple(
        tuple(flat[r * config.phrasings:(r + 1) * config.phrasings]) for r in range(config.num_relations)
    )
    attrs = rng.integers(0, config.num_attributes, size=(config.num_subjects, config.num_relations))
    facts = {(s, r): int(attrs[s, r]) for s in range(config.num_subjects) for r in range(config.num_relations)}
    task = SyntheticFactTask(config, tuple(subjects), relations, facts)

    train, evaluation = [], []
    for s in range(config.num_subjects):
        for r in range(config.num_relations):
            if config.phrasings == 1:
                rec = task.record(s, r, 0)
                train.append(rec)
                evaluation.append(rec)
                continue
            held = (s + r) % config.phrasings
            for k in range(config.phrasings):
                (evaluation if k == held else train).append(task.record(s, r, k))
    return task, train, evaluation
