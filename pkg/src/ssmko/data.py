"""Prompt records, the whitespace tokenizer and dataset import/filtering."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError

logger = logging.getLogger(__name__)

CATEGORIES = ("subject", "relation", "first", "last")
RELATION_MODES = ("complement", "span")


@dataclass(frozen=True)
class PromptRecord:
    """A tokenized factual prompt with span annotations.

    Spans are half-open ``[start, end)`` token ranges. The last position is
    the prediction position and belongs to neither span.
    """

    id: str
    token_ids: tuple[int, ...]
    subject_span: tuple[int, int]
    relation_span: tuple[int, int]
    answer_token: int
    source_text: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))
        object.__setattr__(self, "subject_span", tuple(int(x) for x in self.subject_span))
        object.__setattr__(self, "relation_span", tuple(int(x) for x in self.relation_span))
        L = len(self.token_ids)
        if L < 1:
            raise ContractError(f"record {self.id}: empty token sequence")
        for name, (a, b) in (("subject", self.subject_span), ("relation", self.relation_span)):
            if not 0 <= a <= b <= L - 1:
                raise ContractError(f"record {self.id}: {name} span [{a}, {b}) must lie within [0, {L - 1})")
        (sa, sb), (ra, rb) = self.subject_span, self.relation_span
        if sa < sb and ra < rb and sa < rb and ra < sb:
            raise ContractError(f"record {self.id}: subject and relation spans overlap")

    @property
    def length(self) -> int:
        return len(self.token_ids)

    @property
    def last(self) -> int:
        return len(self.token_ids) - 1

    def positions(self, category: str, relation_mode: str = "complement") -> frozenset[int]:
        """Source positions for a category.

        ``relation_mode="complement"`` takes every position outside the
        subject span except the last; ``"span"`` uses ``relation_span``.
        """
        if category == "first":
            return frozenset({0})
        if category == "last":
            return frozenset({self.last})
        if category == "subject":
            return frozenset(range(*self.subject_span))
        if category == "relation":
            if relation_mode == "span":
                return frozenset(range(*self.relation_span))
            if relation_mode == "complement":
                subj = set(range(*self.subject_span))
                return frozenset(p for p in range(self.last) if p not in subj)
            raise ValueError(f"relation_mode must be one of {RELATION_MODES}")
        raise ValueError(f"unknown category {category!r}; expected one of {CATEGORIES}")

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "token_ids": list(self.token_ids),
            "subject_span": list(self.subject_span),
            "relation_span": list(self.relation_span),
            "answer_token": self.answer_token,
        }
        if self.source_text is not None:
            d["source_text"] = self.source_text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PromptRecord":
        return cls(
            id=str(d["id"]),
            token_ids=tuple(d["token_ids"]),
            subject_span=tuple(d["subject_span"]),
            relation_span=tuple(d["relation_span"]),
            answer_token=int(d["answer_token"]),
            source_text=d.get("source_text"),
        )


def write_records(path, records: Iterable[PromptRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path) -> list[PromptRecord]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(PromptRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record: {exc}") from exc
    return out


# -- whitespace tokenizer -----------------------------------------------------

UNK = "<unk>"


@dataclass
class Vocab:
    """Lowercased whitespace word vocabulary with an unknown token."""

    token_to_id: dict[str, int]
    unk_id: int = 0
    unknown_count: int = field(default=0, compare=False)

    @classmethod
    def build(cls, texts: Iterable[str], specials: Sequence[str] = (UNK,)) -> "Vocab":
        mapping: dict[str, int] = {}
        for s in specials:
            mapping.setdefault(s, len(mapping))
        for text in texts:
            for word in text.lower().split():
                mapping.setdefault(word, len(mapping))
        return cls(mapping, unk_id=mapping.get(UNK, 0))

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id_of(self, word: str) -> int:
        return self.token_to_id.get(word.lower(), self.unk_id)

    def to_dict(self) -> dict:
        return {"token_to_id": self.token_to_id, "unk_id": self.unk_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(dict(d["token_to_id"]), unk_id=int(d["unk_id"]))


@dataclass(frozen=True)
class Tokenized:
    token_ids: list[int]
    offsets: list[tuple[int, int]]  # character span of each token

    def char_span_to_tokens(self, start: int, end: int) -> tuple[int, int]:
        """Smallest token range covering characters ``[start, end)``."""
        covered = [i for i, (a, b) in enumerate(self.offsets) if a < end and b > start]
        if not covered:
            raise ValueError(f"character span [{start}, {end}) covers no token")
        return covered[0], covered[-1] + 1


def tokenize_simple(text: str, vocab: Vocab) -> Tokenized:
    """Split on whitespace, lowercase, map to ids; unknown words bump ``vocab.unknown_count``."""
    ids, offsets = [], []
    pos = 0
    for word in text.split():
        start = text.index(word, pos)
        pos = start + len(word)
        key = word.lower()
        if key in vocab.token_to_id:
            ids.append(vocab.token_to_id[key])
        else:
            ids.append(vocab.unk_id)
            vocab.unknown_count += 1
        offsets.append((start, pos))
    return Tokenized(ids, offsets)


# -- COUNTERFACT import --------------------------------------------------------


@dataclass(frozen=True)
class RawTriplet:
    id: str
    prompt: str
    subject: str
    target: str
    subject_char_span: tuple[int, int]


def _flatten(obj: dict) -> tuple[str, str, str]:
    if "requested_rewrite" in obj:
        rw = obj["requested_rewrite"]
        subject = rw["subject"]
        prompt = rw["prompt"].replace("{}", subject)
        target = rw["target_true"]["str"] if isinstance(rw.get("target_true"), dict) else rw["target_true"]
        return prompt, subject, target
    target = obj.get("target", obj.get("attribute"))
    if isinstance(target, dict):
        target = target["str"]
    prompt = obj["prompt"].replace("{}", obj["subject"])
    return prompt, obj["subject"], target


def load_counterfact(path) -> tuple[list[RawTriplet], list[tuple[str, str]]]:
    """Read a JSON array or JSON Lines file of factual triplets.

    Accepts flat objects (``prompt``, ``subject``, ``target``) and the
    original nested ``requested_rewrite`` layout, where ``{}`` in the prompt
    stands for the subject. Returns ``(records, rejected)`` where
    ``rejected`` lists ``(id, reason)``. The subject is located at its first
    occurrence in the prompt.
    """
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        logger.warning("%s is empty", path)
        return [], []
    stripped = text.lstrip()
    objects: list[tuple[int, dict]] = []
    if stripped.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc
        objects = [(i + 1, o) for i, o in enumerate(data)]
    else:
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                objects.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSON at line {lineno}: {exc.msg}") from exc

    records, rejected = [], []
    for n, obj in objects:
        rid = str(obj.get("case_id", obj.get("id", n - 1)))
        try:
            prompt, subject, target = _flatten(obj)
        except (KeyError, TypeError) as exc:
            rejected.append((rid, f"missing field {exc}"))
            logger.info("rejected %s: missing field %s", rid, exc)
            continue
        start = prompt.find(subject)
        if not subject or start < 0:
            rejected.append((rid, f"subject {subject!r} not found in prompt"))
            logger.info("rejected %s: subject %r not in prompt %r", rid, subject, prompt)
            continue
        records.append(RawTriplet(rid, prompt, subject, target.strip(), (start, start + len(subject))))
    return records, rejected


def triplets_to_records(triplets: Sequence[RawTriplet], vocab: Vocab | None = None) -> tuple[list[PromptRecord], Vocab]:
    """Tokenize triplets into :class:`PromptRecord` objects.

    The answer token is the first word of the target. The stored relation
    span is the run of tokens between the subject and the last position (or
    before the subject when nothing follows it).
    """
    if vocab is None:
        vocab = Vocab.build([t.prompt for t in triplets] + [t.target for t in triplets])
    out = []
    for t in triplets:
        tok = tokenize_simple(t.prompt, vocab)
        L = len(tok.token_ids)
        s0, s1 = tok.char_span_to_tokens(*t.subject_char_span)
        s1 = min(s1, L - 1)
        if s0 >= s1:
            logger.info("skipping %s: subject occupies the prediction position", t.id)
            continue
        rel = (s1, L - 1) if s1 < L - 1 else (0, s0)
        answer = vocab.id_of(t.target.split()[0]) if t.target.split() else vocab.unk_id
        out.append(PromptRecord(t.id, tuple(tok.token_ids), (s0, s1), rel, answer, t.prompt))
    return out, vocab


# -- correctness filtering ----------------------------------------------------


def predicted_tokens(model, records: Sequence[PromptRecord]) -> list[int]:
    from .model import model_forward

    return [int(np.argmax(model_forward(model, r.token_ids)[-1])) for r in records]


def filter_correct(model, records: Sequence[PromptRecord]) -> list[PromptRecord]:
    """Records whose final-position argmax equals the answer token."""
    preds = predicted_tokens(model, records)
    return [r for r, p in zip(records, preds) if p == r.answer_token]


def filter_correct_all(models: Sequence, records: Sequence[PromptRecord]) -> list[PromptRecord]:
    """Records every model predicts correctly (order of ``records`` kept)."""
    keep = {r.id for r in records}
    for m in models:
        keep &= {r.id for r in filter_correct(m, records)}
    return [r for r in records if r.id in keep]

