"""Shipped showcase prompt for the per-token heatmap."""
from __future__ import annotations

from .data import PromptRecord, RawTriplet, Vocab, triplets_to_records

SXSW_ID = "sxsw-demo"
SXSW = RawTriplet(
    id=SXSW_ID,
    prompt="Where is South by Southwest? It is located in",
    subject="South by Southwest",
    target="Austin",
    subject_char_span=(9, 27),
)
DEMO_PROMPTS = {SXSW_ID: SXSW}


def demo_record(prompt_id: str, vocab: Vocab | None = None) -> tuple[PromptRecord, Vocab]:
    """Tokenize a shipped prompt with ``vocab``, or with a vocabulary built
    from the prompt itself when the model carries none."""
    if prompt_id not in DEMO_PROMPTS:
        raise KeyError(f"unknown demo prompt {prompt_id!r}; known: {sorted(DEMO_PROMPTS)}")
    records, vocab = triplets_to_records([DEMO_PROMPTS[prompt_id]], vocab)
    return records[0], vocab


def token_labels(record: PromptRecord, vocab: Vocab | None = None) -> list[str]:
    if record.source_text:
        return record.source_text.split()
    if vocab is None:
        return [str(t) for t in record.token_ids]
    words = {i: w for w, i in vocab.token_to_id.items()}
    return [words.get(t, str(t)) for t in record.token_ids]
