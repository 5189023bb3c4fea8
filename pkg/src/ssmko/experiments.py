"""Knockout experiments: information-flow sweeps, window studies, feature
knockout comparisons, per-token heatmaps and last-token scatter points.

All effects are relative changes (percent) of the answer-token probability at
the final position. Baseline probabilities are computed once per model and
record and shared through a :class:`BaselineCache`.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import CATEGORIES, PromptRecord
from .errors import ContractError, UndefinedBaselineError
from .knockout import KnockoutSpec, classify_model, knocked_forward, relative_change, token_probability
from .model import ModelWeights, model_forward

DEFAULT_WINDOW_SIZES = (1, 3, 5, 9, 12, 15)
FEATURE_SCOPES = ("all", "context_dependent", "context_independent")


class BaselineCache:
    """Answer-token probabilities of the unedited model, one per record id."""

    def __init__(self, model: ModelWeights):
        self.model = model
        self.model_id = model.fingerprint()
        self._values: dict[str, float] = {}

    def get(self, record: PromptRecord) -> float:
        if record.id not in self._values:
            logits = model_forward(self.model, record.token_ids)
            self._values[record.id] = token_probability(logits, record.answer_token)
        return self._values[record.id]

    def fill(self, records: Sequence[PromptRecord]) -> dict[str, float]:
        return {r.id: self.get(r) for r in records}


def mean_of(values: Sequence[float]) -> float:
    """Mean used for every aggregate: ``fsum`` over values sorted by record id."""
    if not values:
        return math.nan
    return math.fsum(values) / len(values)


def dataset_id(records: Sequence[PromptRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(repr(r.to_dict()).encode())
    return h.hexdigest()


@dataclass
class SweepResult:
    """Relative-change grid for one window size.

    ``raw[(category, first_layer)]`` lists ``(record_id, change_pct)`` sorted
    by record id; ``skipped`` counts records with a zero baseline.
    """

    model_id: str
    dataset_id: str
    window_size: int
    num_layers: int
    categories: tuple[str, ...]
    scope: str = "all"
    raw: dict = field(default_factory=dict)
    skipped: int = 0
    num_records: int = 0

    @property
    def first_layers(self) -> list[int]:
        return list(range(self.num_layers - self.window_size + 1))

    def relative_depth(self, first_layer: int) -> float:
        return first_layer / self.num_layers

    def values(self, category: str, first_layer: int) -> list[float]:
        return [v for _, v in self.raw[(category, first_layer)]]

    def mean(self, category: str, first_layer: int) -> float:
        return mean_of(self.values(category, first_layer))

    def curve(self, category: str) -> list[float]:
        """Mean change per window start."""
        return [self.mean(category, fl) for fl in self.first_layers]

    def count(self, category: str, first_layer: int) -> int:
        return len(self.raw[(category, first_layer)])

    def rows(self) -> list[dict]:
        out = []
        for cat in self.categories:
            for fl in self.first_layers:
                m = self.mean(cat, fl)
                out.append({
                    "category": cat,
                    "window_size": self.window_size,
                    "first_layer": fl,
                    "relative_depth": self.relative_depth(fl),
                    "mean_change_pct": None if math.isnan(m) else m,
                    "n": self.count(cat, fl),
                    "skipped": self.skipped,
                })
        return out

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "dataset_id": self.dataset_id,
            "window_size": self.window_size,
            "num_layers": self.num_layers,
            "categories": list(self.categories),
            "scope": self.scope,
            "num_records": self.num_records,
            "skipped": self.skipped,
            "summary": self.rows(),
            "raw": [
                {"category": c, "first_layer": fl, "values": [[rid, v] for rid, v in self.raw[(c, fl)]]}
                for c in self.categories for fl in self.first_layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        res = cls(
            model_id=d["model_id"], dataset_id=d["dataset_id"], window_size=d["window_size"],
            num_layers=d["num_layers"], categories=tuple(d["categories"]), scope=d["scope"],
            skipped=d["skipped"], num_records=d["num_records"],
        )
        for cell in d["raw"]:
            res.raw[(cell["category"], cell["first_layer"])] = [(rid, float(v)) for rid, v in cell["values"]]
        return res


def _record_effects(model, record, p_base, window_size, categories, scope, relation_mode, classifications):
    out = {}
    last = frozenset({record.last})
    for cat in categories:
        sources = record.positions(cat, relation_mode)
        for fl in range(model.num_layers - window_size + 1):
            spec = KnockoutSpec(fl, window_size, sources, last, scope)
            p_ko = token_probability(knocked_forward(model, record.token_ids, spec, classifications), record.answer_token)
            out[(cat, fl)] = relative_change(p_base, p_ko)
    return out


def _record_task(args):
    return _record_effects(*args)


def info_flow_sweep(
    model: ModelWeights,
    records: Sequence[PromptRecord],
    window_size: int,
    categories: Sequence[str] = CATEGORIES,
    scope="all",
    relation_mode: str = "complement",
    baselines: BaselineCache | None = None,
    workers: int = 1,
) -> SweepResult:
    """Knock out each category's positions -> last token over every window.

    Records with a zero baseline probability are skipped and counted.
    """
    if not 1 <= window_size <= model.num_layers:
        raise ContractError(f"window_size must lie in [1, {model.num_layers}]")
    for c in categories:
        if c not in CATEGORIES:
            raise ContractError(f"unknown category {c!r}")
    baselines = baselines or BaselineCache(model)
    classifications = None
    if isinstance(scope, str) and scope != "all":
        classifications = classify_model(model)
    ordered = sorted(records, key=lambda r: r.id)
    live, skipped = [], 0
    for r in ordered:
        p = baselines.get(r)
        if p == 0:
            skipped += 1
        else:
            live.append((r, p))
    jobs = [
        (model, r, p, window_size, tuple(categories), scope, relation_mode, classifications)
        for r, p in live
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            effects = list(pool.map(_record_task, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        effects = [_record_task(j) for j in jobs]
    scope_name = scope if isinstance(scope, str) else "units:" + ",".join(map(str, sorted(scope)))
    result = SweepResult(
        model_id=baselines.model_id, dataset_id=dataset_id(ordered), window_size=window_size,
        num_layers=model.num_layers, categories=tuple(categories), scope=scope_name,
        skipped=skipped, num_records=len(ordered),
    )
    for cat in categories:
        for fl in result.first_layers:
            result.raw[(cat, fl)] = [(r.id, eff[(cat, fl)]) for (r, _), eff in zip(live, effects)]
    return result


def window_size_study(
    model: ModelWeights,
    records: Sequence[PromptRecord],
    sizes: Sequence[int] = DEFAULT_WINDOW_SIZES,
    categories: Sequence[str] = CATEGORIES,
    baselines: BaselineCache | None = None,
    workers: int = 1,
    **kwargs,
) -> list[SweepResult]:
    """One sweep per window size over the same records and baselines."""
    if max(sizes) > model.num_layers:
        raise ContractError(f"window size {max(sizes)} exceeds {model.num_layers} layers")
    baselines = baselines or BaselineCache(model)
    return [
        info_flow_sweep(model, records, s, categories, baselines=baselines, workers=workers, **kwargs)
        for s in sizes
    ]


def feature_knockout_study(
    model: ModelWeights,
    records: Sequence[PromptRecord],
    window_size: int,
    category: str = "subject",
    baselines: BaselineCache | None = None,
    workers: int = 1,
    **kwargs,
) -> dict[str, SweepResult]:
    """Category -> last knockout under the three feature scopes."""
    if not model.spec.is_ssm:
        raise ContractError("feature knockout needs an SSM model")
    baselines = baselines or BaselineCache(model)
    return {
        scope: info_flow_sweep(model, records, window_size, (category,), scope, baselines=baselines, workers=workers, **kwargs)
        for scope in FEATURE_SCOPES
    }


@dataclass
class Heatmap:
    record_id: str
    window_size: int
    num_layers: int
    token_ids: tuple[int, ...]
    values: np.ndarray  # positions x window starts

    @property
    def first_layers(self) -> list[int]:
        return list(range(self.values.shape[1]))

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "window_size": self.window_size,
            "num_layers": self.num_layers,
            "token_ids": list(self.token_ids),
            "values": self.values.tolist(),
        }


def knockout_heatmap(
    model: ModelWeights, record: PromptRecord, window_size: int, baselines: BaselineCache | None = None
) -> Heatmap:
    """Rows: single source position; columns: first layer of the window."""
    if not 1 <= window_size <= model.num_layers:
        raise ContractError(f"window_size must lie in [1, {model.num_layers}]")
    baselines = baselines or BaselineCache(model)
    p_base = baselines.get(record)
    if p_base == 0:
        raise UndefinedBaselineError(f"record {record.id} has zero baseline probability")
    starts = model.num_layers - window_size + 1
    values = np.empty((record.length, starts))
    last = frozenset({record.last})
    for pos in range(record.length):
        for fl in range(starts):
            spec = KnockoutSpec(fl, window_size, frozenset({pos}), last)
            p_ko = token_probability(knocked_forward(model, record.token_ids, spec), record.answer_token)
            values[pos, fl] = relative_change(p_base, p_ko)
    return Heatmap(record.id, window_size, model.num_layers, record.token_ids, values)


def last_token_scatter(
    model: ModelWeights, records: Sequence[PromptRecord], window: int, baselines: BaselineCache | None = None
) -> list[tuple[str, float, float]]:
    """``(record_id, p_base, p_ko)`` after knocking out last -> last over the final ``window`` layers."""
    if not 0 <= window <= model.num_layers:
        raise ContractError(f"window must lie in [0, {model.num_layers}]")
    baselines = baselines or BaselineCache(model)
    out = []
    for r in sorted(records, key=lambda r: r.id):
        spec = KnockoutSpec(model.num_layers - window, window, frozenset({r.last}), frozenset({r.last}))
        p_ko = token_probability(knocked_forward(model, r.token_ids, spec), r.answer_token)
        out.append((r.id, baselines.get(r), p_ko))
    return out
