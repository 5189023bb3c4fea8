"""Result persistence: JSON documents, flat CSV tables and SVG figures."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from . import svg
from .experiments import Heatmap, SweepResult

CSV_COLUMNS = ("category", "window_size", "first_layer", "relative_depth", "mean_change_pct", "n", "skipped")


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sweep_csv(results: Iterable[SweepResult], extra: dict | None = None) -> str:
    buf = io.StringIO()
    columns = list(CSV_COLUMNS) + sorted(extra or {})
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for res in results:
        for row in res.rows():
            row = dict(row)
            row["relative_depth"] = repr(row["relative_depth"])
            m = row["mean_change_pct"]
            row["mean_change_pct"] = "" if m is None else repr(m)
            row.update(extra or {})
            if "scope" in columns:
                row["scope"] = res.scope
            writer.writerow(row)
    return buf.getvalue()


def sweep_svg(result: SweepResult, title: str | None = None) -> str:
    series = {
        cat: [(result.relative_depth(fl), result.mean(cat, fl)) for fl in result.first_layers]
        for cat in result.categories
    }
    return svg.line_chart(
        series,
        title=title or f"Knockout to last token, window {result.window_size} ({result.scope})",
        xlabel="relative depth of first layer in window",
        ylabel="relative change in answer probability (%)",
    )


def feature_svg(results: dict[str, SweepResult], category: str = "subject") -> str:
    any_res = next(iter(results.values()))
    series = {
        scope: [(r.relative_depth(fl), r.mean(category, fl)) for fl in r.first_layers]
        for scope, r in results.items()
    }
    return svg.line_chart(
        series,
        title=f"Feature knockout, {category} to last, window {any_res.window_size}",
        xlabel="relative depth of first layer in window",
        ylabel="relative change in answer probability (%)",
    )


def heatmap_svg(hm: Heatmap, token_labels: Sequence[str] | None = None) -> str:
    labels = token_labels or [str(t) for t in hm.token_ids]
    rows = [f"{i}: {lab}" for i, lab in enumerate(labels)]
    return svg.heatmap(
        hm.values.tolist(), rows, [str(fl) for fl in hm.first_layers],
        title=f"Knockout to last token, record {hm.record_id}, window {hm.window_size}",
        xlabel="first layer in knockout window", ylabel="source token",
    )


def scatter_svg(points: Sequence[tuple[str, float, float]], window: int) -> str:
    return svg.scatter(
        [(p0, p1) for _, p0, p1 in points],
        title=f"Last-token self knockout over the final {window} layers",
        xlabel="baseline answer probability",
        ylabel="probability after knockout",
    )
