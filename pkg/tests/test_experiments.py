import math

import numpy as np
import pytest

from ssmko import results, svg
from ssmko.config import ModelSpec
from ssmko.data import PromptRecord
from ssmko.errors import ContractError, UndefinedBaselineError
from ssmko.experiments import BaselineCache, SweepResult, feature_knockout_study, info_flow_sweep, \
    knockout_heatmap, last_token_scatter, mean_of, window_size_study
from ssmko.knockout import KnockoutSpec, knocked_forward, relative_change, token_probability
from ssmko.model import init_weights, model_forward
from ssmko.tasks import TaskConfig, generate_task


@pytest.fixture(scope="module")
def task():
    return generate_task(TaskConfig(num_subjects=6, num_relations=2, num_attributes=5, subject_vocab=8,
                                    relation_vocab=4))


@pytest.fixture(scope="module")
def untrained(task):
    spec = ModelSpec(vocab_size=task[0].vocab_size, embed_dim=16, num_layers=4, layer_kind="ssd", heads=3)
    return init_weights(spec, 0)


@pytest.fixture(scope="module")
def sweep(untrained, task):
    return info_flow_sweep(untrained, task[2], 2)


def test_sweep_accounting_and_aggregation(sweep, task):
    assert sweep.count("subject", 0) + sweep.skipped == len(task[2]) == sweep.num_records
    for cat in sweep.categories:
        for fl in sweep.first_layers:
            vals = sweep.values(cat, fl)
            assert sweep.mean(cat, fl) == math.fsum(vals) / len(vals)
    ids = [rid for rid, _ in sweep.raw[("subject", 0)]]
    assert ids == sorted(ids)


def test_untrained_null(sweep):
    for cat in sweep.categories:
        assert all(abs(v) < 5 for v in sweep.curve(cat))


def test_full_window_single_point(untrained, task):
    res = info_flow_sweep(untrained, task[2][:3], 4, ("last",))
    assert res.first_layers == [0] and res.relative_depth(0) == 0.0


def test_window_one_equals_single_layer_knockout(untrained, task):
    rec = task[2][0]
    res = info_flow_sweep(untrained, [rec], 1, ("subject",))
    p0 = token_probability(model_forward(untrained, rec.token_ids), rec.answer_token)
    for k in range(4):
        spec = KnockoutSpec(k, 1, rec.positions("subject"), frozenset({rec.last}))
        pk = token_probability(knocked_forward(untrained, rec.token_ids, spec), rec.answer_token)
        assert res.values("subject", k) == [relative_change(p0, pk)]


def test_window_study_shares_baselines(untrained, task):
    cache = BaselineCache(untrained)
    out = window_size_study(untrained, task[2][:4], (1, 2, 4), ("first",), baselines=cache)
    assert [r.window_size for r in out] == [1, 2, 4]
    assert len(cache._values) == 4
    assert len({r.dataset_id for r in out}) == 1
    with pytest.raises(ContractError):
        window_size_study(untrained, task[2][:2], (1, 5))


def test_feature_study_all_scope_equals_subject(untrained, task, sweep):
    studies = feature_knockout_study(untrained, task[2], 2)
    assert studies["all"].raw[("subject", 0)] == sweep.raw[("subject", 0)]
    assert set(studies) == {"all", "context_dependent", "context_independent"}


def test_skipped_records_counted(untrained):
    rec = PromptRecord("z", (0, 2, 3, 1), (1, 2), (2, 3), 5)
    class Zero(BaselineCache):
        def get(self, record):
            return 0.0
    res = info_flow_sweep(untrained, [rec], 2, baselines=Zero(untrained))
    assert res.skipped == 1 and res.count("last", 0) == 0 and math.isnan(res.mean("last", 0))
    with pytest.raises(UndefinedBaselineError):
        knockout_heatmap(untrained, rec, 2, baselines=Zero(untrained))


def test_parallel_matches_serial(untrained, task, sweep):
    par = info_flow_sweep(untrained, task[2], 2, workers=2)
    assert par.to_dict() == sweep.to_dict()


def test_heatmap_grouped_recompute(untrained, task):
    rec = task[2][1]
    hm = knockout_heatmap(untrained, rec, 2)
    assert hm.values.shape == (rec.length, 3)
    assert np.all(np.abs(hm.values) < 5)
    grouped = info_flow_sweep(untrained, [rec], 2, ("subject",))
    subj = sorted(rec.positions("subject"))
    if len(subj) == 1:
        assert grouped.values("subject", 1)[0] == hm.values[subj[0], 1]


def test_scatter_bounds_and_noop(untrained, task):
    pts = last_token_scatter(untrained, task[2], 0)
    assert all(p0 == p1 for _, p0, p1 in pts)
    pts = last_token_scatter(untrained, task[2], 3)
    assert all(0 <= p0 <= 1 and 0 <= p1 <= 1 for _, p0, p1 in pts)
    with pytest.raises(ContractError):
        last_token_scatter(untrained, task[2], 5)


def test_sweep_result_roundtrip(sweep):
    assert SweepResult.from_dict(sweep.to_dict()).to_dict() == sweep.to_dict()


def test_outputs_byte_identical_on_rerun(untrained, task):
    a = info_flow_sweep(untrained, task[2], 3)
    b = info_flow_sweep(untrained, list(reversed(task[2])), 3)
    assert results.dumps(a.to_dict()) == results.dumps(b.to_dict())
    assert results.sweep_csv([a]) == results.sweep_csv([b])
    assert results.sweep_svg(a) == results.sweep_svg(b)


def test_csv_columns(sweep):
    header = results.sweep_csv([sweep]).splitlines()[0]
    assert header == "category,window_size,first_layer,relative_depth,mean_change_pct,n,skipped"


def test_svg_shapes():
    chart = svg.line_chart({"a": [(0.0, -1.0), (0.5, float("nan")), (1.0, 2.0)]}, "t", "x", "y")
    assert chart.startswith("<svg") and chart.count("<circle") == 2
    sc = svg.scatter([(0.1, 0.2)], "s")
    assert 'class="reference"' in sc
    hm = svg.heatmap([[1.0, -1.0], [0.0, float("nan")]], ["Where", "is"], ["0", "1"])
    assert "Where" in hm and "#cccccc" in hm


def test_mean_of_empty():
    assert math.isnan(mean_of([]))
