"""Acceptance criteria 1 to 10, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the
terminal output) or ``python tests/test_acceptance.py``.
"""
import time

import numpy as np
import pytest

from ssmko.attention import materialize
from ssmko.checks import check_decay_identity, check_dual_path, check_gradients, check_isolation, check_single_entry
from ssmko.cli import main as cli_main
from ssmko.archive import save_weights
from ssmko.data import filter_correct, write_records
from ssmko.experiments import BaselineCache, feature_knockout_study, info_flow_sweep
from ssmko.knockout import KnockoutSpec, apply_knockout, classify_model
from ssmko.model import embed_tokens, layer_input, layer_update
from ssmko.presets import FACTS512
from ssmko.trainer import TrainConfig, train

pytestmark = pytest.mark.acceptance

LINES: dict[int, str] = {}


def report(n: int, passed: bool, text: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {text}"
    LINES[n] = line
    print("\n" + line, flush=True)


def _with(cfg: TrainConfig, **changes) -> TrainConfig:
    return TrainConfig(**{**cfg.to_dict(), **changes})


def _emit(capsys, n, passed, text):
    with capsys.disabled():
        report(n, passed, text)


# -- shared trained model ----------------------------------------------------------


@pytest.fixture(scope="module")
def trained():
    spec, cfg, task, train_recs, eval_recs = FACTS512.build()
    t0 = time.perf_counter()
    res = train(spec, train_recs, eval_recs, cfg)
    seconds = time.perf_counter() - t0
    records = filter_correct(res.weights, eval_recs)
    window = min(9, spec.num_layers - 1)
    baselines = BaselineCache(res.weights)
    sweep = info_flow_sweep(res.weights, records, window, baselines=baselines)
    features = feature_knockout_study(res.weights, records, window, baselines=baselines)
    return dict(spec=spec, cfg=cfg, result=res, seconds=seconds, records=records, eval=eval_recs,
                window=window, sweep=sweep, features=features)


# -- 1 to 5: oracle suites -----------------------------------------------------------


def test_criterion_01_dual_path(capsys):
    res = check_dual_path(50, 1e-10, seed=0)
    ok = res.passed and res.seconds < 120
    _emit(capsys, 1, ok, f"dual-path 50+50 models, max dev {res.max_error:.2e} (tol 1e-10), {res.seconds:.1f}s (< 120s)")
    assert ok


def test_criterion_02_decay_identity(capsys):
    res = check_decay_identity(1000, 1e-12, seed=1)
    ok = res.passed and res.seconds < 10
    _emit(capsys, 2, ok, f"decay identity 1000 samples, max err {res.max_error:.2e} (tol 1e-12), {res.seconds:.2f}s (< 10s)")
    assert ok


def test_criterion_03_knockout_contract(capsys):
    res = check_single_entry(100, 1e-10, seed=3)
    _emit(capsys, 3, res.passed, f"single-entry knockout vs recompute-without-q, 100 cases, max err {res.max_error:.2e}; "
                                 f"empty specs bitwise no-ops ({res.detail})")
    assert res.passed


def test_criterion_04_isolation(capsys):
    res = check_isolation(10, 1e-10, seed=4)
    _emit(capsys, 4, res.passed, f"full isolation vs single-token logits, {res.cases} models, max err {res.max_error:.2e}")
    assert res.passed


def test_criterion_05_gradients(capsys):
    res = check_gradients(1e-5, seed=2)
    ok = res.passed and res.seconds < 60
    _emit(capsys, 5, ok, f"gradient check ssd + softmax, max rel err {res.max_error:.2e} (tol 1e-5), {res.seconds:.1f}s (< 60s)")
    assert ok


# -- 6 to 9: trained toy model ------------------------------------------------------


def test_criterion_06_toy_recall(trained, capsys):
    res = trained["result"]
    short = _with(trained["cfg"], steps=5, target_accuracy=None)
    runs = [train(trained["spec"], trained["eval"][:32], trained["eval"][:32], short) for _ in range(2)]
    deterministic = runs[0].weights.fingerprint() == runs[1].weights.fingerprint()
    ok = res.final_accuracy >= 0.95 and trained["seconds"] < 900 and deterministic
    _emit(capsys, 6, ok, f"4-layer SSD H=64: accuracy {res.final_accuracy:.4f} (>= 0.95) after {res.steps_run}/"
                         f"{trained['cfg'].steps} steps in {trained['seconds']:.0f}s (< 900s); "
                         f"deterministic per seed: {deterministic}")
    assert ok


def test_criterion_07_subject_direction(trained, capsys):
    sweep = trained["sweep"]
    subj, first = sweep.curve("subject"), sweep.curve("first")
    ok = min(subj) < -20 and min(subj) < min(first)
    _emit(capsys, 7, ok, f"window {trained['window']}, {sweep.count('subject', 0)} records: subject min "
                         f"{min(subj):.1f}% (< -20%), first-token min {min(first):.1f}%")
    assert ok


def test_criterion_08_feature_scope(trained, capsys):
    feats = trained["features"]
    full = np.array(feats["all"].curve("subject"))
    d_dep = float(np.max(np.abs(np.array(feats["context_dependent"].curve("subject")) - full)))
    d_ind = float(np.max(np.abs(np.array(feats["context_independent"].curve("subject")) - full)))
    # middle-third kernels untouched in both partial scopes
    model = trained["result"].weights
    classes = classify_model(model)
    untouched = True
    for rec in trained["records"][:8]:
        R = embed_tokens(model, rec.token_ids)
        for i in range(model.num_layers):
            attn = materialize(model.layer(i), layer_input(model, i, R), i)
            for scope in ("context_dependent", "context_independent"):
                spec = KnockoutSpec(i, 1, rec.positions("subject"), frozenset({rec.last}), scope)
                edited = apply_knockout(attn, spec, classes[i])
                for u in classes[i].middle:
                    untouched &= np.array_equal(edited.entries[u], attn.entries[u])
            R = R + layer_update(model, i, R)
    ok = d_dep < d_ind and untouched
    _emit(capsys, 8, ok, f"L-inf(dependent, all) {d_dep:.2f} < L-inf(independent, all) {d_ind:.2f}; "
                         f"middle-third kernels bitwise untouched: {untouched}")
    assert ok


def test_criterion_09_null_control(trained, capsys):
    spec, cfg = trained["spec"], trained["cfg"]
    # same spec and seed as the trained model, zero optimizer steps
    untrained = train(spec, trained["eval"][:1], [], _with(cfg, steps=0, target_accuracy=None)).weights
    cache = BaselineCache(untrained)
    sweep = info_flow_sweep(untrained, trained["eval"], trained["window"], baselines=cache)
    feats = feature_knockout_study(untrained, trained["eval"], trained["window"], baselines=cache)
    curves = [sweep.curve(c) for c in sweep.categories] + [r.curve("subject") for r in feats.values()]
    worst = max(abs(v) for c in curves for v in c)
    ok = worst <= 5.0
    _emit(capsys, 9, ok, f"untrained model, {sweep.num_records - sweep.skipped} records ({sweep.skipped} skipped): "
                         f"max |mean change| {worst:.2f}% (<= 5%)")
    assert ok


# -- 10: reproducibility ------------------------------------------------------------


def test_criterion_10_reproducible_outputs(trained, tmp_path, capsys):
    model_path = tmp_path / "model.ssmko"
    data_path = tmp_path / "records.jsonl"
    save_weights(model_path, trained["result"].weights)
    write_records(data_path, trained["records"])
    common = ["--model", str(model_path), "--data", str(data_path), "--limit", "48", "--workers", "1"]
    runs = {
        "knockout-sweep": [*common, "--window", "9"],
        "feature-knockout": [*common, "--window", "9"],
        "scatter": [*common, "--window", "9"],
        "heatmap": ["--model", str(model_path), "--prompt-id", "sxsw-demo"],
    }
    mismatched, compared = [], 0
    for cmd, args in runs.items():
        out = tmp_path / cmd
        assert cli_main([cmd, *args, "--out", str(out)]) == 0
        first = {f.name: f.read_bytes() for f in sorted(out.iterdir())}
        assert cli_main([cmd, *args, "--out", str(out)]) == 0
        for name, data in first.items():
            compared += 1
            if (out / name).read_bytes() != data:
                mismatched.append(f"{cmd}/{name}")
    ok = not mismatched
    _emit(capsys, 10, ok, f"{compared} JSON/CSV/SVG files byte-identical across reruns (workers=1)"
                          + (f"; mismatched: {mismatched}" if mismatched else ""))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
