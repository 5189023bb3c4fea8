import json

import pytest

from conftest import small_model
from ssmko.archive import save_weights
from ssmko.cli import main
from ssmko.config import ModelSpec
from ssmko.data import write_records
from ssmko.model import init_weights
from ssmko.results import file_sha256
from ssmko.tasks import TaskConfig, generate_task


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("SSMKO_OUTPUT_ROOT", str(tmp_path / "runs"))
    return tmp_path / "runs"


@pytest.fixture
def model_and_data(tmp_path):
    task, _, evaluation = generate_task(TaskConfig(num_subjects=4, num_relations=2, num_attributes=4,
                                                   subject_vocab=6, relation_vocab=3))
    w = init_weights(ModelSpec(vocab_size=task.vocab_size, embed_dim=8, num_layers=3, layer_kind="ssd", heads=3), 0)
    save_weights(tmp_path / "m.ssmko", w)
    write_records(tmp_path / "d.jsonl", evaluation)
    return str(tmp_path / "m.ssmko"), str(tmp_path / "d.jsonl")


def test_train_one_fact_and_rerun_checksum(out_root, tmp_path):
    assert main(["train", "--task", "one-fact", "--seed", "7"]) == 0
    first = file_sha256(out_root / "train" / "model.ssmko")
    assert main(["train", "--task", "one-fact", "--seed", "7", "--out", str(tmp_path / "again")]) == 0
    assert file_sha256(tmp_path / "again" / "model.ssmko") == first
    cfg = json.loads((out_root / "train" / "effective_config.json").read_text())
    assert cfg["options"]["seed"] == 7 and cfg["resolved"]["recipe"]["name"] == "one-fact"


def test_train_gate_miss_exit_2(out_root):
    assert main(["train", "--task", "facts512", "--steps", "1", "--gate", "0.99"]) == 2


def test_config_file_errors_exit_1(out_root, tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert main(["train", "--config", str(bad)]) == 1
    assert main(["train", "--task", "nope"]) == 1


def test_config_file_values_with_flag_override(out_root, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"task": "one-fact", "seed": 3, "steps": 50}))
    assert main(["train", "--config", str(cfg), "--seed", "4"]) == 0
    echoed = json.loads((out_root / "train" / "effective_config.json").read_text())["options"]
    assert echoed["seed"] == 4 and echoed["steps"] == 50


def test_sweep_outputs_and_determinism(out_root, model_and_data, tmp_path):
    m, d = model_and_data
    args = ["knockout-sweep", "--model", m, "--data", d, "--no-filter", "--window", "9",
            "--categories", "subject,relation,first,last"]
    assert main(args) == 0
    run = out_root / "knockout-sweep"
    files = sorted(p.name for p in run.iterdir())
    assert files == ["effective_config.json", "sweep_w2.csv", "sweep_w2.json", "sweep_w2.svg"]
    hashes = {f: file_sha256(run / f) for f in files}
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for f in files:
        if f != "effective_config.json":
            assert file_sha256(tmp_path / "b" / f) == hashes[f]
    cfg = json.loads((run / "effective_config.json").read_text())
    assert cfg["inputs"]["model"]["sha256"] == file_sha256(m)


def test_window_sizes_one_chart_each(out_root, model_and_data):
    m, d = model_and_data
    assert main(["knockout-sweep", "--model", m, "--data", d, "--no-filter", "--window-sizes", "1,3,5,9,12,15"]) == 0
    svgs = sorted(p.name for p in (out_root / "knockout-sweep").glob("*.svg"))
    assert svgs == ["sweep_w1.svg", "sweep_w3.svg"]


def test_empty_filtered_dataset_exit_3(out_root, model_and_data):
    m, d = model_and_data
    assert main(["knockout-sweep", "--model", m, "--data", d, "--window", "2"]) == 3


def test_feature_heatmap_scatter_dump(out_root, model_and_data, tmp_path):
    m, d = model_and_data
    assert main(["feature-knockout", "--model", m, "--data", d, "--no-filter", "--window", "2"]) == 0
    assert (out_root / "feature-knockout" / "feature.svg").exists()
    assert main(["heatmap", "--model", m, "--prompt-id", "sxsw-demo"]) == 0
    svg = next((out_root / "heatmap").glob("*.svg")).read_text()
    assert "Southwest?" in svg and "Where" in svg
    assert main(["scatter", "--model", m, "--data", d, "--no-filter", "--window", "9"]) == 0
    assert 'class="reference"' in (out_root / "scatter" / "scatter.svg").read_text()
    assert main(["dump-attention", "--model", m, "--tokens", "0,3,4,1", "--layer", "1"]) == 0
    assert (out_root / "dump-attention" / "attention_layer1.ssmko").exists()


def test_dump_attention_rejects_softmax(out_root, tmp_path):
    save_weights(tmp_path / "t.ssmko", small_model("softmax_attention"))
    assert main(["dump-attention", "--model", str(tmp_path / "t.ssmko"), "--tokens", "1,2"]) == 1


def test_import_and_filter(out_root, tmp_path, model_and_data):
    src = tmp_path / "cf.jsonl"
    src.write_text(json.dumps({"case_id": 0, "prompt": "Beats Music is owned by", "subject": "Beats Music",
                               "target": "Apple"}) + "\n")
    assert main(["import-counterfact", "--input", str(src)]) == 0
    assert (out_root / "import-counterfact" / "records.jsonl").exists()
    m, d = model_and_data
    assert main(["filter", "--model", m, "--data", d]) in (0, 3)


def test_check_suite_table(out_root, capsys):
    assert main(["check", "--suite", "decay-identity", "--suite", "knockout-contract"]) == 0
    out = capsys.readouterr().out
    assert "PASS  decay-identity" in out and "2/2 suites passed" in out
