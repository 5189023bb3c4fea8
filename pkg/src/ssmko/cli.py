"""Command-line entry point.

Exit codes: 0 ok, 1 usage or invalid input, 2 gate missed (training
accuracy or a failing self-check suite), 3 empty dataset. Every run writes ``effective_config.json`` (resolved
options plus sha256 of every input file) into its output directory. The
default output root is ``$SSMKO_OUTPUT_ROOT`` or ``./ssmko-runs``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import results
from .archive import load_model, save_weights
from .attention import dump_attention, materialize
from .checks import SUITES
from .data import CATEGORIES, RELATION_MODES, Vocab, filter_correct_all, load_counterfact, read_records, \
    triplets_to_records, write_records
from .demo import DEMO_PROMPTS, demo_record, token_labels
from .errors import SsmkoError
from .experiments import (
    DEFAULT_WINDOW_SIZES,
    BaselineCache,
    feature_knockout_study,
    info_flow_sweep,
    knockout_heatmap,
    last_token_scatter,
)
from .model import embed_tokens, layer_input, layer_update
from .presets import RECIPES
from .trainer import TrainConfig, train

logger = logging.getLogger("ssmko")

EXIT_OK, EXIT_USAGE, EXIT_GATE, EXIT_EMPTY = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "SSMKO_OUTPUT_ROOT"
# options that never reach the effective config
_PLUMBING = {"func", "config", "verbose"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _categories(text: str) -> list[str]:
    cats = [c.strip() for c in text.split(",") if c.strip()]
    bad = [c for c in cats if c not in CATEGORIES]
    if bad or not cats:
        raise argparse.ArgumentTypeError(f"categories must be drawn from {','.join(CATEGORIES)}")
    return cats


# -- shared plumbing -----------------------------------------------------------


def _out_dir(args) -> Path:
    root = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ROOT_ENV, "ssmko-runs")) / args.command
    root.mkdir(parents=True, exist_ok=True)
    return root


def _echo_config(out: Path, args, inputs: dict[str, str], extra: dict | None = None) -> None:
    opts = {k: v for k, v in sorted(vars(args).items()) if k not in _PLUMBING}
    doc = {
        "command": args.command,
        "options": opts,
        "inputs": {role: {"path": str(p), "sha256": results.file_sha256(p)} for role, p in sorted(inputs.items())},
    }
    if extra:
        doc["resolved"] = extra
    results.write_json(out / "effective_config.json", doc)


def _load_model(path):
    if not path:
        raise UsageError("--model is required")
    if not Path(path).is_file():
        raise UsageError(f"model file not found: {path}")
    return load_model(path)


def _load_records(path):
    if not path:
        raise UsageError("--data is required")
    if not Path(path).is_file():
        raise UsageError(f"dataset not found: {path}")
    return read_records(path)


def _model_vocab(metadata: dict) -> Vocab | None:
    return Vocab.from_dict(metadata["vocab"]) if "vocab" in metadata else None


def _sweep_records(args, model):
    records = _load_records(args.data)
    if not args.no_filter:
        records = filter_correct_all([model], records)
    if args.limit:
        records = sorted(records, key=lambda r: r.id)[: args.limit]
    return records


def _clamp_window(w: int, num_layers: int, label: str = "window") -> int:
    if w > num_layers:
        clamped = max(1, num_layers - 1)
        logger.warning("%s %d exceeds %d layers; using %d", label, w, num_layers, clamped)
        return clamped
    return w


def _write_sweep(out: Path, res, stem: str) -> None:
    results.write_json(out / f"{stem}.json", res.to_dict())
    (out / f"{stem}.csv").write_text(results.sweep_csv([res]), encoding="utf-8")
    (out / f"{stem}.svg").write_text(results.sweep_svg(res), encoding="utf-8")


# -- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    recipe = RECIPES[args.task]
    spec, cfg, task, train_recs, eval_recs = recipe.build(args.seed)
    overrides = {k: getattr(args, k) for k in ("steps", "lr", "batch_size") if getattr(args, k) is not None}
    cfg = TrainConfig(**{**cfg.to_dict(), **overrides})
    out = _out_dir(args)
    res = train(spec, train_recs, eval_recs, cfg)
    save_weights(out / "model.ssmko", res.weights, metadata={"recipe": recipe.name, "train_config": cfg.to_dict()})
    res.write_log(out / "train_log.jsonl")
    write_records(out / "train.jsonl", train_recs)
    write_records(out / "eval.jsonl", eval_recs)
    gate = args.gate if args.gate is not None else recipe.accuracy_gate
    passed = res.final_accuracy >= gate
    results.write_json(out / "metrics.json", {
        "final_accuracy": res.final_accuracy, "steps_run": res.steps_run, "gate": gate, "gate_met": passed,
        "model_sha256": results.file_sha256(out / "model.ssmko"),
    })
    _echo_config(out, args, {}, {"recipe": recipe.to_dict(), "train_config": cfg.to_dict(), "model_spec": spec.to_dict()})
    print(f"accuracy {res.final_accuracy:.4f} after {res.steps_run} steps (gate {gate}); weights -> {out / 'model.ssmko'}")
    return EXIT_OK if passed else EXIT_GATE


def cmd_import_counterfact(args) -> int:
    if not Path(args.input).is_file():
        raise UsageError(f"input not found: {args.input}")
    triplets, rejected = load_counterfact(args.input)
    vocab = Vocab.from_dict(json.loads(Path(args.vocab).read_text())) if args.vocab else None
    records, vocab = triplets_to_records(triplets, vocab)
    out = _out_dir(args)
    write_records(out / "records.jsonl", records)
    results.write_json(out / "vocab.json", vocab.to_dict())
    results.write_json(out / "rejected.json", [{"id": rid, "reason": why} for rid, why in rejected])
    _echo_config(out, args, {"input": args.input})
    print(f"{len(records)} records, {len(rejected)} rejected, {vocab.unknown_count} unknown words")
    return EXIT_OK if records else EXIT_EMPTY


def cmd_filter(args) -> int:
    models = [_load_model(p)[0] for p in args.model]
    records = _load_records(args.data)
    kept = filter_correct_all(models, records)
    out = _out_dir(args)
    write_records(out / "filtered.jsonl", kept)
    _echo_config(out, args, {"data": args.data, **{f"model{i}": p for i, p in enumerate(args.model)}})
    print(f"{len(kept)} of {len(records)} records answered correctly by all models")
    return EXIT_OK if kept else EXIT_EMPTY


def cmd_knockout_sweep(args) -> int:
    model, _ = _load_model(args.model)
    records = _sweep_records(args, model)
    if not records:
        print("no records left after filtering", file=sys.stderr)
        return EXIT_EMPTY
    L = model.num_layers
    if args.window_sizes:
        sizes = [w for w in args.window_sizes if 1 <= w <= L]
        for w in sorted(set(args.window_sizes) - set(sizes)):
            logger.warning("window size %d outside [1, %d]; skipped", w, L)
    else:
        sizes = [_clamp_window(args.window, L)]
    if not sizes:
        raise UsageError(f"no window size fits a {L}-layer model")
    out = _out_dir(args)
    baselines = BaselineCache(model)
    for w in sizes:
        res = info_flow_sweep(model, records, w, args.categories, args.scope, args.relation_mode, baselines, args.workers)
        _write_sweep(out, res, f"sweep_w{w}")
    _echo_config(out, args, {"model": args.model, "data": args.data},
                 {"window_sizes": sizes, "num_records": len(records), "model_id": model.fingerprint()})
    print(f"{len(records)} records, window sizes {sizes} -> {out}")
    return EXIT_OK


def cmd_window_study(args) -> int:
    args.window_sizes = args.window_sizes or list(DEFAULT_WINDOW_SIZES)
    return cmd_knockout_sweep(args)


def cmd_feature_knockout(args) -> int:
    model, _ = _load_model(args.model)
    records = _sweep_records(args, model)
    if not records:
        print("no records left after filtering", file=sys.stderr)
        return EXIT_EMPTY
    w = _clamp_window(args.window, model.num_layers)
    out = _out_dir(args)
    studies = feature_knockout_study(model, records, w, args.category, relation_mode=args.relation_mode,
                                     workers=args.workers)
    for scope, res in studies.items():
        results.write_json(out / f"feature_{scope}.json", res.to_dict())
    (out / "feature.csv").write_text(results.sweep_csv(studies.values(), {"scope": ""}), encoding="utf-8")
    (out / "feature.svg").write_text(results.feature_svg(studies, args.category), encoding="utf-8")
    _echo_config(out, args, {"model": args.model, "data": args.data},
                 {"window": w, "num_records": len(records), "model_id": model.fingerprint()})
    print(f"{len(records)} records, window {w} -> {out}")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    model, metadata = _load_model(args.model)
    vocab = _model_vocab(metadata)
    inputs = {"model": args.model}
    if args.prompt_id:
        record, vocab = demo_record(args.prompt_id, vocab)
        if max(record.token_ids + (record.answer_token,)) >= model.spec.vocab_size:
            raise UsageError(f"demo prompt vocabulary exceeds the model's {model.spec.vocab_size} tokens")
    else:
        if not args.record_id:
            raise UsageError("give --prompt-id or --data with --record-id")
        by_id = {r.id: r for r in _load_records(args.data)}
        if args.record_id not in by_id:
            raise UsageError(f"record {args.record_id!r} not in {args.data}")
        record = by_id[args.record_id]
        inputs["data"] = args.data
    w = _clamp_window(args.window, model.num_layers)
    out = _out_dir(args)
    hm = knockout_heatmap(model, record, w)
    stem = f"heatmap_{record.id}_w{w}"
    results.write_json(out / f"{stem}.json", hm.to_dict())
    (out / f"{stem}.svg").write_text(results.heatmap_svg(hm, token_labels(record, vocab)), encoding="utf-8")
    _echo_config(out, args, inputs, {"window": w, "record": record.to_dict(), "model_id": model.fingerprint()})
    print(f"heatmap for {record.id} -> {out / (stem + '.svg')}")
    return EXIT_OK


def cmd_scatter(args) -> int:
    model, _ = _load_model(args.model)
    records = _sweep_records(args, model)
    if not records:
        print("no records left after filtering", file=sys.stderr)
        return EXIT_EMPTY
    w = min(args.window, model.num_layers)
    if w != args.window:
        logger.warning("window %d exceeds %d layers; using %d", args.window, model.num_layers, w)
    out = _out_dir(args)
    points = last_token_scatter(model, records, w)
    results.write_json(out / "scatter.json", {"window": w, "points": [list(p) for p in points]})
    (out / "scatter.svg").write_text(results.scatter_svg(points, w), encoding="utf-8")
    _echo_config(out, args, {"model": args.model, "data": args.data}, {"window": w, "model_id": model.fingerprint()})
    print(f"{len(points)} points, window {w} -> {out / 'scatter.svg'}")
    return EXIT_OK


def cmd_check(args) -> int:
    names = list(SUITES) if args.all or not args.suite else args.suite
    outcomes = [SUITES[n]() for n in names]
    for res in outcomes:
        print(res.line())
    failed = [r.name for r in outcomes if not r.passed]
    print(f"{len(outcomes) - len(failed)}/{len(outcomes)} suites passed")
    return EXIT_OK if not failed else EXIT_GATE


def cmd_dump_attention(args) -> int:
    model, _ = _load_model(args.model)
    if args.tokens:
        tokens = np.asarray(args.tokens, dtype=np.int64)
        inputs = {"model": args.model}
    else:
        by_id = {r.id: r for r in _load_records(args.data)}
        if args.record_id not in by_id:
            raise UsageError(f"record {args.record_id!r} not in {args.data}")
        tokens = np.asarray(by_id[args.record_id].token_ids, dtype=np.int64)
        inputs = {"model": args.model, "data": args.data}
    layers = [args.layer] if args.layer is not None else list(range(model.num_layers))
    out = _out_dir(args)
    R = embed_tokens(model, tokens)
    for i in range(model.num_layers):
        if i in layers:
            attn = materialize(model.layer(i), layer_input(model, i, R), i)
            dump_attention(attn, out / f"attention_layer{i}.ssmko")
        R = R + layer_update(model, i, R)
    _echo_config(out, args, inputs, {"layers": layers, "tokens": tokens.tolist()})
    print(f"dumped layers {layers} -> {out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="JSON file of option defaults; flags override it")
    p.add_argument("--out", help="output directory (default $SSMKO_OUTPUT_ROOT/<command>)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_sweep_inputs(p, window_default: int | None = 9):
    p.add_argument("--model")
    p.add_argument("--data", help="PromptRecord JSON Lines")
    p.add_argument("--no-filter", action="store_true", help="keep records the model answers wrongly")
    p.add_argument("--limit", type=int, default=0, help="use the first N records by id (0 = all)")
    p.add_argument("--relation-mode", choices=RELATION_MODES, default="complement")
    p.add_argument("--workers", type=int, default=1)
    if window_default is not None:
        p.add_argument("--window", type=int, default=window_default)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssmko", description="Hidden-attention knockout experiments on selective SSMs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a toy model on a synthetic fact task")
    _add_common(p)
    p.add_argument("--task", choices=sorted(RECIPES), default="facts512")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--gate", type=float, help="accuracy gate (default from the recipe)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("import-counterfact", help="convert factual triplets into PromptRecord JSON Lines")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--vocab", help="existing vocab.json to tokenize with")
    p.set_defaults(func=cmd_import_counterfact)

    p = sub.add_parser("filter", help="keep records every model answers correctly")
    _add_common(p)
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("knockout-sweep", help="category -> last knockout over every window start")
    _add_common(p)
    _add_sweep_inputs(p)
    p.add_argument("--window-sizes", type=_int_list)
    p.add_argument("--categories", type=_categories, default=list(CATEGORIES))
    p.add_argument("--scope", choices=("all", "context_dependent", "context_independent"), default="all")
    p.set_defaults(func=cmd_knockout_sweep)

    p = sub.add_parser("window-study", help="knockout sweeps over several window sizes")
    _add_common(p)
    _add_sweep_inputs(p)
    p.add_argument("--window-sizes", type=_int_list)
    p.add_argument("--categories", type=_categories, default=list(CATEGORIES))
    p.add_argument("--scope", choices=("all", "context_dependent", "context_independent"), default="all")
    p.set_defaults(func=cmd_window_study)

    p = sub.add_parser("feature-knockout", help="knockout restricted by decay-norm feature class")
    _add_common(p)
    _add_sweep_inputs(p)
    p.add_argument("--category", choices=CATEGORIES, default="subject")
    p.set_defaults(func=cmd_feature_knockout)

    p = sub.add_parser("heatmap", help="per-token knockout heatmap for one prompt")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--window", type=int, default=9)
    p.add_argument("--prompt-id", choices=sorted(DEMO_PROMPTS))
    p.add_argument("--data")
    p.add_argument("--record-id")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("scatter", help="last-token self knockout over the final layers")
    _add_common(p)
    _add_sweep_inputs(p)
    p.set_defaults(func=cmd_scatter)

    p = sub.add_parser("check", help="run the self-check suites")
    _add_common(p)
    p.add_argument("--all", action="store_true")
    p.add_argument("--suite", action="append", choices=sorted(SUITES))
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("dump-attention", help="materialize hidden-attention kernels to archives")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--tokens", type=_int_list)
    p.add_argument("--data")
    p.add_argument("--record-id")
    p.add_argument("--layer", type=int)
    p.set_defaults(func=cmd_dump_attention)
    return parser


def _apply_config_file(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        values = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(values, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = sorted(set(values) - set(vars(args)) - {"command"})
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**{k: v for k, v in values.items() if k != "command"})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except UsageError as exc:
        print(f"ssmko: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, SsmkoError, KeyError, ValueError) as exc:
        print(f"ssmko: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
