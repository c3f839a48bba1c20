"""Command-line driver: prepare, pretrain, train, evaluate, sweep, report.

All commands share one experiment directory (``output_dir``). Each command
writes into its own subdirectory together with the fully resolved config.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RESOLVED_NAME, ConfigError, ExperimentConfig, parse_override
from .corpus import DatasetError, SplitSpec, load_dataset, save_dataset, split_dataset
from .labelprep import LabelError, LabelVocabulary
from .metrics import MetricsError, evaluate, smooth_curve
from .model import ModelConfig, ModelError, init_params, load_checkpoint, save_checkpoint
from .pipeline import encode_records, prepare
from .tokenizer import TokenizerError, Vocab, build_vocab
from .train import NonFiniteError, OptimizerState, TrainingError, fit, grid_search, default_grid, pretrain

log = logging.getLogger("howtotag")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
INPUT_ERRORS = (ConfigError, DatasetError, LabelError, TokenizerError, ModelError, MetricsError,
                TrainingError, FileNotFoundError)


class Paths:
    def __init__(self, root: Path):
        self.root = root
        self.prepared = root / "prepared"
        self.pretrain = root / "pretrain"
        self.train = root / "train"
        self.evaluate = root / "evaluate"
        self.sweep = root / "sweep"
        self.report = root / "report"

    dataset = property(lambda self: self.prepared / "dataset.jsonl")
    train_split = property(lambda self: self.prepared / "train.jsonl")
    test_split = property(lambda self: self.prepared / "test.jsonl")
    label_vocab = property(lambda self: self.prepared / "labels.txt")
    token_vocab = property(lambda self: self.prepared / "vocab.txt")
    pretrain_ckpt = property(lambda self: self.pretrain / "checkpoint.npz")
    model_ckpt = property(lambda self: self.train / "model.npz")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, rows: list[dict], columns: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def _read_csv(path: Path) -> list[dict]:
    if not path.is_file():
        raise FileNotFoundError(f"missing {path}; run the producing command first")
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _stamp(cfg: ExperimentConfig, directory: Path) -> None:
    cfg.dump(directory / RESOLVED_NAME)


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing {path}; run `{producer}` first")
    return path


def _load_prepared(paths: Paths):
    train = load_dataset(_require(paths.train_split, "prepare"), "jsonl")
    test = load_dataset(_require(paths.test_split, "prepare"), "jsonl")
    labels = LabelVocabulary.load(_require(paths.label_vocab, "prepare"))
    tokens = Vocab.load(_require(paths.token_vocab, "prepare"))
    return train, test, labels, tokens


def _model_config(cfg: ExperimentConfig, tokens: Vocab, labels: LabelVocabulary,
                  max_len: int | None = None) -> ModelConfig:
    m = cfg.model
    return ModelConfig(vocab_size=len(tokens), num_labels=len(labels),
                       max_len=max_len or cfg.tokenizer.max_len, d_model=m.d_model, n_heads=m.n_heads,
                       n_layers=m.n_layers, d_ff=m.d_ff, pooling=cfg.pooling())


# ---------------------------------------------------------------- commands

def cmd_prepare(cfg: ExperimentConfig, args) -> int:
    paths = Paths(cfg.out)
    src = getattr(args, "input", None) or cfg.data.path
    if not src:
        raise ConfigError("no input dataset: set data.path or pass --in")
    raw = load_dataset(src, cfg.data.format)
    result, empty = prepare(raw, cfg.preprocess, cfg.labels.threshold)
    train, test = split_dataset(result.dataset, SplitSpec(cfg.data.train_fraction, cfg.seed))
    tokens = build_vocab([r.text for r in train], cfg.tokenizer.max_vocab, cfg.tokenizer.min_freq)

    out_dataset = Path(args.out_dataset) if getattr(args, "out_dataset", None) else paths.dataset
    out_vocab = Path(args.out_vocab) if getattr(args, "out_vocab", None) else paths.label_vocab
    save_dataset(result.dataset, out_dataset, "jsonl")
    result.vocabulary.save(out_vocab)
    if out_vocab != paths.label_vocab:
        result.vocabulary.save(paths.label_vocab)
    save_dataset(train, paths.train_split, "jsonl")
    save_dataset(test, paths.test_split, "jsonl")
    tokens.save(paths.token_vocab)

    report = result.report()
    report["records_in"] = len(raw)
    report["records_removed_empty_text"] = empty
    report["records_removed"] = result.removed
    report["train_records"], report["test_records"] = len(train), len(test)
    report["token_vocab_size"] = len(tokens)
    report["seed"] = cfg.seed
    _write_json(paths.prepared / "prepare_report.json", report)
    _stamp(cfg, paths.prepared)
    print(f"labels: {report['labels_total']} -> {report['labels_selected']} at threshold {cfg.labels.threshold}")
    print(f"{result.removed} records removed ({empty} more had no text after preprocessing); "
          f"{len(result.dataset)} kept, split {len(train)}/{len(test)}")
    return EXIT_OK


def cmd_pretrain(cfg: ExperimentConfig, args) -> int:
    paths = Paths(cfg.out)
    train, _, labels, tokens = _load_prepared(paths)
    tcfg = cfg.pretrain_config()
    data = encode_records(train, tokens, labels, cfg.tokenizer.max_len)
    if tcfg.objective == "mlm_pretrain":
        # sequences need at least one maskable token
        keep = (data.attention_mask.sum(axis=1) > 2)
        data = data.subset(np.flatnonzero(keep))
    start_epoch, rows = 0, []
    if getattr(args, "resume", False) and paths.pretrain_ckpt.is_file():
        params, extra, meta = load_checkpoint(paths.pretrain_ckpt)
        state = OptimizerState.from_arrays(extra, params)
        start_epoch = int(meta.get("epochs_done", 0))
        trace_path = paths.pretrain / "pretrain_trace.csv"
        rows = _read_csv(trace_path) if trace_path.is_file() else []
    else:
        params = init_params(_model_config(cfg, tokens, labels), cfg.seed)
        state = None
    params, state, trace = pretrain(params, data, tcfg, state, start_epoch)
    rows += [{"epoch": s.epoch, "step": s.step, "loss": repr(s.loss), "ar_nll": repr(s.ar_nll)} for s in trace]
    save_checkpoint(paths.pretrain_ckpt, params, state.to_arrays(),
                    {"objective": tcfg.objective, "epochs_done": start_epoch + tcfg.epochs, "step": state.step})
    _write_csv(paths.pretrain / "pretrain_trace.csv", rows, ["epoch", "step", "loss", "ar_nll"])
    _stamp(cfg, paths.pretrain)
    print(f"pretrained ({tcfg.objective}) to step {state.step}; final loss {trace[-1].loss:.4f}")
    return EXIT_OK


def _trace_rows(trace) -> list[dict]:
    return [{"epoch": e.epoch, "train_loss": repr(e.train_loss), "train_acc": repr(e.train_accuracy),
             "test_loss": repr(e.test_loss), "test_acc": repr(e.test_accuracy)} for e in trace.epochs]


TRACE_COLUMNS = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]


def cmd_train(cfg: ExperimentConfig, args) -> int:
    paths = Paths(cfg.out)
    train, test, labels, tokens = _load_prepared(paths)
    mcfg = _model_config(cfg, tokens, labels)
    init = None
    init_path = getattr(args, "init", None) or (paths.pretrain_ckpt if cfg.train.init_from_pretrain else None)
    if init_path:
        init, _, _ = load_checkpoint(_require(Path(init_path), "pretrain"))
        if init.config.replace(pooling=mcfg.pooling) != mcfg:
            raise ModelError("pretrained checkpoint does not match the model configuration")
        init.config = mcfg
    tr = encode_records(train, tokens, labels, cfg.tokenizer.max_len)
    te = encode_records(test, tokens, labels, cfg.tokenizer.max_len)
    if cfg.train.checkpoint not in ("best", "last"):
        raise ConfigError(f"train.checkpoint must be 'best' or 'last', got {cfg.train.checkpoint!r}")
    result = fit(tr, te, mcfg, cfg.finetune_config(), init=init)
    keep_last = cfg.train.checkpoint == "last"
    kept = result.final_params if keep_last else result.params
    kept_epoch = len(result.trace) if keep_last else result.best_epoch
    save_checkpoint(paths.model_ckpt, kept, meta={"best_epoch": result.best_epoch, "saved_epoch": kept_epoch})
    _write_csv(paths.train / "trace.csv", _trace_rows(result.trace), TRACE_COLUMNS)
    _stamp(cfg, paths.train)
    best = result.trace.epochs[result.best_epoch - 1]
    print(f"trained {len(result.trace)} epochs; best epoch {result.best_epoch} "
          f"(test acc {best.test_accuracy:.4f}, train acc {best.train_accuracy:.4f}); saved epoch {kept_epoch}")
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    paths = Paths(cfg.out)
    train, test, labels, tokens = _load_prepared(paths)
    params, _, _ = load_checkpoint(_require(paths.model_ckpt, "train"))
    split = train if cfg.evaluate.split == "train" else test
    data = encode_records(split, tokens, labels, params.config.max_len)
    threshold = args.threshold if getattr(args, "threshold", None) is not None else cfg.evaluate.decision_threshold
    report = evaluate(params, data.input_ids, data.attention_mask, data.targets, labels, threshold)
    paths.evaluate.mkdir(parents=True, exist_ok=True)
    report.save_json(paths.evaluate / "metrics.json")
    report.save_per_label_csv(paths.evaluate / "per_label.csv")
    _stamp(cfg, paths.evaluate)
    print(json.dumps(report.headline(), indent=2))
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    paths = Paths(cfg.out)
    train, test, labels, tokens = _load_prepared(paths)
    base = cfg.finetune_config()
    if cfg.sweep.epochs is not None:
        base = base.replace(epochs=cfg.sweep.epochs)
    grid = default_grid(base, cfg.sweep.learning_rates, cfg.sweep.max_lens)
    cache: dict[int, tuple] = {}

    def encode(max_len):
        if max_len not in cache:
            cache[max_len] = (encode_records(train, tokens, labels, max_len),
                              encode_records(test, tokens, labels, max_len))
        return cache[max_len]

    def score(params, data):
        r = evaluate(params, data.input_ids, data.attention_mask, data.targets, labels,
                     cfg.evaluate.decision_threshold)
        return {"accuracy": r.binary_accuracy, "macro_f1": r.macro_f1, "micro_f1": r.micro_f1}

    rows = grid_search(grid, _model_config(cfg, tokens, labels), encode, score)
    cols = ["learning_rate", "max_len", "accuracy", "macro_f1", "micro_f1", "best_epoch", "best", "error"]
    _write_csv(paths.sweep / "sweep.csv", rows, cols)
    _write_json(paths.sweep / "sweep.json", {"rows": rows, "optimizer": base.to_dict()})
    _stamp(cfg, paths.sweep)
    for r in rows:
        flag = " *" if r["best"] else ""
        acc = "error" if r["error"] else f"{r['accuracy']:.4f}"
        print(f"lr={r['learning_rate']:g} max_len={r['max_len']} acc={acc}{flag}")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, args) -> int:
    paths = Paths(cfg.out)
    rows = _read_csv(paths.train / "trace.csv")
    sigma = cfg.report.sigma
    series = {c: [float(r[c]) for r in rows] for c in TRACE_COLUMNS[1:]}
    out_rows = []
    smoothed = {c: (smooth_curve(v, sigma) if sigma else np.asarray(v)) for c, v in series.items()}
    for i, r in enumerate(rows):
        row = {"epoch": r["epoch"]}
        for c in series:
            row[c] = repr(series[c][i])
            row[c + "_smooth"] = repr(float(smoothed[c][i]))
        out_rows.append(row)
    cols = ["epoch"] + [x for c in series for x in (c, c + "_smooth")]
    _write_csv(paths.report / "curves.csv", out_rows, cols)
    metrics_path = paths.evaluate / "metrics.json"
    if metrics_path.is_file():
        m = json.loads(metrics_path.read_text(encoding="utf-8"))
        bars = [{"metric": k, "value": repr(m[k])} for k in
                ("macro_precision", "macro_recall", "macro_f1", "micro_f1", "binary_accuracy")]
        _write_csv(paths.report / "metrics_bar.csv", bars, ["metric", "value"])
    _stamp(cfg, paths.report)
    print(f"wrote {paths.report / 'curves.csv'}" + (f" (sigma={sigma})" if sigma else " (unsmoothed)"))
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "pretrain": cmd_pretrain, "train": cmd_train,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="howtotag", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="experiment output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. train.epochs=5")
        if name in ("prepare", "evaluate"):
            p.add_argument("--threshold", type=float if name == "evaluate" else int,
                           help="label threshold (prepare) or decision threshold (evaluate)")
        if name == "prepare":
            p.add_argument("--in", dest="input", help="raw dataset path (jsonl or csv)")
            p.add_argument("--out-dataset")
            p.add_argument("--out-vocab")
        if name == "pretrain":
            p.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")
        if name == "train":
            p.add_argument("--init", help="checkpoint to start fine-tuning from")
    return parser


def resolve_config(args) -> ExperimentConfig:
    overrides = dict(parse_override(s) for s in args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.command == "prepare" and args.threshold is not None:
        overrides["labels.threshold"] = args.threshold
    if args.command == "prepare" and args.input is not None:
        overrides["data.path"] = args.input
    return ExperimentConfig.load(args.config, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
