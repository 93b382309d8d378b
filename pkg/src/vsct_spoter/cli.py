"""Command line: train, eval, map, stats, selftest.

Exit codes: 0 success, 1 runtime failure, 2 usage/config/input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import gradcheck
from .config import ConfigError, RunConfig, load_config_file
from .model import SpoterModel, CheckpointError
from .pose_data import (
    ClassMapping,
    Dataset,
    GlossVocabulary,
    PoseDataError,
    VocabularyError,
    dataset_stats,
    load_dataset,
    map_labels,
    read_mapping_pairs,
    save_dataset,
)
from .preprocess import subsample_frames
from .training import MetricsLog, evaluate, train

log = logging.getLogger("vsct_spoter")

THREADS_ENV = "VSCT_SPOTER_THREADS"

# flags whose spelling differs from their config key
_SWITCHES = {
    "--no-normalization": ("use_normalization", False),
    "--no-augmentation": ("use_augmentation", False),
    "--balanced-sampling": ("use_balanced_sampling", True),
    "--vsct": ("use_vsct", True),
    "--subsample-frames": ("subsample_frames", True),
}


class UsageError(Exception):
    pass


def eval_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


# -- helpers ----------------------------------------------------------------


def _mapping_from_file(path, source_vocab: GlossVocabulary, target_vocab: GlossVocabulary, invert: bool) -> ClassMapping:
    """Build a mapping restricted to glosses known on both sides.

    Pairs whose source gloss is absent from ``source_vocab`` are skipped
    (the data simply has no such class); an unknown target is an error.
    """
    pairs = read_mapping_pairs(path)
    if invert:
        pairs = [(t, s) for s, t in pairs]
    kept = []
    for s, t in pairs:
        if s not in source_vocab:
            continue
        if t not in target_vocab:
            raise VocabularyError(f"mapping target {t!r} is not in the model vocabulary")
        kept.append((s, t))
    return ClassMapping.from_glosses(kept, source_vocab, target_vocab)


def _fit_lengths(d: Dataset, max_frames: int, subsample: bool, what: str) -> Dataset:
    if subsample:
        return Dataset(d.vocabulary, tuple(subsample_frames(s, max_frames) for s in d.sequences))
    too_long = [i for i, s in enumerate(d.sequences) if s.num_frames > max_frames]
    if too_long:
        raise UsageError(
            f"{what}: {len(too_long)} sequences exceed max_frames={max_frames} "
            f"(first at index {too_long[0]}); pass --subsample-frames or raise max_frames"
        )
    return d


def _resolve_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg.update(load_config_file(args.config))
    overrides = {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    cfg.update(overrides)
    if cfg.train_data is None:
        raise ConfigError("train_data is required (--train-data or config file)")
    if cfg.out is None:
        raise ConfigError("out is required (--out or config file)")
    cfg.validate()
    return cfg


# -- commands ---------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _resolve_run_config(args)
    threads = eval_threads()
    train_cfg = cfg.train_config(threads)
    vsct_cfg = cfg.vsct_config() if cfg.use_vsct else None

    train_data = load_dataset(cfg.train_data)
    if len(train_data) == 0:
        raise UsageError(f"{cfg.train_data}: no sequences")
    train_data = _fit_lengths(train_data, cfg.max_frames, cfg.subsample_frames, "train data")
    val_data = None
    if cfg.val_data:
        if cfg.val_mapping:
            raw = load_dataset(cfg.val_data)
            mapping = _mapping_from_file(cfg.val_mapping, raw.vocabulary, train_data.vocabulary, invert=False)
            val_data = map_labels(raw, mapping, drop_unmapped=True)
        else:
            val_data = load_dataset(cfg.val_data, vocabulary=train_data.vocabulary)
        val_data = _fit_lengths(val_data, cfg.max_frames, cfg.subsample_frames, "val data")
    elif cfg.use_vsct:
        log.warning("--vsct without validation data: per-class statistics are computed on the training split")

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.dumps(), encoding="utf-8")
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("", encoding="utf-8")

    model = SpoterModel.create(cfg.model_config(train_data.num_classes), seed=cfg.seed, normalize_inputs=cfg.use_normalization)
    t0 = time.perf_counter()
    _, history = train(model, train_data, val_data, train_cfg, vsct_cfg, on_epoch=MetricsLog(metrics_path))
    elapsed = time.perf_counter() - t0
    model.save(out / "checkpoint.sptr", extra={"vocabulary": list(train_data.vocabulary.id_to_gloss)})

    last = history[-1]
    summary = {
        "epochs": len(history),
        "final_loss": last.loss,
        "train_top1": last.train_top1,
        "train_top5": last.train_top5,
        "val_top1": last.val_top1,
        "val_top5": last.val_top5,
        "num_train": len(train_data),
        "num_val": len(val_data) if val_data is not None else 0,
        "num_classes": train_data.num_classes,
        "num_parameters": model.params.num_values(),
        "seconds": elapsed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"trained {len(history)} epochs in {elapsed:.1f}s; final loss {last.loss:.4f}, train top-1 {last.train_top1}")
    return 0


def cmd_eval(args) -> int:
    try:
        model, extra = SpoterModel.load(args.model)
    except (OSError, CheckpointError) as e:
        raise UsageError(f"cannot load model: {e}") from None
    vocab_list = extra.get("vocabulary")
    if not vocab_list:
        raise UsageError("checkpoint carries no vocabulary")
    vocab = GlossVocabulary(tuple(vocab_list))
    ks = sorted(set(args.k)) if args.k else sorted({1, min(5, model.num_classes)})
    if any(not 1 <= k <= model.num_classes for k in ks):
        raise UsageError(f"k values must lie in [1, {model.num_classes}]")
    if args.mapping:
        raw = load_dataset(args.data)
        mapping = _mapping_from_file(args.mapping, raw.vocabulary, vocab, invert=args.mapping_direction == "model-to-data")
        data = map_labels(raw, mapping, drop_unmapped=True)
        dropped = len(raw) - len(data)
        if dropped:
            log.warning("%d sequences have no mapped class and were left out", dropped)
    else:
        data = load_dataset(args.data, vocabulary=vocab)
    if len(data) == 0:
        raise UsageError("no sequences to evaluate")
    data = _fit_lengths(data, model.config.max_frames, args.subsample_frames, "eval data")

    res = evaluate(model, data, ks, threads=eval_threads())
    for k in ks:
        print(f"top-{k}: {res.accuracy[k]:.4f}")
    print(f"{'class':>5}  {'gloss':<24} {'correct':>7} {'total':>5} {'acc':>6}")
    for cid, score in res.per_class.items():
        print(f"{cid:>5}  {vocab.gloss_of(cid):<24} {score.correct:>7} {score.total:>5} {score.accuracy:>6.3f}")
    if args.json:
        report = {
            "accuracy": {str(k): v for k, v in res.accuracy.items()},
            "per_class": {str(c): [s.correct, s.total] for c, s in res.per_class.items()},
            "num_sequences": len(data),
        }
        Path(args.json).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_map(args) -> int:
    data = load_dataset(args.data)
    target = None
    if args.target_vocab_from:
        target = load_dataset(args.target_vocab_from).vocabulary
    pairs = read_mapping_pairs(args.mapping)
    if args.invert:
        pairs = [(t, s) for s, t in pairs]
    if target is None:
        names = []
        for _, t in pairs:
            if t not in names:
                names.append(t)
        target = GlossVocabulary(tuple(names))
    mapping = _mapping_from_file(args.mapping, data.vocabulary, target, invert=args.invert)
    mapped = map_labels(data, mapping, drop_unmapped=args.drop_unmapped)
    save_dataset(mapped, args.out)
    print(f"wrote {len(mapped)} of {len(data)} sequences to {args.out}")
    return 0


def cmd_stats(args) -> int:
    data = load_dataset(args.data)
    if len(data) == 0:
        raise UsageError(f"{args.data}: no sequences")
    st = dataset_stats(data)
    print(f"{st.num_sequences} sequences / {st.num_classes} classes / {st.num_signers} signers")
    print(f"mean repetitions per class: {st.mean_repetitions:.2f}")
    print("repetitions: classes")
    for reps, n in st.repetition_histogram.items():
        print(f"  {reps}: {n}")
    if args.json:
        Path(args.json).write_text(json.dumps(asdict(st), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_selftest(args) -> int:
    suite = gradcheck.op_suite(seed=args.seed)
    ops = args.op or list(suite)
    unknown = [o for o in ops if o not in suite]
    if unknown:
        raise UsageError(f"unknown op(s) {unknown}; choose from {list(suite)}")
    failing = []
    for op in ops:
        tol = args.tol if args.tol is not None else gradcheck.default_tolerance(op)
        err = suite[op]()
        ok = err < tol
        print(f"{op:<14} max_rel_err={err:.3e} tol={tol:.1e} {'PASS' if ok else 'FAIL'}")
        if not ok:
            failing.append(op)
    if failing:
        print(f"failing: {', '.join(failing)}")
        return 1
    return 0


# -- parser -----------------------------------------------------------------


def _add_run_config_flags(p: argparse.ArgumentParser) -> None:
    switch_keys = {key for key, _ in _SWITCHES.values()}
    for flag, (key, value) in _SWITCHES.items():
        p.add_argument(flag, dest=key, action="store_const", const=value, default=None)
    types = RunConfig.field_types()
    for f in fields(RunConfig):
        if f.name in switch_keys:
            continue
        kind = types[f.name]
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, type=str if kind is bool else kind, default=None, metavar=f.name.upper())
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vsct-spoter", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="flat key = value config file")
    _add_run_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mapping", help="TSV gloss mapping between data and model vocabularies")
    p.add_argument(
        "--mapping-direction",
        choices=("data-to-model", "model-to-data"),
        default="data-to-model",
        help="column order of the mapping file",
    )
    p.add_argument("-k", "--k", type=int, nargs="+", default=None, help="default: 1 and 5")
    p.add_argument("--subsample-frames", action="store_true")
    p.add_argument("--json", help="also write results to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("map", help="relabel a dataset through a gloss mapping")
    p.add_argument("--data", required=True)
    p.add_argument("--mapping", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-vocab-from", help="dataset whose vocabulary defines target ids")
    p.add_argument("--invert", action="store_true", help="read the mapping right-to-left")
    p.add_argument("--drop-unmapped", action="store_true")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("stats", help="dataset summary")
    p.add_argument("data")
    p.add_argument("--json")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("selftest", help="finite-difference gradient checks")
    p.add_argument("--tol", type=float, default=None, help="override every threshold")
    p.add_argument("--op", action="append", help="restrict to this op (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError, PoseDataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
