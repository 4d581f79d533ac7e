"""Command-line front end.

Exit codes: 0 success, 1 config error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import os
import sys
import traceback
import warnings
from typing import Optional, Sequence

from . import aggregate as agg
from . import evaluate as ev
from . import pipeline
from .config import ConfigError, RunConfig, load_config
from .dataset import (EmptyCondition, LabelMap, UnknownClass, read_adjustments, read_manifest)
from .features import read_fingerprints
from .pcap import NotPcap, Truncated
from .tree import EmptyTrainingSet, HyperParams, SchemaMismatch, SingleClass, TreeModel, fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DATA_ERRORS = (pipeline.DataError, NotPcap, Truncated, EmptyCondition, UnknownClass, SchemaMismatch,
               EmptyTrainingSet, ev.LengthMismatch, ev.UnknownLabel, ev.EmptyMatrix, FileNotFoundError)


def _err(msg: str) -> None:
    print(f"iotdevid: {msg}", file=sys.stderr)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--seed", type=int, help="base seed (overrides config base_seed)")
    p.add_argument("--fraction", type=float, help="per-class sampling fraction in (0, 1]")
    p.add_argument("--group-size", help="aggregation group size, integer or 'whole'")
    p.add_argument("--repeats", type=int, help="number of seeded repeats")
    p.add_argument("--out", help="output directory or file")


def _config(args, need: tuple = ()) -> RunConfig:
    overrides = {"base_seed": args.seed, "fraction": args.fraction, "group_size": args.group_size,
                 "repeats": args.repeats, "out": args.out}
    for key in ("label_map", "manifest", "adjustments", "captures_root"):
        overrides[key] = getattr(args, key, None)
    if getattr(args, "conditions", None):
        overrides["conditions"] = args.conditions.split(",")
    return load_config(args.config, overrides).validate(need)


def cmd_extract(args) -> int:
    cfg = _config(args)
    label_map = None
    lm_path = cfg.label_map
    if lm_path:
        with pipeline.reading(lm_path):
            label_map = LabelMap.read(lm_path)
    if args.captures:
        jobs = [(p, os.path.splitext(os.path.basename(p))[0]) for p in args.captures]
    elif cfg.manifest:
        with pipeline.reading(cfg.manifest):
            entries = read_manifest(cfg.manifest)
        jobs = [(pipeline.capture_path(e, cfg.manifest, cfg.captures_root), e.session_ref) for e in entries]
    else:
        raise ConfigError("give capture files or a manifest")
    results = pipeline.extract_all(jobs, label_map, cfg.out)
    pipeline.write_drop_report(os.path.join(cfg.out, "drop_report.csv"), results)
    pipeline.write_drop_details(os.path.join(cfg.out, "drop_details.csv"), results)
    failed = 0
    for r in results:
        status = f"error: {r.error}" if r.error else "ok"
        print(f"{r.session_ref}: {r.packets} packets, kept {r.report.kept}, dropped {r.report.dropped} ({status})")
        failed += bool(r.error)
    return EXIT_DATA if failed else EXIT_OK


def cmd_build(args) -> int:
    cfg = _config(args, ("manifest",))
    with pipeline.reading(cfg.manifest):
        entries = read_manifest(cfg.manifest)
    rules = []
    if cfg.adjustments:
        with pipeline.reading(cfg.adjustments):
            rules = read_adjustments(cfg.adjustments)
    sessions = pipeline.load_sessions(entries, args.fingerprints)
    datasets = pipeline.build_datasets(sessions, entries, rules, cfg.fraction, cfg.base_seed)
    pipeline.write_datasets(cfg.out, datasets)
    for c, d in datasets.items():
        print(f"{c.value}: {len(d.fingerprints)} rows from {len(d.provenance)} sessions")
    return EXIT_OK


def _hp(args, cfg: RunConfig) -> HyperParams:
    d = cfg.hyperparams.as_dict()
    for k in ("max_depth", "min_samples_split", "min_samples_leaf"):
        v = getattr(args, k, None)
        if v is not None:
            d[k] = v
    try:
        return HyperParams(**d)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def cmd_train(args) -> int:
    cfg = _config(args)
    with pipeline.reading(args.data):
        table = read_fingerprints(args.data)
    if any(lab is None for lab in table.labels):
        raise pipeline.DataError(f"{args.data}: unlabelled rows in training data")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingleClass)
        model = fit(table.X, table.labels, _hp(args, cfg), seed=cfg.base_seed)
    out = args.out or "model.json"
    model.save(out)
    print(f"trained on {len(table)} rows: {model.n_leaves} leaves, depth {model.depth} -> {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    with pipeline.reading(args.model):
        model = TreeModel.load(args.model)
    with pipeline.reading(args.data):
        table = read_fingerprints(args.data)
    records = agg.records_from(table.macs, model.predict(table.X) if len(table) else [])
    out = args.out or "predictions.csv"
    agg.write_predictions(out, records)
    print(f"{len(records)} predictions -> {out}")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    cfg = _config(args)
    with pipeline.reading(args.predictions):
        records = agg.read_predictions(args.predictions)
    exc = None
    if args.exceptions:
        with pipeline.reading(args.exceptions):
            exc = agg.read_exceptions(args.exceptions)
    else:
        exc = agg.build_exception_list(records)
    final = agg.aggregate(records, exc, cfg.group_size)
    out = args.out or "aggregated.csv"
    agg.write_predictions(out, final)
    exc_out = os.path.splitext(out)[0] + "_exceptions.csv"
    agg.write_exceptions(exc_out, exc)
    changed = sum(r.final != r.predicted for r in final)
    print(f"{changed} of {len(final)} predictions changed; {len(exc.macs)} exception MACs -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    with pipeline.reading(args.data):
        table = read_fingerprints(args.data)
    with pipeline.reading(args.predictions):
        records = agg.read_predictions(args.predictions)
    if len(records) != len(table):
        raise pipeline.DataError("prediction and data row counts differ")
    prefix = args.out or "evaluation"
    modes = [(ev.INDIVIDUAL, [r.predicted for r in records])]
    if records and all(r.final for r in records):
        modes.append((ev.AGGREGATED, [r.final for r in records]))
    for mode, pred in modes:
        cm, m = ev.score(table.labels, pred)
        rep = ev._summarize(args.condition, mode, [(cm, m)], {}, [], HyperParams(), agg.WHOLE, 1.0)
        ev.write_class_report(f"{prefix}_{mode.lower()}_report.csv", rep)
        ev.write_confusion(f"{prefix}_{mode.lower()}_confusion.csv", rep)
        print(f"{mode}: accuracy {m.accuracy:.4f}  macro F1 {m.macro_f1:.4f}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args, ("label_map", "manifest"))
    res = pipeline.run(cfg, args.config, do_sweep=(True if args.sweep else None))
    print(f"report bundle: {res.report_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args, ("label_map", "manifest"))
    res = pipeline.run(cfg, args.config, do_conditions=False, do_sweep=True)
    print(f"report bundle: {res.report_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import write_synthetic_dataset

    out = args.out or "synthetic"
    gateway = [int(v) for v in args.gateway.split(",")] if args.gateway else None
    ds = write_synthetic_dataset(out, n_devices=args.devices, packets_per_device=args.packets,
                                 seed=args.seed or 0, sessions_per_condition=args.sessions, gateway=gateway,
                                 repeats=args.repeats or 2, fraction=args.fraction or 0.5)
    print(f"synthetic dataset with {len(ds.profiles)} devices -> {ds.config}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iotdevid", description="Per-packet IoT device identification")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="capture files -> fingerprint CSVs plus drop report")
    _add_common(p)
    p.add_argument("captures", nargs="*", help="pcap files (default: every manifest session)")
    p.add_argument("--label-map", dest="label_map")
    p.add_argument("--manifest")
    p.add_argument("--captures-root", dest="captures_root")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("build", help="session CSVs -> four condition datasets")
    _add_common(p)
    p.add_argument("--fingerprints", required=True, help="directory of per-session CSVs")
    p.add_argument("--manifest")
    p.add_argument("--adjustments")
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("train", help="fit a decision tree on a fingerprint CSV")
    _add_common(p)
    p.add_argument("data")
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--min-samples-split", dest="min_samples_split", type=int)
    p.add_argument("--min-samples-leaf", dest="min_samples_leaf", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="per-packet predictions")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("aggregate", help="MAC-majority aggregation of predictions")
    _add_common(p)
    p.add_argument("predictions")
    p.add_argument("--exceptions", help="fixed exception list instead of deriving one")
    p.set_defaults(fn=cmd_aggregate)

    p = sub.add_parser("evaluate", help="per-class reports for predictions")
    p.add_argument("data")
    p.add_argument("predictions")
    p.add_argument("--condition", default="")
    p.add_argument("--out", help="output file prefix")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline from a config")
    _add_common(p)
    p.add_argument("--conditions", help="comma-separated subset of AA,AI,IA,II")
    p.add_argument("--sweep", action="store_true", help="also run the session-pair sweep")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="all compatible session pairs")
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic dataset with a run config")
    _add_common(p)
    p.add_argument("--devices", type=int, default=5)
    p.add_argument("--packets", type=int, default=200, help="packets per device per session")
    p.add_argument("--sessions", type=int, default=2, help="sessions per condition")
    p.add_argument("--gateway", help="comma-separated device indices sharing one gateway MAC")
    p.set_defaults(fn=cmd_synth)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    except DATA_ERRORS as e:
        _err(f"data error: {e}")
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
