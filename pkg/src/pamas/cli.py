"""Command-line entry point: synth, init, train, infer, eval, costcheck."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .backends import BackendError, UsageMeter
from .checkpoint import CheckpointError, read_checkpoint, restore_engine, save_checkpoint
from .config import RunConfig, build_backends, load_config
from .costs import flat_majority_baseline, run_cost_check
from .data import generate_synthetic, ingest_dataset, read_table
from .engine import DM_ID, assign_profiles, make_engine
from .metrics import compute_metrics, score_from_sum
from .model import ConfigError, DataError, PamasError
from .report import render_trace, write_json, write_jsonl
from .routing import route_inference
from .training import forward_pass, initialize, predict_split, train

logger = logging.getLogger("pamas")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(PamasError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fresh(cfg: RunConfig):
    if cfg.dataset is None:
        raise ConfigError("configuration has no dataset")
    dataset, splits = ingest_dataset(cfg.dataset, ratios=cfg.ratios, seed=cfg.hyper.seed)
    meter = UsageMeter()
    backends = build_backends(cfg.backend, meter, dataset.instances, DM_ID)
    profiles = assign_profiles(dataset.feature_names, cfg.n_auditors, cfg.subset_size, cfg.hyper.seed)
    engine = make_engine(dataset.feature_names, profiles, cfg.hyper, backends, meter, workers=cfg.workers)
    return engine, dataset, splits


def _restore(ckpt: Path, extra_instances=()):
    payload = read_checkpoint(ckpt)
    if not payload.get("config"):
        raise CheckpointError(f"{ckpt} carries no run configuration")
    cfg = RunConfig.from_dict(payload["config"])
    dataset, splits = ingest_dataset(cfg.dataset, ratios=cfg.ratios, seed=cfg.hyper.seed)
    meter = UsageMeter()
    backends = build_backends(cfg.backend, meter, [*dataset.instances, *extra_instances], DM_ID)
    return restore_engine(payload, backends, meter), cfg, splits


def _write_run(engine, cfg: RunConfig) -> None:
    out = cfg.output_dir
    write_json(out / "history.json", engine.history)
    write_json(out / "report.json", engine.report.to_dict())
    save_checkpoint(engine, cfg.checkpoint_path, cfg.to_dict())


def cmd_synth(args) -> int:
    spec = yaml.safe_load(Path(args.spec).read_text(encoding="utf-8")) or {}
    if not isinstance(spec, dict):
        raise ConfigError("synthetic spec must be a mapping")
    out = args.out or spec.pop("output", None)
    spec.pop("output", None)
    if out is None:
        raise UsageError("no output path: pass --out or set 'output' in the spec")
    out = Path(out)
    if not out.is_absolute() and args.out is None:
        out = Path(args.spec).resolve().parent / out
    try:
        generate_synthetic(out, **spec)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from exc
    print(json.dumps({"written": str(out)}))
    return EXIT_OK


def cmd_init(args) -> int:
    cfg = load_config(args.config)
    engine, _, splits = _fresh(cfg)
    initialize(engine, splits, cfg.self_learning_limit)
    _write_run(engine, cfg)
    print(json.dumps({"checkpoint": str(cfg.checkpoint_path), "layers": engine.hierarchy.layers()}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    epochs = cfg.epochs if args.epochs is None else args.epochs
    if args.resume:
        engine, _, splits = _restore(Path(args.resume))
    else:
        engine, _, splits = _fresh(cfg)
    train(engine, splits, epochs, self_learning_limit=cfg.self_learning_limit, on_epoch=lambda e, _: _write_run(e, cfg))
    _write_run(engine, cfg)
    print(json.dumps({"checkpoint": str(cfg.checkpoint_path), "epochs_done": engine.epochs_done}))
    return EXIT_OK


def cmd_infer(args) -> int:
    data = read_table(args.input, require_label=False)
    engine, _, _ = _restore(Path(args.ckpt), data.instances)
    rows, texts = [], []
    for x in data.instances:
        if args.full:
            trace = forward_pass(engine, x, record=False, phase="eval")
            if trace.failed:
                raise BackendError(trace.error or "forward pass failed", instance_id=x.id)
            row = {"instance_id": x.id, "decision": trace.final.decision, "reason": trace.final.reason,
                   "score": score_from_sum(trace.score), "calls": len(trace.usages), "mode": "full"}
        else:
            trace = route_inference(engine, x, record=False)
            row = {"instance_id": x.id, "decision": trace.final.decision, "reason": trace.final.reason,
                   "score": score_from_sum(trace.score), "calls": trace.m, "mode": "routed",
                   "activation": trace.to_dict()["nodes"]}
        rows.append(row)
        texts.append(render_trace(trace, engine.hierarchy, x.label if args.show_truth else None))
    if args.out:
        write_jsonl(args.out, rows)
    if args.format == "json":
        for row in rows:
            print(json.dumps(row))
    else:
        print("\n".join(texts), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    engine, _, splits = _restore(Path(args.ckpt))
    instances = splits.get(args.split)
    if not instances:
        raise DataError(f"split {args.split!r} is empty")
    if args.routing:
        preds = []
        for x in instances:
            t = route_inference(engine, x, record=False)
            preds.append((score_from_sum(t.score), t.final.decision, x.label))
    else:
        preds = predict_split(engine, instances)
    report = compute_metrics(preds)
    baseline = compute_metrics(
        [(float(d), d, x.label) for x, d in ((x, flat_majority_baseline(engine, x)) for x in instances)]
    )
    print(json.dumps({"split": args.split, "routing": args.routing, "metrics": report.to_dict(),
                      "flat_majority": baseline.to_dict()}, indent=1))
    return EXIT_OK


def cmd_costcheck(args) -> int:
    engine, cfg, splits = _restore(Path(args.ckpt))
    instances = splits.get(args.split)[: args.limit] if args.limit else splits.get(args.split)
    if not instances:
        raise DataError(f"split {args.split!r} is empty")
    rec = run_cost_check(engine, instances, tokens_per_call=cfg.backend.tokens_per_call, correct=not args.no_correct)
    print(json.dumps(rec.to_dict(), indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pamas", description="Hierarchical multi-agent misinformation detection.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    s.add_argument("--spec", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("init", help="build and checkpoint an initialized hierarchy")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("train", help="run training epochs")
    s.add_argument("--config", required=True)
    s.add_argument("--resume")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="decide instances from a CSV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--routing", action="store_true", help="confidence-guided routing (default)")
    mode.add_argument("--full", action="store_true", help="activate every agent")
    s.add_argument("--format", choices=("text", "json"), default="text")
    s.add_argument("--out", help="also write JSON lines here")
    s.add_argument("--show-truth", action="store_true")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="metrics on a split")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", default="test", choices=("train", "validation", "test"))
    s.add_argument("--routing", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("costcheck", help="reconcile metered tokens with the cost model")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", default="validation", choices=("train", "validation", "test"))
    s.add_argument("--limit", type=int)
    s.add_argument("--no-correct", action="store_true")
    s.set_defaults(func=cmd_costcheck)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    if isinstance(exc, (DataError, CheckpointError, FileNotFoundError)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (PamasError, OSError, ValueError) as exc:
        code = _exit_code(exc)
        record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        meta = getattr(exc, "meta", None)
        if meta:
            record["meta"] = {k: str(v) for k, v in meta.items()}
        print(json.dumps(record), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
