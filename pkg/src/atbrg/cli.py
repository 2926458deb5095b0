"""Command-line entry point: ``atbrg <command> ...``.

Exit status is 0 on success, 1 on data, validation or contract errors and 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import Dataset, load_dataset, read_interactions
from .errors import AtbrgError
from .kg import load_kg_dir
from .metrics import bucket_spearman, ctr_by_node_count
from .model import ModelConfig
from .subgraph import SubgraphCache, build
from .synth import SynthSpec, generate, validate
from .training import Checkpoint, Pipeline, evaluate, preset_grid, run_ablation, train

log = logging.getLogger("atbrg")


def _dump(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _model_config(args) -> ModelConfig:
    """Defaults, then desk-scale widths, then the config file, then explicit flags."""
    obj = {}
    if args.desk_scale:
        obj["mlp_dims"] = [64, 32, 16]
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            obj.update(json.load(fh))
    for key in ("seed", "epochs", "lr"):
        if getattr(args, key, None) is not None:
            obj[key] = getattr(args, key)
    if getattr(args, "dedupe_target", False):
        obj["dedupe_target"] = True
    return ModelConfig.from_json(obj)


def _dataset(args) -> Dataset:
    return load_dataset(args.data, args.kg)


# commands ----------------------------------------------------------------------------

def cmd_synth(args) -> int:
    obj = {}
    if args.spec or args.config:
        with open(args.spec or args.config, encoding="utf-8") as fh:
            obj = json.load(fh)
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.signal is not None:
        obj["signal"] = args.signal
    if args.signal_kind is not None:
        obj["signal_kind"] = args.signal_kind
    spec = SynthSpec.from_json(obj)
    data = generate(spec)
    data.write(args.out, spec)
    print(f"wrote {len(data.train)} train / {len(data.test)} test samples to {args.out}")
    return 0


def cmd_validate(args) -> int:
    rows = validate(args.data, args.kg)
    lines = [str(v) for v in rows]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.writelines(f"{v.file}\t{v.line}\t{v.message}\n" for v in rows)
    for line in lines:
        print(line)
    print(f"{len(rows)} violation(s)")
    return 1 if rows else 0


def cmd_extract(args) -> int:
    cfg = _model_config(args)
    depth = args.depth if args.depth is not None else cfg.depth
    fanout = args.fanout if args.fanout is not None else cfg.fanout_cap
    if args.target is not None:
        kg = load_kg_dir(args.kg)
        sub = build(kg, args.target, args.behaviors, depth, fanout)
        text = json.dumps(sub.to_json(), indent=1, sort_keys=True) + "\n"
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return 0
    if args.data is None:
        raise AtbrgError("extract needs --target or --data")
    if not args.out:
        raise AtbrgError("extract --data needs --out <cache dir>")
    ds = _dataset(args)
    cache = SubgraphCache(ds.kg, depth, fanout, directory=args.out)
    pipe = Pipeline.from_dataset(ds, cfg.with_(max_depth=depth, fanout_cap=fanout), cache)
    for split in (ds.train, ds.test):
        pipe.subgraphs(pipe.prepare(split))
    print(f"{len(cache)} subgraphs cached in {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _model_config(args)
    ds = _dataset(args)
    ds.check_ids(ds.train + ds.test)
    cache = None
    if args.cache_dir:
        depth = cfg.depth if cfg.model == "atbrg" else 0
        cache = SubgraphCache(ds.kg, depth, cfg.fanout_cap, directory=args.cache_dir)
    pipe = Pipeline.from_dataset(ds, cfg, cache)
    ckpt, report = train(pipe, ds.train, ds.test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save(out / "ckpt.json")
    _dump(report.to_json(), out / "report.json")
    _dump({"wall_time": report.wall_time}, out / "timing.json")
    print(f"final loss {report.epoch_loss[-1]:.6f}" if report.epoch_loss else "no epochs run")
    if report.test_auc is not None:
        print(f"test auc {report.test_auc!r}")
    return 0


def _checkpoint_pipeline(args):
    ckpt = Checkpoint.load(args.checkpoint)
    ds = _dataset(args)
    if ds.schema != ckpt.schema:
        raise AtbrgError("dataset schema differs from the checkpoint's")
    return ds, ckpt, Pipeline.from_dataset(ds, ckpt.config)


def cmd_eval(args) -> int:
    ds, ckpt, pipe = _checkpoint_pipeline(args)
    samples = getattr(ds, args.split)
    ds.check_ids(samples)
    value = evaluate(pipe, ckpt, samples)
    if args.out:
        _dump({"split": args.split, "auc": value, "n": len(samples)}, args.out)
    print(f"auc {value!r}")
    return 0


def cmd_predict(args) -> int:
    ds, ckpt, pipe = _checkpoint_pipeline(args)
    samples = read_interactions(args.samples) if args.samples else ds.test
    ds.check_ids(samples)
    scores = pipe.predict(ckpt.store, ckpt.stats, samples)
    lines = [f"{s.user}\t{s.item}\t{p!r}\n" for s, p in zip(samples, scores.tolist())]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.writelines(lines)
    else:
        sys.stdout.writelines(lines)
    return 0


def cmd_ablate(args) -> int:
    base = _model_config(args)
    ds = _dataset(args)
    ds.check_ids(ds.train + ds.test)
    grid, reference = preset_grid(args.grid, base)
    table = run_ablation(grid, ds, repeats=args.repeats, reference=reference)
    print(table.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump(table.to_json(), out / f"ablation_{args.grid}.json")
        (out / f"ablation_{args.grid}.txt").write_text(table.to_text() + "\n", encoding="utf-8")
    return 0


def cmd_analyze(args) -> int:
    ds = _dataset(args)
    samples = {"train": ds.train, "test": ds.test, "all": ds.train + ds.test}[args.split]
    ds.check_ids(samples)
    cfg = _model_config(args)
    depth = args.depth if args.depth is not None else cfg.depth
    cache = SubgraphCache(ds.kg, depth, cfg.fanout_cap)
    counts = [cache.get(s.item, s.behaviors).node_count for s in samples]
    buckets = ctr_by_node_count([s.label for s in samples], counts)
    rho = bucket_spearman(buckets, min_support=args.min_support)
    print(f"{'nodes':>6}{'ctr':>9}{'support':>9}")
    for b in buckets:
        print(f"{b.node_count:>6}{b.ctr:>9.4f}{b.support:>9}")
    print(f"spearman {rho!r} (buckets with support >= {args.min_support})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ctr_by_node_count.tsv", "w", encoding="utf-8") as fh:
            fh.write("node_count\tctr\tsupport\n")
            fh.writelines(f"{b.node_count}\t{b.ctr!r}\t{b.support}\n" for b in buckets)
        with open(out / "ctr_by_node_count.dat", "w", encoding="utf-8") as fh:
            fh.write("# node_count ctr support\n")
            fh.writelines(f"{b.node_count} {b.ctr!r} {b.support}\n" for b in buckets)
        _dump({"spearman": None if np.isnan(rho) else rho, "min_support": args.min_support,
               "depth": depth, "split": args.split}, out / "analysis.json")
    return 0


# parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atbrg", description="Knowledge-graph relational CTR model toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output path")
        p.set_defaults(func=func)
        return p

    def data_flags(p, required=True):
        p.add_argument("--data", required=required, help="dataset directory")
        p.add_argument("--kg", help="KG directory (default: <data>/kg)")

    def model_flags(p):
        p.add_argument("--desk-scale", action="store_true", help="use 64/32/16 MLP widths")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--dedupe-target", action="store_true", help="drop the target item from behavior lists")

    p = command("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--spec", help="SynthSpec JSON (same as --config)")
    p.add_argument("--signal", type=float)
    p.add_argument("--signal-kind", choices=["overlap", "relation"])

    p = command("validate", cmd_validate, "check dataset files")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--kg", help="KG directory (default: <data>/kg)")

    p = command("extract", cmd_extract, "build relational subgraphs")
    data_flags(p, required=False)
    model_flags(p)
    p.add_argument("--target", type=int)
    p.add_argument("--behaviors", type=_csv_ints, default=())
    p.add_argument("--depth", type=int)
    p.add_argument("--fanout", type=int)

    p = command("train", cmd_train, "train and test one model")
    data_flags(p)
    model_flags(p)
    p.add_argument("--cache-dir", help="subgraph cache directory (see extract)")

    for name, func, text in (("eval", cmd_eval, "AUC of a checkpoint"),
                             ("predict", cmd_predict, "score samples with a checkpoint")):
        p = command(name, func, text)
        data_flags(p)
        p.add_argument("--checkpoint", required=True)
        if name == "eval":
            p.add_argument("--split", choices=["train", "test"], default="test")
        else:
            p.add_argument("--samples", help="interactions TSV (default: the test split)")

    p = command("ablate", cmd_ablate, "train a preset grid of variants")
    data_flags(p)
    model_flags(p)
    p.add_argument("--grid", choices=["ram_ral", "aggregator", "depth", "baseline"], default="ram_ral")
    p.add_argument("--repeats", type=int, default=1)

    p = command("analyze", cmd_analyze, "CTR by subgraph node count")
    data_flags(p)
    model_flags(p)
    p.add_argument("--split", choices=["train", "test", "all"], default="all")
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--min-support", type=int, default=5)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "repeats", 1) < 1:
        parser.print_usage(sys.stderr)
        print("atbrg: error: --repeats must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (AtbrgError, OSError, json.JSONDecodeError) as exc:
        print(f"atbrg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
