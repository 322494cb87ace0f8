"""Command-line entry point: ``moe-linker <command> [flags]``.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .checkpoint import load_checkpoint
from .config import ABLATIONS, SEARCH_SPACE, RunConfig
from .data import (benchmark_stats, build_entity_catalog, load_dataset, load_stats_spec,
                   save_dataset, subsample_low_resource, validate_dataset)
from .errors import LinkerError

log = logging.getLogger("moe_linker")

SPLIT_NAMES = ("train", "valid", "test")


class UsageError(Exception):
    pass


def _dump(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = _parse_value(value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.jobs is not None:
        overrides["max_inflight"] = args.jobs
    try:
        if args.config:
            return RunConfig.load(args.config, **overrides)
        if "seed" not in overrides:
            raise UsageError("a seed is required: pass --seed or a --config that sets it")
        return RunConfig.from_dict(overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_path(cfg: RunConfig, args, name: str) -> str:
    path = getattr(args, name, None) or getattr(cfg, f"{name}_path")
    if not path:
        raise UsageError(f"no {name} file: pass --{name} or set {name}_path in the config")
    return path


def _checkpoint_config(args, cfg, model) -> RunConfig:
    """Without --config, the checkpoint's own config with the command-line overrides."""
    if args.config:
        return cfg
    over = {k: v for k, v in (("seed", args.seed), ("out_dir", args.out_dir)) if v is not None}
    return model.config.replace(**over)


def _catalog(cfg, args):
    return build_entity_catalog(_split_path(cfg, args, "catalog"))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_prepare(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    if args.synthetic:
        from .synthetic import write_benchmark_manifest
        paths = write_benchmark_manifest(args.synthetic, out)
        print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2, sort_keys=True))
        return 0
    catalog = _catalog(cfg, args)
    splits = {n: load_dataset(getattr(args, n) or getattr(cfg, f"{n}_path"), n)
              for n in SPLIT_NAMES if getattr(args, n) or getattr(cfg, f"{n}_path")}
    if not splits:
        raise UsageError("prepare needs at least one of --train/--valid/--test")
    if args.stats:
        expected = load_stats_spec(args.stats)
    elif args.benchmark:
        expected = benchmark_stats(args.benchmark)
    else:
        expected = {}
    reports = {n: validate_dataset(s, catalog, expected.get(n)) for n, s in splits.items()}
    if "total" in expected:
        reports["total"] = validate_dataset(list(splits.values()), catalog, expected["total"])
    summary = {"catalog": {"entities": len(catalog), "image_coverage": catalog.image_coverage},
               "splits": {n: r.to_json() for n, r in reports.items()}}
    if args.fraction is not None:
        if "train" not in splits:
            raise UsageError("--fraction needs a train split")
        low = subsample_low_resource(splits["train"], args.fraction, cfg.seed, cfg.subsample_rng)
        low_path = out / f"train.frac{args.fraction:g}.jsonl"
        save_dataset(low, low_path)
        summary["low_resource"] = {"fraction": args.fraction, "mentions": len(low), "path": str(low_path)}
    _dump(out / "stats_report.json", summary)
    for n, r in reports.items():
        print(f"{n:<6} mentions={r.mentions} with_image={r.mentions_with_image} "
              f"unresolved={r.unresolved_gold} {'PASS' if r.passed else 'FAIL'}")
    return 0 if all(r.passed for r in reports.values()) else 1


def cmd_enhance(args, cfg: RunConfig) -> int:
    from .dme import EnhancementCache, enhance_split
    from .kb import FixtureKb, WikidataKb
    from .llm import make_backend
    out = _out_dir(cfg)
    split = load_dataset(args.inp, args.split_name)
    kb_path = args.kb or cfg.kb_path
    kb = WikidataKb() if kb_path == "wikidata" else FixtureKb.from_file(kb_path) if kb_path else FixtureKb.packaged()
    cache_path = Path(args.cache) if args.cache else None
    cache = EnhancementCache.load(cache_path) if cache_path and cache_path.exists() else EnhancementCache()
    enhanced, report = enhance_split(split, kb, make_backend(cfg.backend_config()), cache,
                                     separator=cfg.separator, max_inflight=cfg.max_inflight,
                                     max_error_fraction=cfg.max_error_fraction)
    save_dataset(enhanced, args.out)
    if cache_path:
        cache.save(cache_path)
    info = report.to_json() | {"cache_hits": cache.hits, "cache_misses": cache.misses}
    _dump(out / "enhancement_report.json", info)
    print(json.dumps(info, sort_keys=True))
    return 0


def _train_inputs(cfg, args):
    train = load_dataset(_split_path(cfg, args, "train"), "train")
    valid = load_dataset(_split_path(cfg, args, "valid"), "valid")
    if args.fraction is not None:
        train = subsample_low_resource(train, args.fraction, cfg.seed, cfg.subsample_rng)
    return train, valid, _catalog(cfg, args)


def cmd_train(args, cfg: RunConfig) -> int:
    from .training import train
    out = _out_dir(cfg)
    train_split, valid, catalog = _train_inputs(cfg, args)
    cfg.save(out / "config.json")
    _, history = train(cfg, train_split, valid, catalog, log_path=out / "train_log.jsonl",
                       checkpoint_path=out / "model.npz")
    best = max(history, key=lambda r: r.val_mrr, default=None)
    print(f"trained {len(history)} epochs; best val MRR "
          f"{best.val_mrr:.4f} (epoch {best.epoch})" if best else "no epochs run")
    print(f"checkpoint: {out / 'model.npz'}")
    return 0


def cmd_eval(args, cfg: RunConfig | None) -> int:
    from .evaluation import evaluate_split, save_predictions
    model = load_checkpoint(args.checkpoint, cfg if args.config else None)
    cfg = _checkpoint_config(args, cfg, model)
    out = _out_dir(cfg)
    split = load_dataset(args.data or _split_path(cfg, args, args.split), args.split)
    report, preds = evaluate_split(split, _catalog(cfg, args), model, cfg)
    report.save(out / f"metrics_{args.split}.json")
    save_predictions(preds, out / f"predictions_{args.split}.jsonl")
    print(f"{args.split}: MRR {report.mrr:.4f}  H@1 {report.hits1:.4f}  H@3 {report.hits3:.4f}  "
          f"H@5 {report.hits5:.4f}  (n={report.n_mentions})")
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    from .evaluation import ablation_sweep, format_ablation_table
    out = _out_dir(cfg)
    toggles = [t.strip() for t in args.toggles.split(",") if t.strip()] if args.toggles else list(ABLATIONS)
    unknown = [t for t in toggles if t not in ABLATIONS]
    if unknown:
        raise UsageError(f"unknown toggles {unknown}; choose from {list(ABLATIONS)}")
    train_split, valid, catalog = _train_inputs(cfg, args)
    test = load_dataset(args.test or cfg.test_path, "test") if (args.test or cfg.test_path) else None
    rows = ablation_sweep(cfg, toggles, train_split, valid, catalog, eval_split=test)
    _dump(out / "ablation.json", [r.to_json() for r in rows])
    print(format_ablation_table(rows))
    return 0 if all(r.error is None for r in rows) else 1


def cmd_grid(args, cfg: RunConfig) -> int:
    from .search import grid_search, load_space
    out = _out_dir(cfg)
    space = load_space(args.space) if args.space else dict(SEARCH_SPACE)
    train_split, valid, catalog = _train_inputs(cfg, args)
    best, board = grid_search(space, cfg, train_split, valid, catalog, budget=args.budget)
    _dump(out / "leaderboard.json", [c.to_json() for c in board])
    if best is None:
        print("every candidate failed", file=sys.stderr)
        return 1
    best.save(out / "best_config.json")
    for c in board[:10]:
        print(f"{c.position:>4} {json.dumps(c.overrides, sort_keys=True)}  "
              + (f"MRR {c.mrr:.4f}" if c.error is None else f"failed: {c.error}"))
    return 0


def cmd_report(args, cfg: RunConfig | None) -> int:
    from .complexity import complexity_report, format_complexity
    from .model import build_model
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint, cfg if args.config else None)
        cfg = _checkpoint_config(args, cfg, model)
    elif cfg is not None:
        model = build_model(cfg)
    else:
        raise UsageError("report needs --checkpoint or a configuration")
    report = complexity_report(model, cfg)
    _dump(_out_dir(cfg) / "complexity.json", report)
    print(format_complexity(report))
    return 0


def cmd_gradcheck(args, cfg: RunConfig | None) -> int:
    from .gradcheck import grad_check_report
    seed = cfg.seed if cfg is not None else (args.seed or 0)
    report = grad_check_report(args.component, dim=args.dim, eps=args.eps, seed=seed,
                               length=args.length, experts=args.experts, top_k=args.top_k)
    worst = max(report.values())
    for name, err in report.items():
        print(f"  {name:<28} {err:.3e}")
    print(f"{args.component}: max relative error {worst:.3e}")
    return 0 if worst < args.tolerance else 1


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="JSON run configuration")
    shared.add_argument("--seed", type=int, help="master seed (overrides the config)")
    shared.add_argument("--out-dir", metavar="PATH", help="directory for every output file")
    shared.add_argument("--jobs", type=int, metavar="N", help="cap on parallel workers")
    shared.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    data = argparse.ArgumentParser(add_help=False)
    for name in ("train", "valid", "test", "catalog"):
        data.add_argument(f"--{name}", metavar="PATH", help=f"{name} file (overrides {name}_path)")

    p = argparse.ArgumentParser(prog="moe-linker", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", parents=[shared, data], help="validate data, build low-resource splits")
    s.add_argument("--stats", metavar="PATH", help="stats spec JSON to validate against")
    s.add_argument("--benchmark", choices=sorted(benchmark_stats()), help="validate against published counts")
    s.add_argument("--fraction", type=float, help="also write a low-resource train subsample")
    s.add_argument("--synthetic", choices=sorted(benchmark_stats()),
                   help="write a placeholder manifest with the benchmark's counts instead")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("enhance", parents=[shared], help="append LLM-ranked KB descriptions to contexts")
    s.add_argument("--in", dest="inp", required=True, metavar="PATH", help="mention file to enhance")
    s.add_argument("--out", required=True, metavar="PATH", help="enhanced mention file")
    s.add_argument("--split-name", default="train", choices=SPLIT_NAMES)
    s.add_argument("--kb", metavar="PATH", help="KB fixture file, or 'wikidata' for the live service")
    s.add_argument("--cache", metavar="PATH", help="selection cache file (read and updated)")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("train", parents=[shared, data], help="train and checkpoint a model")
    s.add_argument("--fraction", type=float, help="train on a low-resource subsample")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[shared, data], help="rank the catalog for one split")
    s.add_argument("--checkpoint", required=True, metavar="PATH")
    s.add_argument("--split", default="test", choices=SPLIT_NAMES)
    s.add_argument("--data", metavar="PATH", help="mention file to evaluate (defaults to the split's path)")
    s.set_defaults(func=cmd_eval, config_optional=True)

    s = sub.add_parser("ablate", parents=[shared, data], help="train and score ablated variants")
    s.add_argument("--toggles", metavar="CSV", help=f"comma-separated subset of: {', '.join(ABLATIONS)}")
    s.add_argument("--fraction", type=float, help="train on a low-resource subsample")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("grid", parents=[shared, data], help="grid search over hyperparameters")
    s.add_argument("--space", metavar="PATH", help="JSON {name: [values]}; defaults to the full lattice")
    s.add_argument("--budget", type=int, help="maximum number of candidates to train")
    s.add_argument("--fraction", type=float, help="train on a low-resource subsample")
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("report", parents=[shared], help="parameter and FLOP counts")
    s.add_argument("--checkpoint", metavar="PATH")
    s.set_defaults(func=cmd_report, config_optional=True)

    s = sub.add_parser("gradcheck", parents=[shared], help="finite-difference gradient check")
    s.add_argument("--component", required=True,
                   choices=("projection", "coarse_match", "fine_match", "gated_fuse", "contrastive_loss", "smoe"))
    s.add_argument("--dim", type=int, default=4)
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--length", type=int, default=3, help="rows per token/patch matrix")
    s.add_argument("--experts", type=int, default=2)
    s.add_argument("--top-k", type=int, default=2)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck, config_optional=True)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        optional = getattr(args, "config_optional", False)
        cfg = _config(args) if (args.config or args.seed is not None or not optional) else None
        if args.jobs is not None:
            if args.jobs < 1:
                raise UsageError("--jobs must be >= 1")
            torch.set_num_threads(args.jobs)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (LinkerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
