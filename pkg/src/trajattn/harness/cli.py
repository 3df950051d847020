"""``trajattn`` command line.

Every command reads an optional INI config (``--config``), writes into
``--out`` and stamps the config hash and seed into what it writes. Exit
status is 0 on success, 1 for missing or unusable inputs and 2 for bad
usage or configuration.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from ..model import EventModel
from ..simulator import EPISODE_COLUMNS, WorldSpec, write_episode_csv, write_ppm
from ..training import Dataset, evaluate, save_trained, write_metrics_csv
from .config import ConfigError, ExperimentConfig, describe
from .experiments import (
    TOY_COLUMNS, VARIANT_FLAGS, attention_overlay, collect, make_worlds, onpolicy_summary, run_onpolicy, run_toy,
    toy_csv_rows, toy_datasets, toy_summary, train_variant, worker_count,
)

OFFLINE_COLUMNS = ["checkpoint", "variant", "dataset", "head", "metric", "value", "seed", "config_hash"]


class InputError(Exception):
    """A required input file is missing or unusable."""


def _need(path: str | None, flag: str) -> Path:
    if path is None:
        raise InputError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise InputError(f"missing input file: {p}")
    return p


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> ExperimentConfig:
    if args.config is None:
        return ExperimentConfig()
    return ExperimentConfig.load(_need(args.config, "--config"))


def _load_model(path: str | None) -> tuple[EventModel, dict]:
    p = _need(path, "--checkpoint")
    try:
        return EventModel.load(p)
    except (ValueError, KeyError) as exc:
        raise InputError(f"{p}: unreadable checkpoint ({exc})") from exc


def _load_dataset(path: str) -> Dataset:
    p = _need(path, "--dataset")
    try:
        return Dataset.load(p)
    except ValueError as exc:
        raise InputError(f"{p}: unreadable dataset ({exc})") from exc


def _load_world(path: str) -> WorldSpec:
    p = _need(path, "--world")
    try:
        return WorldSpec.load(p)
    except ValueError as exc:
        raise InputError(f"{p}: unreadable world ({exc})") from exc


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- commands ---------------------------------------------------------------
def cmd_gen_world(args, cfg: ExperimentConfig) -> None:
    seed = cfg["world"]["seed"] if args.seed is None else args.seed
    train_world, test_world = make_worlds(cfg, seed)
    out = _out(args)
    for role, w in (("train", train_world), ("test", test_world)):
        path = out / f"world_{role}.bin"
        w.save(path, {"config_hash": cfg.hash(), "seed": w.seed, "role": role})
        print(f"wrote {path} ({cfg['world']['mode']}, seed {w.seed}, swapped={w.swapped})")


def cmd_collect(args, cfg: ExperimentConfig) -> None:
    world = _load_world(args.world)
    seed = cfg["world"]["collect_seed"] if args.seed is None else args.seed
    ds = collect(cfg, world, seed, args.samples)
    path = _out(args) / "dataset.bin"
    ds.save(path)
    print(f"wrote {path} ({len(ds)} samples, heads {[h.name for h in ds.heads]})")


def cmd_train(args, cfg: ExperimentConfig) -> None:
    ds = _load_dataset(args.dataset)
    if len(ds) == 0:
        raise InputError(f"{args.dataset}: dataset is empty")
    seed = 0 if args.seed is None else args.seed
    variant = VARIANT_FLAGS[args.variant] if args.variant else cfg["model"]["variant"]
    res = train_variant(cfg, ds, variant, seed, log=print if args.verbose else None)
    out = _out(args)
    save_trained(out / "model.ckpt", res, {"config_hash": cfg.hash(), "seed": seed, "config": cfg.dumps(),
                                           "dataset": str(args.dataset)})
    write_metrics_csv(out / "metrics.csv", res.rows)
    print(f"wrote {out / 'model.ckpt'} and {out / 'metrics.csv'} "
          f"(best epoch {res.best_epoch}, val accuracy {res.best_score:.4f})")


def cmd_eval_offline(args, cfg: ExperimentConfig) -> None:
    if not args.checkpoint:
        raise InputError("--checkpoint is required")
    if not args.dataset:
        raise InputError("--dataset is required")
    datasets = [(d, _load_dataset(d)) for d in args.dataset]
    for name, ds in datasets:
        if len(ds) == 0:
            raise InputError(f"{name}: dataset is empty, nothing to evaluate")
    rows = []
    for ck in args.checkpoint:
        model, meta = _load_model(ck)
        for name, ds in datasets:
            res = evaluate(model, ds, None, meta.get("cont_stats"))
            for (head, metric), v in sorted(res.items()):
                rows.append([ck, model.config.variant, name, head, metric, v, meta.get("seed", ""),
                             meta.get("config_hash", "")])
    path = _out(args) / "offline_eval.csv"
    _write_csv(path, OFFLINE_COLUMNS, rows)
    names = [n for n, _ in datasets]
    print(f"{'checkpoint':<32}{'variant':<16}" + "".join(f"{Path(n).name:>20}" for n in names))
    for ck in args.checkpoint:
        accs = {r[2]: r[5] for r in rows if r[0] == ck and r[3] == "terrain" and r[4] == "accuracy"}
        variant = next(r[1] for r in rows if r[0] == ck)
        print(f"{Path(ck).name:<32}{variant:<16}" + "".join(f"{100 * accs.get(n, float('nan')):>19.1f}%" for n in names))
    print(f"wrote {path}")


def cmd_eval_onpolicy(args, cfg: ExperimentConfig) -> None:
    if not args.world:
        raise InputError("--world is required")
    worlds = [(_load_world(w), w) for w in args.world]
    model, meta = _load_model(args.checkpoint) if args.checkpoint else (None, {})
    if args.seed is not None:
        cfg = cfg.with_overrides(evaluation={"policy_seed": args.seed})
    label = model.config.variant if model is not None else "random"
    results: dict = {label: {}}
    all_rows = []
    for i, (world, path) in enumerate(worlds):
        rows = run_onpolicy(cfg, world, model, meta.get("cont_stats"), label)
        all_rows += rows
        key = "train" if i == 0 else "test"
        results[label][key] = rows
    out = _out(args) / "episodes.csv"
    write_episode_csv(out, all_rows, append=False)
    print(onpolicy_summary(results))
    print(f"wrote {out} ({len(all_rows)} episodes, columns {','.join(EPISODE_COLUMNS)})")


def cmd_export_attention(args, cfg: ExperimentConfig) -> None:
    model, meta = _load_model(args.checkpoint)
    ds = _load_dataset(args.dataset)
    if len(ds) == 0:
        raise InputError(f"{args.dataset}: dataset is empty")
    if model.config.variant == "none":
        raise InputError(f"{args.checkpoint}: the 'none' variant has no attention masks")
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    idx = np.sort(rng.choice(len(ds), size=min(args.count, len(ds)), replace=False))
    out = _out(args)
    note = f"trajattn attention overlay\nconfig_hash={meta.get('config_hash', '')}\nseed={meta.get('seed', '')}"
    for i in idx:
        img = ds.float_images([i])[0]
        overlay = attention_overlay(model, img, ds.actions[i])
        write_ppm(out / f"attention_{i:05d}.ppm", overlay, f"{note}\nsample={i}")
        write_ppm(out / f"frame_{i:05d}.ppm", img, f"{note}\nsample={i}")
    print(f"wrote {2 * len(idx)} images to {out}")


def cmd_reproduce_toy(args, cfg: ExperimentConfig) -> None:
    if cfg["world"]["mode"] != "toy":
        cfg = cfg.with_overrides(world={"mode": "toy"})
    seeds = cfg["experiment"]["seeds"] if args.seed is None else (args.seed,)
    variants = cfg["experiment"]["variants"]
    if args.variant:
        variants = (VARIANT_FLAGS[args.variant],)
    out = _out(args)
    train_ds, test_ds = toy_datasets(cfg)
    train_ds.save(out / "toy_train.bin")
    test_ds.save(out / "toy_test.bin")
    rows = run_toy(cfg, train_ds, test_ds, seeds, variants, cfg["training"]["data_fraction"], worker_count())
    _write_csv(out / "toy_results.csv", TOY_COLUMNS, toy_csv_rows(rows, cfg.hash()))
    table = toy_summary(rows)
    (out / "summary.txt").write_text(f"config_hash={cfg.hash()}\n{table}\n", encoding="utf-8")
    print(table)
    print(f"wrote {out / 'toy_results.csv'} and {out / 'summary.txt'}")


def cmd_show_config(args, cfg: ExperimentConfig) -> None:
    print(describe() if args.config is None else cfg.dumps(), end="")


COMMANDS = {
    "gen-world": (cmd_gen_world, "generate training and test worlds"),
    "collect": (cmd_collect, "collect an off-policy dataset in a world"),
    "train": (cmd_train, "train one model variant; writes model.ckpt and metrics.csv"),
    "eval-offline": (cmd_eval_offline, "per-head accuracy of checkpoints on datasets"),
    "eval-onpolicy": (cmd_eval_onpolicy, "closed-loop episodes with the planner (or random steering without --checkpoint)"),
    "export-attention": (cmd_export_attention, "write attention overlays as PPM images"),
    "reproduce-toy": (cmd_reproduce_toy, "the full toy pipeline over the configured seeds and variants"),
    "show-config": (cmd_show_config, "print every config key with its default and meaning"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="seed for this command (see README for what it controls)")
    common.add_argument("--out", default=".", help="output directory (created if needed)")
    common.add_argument("--world", action="append", help="world file; eval-onpolicy takes train then test")
    common.add_argument("--dataset", action="append", help="dataset file; eval-offline accepts several")
    common.add_argument("--checkpoint", action="append", help="model checkpoint; eval-offline accepts several")
    common.add_argument("--variant", choices=sorted(VARIANT_FLAGS), help="attention variant")
    common.add_argument("--samples", type=int, help="collect: number of samples (overrides the config)")
    common.add_argument("--count", type=int, default=8, help="export-attention: number of samples")
    common.add_argument("--verbose", action="store_true", help="train: log every epoch")
    parser = argparse.ArgumentParser(prog="trajattn", description="trajectory-constrained attention experiments")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


_SINGLE = ("world", "dataset", "checkpoint")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in _SINGLE:
        vals = getattr(args, name)
        multi = (args.command == "eval-offline" and name in ("dataset", "checkpoint")) or \
                (args.command == "eval-onpolicy" and name == "world")
        if vals and not multi:
            if len(vals) > 1:
                print(f"trajattn {args.command}: --{name} given more than once", file=sys.stderr)
                return 2
            setattr(args, name, vals[0])
    try:
        cfg = _config(args)
        COMMANDS[args.command][0](args, cfg)
    except ConfigError as exc:
        print(f"trajattn {args.command}: {exc}", file=sys.stderr)
        return 2
    except (InputError, FileNotFoundError) as exc:
        print(f"trajattn {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
