"""Command-line front end.

Subcommands: prepare, train, evaluate, sweep, report, export-embeddings,
synth. Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import sys

import numpy as np

from .blocks import ACTIVATIONS, BIAS_KINDS, RESIDUALS, BlockConfig
from .config import ConfigError, as_bool, as_float, as_int, as_str, load_config
from .container import ContainerError, load_container, save_container
from .data import (
    DataError,
    SynthSpec,
    arrays_to_sequences,
    build_sequences,
    ingest,
    sample_negatives,
    sequences_to_arrays,
    split_leave_last,
    synth_generate,
    train_chains,
    write_canonical,
)
from .metrics import EvalReport, MetricError, evaluate_ranking, evaluate_recall
from .model import HEADS, ModelConfig, ModelError, final_states, init_model
from .reference import ReferenceTable
from .report import embedding_norm_stats, render_report
from .training import TrainConfig, TrainError, load_checkpoint, save_checkpoint, train

MODEL_KEYS = {
    "model.dim", "model.blocks", "model.heads", "model.max_len",
    "model.activation", "model.bias", "model.feature_interaction",
    "model.residual", "model.head", "model.tie_output", "model.ffn_hidden",
    "model.behavior_tokens", "model.side_info", "model.time_buckets",
}
TRAIN_KEYS = {
    "train.lr", "train.batch_size", "train.epochs", "train.seed",
    "train.grad_clip_norm", "train.weight_decay", "train.lr_schedule",
    "train.sampled_negatives", "train.negative_ratio",
}
GRID_AXES = ("activation", "bias", "blocks", "dim", "feature_interaction",
             "head", "heads", "max_len", "negative_ratio", "residual")
SWEEP_KEYS = (MODEL_KEYS | TRAIN_KEYS | {"sweep.seeds", "sweep.max_points"}
              | {f"grid.{axis}" for axis in GRID_AXES})


# -- shared plumbing ---------------------------------------------------------

def _load_cache(path):
    arrays, meta = load_container(path)
    if meta.get("kind") != "sequence-cache":
        raise ContainerError(f"{path}: not a prepared-sequence cache")
    seqs = arrays_to_sequences(arrays, meta["user_ids"])
    return seqs, meta


def _trim(seqs, length):
    """Keep each user's most recent ``length`` positions (left-padded input)."""
    if length == seqs[0].items.shape[0]:
        return seqs
    out = []
    for s in seqs:
        out.append(dataclasses.replace(
            s,
            items=s.items[-length:], behaviors=s.behaviors[-length:],
            timestamps=s.timestamps[-length:],
            labels=None if s.labels is None else s.labels[-length:],
            attrs=None if s.attrs is None else s.attrs[-length:],
            domains=None if s.domains is None else s.domains[-length:],
        ))
    return out


def _model_config(cfg: dict, meta) -> ModelConfig:
    n = meta["max_len"]
    max_len = as_int(cfg, "model.max_len", n)
    if not 3 <= max_len <= n:
        raise ConfigError(f"model.max_len must be in [3, {n}] for this cache")
    dim = as_int(cfg, "model.dim", 32)
    block = BlockConfig(
        heads=as_int(cfg, "model.heads", 2),
        activation=as_str(cfg, "model.activation", "silu", choices=ACTIVATIONS),
        bias_kind=as_str(cfg, "model.bias", "rel_pos_time", choices=BIAS_KINDS),
        feature_interaction=as_bool(cfg, "model.feature_interaction", True),
        residual=as_str(cfg, "model.residual", "hstu", choices=RESIDUALS),
        ffn_hidden=as_int(cfg, "model.ffn_hidden", 2 * dim),
        time_buckets=as_int(cfg, "model.time_buckets", 128),
    )
    behavior_tokens = as_bool(cfg, "model.behavior_tokens", False)
    side_info = as_bool(cfg, "model.side_info", False)
    if side_info and not meta.get("attr_vocab_sizes"):
        raise ConfigError("model.side_info = true but cache has no item attributes")
    return ModelConfig(
        vocab=meta["num_items"],
        dim=dim,
        blocks=as_int(cfg, "model.blocks", 2),
        max_len=max_len,
        task=meta["task"],
        head=as_str(cfg, "model.head", "dot", choices=HEADS),
        tie_output=as_bool(cfg, "model.tie_output", True),
        side_info=side_info,
        behavior_tokens=behavior_tokens,
        behavior_vocab=meta["num_behaviors"] if behavior_tokens else 0,
        side_attr_vocabs=tuple(meta.get("attr_vocab_sizes", ())) if side_info else (),
        block=block,
    )


def _train_config(cfg: dict) -> TrainConfig:
    sampled = as_int(cfg, "train.sampled_negatives", None)
    return TrainConfig(
        lr=as_float(cfg, "train.lr", 1e-3),
        batch_size=as_int(cfg, "train.batch_size", 512),
        epochs=as_int(cfg, "train.epochs", 5),
        seed=as_int(cfg, "train.seed", 0),
        grad_clip_norm=as_float(cfg, "train.grad_clip_norm", 1.0),
        weight_decay=as_float(cfg, "train.weight_decay", 0.0),
        lr_schedule=as_str(cfg, "train.lr_schedule", "none", choices=("none", "cosine")),
        sampled_negatives=sampled,
    )


def _build_chains(seqs, model_cfg, cfg):
    seqs = _trim(seqs, model_cfg.max_len)
    chains = train_chains(seqs)
    ratio = as_float(cfg, "train.negative_ratio", 1.0)
    if ratio != 1.0:
        if model_cfg.task != "ranking":
            raise ConfigError("train.negative_ratio applies to the ranking task only")
        rng = np.random.default_rng(as_int(cfg, "train.seed", 0))
        chains = [sample_negatives(c, ratio, rng) for c in chains]
    return [c for c in chains if c.length > 0]


def _train_one(seqs, meta, cfg, log_stream=None):
    model_cfg = _model_config(cfg, meta)
    train_cfg = _train_config(cfg)
    chains = _build_chains(seqs, model_cfg, cfg)
    model = init_model(model_cfg, seed=train_cfg.seed)
    history = train(model, chains, train_cfg, log_stream=log_stream)
    return model, history


def _evaluate_model(model, seqs, ks=(10, 50)):
    seqs = _trim(seqs, model.cfg.max_len)
    _, test = split_leave_last(seqs)
    if model.cfg.task == "ranking":
        return evaluate_ranking(model, test)
    return evaluate_recall(model, test, ks=ks)


def _report_rows(path, variant, dataset, model, seed, metrics):
    rep = EvalReport()
    rep.add(variant, model.cfg.task, dataset, model.cfg.blocks, model.cfg.dim,
            model.cfg.block.heads, seed, metrics)
    rep.write_csv(path, append=True)


# -- subcommands -------------------------------------------------------------

def cmd_prepare(args):
    log = ingest(args.input, args.format)
    seqs, dropped = build_sequences(log, args.max_len, task=args.task,
                                    min_events=args.min_events)
    if not seqs:
        raise DataError("no users left after filtering")
    users = len(seqs)
    items = log.num_items
    events = len(log.events)
    meta = {
        "kind": "sequence-cache",
        "task": args.task,
        "max_len": args.max_len,
        "dataset": args.dataset or "default",
        "user_ids": [s.user_id for s in seqs],
        "num_items": items,
        "num_behaviors": len(log.behavior_vocab),
        "num_domains": len(log.domain_vocab),
        "attr_vocab_sizes": list(log.attr_vocab_sizes),
        "events": events,
        "dropped_users": dropped,
    }
    save_container(args.out, sequences_to_arrays(seqs), meta)
    density = events / (users * items) if users and items else 0.0
    print(f"users={users} items={items} events={events} density={density:.6f} "
          f"dropped={dropped}")
    return 0


def cmd_synth(args):
    spec = SynthSpec(users=args.users, items=args.items, min_len=args.min_len,
                     max_len=args.max_len, rule=args.rule,
                     markov_noise=args.markov_noise, gap_levels=args.gap_levels,
                     cluster_size=args.cluster_size)
    log = synth_generate(spec, seed=args.seed)
    write_canonical(log, args.out)
    if args.truth_out:
        with open(args.truth_out, "w", encoding="utf-8") as fh:
            json.dump(log.truth, fh, sort_keys=True)
    print(f"rule={args.rule} users={args.users} events={len(log.events)} out={args.out}")
    return 0


def cmd_train(args):
    seqs, meta = _load_cache(args.cache)
    cfg = load_config(args.config, valid_keys=MODEL_KEYS | TRAIN_KEYS)
    model, history = _train_one(seqs, meta, cfg, log_stream=sys.stdout)
    save_checkpoint(model, args.out)
    print(f"checkpoint={args.out} params={model.param_count()} "
          f"epochs={len(history.records)}")
    return 0


def cmd_evaluate(args):
    seqs, meta = _load_cache(args.cache)
    model = load_checkpoint(args.checkpoint)
    if model.cfg.task != meta["task"]:
        raise ContainerError(
            f"checkpoint task {model.cfg.task!r} does not match cache task {meta['task']!r}")
    metrics = _evaluate_model(model, seqs)
    dataset = args.dataset or meta["dataset"]
    _report_rows(args.report, args.variant, dataset, model, args.seed, metrics)
    for name in sorted(metrics):
        print(f"{name}={metrics[name]:.6f}")
    return 0


def _parse_grid_values(axis, raw):
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"grid.{axis}: empty value list")
    if axis in ("blocks", "dim", "heads", "max_len"):
        return sorted(int(v) for v in values)
    if axis == "negative_ratio":
        return sorted(float(v) for v in values)
    return sorted(values)


def cmd_sweep(args):
    seqs, meta = _load_cache(args.cache)
    cfg = load_config(args.config, valid_keys=SWEEP_KEYS)
    axes = sorted(k[len("grid."):] for k in cfg if k.startswith("grid."))
    if not axes:
        raise ConfigError("sweep config needs at least one grid.<axis> key")
    grid = [(axis, _parse_grid_values(axis, cfg[f"grid.{axis}"])) for axis in axes]
    seeds = [int(s) for s in cfg.get("sweep.seeds", "0").split(",")]
    max_points = as_int(cfg, "sweep.max_points", 64)
    points = list(itertools.product(*(values for _, values in grid)))
    total = len(points) * len(seeds)
    if total > max_points:
        raise ConfigError(
            f"sweep has {total} runs (grid {len(points)} x seeds {len(seeds)}), "
            f"budget sweep.max_points = {max_points}")

    completed = set()
    try:
        for row in EvalReport.read_csv(args.report):
            completed.add((row[0], row[6]))  # (variant, seed)
    except FileNotFoundError:
        pass

    base = {k: v for k, v in cfg.items()
            if not k.startswith(("grid.", "sweep.")) and k != "train.seed"}
    dataset = args.dataset or meta["dataset"]
    for point in points:
        overrides = dict(zip(axes, point))
        variant = "|".join(f"{axis}={overrides[axis]}" for axis in axes)
        for seed in seeds:
            if (variant, seed) in completed:
                continue
            point_cfg = dict(base)
            for axis, value in overrides.items():
                key = f"train.{axis}" if axis == "negative_ratio" else f"model.{axis}"
                point_cfg[key] = str(value)
            point_cfg["train.seed"] = str(seed)
            model, _ = _train_one(seqs, meta, point_cfg)
            metrics = _evaluate_model(model, seqs)
            _report_rows(args.report, variant, dataset, model, seed, metrics)
            print(f"done {variant} seed={seed}")
    return 0


def cmd_report(args):
    rows = []
    for path in args.csv:
        rows.extend(EvalReport.read_csv(path))
    embeddings = None
    if args.embeddings:
        with open(args.embeddings, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            embeddings = np.asarray([[float(v) for v in row[1:]] for row in reader])
    reference = ReferenceTable() if args.reference else None
    sys.stdout.write(render_report(rows, embeddings=embeddings, reference=reference,
                                   ld_metric=args.ld_metric))
    return 0


def cmd_export_embeddings(args):
    seqs, meta = _load_cache(args.cache)
    model = load_checkpoint(args.checkpoint)
    seqs = _trim(seqs, model.cfg.max_len)
    if args.sample > len(seqs):
        raise DataError(f"sample {args.sample} exceeds {len(seqs)} users")
    rng = np.random.default_rng(args.seed)
    idx = sorted(rng.choice(len(seqs), size=args.sample, replace=False).tolist())
    chosen = [seqs[i] for i in idx]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id"] + [f"dim_{j}" for j in range(model.cfg.dim)])
        if chosen:
            states = final_states(model, chosen)
            for seq, vec in zip(chosen, states):
                writer.writerow([seq.user_id] + [f"{v:.8e}" for v in vec])
    print(f"exported {len(chosen)} users to {args.out}")
    return 0


# -- argument parsing --------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="recscale",
                                description="Sequence-transduction recommender lab.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="ingest raw interactions into a sequence cache")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", required=True, choices=["canonical_csv", "movielens_dat"])
    sp.add_argument("--max-len", type=int, default=50)
    sp.add_argument("--task", choices=["recall", "ranking"], default="recall")
    sp.add_argument("--min-events", type=int, default=3)
    sp.add_argument("--dataset", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("synth", help="generate planted-structure synthetic data")
    sp.add_argument("--rule", required=True,
                    choices=["markov_items", "time_gap_dependent", "logistic_ranking"])
    sp.add_argument("--users", type=int, default=100)
    sp.add_argument("--items", type=int, default=50)
    sp.add_argument("--min-len", type=int, default=5)
    sp.add_argument("--max-len", type=int, default=20)
    sp.add_argument("--markov-noise", type=float, default=0.0)
    sp.add_argument("--gap-levels", type=int, default=4)
    sp.add_argument("--cluster-size", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth-out", default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train one variant from a config file")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="evaluate a checkpoint, append to report CSV")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--variant", default="default")
    sp.add_argument("--dataset", default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="run a config-defined grid, resumable")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--dataset", default=None)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="summarize result CSVs")
    sp.add_argument("--csv", nargs="+", required=True)
    sp.add_argument("--embeddings", default=None)
    sp.add_argument("--reference", action="store_true",
                    help="show published full-scale values side by side")
    sp.add_argument("--ld-metric", default="hr@10")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("export-embeddings", help="dump sampled user states as CSV")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--sample", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ContainerError, MetricError, ModelError, TrainError,
            OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
