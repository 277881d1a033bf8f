"""Command-line pipeline: every stage reads and writes files in a workspace
directory so stages can run as independent processes.

    chainfraud synthgen  --out ws --seed 1
    chainfraud ingest    --out ws --chain generic
    chainfraud label     --out ws
    chainfraud split     --out ws
    chainfraud subgraphs --out ws
    chainfraud summarize --out ws --backend mock
    chainfraud train     --out ws
    chainfraud infer     --out ws --nodes test
    chainfraud eval      --out ws
    chainfraud report    --out ws

Hyperparameters come from a flat key=value file passed with --config;
--seed overrides the config seed. Artifacts land under --out with standard
names; every writer goes through a temp-file rename, so failed commands
leave no partial outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .exceptions import ChainFraudError
from .ingest import (TransactionGraph, attach_labels, ingest_file, load_splits,
                     read_labels_csv, save_splits, split_dataset)
from .metrics import (ScoreSet, compute_metrics, read_scores_csv,
                      write_report_csv, write_scores_csv)
from .model import DualPathParams, TextEmbedder
from .policy import SplitPolicy
from .subgraph import (SamplingConfig, build_subgraph, load_subgraphs,
                       save_subgraphs)
from .summary import (DirectoryStore, MockSummarizer, RemoteConfig,
                      RemoteSummarizer, generate_summaries, summary_from_record)
from .synth import SynthConfig, generate_transactions, write_transactions_jsonl
from .train import (TrainConfig, alternate_train, build_training_data,
                    predict_nodes, subgraph_node_universe, write_training_log)
from .utils import atomic_write_text

# standard artifact names inside the workspace
TRANSACTIONS = "transactions.jsonl"
LABELS = "labels.csv"
GRAPH = "graph.json"
SPLITS = "splits.json"
SUBGRAPHS = "subgraphs.jsonl"
EVIDENCE = "evidence"
MODEL = "model.ckpt"
POLICY = "policy.json"
TRAIN_LOG = "train_log.jsonl"
TRAIN_META = "train_meta.json"
SCORES = "scores.csv"
REPORT = "report.csv"
CURVES = "curves.csv"


def load_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    cfg = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ChainFraudError(
                    f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def cfg_get(cfg: dict, key: str, cast, default):
    if key in cfg:
        return cast(cfg[key])
    return default


def sampling_from(cfg: dict) -> SamplingConfig:
    return SamplingConfig(
        hops=cfg_get(cfg, "hops", int, 2),
        neighbors_per_hop=cfg_get(cfg, "neighbors_per_hop", int, 10),
        compression_budget=cfg_get(cfg, "compression_budget", int, 10),
        structure_weight=cfg_get(cfg, "structure_weight", float, 2.0))


def train_from(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        outer_epochs=cfg_get(cfg, "outer_epochs", int, 2),
        inner_epochs=cfg_get(cfg, "inner_epochs", int, 10),
        lr_policy=cfg_get(cfg, "lr_policy", float, 5e-6),
        lr_gnn=cfg_get(cfg, "lr_gnn", float, 1e-3),
        ema_momentum=cfg_get(cfg, "ema_momentum", float, 0.9),
        lambda_resi=cfg_get(cfg, "lambda_resi", float, 0.05),
        lambda_orth=cfg_get(cfg, "lambda_orth", float, 0.3),
        weight_decay=cfg_get(cfg, "weight_decay", float, 0.0),
        seed=seed,
        early_stop_patience=cfg_get(cfg, "early_stop_patience", int, 5),
        hidden_dim=cfg_get(cfg, "hidden_dim", int, 64))


def backend_from(cfg: dict, name: str):
    if name == "mock":
        return MockSummarizer()
    if name == "remote":
        url = cfg.get("remote_url")
        if not url:
            raise ChainFraudError("remote backend needs remote_url in --config")
        return RemoteSummarizer(RemoteConfig(
            url=url,
            model=cfg.get("remote_model", "analyst-default"),
            max_tokens=cfg_get(cfg, "remote_max_tokens", int, 512),
            temperature=cfg_get(cfg, "remote_temperature", float, 0.0),
            timeout=cfg_get(cfg, "remote_timeout", float, 30.0),
            max_retries=cfg_get(cfg, "remote_max_retries", int, 3)))
    raise ChainFraudError(f"unknown backend {name!r}")


def ws(args, name: str) -> str:
    return os.path.join(args.out, name)


# -- subcommands ---------------------------------------------------------------

def cmd_synthgen(args, cfg):
    synth_cfg = SynthConfig(
        n_accounts=cfg_get(cfg, "n_accounts", int, 2000),
        fraud_ratio=cfg_get(cfg, "fraud_ratio", float, 0.1),
        fan_width=cfg_get(cfg, "fan_width", int, 8),
        span_days=cfg_get(cfg, "span_days", int, 180),
        seed=args.seed)
    corpus = generate_transactions(synth_cfg)
    os.makedirs(args.out, exist_ok=True)
    write_transactions_jsonl(corpus.rows, ws(args, TRANSACTIONS))
    lines = ["account,label"]
    lines += [f"{a},{corpus.labels[a]}" for a in sorted(corpus.labels)]
    atomic_write_text(ws(args, LABELS), "\n".join(lines) + "\n")
    print(f"synthgen: {len(corpus.rows)} transactions, "
          f"{sum(corpus.labels.values())} fraud / {len(corpus.labels)} accounts")
    return 0


def cmd_ingest(args, cfg):
    path = args.transactions or ws(args, TRANSACTIONS)
    graph, report = ingest_file(path, args.chain, fmt=args.format)
    graph.save(ws(args, GRAPH))
    print(f"ingest: {len(graph.nodes)} accounts, {len(graph.edges)} edges, "
          f"{report.accepted} accepted, {report.filtered_zero_amount} zero, "
          f"{report.filtered_failed} failed, {report.total_rejected} rejected")
    return 0


def cmd_label(args, cfg):
    graph = TransactionGraph.load(ws(args, GRAPH))
    labels_path = args.labels or ws(args, LABELS)
    skipped = attach_labels(graph, read_labels_csv(labels_path))
    graph.save(ws(args, GRAPH))
    print(f"label: {len(graph.labels)} attached, {skipped} skipped "
          "(accounts absent from graph)")
    return 0


def cmd_split(args, cfg):
    graph = TransactionGraph.load(ws(args, GRAPH))
    ratios = tuple(float(x) for x in args.ratios.split(","))
    splits = split_dataset(graph.labels, ratios, args.seed)
    save_splits(splits, ws(args, SPLITS))
    print(f"split: train={len(splits[0])} val={len(splits[1])} "
          f"test={len(splits[2])}")
    return 0


def cmd_subgraphs(args, cfg):
    graph = TransactionGraph.load(ws(args, GRAPH))
    sampling = sampling_from(cfg)
    centers = graph.labeled_nodes()
    subs = [build_subgraph(graph, c, sampling) for c in centers]
    save_subgraphs(subs, ws(args, SUBGRAPHS))
    sizes = [s.n_nodes for s in subs]
    print(f"subgraphs: {len(subs)} built, node counts "
          f"min={min(sizes)} max={max(sizes)}")
    return 0


def cmd_summarize(args, cfg):
    graph = TransactionGraph.load(ws(args, GRAPH))
    subgraphs = {s.center: s for s in load_subgraphs(ws(args, SUBGRAPHS))}
    backend = backend_from(cfg, args.backend)
    store = DirectoryStore(ws(args, EVIDENCE))
    universe = subgraph_node_universe(subgraphs)
    generate_summaries(graph, universe, backend, store,
                       row_budget=cfg_get(cfg, "row_budget", int, 200),
                       max_workers=cfg_get(cfg, "max_workers", int, 1))
    print(f"summarize: {len(universe)} accounts cached via {args.backend}")
    return 0


def _load_training_data(args, cfg):
    graph = TransactionGraph.load(ws(args, GRAPH))
    subgraphs = {s.center: s for s in load_subgraphs(ws(args, SUBGRAPHS))}
    store = DirectoryStore(ws(args, EVIDENCE))
    summaries = {}
    for record in store.iter_records():
        summaries[record["account"]] = summary_from_record(record)
    embedder = TextEmbedder(dim=cfg_get(cfg, "embed_dim", int, 64),
                            seed=args.seed)
    return graph, build_training_data(graph, subgraphs, summaries, embedder)


def cmd_train(args, cfg):
    graph, data = _load_training_data(args, cfg)
    splits = load_splits(ws(args, SPLITS))
    train_cfg = train_from(cfg, args.seed)
    result = alternate_train(data, splits, train_cfg)
    result.params.save(ws(args, MODEL), meta={"seed": args.seed})
    atomic_write_text(ws(args, POLICY),
                      json.dumps(result.policy.to_payload(), sort_keys=True)
                      + "\n")
    write_training_log(result.log, ws(args, TRAIN_LOG))
    meta = {"config": {k: getattr(train_cfg, k) for k in (
        "outer_epochs", "inner_epochs", "lr_policy", "lr_gnn", "ema_momentum",
        "lambda_resi", "lambda_orth", "weight_decay", "seed",
        "early_stop_patience", "hidden_dim")},
        "embed_dim": data.embedder.dim,
        "best_val_f1": result.best_val_f1,
        "best_epoch": list(result.best_epoch),
        "stopped_early": result.stopped_early}
    atomic_write_text(ws(args, TRAIN_META),
                      json.dumps(meta, sort_keys=True) + "\n")
    print(f"train: best val F1 {result.best_val_f1:.4f} at outer/inner "
          f"{result.best_epoch}, {len(result.log)} epochs logged")
    return 0


def cmd_infer(args, cfg):
    graph, data = _load_training_data(args, cfg)
    params, _ = DualPathParams.load(args.model or ws(args, MODEL))
    with open(args.policy or ws(args, POLICY), encoding="utf-8") as fh:
        policy = SplitPolicy.from_payload(json.load(fh))
    if args.nodes in ("train", "val", "test"):
        splits = load_splits(ws(args, SPLITS))
        nodes = splits[("train", "val", "test").index(args.nodes)]
    else:
        with open(args.nodes, encoding="utf-8") as fh:
            nodes = [line.strip() for line in fh if line.strip()]
    scored = predict_nodes(nodes, policy, params, data)
    entries = [(node, data.labels.get(node, 0), p) for node, p in scored]
    write_scores_csv(entries, ws(args, SCORES))
    print(f"infer: scored {len(entries)} accounts")
    return 0


def cmd_eval(args, cfg):
    scores = read_scores_csv(args.scores or ws(args, SCORES))
    report = compute_metrics(scores)
    write_report_csv(report, ws(args, REPORT))
    summary = ", ".join(f"{k}={v}" for k, v in report.to_rows()[:5])
    print(f"eval: {summary}")
    return 0


def cmd_report(args, cfg):
    rows = []
    with open(args.log or ws(args, TRAIN_LOG), encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    lines = ["timestamp,outer,inner,stage,mean_loss,mean_reward,val_f1"]
    for r in rows:
        cell = lambda v: "" if v is None else (f"{v:.6f}"
                                               if isinstance(v, float) else str(v))
        lines.append(",".join([str(r["timestamp"]), str(r["outer"]),
                               str(r["inner"]), r["stage"],
                               cell(r["mean_loss"]), cell(r["mean_reward"]),
                               cell(r["val_f1"])]))
    atomic_write_text(ws(args, CURVES), "\n".join(lines) + "\n")
    print(f"report: {len(rows)} epochs -> {ws(args, CURVES)}")
    return 0


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chainfraud",
        description="Chain-agnostic fraud account detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="workspace directory")
        p.add_argument("--config", default=None, help="flat key=value file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    p = sub.add_parser("synthgen", help="generate a synthetic labeled corpus")
    common(p)

    p = sub.add_parser("ingest", help="build the transaction graph")
    common(p)
    p.add_argument("--chain", default="generic",
                   choices=("ethereum", "bitcoin", "generic"))
    p.add_argument("--transactions", default=None)
    p.add_argument("--format", default=None, choices=("csv", "jsonl"))

    p = sub.add_parser("label", help="attach account labels to the graph")
    common(p)
    p.add_argument("--labels", default=None)

    p = sub.add_parser("split", help="stratified train/val/test split")
    common(p)
    p.add_argument("--ratios", default="0.8,0.1,0.1")

    p = sub.add_parser("subgraphs", help="sample and compress subgraphs")
    common(p)

    p = sub.add_parser("summarize", help="generate forensic summaries")
    common(p)
    p.add_argument("--backend", default="mock", choices=("mock", "remote"))

    p = sub.add_parser("train", help="two-stage alternating training")
    common(p)

    p = sub.add_parser("infer", help="score accounts with a checkpoint")
    common(p)
    p.add_argument("--nodes", default="test",
                   help="train|val|test or a file of account ids")
    p.add_argument("--model", default=None)
    p.add_argument("--policy", default=None)

    p = sub.add_parser("eval", help="metrics report from a scores file")
    common(p)
    p.add_argument("--scores", default=None)

    p = sub.add_parser("report", help="plot-ready CSV from the training log")
    common(p)
    p.add_argument("--log", default=None)

    return parser


COMMANDS = {
    "synthgen": cmd_synthgen,
    "ingest": cmd_ingest,
    "label": cmd_label,
    "split": cmd_split,
    "subgraphs": cmd_subgraphs,
    "summarize": cmd_summarize,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg_get(cfg, "seed", int, 0)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](args, cfg)
    except (ChainFraudError, OSError, ValueError, KeyError) as exc:
        print(f"chainfraud {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
