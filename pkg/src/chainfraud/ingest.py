"""Transaction ingestion: parse per-chain records into one labeled transaction graph.

Amounts are carried internally as integer base units (wei, satoshi, or a
fixed 1e8 scale for the generic schema) so aggregation sums never drift.
Zero-amount and failed transactions are dropped before graph construction,
and parallel transfers between the same ordered account pair collapse into
a single edge with cumulative amount/count and min/max timestamps.
"""

from __future__ import annotations

import csv
import json
import os
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Iterable, Iterator, Optional, Sequence

from .exceptions import ConfigError, DataError
from .utils import atomic_write_text

GRAPH_FORMAT = "chainfraud-graph"
GRAPH_VERSION = 1

# Scale applied to decimal amounts of the "generic" schema.
GENERIC_DECIMALS = 8

LABEL_FRAUD = 1
LABEL_BENIGN = 0


class RecordError(ValueError):
    """A single malformed input row; carries a short machine-readable reason."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class ChainSchema:
    """Column layout of one chain's transaction export."""

    tag: str
    decimals: int
    amount_col: str
    fee_col: str
    aux_cols: tuple[str, ...] = ()
    scaled_decimal: bool = False  # amount column is a decimal in native units


CHAIN_SCHEMAS: dict[str, ChainSchema] = {
    "ethereum": ChainSchema("ethereum", 18, "value_wei", "gas_fee"),
    "bitcoin": ChainSchema("bitcoin", 8, "value_sat", "fee_sat",
                           aux_cols=("input_count", "output_count")),
    "generic": ChainSchema("generic", GENERIC_DECIMALS, "amount", "fee",
                           scaled_decimal=True),
}


def get_schema(chain: str) -> ChainSchema:
    try:
        return CHAIN_SCHEMAS[chain]
    except KeyError:
        raise ConfigError(
            f"unknown chain tag {chain!r}; expected one of {sorted(CHAIN_SCHEMAS)}"
        ) from None


@dataclass
class RawTransaction:
    """One transfer, already normalized to integer base units."""

    chain_id: str
    tx_id: str
    from_account: str
    to_account: str
    amount: int
    timestamp: int
    fee: int = 0
    status: str = "success"
    aux: dict[str, int] = field(default_factory=dict)


@dataclass
class EdgeRecord:
    """All transfers of one ordered (src, dst) pair, aggregated."""

    src: str
    dst: str
    cum_amount: int
    tx_count: int
    first_ts: int
    last_ts: int
    aux_sums: dict[str, int] = field(default_factory=dict)


@dataclass
class IngestReport:
    accepted: int = 0
    filtered_zero_amount: int = 0
    filtered_failed: int = 0
    rejected: Counter = field(default_factory=Counter)

    @property
    def total_rejected(self) -> int:
        return sum(self.rejected.values())


def _to_int(value, reason: str) -> int:
    try:
        if isinstance(value, bool):
            raise ValueError
        if isinstance(value, float):
            if not value.is_integer():
                raise ValueError
            return int(value)
        return int(str(value).strip())
    except (TypeError, ValueError):
        raise RecordError(reason) from None


def _scaled_amount(value, decimals: int, reason: str) -> int:
    try:
        quantum = Decimal(1).scaleb(-decimals)
        scaled = Decimal(str(value).strip()) / quantum
    except (InvalidOperation, TypeError):
        raise RecordError(reason) from None
    if scaled != scaled.to_integral_value():
        raise RecordError(reason)
    return int(scaled)


def parse_transaction(row: dict, schema: ChainSchema) -> RawTransaction:
    """Normalize one raw row into a RawTransaction; RecordError on bad rows."""
    src = str(row.get("from", "") or "").strip()
    dst = str(row.get("to", "") or "").strip()
    if not src or not dst:
        raise RecordError("missing_account")

    raw_amount = row.get(schema.amount_col)
    if raw_amount is None or raw_amount == "":
        raise RecordError("missing_amount")
    if schema.scaled_decimal:
        amount = _scaled_amount(raw_amount, schema.decimals, "bad_amount")
    else:
        amount = _to_int(raw_amount, "bad_amount")
    if amount < 0:
        raise RecordError("negative_amount")

    timestamp = _to_int(row.get("timestamp"), "bad_timestamp")
    if timestamp < 0:
        raise RecordError("bad_timestamp")

    fee_raw = row.get(schema.fee_col)
    if fee_raw in (None, ""):
        fee = 0
    elif schema.scaled_decimal:
        fee = _scaled_amount(fee_raw, schema.decimals, "bad_fee")
    else:
        fee = _to_int(fee_raw, "bad_fee")
    if fee < 0:
        raise RecordError("bad_fee")

    status = str(row.get("status", "success") or "success").strip().lower()
    if status not in ("success", "failed"):
        raise RecordError("bad_status")

    aux = {}
    for col in schema.aux_cols:
        if row.get(col) not in (None, ""):
            aux[col] = _to_int(row.get(col), f"bad_{col}")

    return RawTransaction(
        chain_id=schema.tag,
        tx_id=str(row.get("tx_id", "") or ""),
        from_account=src,
        to_account=dst,
        amount=amount,
        timestamp=timestamp,
        fee=fee,
        status=status,
        aux=aux,
    )


class TransactionGraph:
    """Directed transaction graph with one aggregated edge per account pair.

    Immutable once built apart from label attachment; all derived indices
    are sorted so that iteration order never depends on input order.
    """

    def __init__(self, edges: Iterable[EdgeRecord], chain: str = "generic",
                 decimals: Optional[int] = None,
                 labels: Optional[dict[str, int]] = None):
        self.chain = chain
        self.decimals = decimals if decimals is not None else get_schema(chain).decimals
        self.edges: dict[tuple[str, str], EdgeRecord] = {}
        for rec in edges:
            key = (rec.src, rec.dst)
            if key in self.edges:
                raise DataError(f"duplicate edge record for {key}")
            self.edges[key] = rec
        nodes = set()
        for src, dst in self.edges:
            nodes.add(src)
            nodes.add(dst)
        self.nodes: frozenset[str] = frozenset(nodes)
        self.ordered_nodes: list[str] = sorted(nodes)
        self.out_index: dict[str, list[str]] = {n: [] for n in self.ordered_nodes}
        self.in_index: dict[str, list[str]] = {n: [] for n in self.ordered_nodes}
        for src, dst in sorted(self.edges):
            self.out_index[src].append(dst)
            self.in_index[dst].append(src)
        self.labels: dict[str, int] = {}
        if labels:
            for account, label in labels.items():
                if account in self.nodes:
                    self.labels[account] = int(label)

    def edge(self, src: str, dst: str) -> Optional[EdgeRecord]:
        return self.edges.get((src, dst))

    def neighbors(self, node: str) -> list[str]:
        """Sorted distinct counterparties of either direction."""
        both = set(self.out_index.get(node, ())) | set(self.in_index.get(node, ()))
        both.discard(node)
        return sorted(both)

    def labeled_nodes(self) -> list[str]:
        return sorted(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransactionGraph):
            return NotImplemented
        return (self.chain == other.chain
                and self.decimals == other.decimals
                and self.edges == other.edges
                and self.labels == other.labels)

    # -- persistence ------------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "format": GRAPH_FORMAT,
            "version": GRAPH_VERSION,
            "chain": self.chain,
            "decimals": self.decimals,
            "nodes": self.ordered_nodes,
            "edges": [
                [e.src, e.dst, e.cum_amount, e.tx_count, e.first_ts, e.last_ts,
                 {k: e.aux_sums[k] for k in sorted(e.aux_sums)}]
                for (_, _), e in sorted(self.edges.items())
            ],
            "labels": {k: self.labels[k] for k in sorted(self.labels)},
        }

    def save(self, path: str) -> None:
        atomic_write_text(path, json.dumps(self.to_payload(), sort_keys=True) + "\n")

    @classmethod
    def from_payload(cls, payload: dict) -> "TransactionGraph":
        if payload.get("format") != GRAPH_FORMAT:
            raise DataError(f"not a {GRAPH_FORMAT} file")
        if payload.get("version") != GRAPH_VERSION:
            raise DataError(f"unsupported graph format version {payload.get('version')!r}")
        edges = [EdgeRecord(src, dst, int(cum), int(cnt), int(first), int(last),
                            {k: int(v) for k, v in aux.items()})
                 for src, dst, cum, cnt, first, last, aux in payload["edges"]]
        graph = cls(edges, chain=payload["chain"], decimals=payload["decimals"])
        graph.labels = {str(k): int(v) for k, v in payload.get("labels", {}).items()}
        return graph

    @classmethod
    def load(cls, path: str) -> "TransactionGraph":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_payload(json.load(fh))


def ingest_transactions(records: Iterable[RawTransaction | dict], chain: str,
                        ) -> tuple[TransactionGraph, IngestReport]:
    """Aggregate a record stream into a TransactionGraph.

    Accepts parsed RawTransaction objects or raw row dicts (parsed against
    the chain schema). Malformed rows are rejected individually and counted
    in the report; zero-amount and failed transactions are filtered out.
    """
    schema = get_schema(chain)
    report = IngestReport()
    acc: dict[tuple[str, str], EdgeRecord] = {}
    for item in records:
        if isinstance(item, RawTransaction):
            tx = item
            if not tx.from_account or not tx.to_account:
                report.rejected["missing_account"] += 1
                continue
            if tx.amount < 0 or tx.timestamp < 0:
                report.rejected["bad_amount" if tx.amount < 0 else "bad_timestamp"] += 1
                continue
            if tx.status not in ("success", "failed"):
                report.rejected["bad_status"] += 1
                continue
        else:
            try:
                tx = parse_transaction(item, schema)
            except RecordError as exc:
                report.rejected[exc.reason] += 1
                continue
        if tx.status == "failed":
            report.filtered_failed += 1
            continue
        if tx.amount == 0:
            report.filtered_zero_amount += 1
            continue
        report.accepted += 1
        key = (tx.from_account, tx.to_account)
        rec = acc.get(key)
        if rec is None:
            aux = dict(tx.aux)
            if tx.fee:
                aux["fee"] = aux.get("fee", 0) + tx.fee
            acc[key] = EdgeRecord(tx.from_account, tx.to_account, tx.amount, 1,
                                  tx.timestamp, tx.timestamp, aux)
        else:
            rec.cum_amount += tx.amount
            rec.tx_count += 1
            rec.first_ts = min(rec.first_ts, tx.timestamp)
            rec.last_ts = max(rec.last_ts, tx.timestamp)
            for k, v in tx.aux.items():
                rec.aux_sums[k] = rec.aux_sums.get(k, 0) + v
            if tx.fee:
                rec.aux_sums["fee"] = rec.aux_sums.get("fee", 0) + tx.fee
    graph = TransactionGraph(acc.values(), chain=chain, decimals=schema.decimals)
    return graph, report


def iter_transaction_rows(path: str, fmt: Optional[str] = None) -> Iterator[dict]:
    """Yield raw row dicts from a .jsonl or .csv transaction export."""
    if fmt is None:
        ext = os.path.splitext(path)[1].lower()
        fmt = {".jsonl": "jsonl", ".json": "jsonl", ".csv": "csv"}.get(ext)
        if fmt is None:
            raise ConfigError(f"cannot infer format of {path!r}; pass fmt='csv' or 'jsonl'")
    if fmt == "csv":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            yield from csv.DictReader(fh)
    elif fmt == "jsonl":
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield json.loads(line)
    else:
        raise ConfigError(f"unknown transaction format {fmt!r}")


def ingest_file(path: str, chain: str, fmt: Optional[str] = None,
                ) -> tuple[TransactionGraph, IngestReport]:
    return ingest_transactions(iter_transaction_rows(path, fmt), chain)


def attach_labels(graph: TransactionGraph,
                  labels: Iterable[tuple[str, int]]) -> int:
    """Attach fraud/benign labels; returns the count of labels whose account
    is absent from the graph (skipped, never inserted).

    Conflicting duplicate labels for one account raise DataError.
    """
    skipped = 0
    for account, label in labels:
        label = int(label)
        if label not in (LABEL_BENIGN, LABEL_FRAUD):
            raise DataError(f"label for {account!r} must be 0 or 1, got {label}")
        if account not in graph.nodes:
            skipped += 1
            continue
        existing = graph.labels.get(account)
        if existing is not None and existing != label:
            raise DataError(f"conflicting labels for account {account!r}")
        graph.labels[account] = label
    return skipped


def read_labels_csv(path: str) -> Iterator[tuple[str, int]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].strip().lower() == "account":
                continue
            yield row[0].strip(), int(row[1])


def write_labels_csv(labels: dict[str, int], path: str) -> None:
    lines = ["account,label"]
    lines += [f"{acct},{labels[acct]}" for acct in sorted(labels)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def split_dataset(labels: dict[str, int], ratios: Sequence[float], seed: int,
                  ) -> tuple[list[str], list[str], list[str]]:
    """Stratified train/val/test split with floor-then-largest-remainder
    allocation per class; deterministic under a fixed seed."""
    import random

    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got sum {sum(ratios)!r}")

    by_class: dict[int, list[str]] = {}
    for node in sorted(labels):
        by_class.setdefault(labels[node], []).append(node)
    for cls, members in sorted(by_class.items()):
        if len(members) < 3:
            raise ConfigError(
                f"class {cls} has only {len(members)} labeled accounts; "
                "need at least 3 to stratify into train/val/test")

    rng = random.Random(seed)
    splits: tuple[list[str], list[str], list[str]] = ([], [], [])
    for cls in sorted(by_class):
        members = list(by_class[cls])
        rng.shuffle(members)
        n = len(members)
        counts = [int(n * r) for r in ratios]
        remainders = [n * r - c for r, c in zip(ratios, counts)]
        leftover = n - sum(counts)
        # Hand leftover slots to the largest fractional remainders,
        # ties resolved in train/val/test order.
        order = sorted(range(3), key=lambda i: (-remainders[i], i))
        for i in range(leftover):
            counts[order[i % 3]] += 1
        start = 0
        for i, c in enumerate(counts):
            splits[i].extend(members[start:start + c])
            start += c
    return splits


def save_splits(splits: tuple[list[str], list[str], list[str]], path: str) -> None:
    payload = {"train": splits[0], "val": splits[1], "test": splits[2]}
    atomic_write_text(path, json.dumps(payload, sort_keys=True) + "\n")


def load_splits(path: str) -> tuple[list[str], list[str], list[str]]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return payload["train"], payload["val"], payload["test"]
