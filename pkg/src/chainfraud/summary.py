"""Forensic account summaries: dossiers, prompts, backends, evidence store.

A dossier is the fully pseudonymized view of one account's transaction
history (no raw identifiers survive into it). The forensic prompt renders
the dossier with a machine-readable totals block; backends turn the prompt
into a natural-language summary. Summaries are cached in a content-addressed
evidence store keyed by dossier digest + template version.
"""

from __future__ import annotations

import datetime
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Protocol

from .exceptions import ConfigError, DataError, RedactionError, RemoteBackendError
from .ingest import TransactionGraph
from .utils import atomic_write_text, sha256_hex, stable_json

TEMPLATE_VERSION = "v1"
DAY = 86_400.0

# Account identifier shapes that must never reach a prompt or summary.
DEFAULT_ID_PATTERNS = (
    r"0x[0-9a-fA-F]{6,}",                  # hex chain addresses
    r"\b(?:bc1|[13])[a-zA-Z0-9]{25,}\b",   # base58/bech32 style addresses
)

# Aggregate thresholds behind the mock analyst's rule table.
FLOW_DOMINANCE_RATIO = 10.0
PASS_THROUGH_BAND = (0.8, 1.25)
PASS_THROUGH_MIN_UNITS = 5.0
PASS_THROUGH_MAX_DAYS = 7.0
FAN_THRESHOLD = 8
BURST_MAX_DAYS = 3.0
BURST_MIN_TXS = 6
BURST_RATE = 15.0


@dataclass
class PartnerRow:
    pseudonym: str
    direction: str  # "in" | "out"
    amount_units: float
    tx_count: int
    first_ts: int
    last_ts: int


@dataclass
class AccountDossier:
    center_pseudonym: str
    rows: list[PartnerRow]
    totals: dict[str, float]
    decimals: int

    def canonical(self) -> str:
        return stable_json({
            "center": self.center_pseudonym,
            "rows": [[r.pseudonym, r.direction, f"{r.amount_units:.8f}",
                      r.tx_count, r.first_ts, r.last_ts] for r in self.rows],
            "totals": {k: f"{v:.8f}" for k, v in sorted(self.totals.items())},
        })

    def text_fields(self) -> Iterator[str]:
        yield self.center_pseudonym
        for r in self.rows:
            yield r.pseudonym


def find_identifier_leaks(text: str,
                          patterns: Iterable[str] = DEFAULT_ID_PATTERNS) -> list[str]:
    hits = []
    for pattern in patterns:
        hits.extend(re.findall(pattern, text))
    return hits


def build_dossier(graph: TransactionGraph, account: str) -> AccountDossier:
    """Pseudonymized per-partner view of one account's edges.

    Partners are renamed P01, P02, ... by descending pair amount; the raw
    ids stay only in the transient mapping and never enter the dossier.
    """
    if account not in graph.nodes:
        raise DataError(f"account {account!r} not present in the graph")
    scale = 10 ** graph.decimals

    pair_amount: dict[str, int] = {}
    for partner in graph.neighbors(account):
        total = 0
        for e in (graph.edge(account, partner), graph.edge(partner, account)):
            if e is not None:
                total += e.cum_amount
        pair_amount[partner] = total
    ordered = sorted(pair_amount, key=lambda p: (-pair_amount[p], p))
    alias = {p: f"P{i + 1:02d}" for i, p in enumerate(ordered)}

    rows: list[PartnerRow] = []
    total_in = total_out = 0
    fee_total = 0
    tx_count = 0
    first_ts, last_ts = None, None
    in_partners, out_partners = set(), set()
    for partner in ordered:
        out_edge = graph.edge(account, partner)
        in_edge = graph.edge(partner, account)
        if out_edge is not None:
            rows.append(PartnerRow(alias[partner], "out",
                                   out_edge.cum_amount / scale,
                                   out_edge.tx_count, out_edge.first_ts,
                                   out_edge.last_ts))
            total_out += out_edge.cum_amount
            fee_total += out_edge.aux_sums.get("fee", 0)
            tx_count += out_edge.tx_count
            out_partners.add(partner)
            first_ts = out_edge.first_ts if first_ts is None else min(first_ts, out_edge.first_ts)
            last_ts = out_edge.last_ts if last_ts is None else max(last_ts, out_edge.last_ts)
        if in_edge is not None:
            rows.append(PartnerRow(alias[partner], "in",
                                   in_edge.cum_amount / scale,
                                   in_edge.tx_count, in_edge.first_ts,
                                   in_edge.last_ts))
            total_in += in_edge.cum_amount
            tx_count += in_edge.tx_count
            in_partners.add(partner)
            first_ts = in_edge.first_ts if first_ts is None else min(first_ts, in_edge.first_ts)
            last_ts = in_edge.last_ts if last_ts is None else max(last_ts, in_edge.last_ts)
    self_edge = graph.edge(account, account)
    if self_edge is not None:
        rows.append(PartnerRow("SELF", "out", self_edge.cum_amount / scale,
                               self_edge.tx_count, self_edge.first_ts,
                               self_edge.last_ts))
        tx_count += self_edge.tx_count
        fee_total += self_edge.aux_sums.get("fee", 0)
        first_ts = self_edge.first_ts if first_ts is None else min(first_ts, self_edge.first_ts)
        last_ts = self_edge.last_ts if last_ts is None else max(last_ts, self_edge.last_ts)

    span_days = ((last_ts - first_ts) / DAY) if first_ts is not None else 0.0
    active = max(span_days, 1.0 / 24.0)
    totals = {
        "total_in": total_in / scale,
        "total_out": total_out / scale,
        "in_partners": float(len(in_partners)),
        "out_partners": float(len(out_partners)),
        "partners": float(len(ordered)),
        "tx_count": float(tx_count),
        "span_days": span_days,
        "txs_per_day": tx_count / active,
        "fees": fee_total / scale,
    }
    return AccountDossier(center_pseudonym="the subject account", rows=rows,
                          totals=totals, decimals=graph.decimals)


def dossier_cache_key(dossier: AccountDossier,
                      template_version: str = TEMPLATE_VERSION) -> str:
    return sha256_hex(template_version + ":" + dossier.canonical())


def build_forensic_prompt(dossier: AccountDossier,
                          template_version: str = TEMPLATE_VERSION,
                          row_budget: int = 200,
                          id_patterns: Iterable[str] = DEFAULT_ID_PATTERNS) -> str:
    """Chain-of-thought prompt for the forensic analyst over one dossier.

    Rejects dossiers that leak raw identifiers; oversized dossiers keep the
    ``row_budget`` largest-amount partner rows and embed a truncation note.
    """
    for chunk in dossier.text_fields():
        leaks = find_identifier_leaks(chunk, id_patterns)
        if leaks:
            raise RedactionError(
                f"dossier leaks raw account identifier(s): {leaks[:3]}")

    rows = sorted(dossier.rows, key=lambda r: (-r.amount_units, r.pseudonym,
                                               r.direction))
    truncated = len(rows) > row_budget
    rows = rows[:row_budget]

    lines = [
        f"[forensic-template {template_version}]",
        "You are a forensic analyst reviewing the transaction history of one",
        "blockchain account. All identifiers are pseudonymized. Work strictly",
        "from the records below; do not look up, retrieve, or rely on any",
        "external source or prior knowledge of real accounts or published",
        "fraud reports.",
        "Think step by step through four dimensions and then write a short",
        "plain-sentence summary covering each of them:",
        "1. Value flow: directions and magnitudes of transfers.",
        "2. Counterparties: how many partners, concentration, fan patterns.",
        "3. Transaction timing: activity span, bursts, dormancy.",
        "4. Fee expenditure: how much was spent on fees.",
        "",
        "Totals:",
    ]
    for key in sorted(dossier.totals):
        lines.append(f"  {key}={dossier.totals[key]:.8f}")
    lines.append("Partner rows (pseudonymized, descending amount):")
    for r in rows:
        lines.append(f"  {r.pseudonym} {r.direction} {r.amount_units:.8f} units "
                     f"over {r.tx_count} txs between {r.first_ts} and {r.last_ts}")
    if truncated:
        lines.append(f"  [note: partner rows truncated to the {row_budget} "
                     "largest amounts]")
    return "\n".join(lines)


SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in SENTENCE_RE.split(text.strip()) if s.strip()]


@dataclass
class TransactionSummary:
    account: str
    text: str
    sentences: list[str]
    backend_tag: str
    cache_key: str


@dataclass
class BackendResult:
    text: str
    token_logprobs: Optional[list[float]] = None


class SummarizerBackend(Protocol):
    tag: str

    def complete(self, prompt: str) -> BackendResult: ...


def _parse_totals(prompt: str) -> dict[str, float]:
    totals = {}
    in_block = False
    for line in prompt.splitlines():
        if line.strip() == "Totals:":
            in_block = True
            continue
        if in_block:
            m = re.match(r"\s+(\w+)=([-0-9.]+)$", line)
            if not m:
                break
            totals[m.group(1)] = float(m.group(2))
    return totals


class MockSummarizer:
    """Deterministic rule-based analyst; reads the prompt's totals block.

    Stands in for the remote model so the full pipeline runs offline. The
    rule set mirrors the analysis dimensions of the forensic prompt.
    """

    tag = "mock"

    def complete(self, prompt: str) -> BackendResult:
        t = _parse_totals(prompt)
        if not t:
            raise DataError("mock summarizer: prompt carries no totals block")
        sentences = []

        total_in, total_out = t.get("total_in", 0.0), t.get("total_out", 0.0)
        span = t.get("span_days", 0.0)
        if total_out > FLOW_DOMINANCE_RATIO * total_in:
            sentences.append(
                f"Value flow shows net outflow dominance with {total_out:.2f} "
                f"units sent against {total_in:.2f} received.")
        elif total_in > FLOW_DOMINANCE_RATIO * total_out:
            sentences.append(
                f"Value flow shows net inflow accumulation with {total_in:.2f} "
                f"units received against {total_out:.2f} sent.")
        elif (total_in >= PASS_THROUGH_MIN_UNITS
              and PASS_THROUGH_BAND[0] <= total_out / max(total_in, 1e-9)
              <= PASS_THROUGH_BAND[1]
              and span <= PASS_THROUGH_MAX_DAYS):
            sentences.append(
                f"The account received and forwarded comparable totals of "
                f"{total_in:.2f} units within days, a pass-through relay pattern.")
        else:
            sentences.append(
                f"Value flow is balanced with {total_in:.2f} units received "
                f"and {total_out:.2f} sent.")

        in_p, out_p = int(t.get("in_partners", 0)), int(t.get("out_partners", 0))
        if in_p >= FAN_THRESHOLD:
            sentences.append(f"Funds were collected from {in_p} distinct source "
                             "accounts in a fan-in pattern.")
        if out_p >= FAN_THRESHOLD:
            sentences.append(f"Funds were dispersed to {out_p} distinct "
                             "destination accounts in a fan-out pattern.")
        if in_p < FAN_THRESHOLD and out_p < FAN_THRESHOLD:
            sentences.append(f"The account transacted with "
                             f"{int(t.get('partners', 0))} counterparties overall.")

        txs = t.get("tx_count", 0.0)
        rate = t.get("txs_per_day", 0.0)
        if (span <= BURST_MAX_DAYS and txs >= BURST_MIN_TXS) or rate >= BURST_RATE:
            sentences.append(
                f"Transaction timing shows a high-frequency burst of {int(txs)} "
                "transfers within a short window.")
        else:
            sentences.append(f"Activity is spread across {span:.1f} days at a "
                             "steady pace.")

        fees = t.get("fees", 0.0)
        if fees > 0:
            sentences.append(f"Fee expenditure totalled {fees:.4f} units.")
        else:
            sentences.append("No fee expenditure was recorded.")

        return BackendResult(text=" ".join(sentences))


@dataclass(frozen=True)
class RemoteConfig:
    url: str
    model: str = "analyst-default"
    max_tokens: int = 512
    temperature: float = 0.0
    logprobs: bool = True
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    token_env_var: str = "CHAINFRAUD_API_TOKEN"


class RemoteSummarizer:
    """HTTP client for a remote analyst endpoint.

    POSTs {model, prompt, max_tokens, temperature, logprobs} as JSON and
    expects {text, token_logprobs?} back. Retries transient failures with
    exponential backoff; the final error carries the attempt count.
    """

    tag = "remote"

    def __init__(self, config: RemoteConfig, session=None):
        import requests

        self.config = config
        self.session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        token = os.environ.get(self.config.token_env_var, "")
        headers = {"Content-Type": "application/json"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, prompt: str) -> BackendResult:
        import requests

        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": self.config.max_tokens,
            "temperature": self.config.temperature,
            "logprobs": self.config.logprobs,
        }
        attempts = 0
        last_error = "unknown"
        while attempts <= self.config.max_retries:
            attempts += 1
            try:
                resp = self.session.post(self.config.url, json=payload,
                                         headers=self._headers(),
                                         timeout=self.config.timeout)
            except requests.RequestException as exc:
                last_error = f"transport: {exc}"
            else:
                if resp.status_code >= 500:
                    last_error = f"server error {resp.status_code}"
                elif resp.status_code >= 400:
                    raise RemoteBackendError(
                        f"remote summarizer rejected the request "
                        f"({resp.status_code}): {resp.text[:200]}",
                        attempts=attempts)
                else:
                    body = resp.json()
                    return BackendResult(text=body.get("text", ""),
                                         token_logprobs=body.get("token_logprobs"))
            if attempts <= self.config.max_retries:
                time.sleep(self.config.backoff_base * (2 ** (attempts - 1)))
        raise RemoteBackendError(
            f"remote summarizer failed after {attempts} attempts ({last_error})",
            attempts=attempts)


# -- evidence store ---------------------------------------------------------

class EvidenceStore(Protocol):
    def get(self, key: str) -> Optional[dict]: ...

    def put(self, record: dict) -> None: ...

    def iter_records(self) -> Iterator[dict]: ...


class MemoryStore:
    def __init__(self):
        self._records: dict[str, dict] = {}
        self._lock = threading.Lock()

    def get(self, key: str) -> Optional[dict]:
        return self._records.get(key)

    def put(self, record: dict) -> None:
        key = record["cache_key"]
        with self._lock:
            existing = self._records.get(key)
            if existing is not None:
                if existing["text"] != record["text"]:
                    raise DataError(f"conflicting evidence for key {key}")
                return
            self._records[key] = record

    def iter_records(self) -> Iterator[dict]:
        yield from self._records.values()


class DirectoryStore:
    """One JSON record per cache key; first write wins, identical content
    asserted on collisions. Safe under concurrent writers via atomic rename."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(path, exist_ok=True)

    def _file(self, key: str) -> str:
        return os.path.join(self.path, f"{key}.json")

    def get(self, key: str) -> Optional[dict]:
        try:
            with open(self._file(key), "r", encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None

    def put(self, record: dict) -> None:
        existing = self.get(record["cache_key"])
        if existing is not None:
            if existing["text"] != record["text"]:
                raise DataError(
                    f"conflicting evidence for key {record['cache_key']}")
            return
        atomic_write_text(self._file(record["cache_key"]),
                          json.dumps(record, sort_keys=True) + "\n")

    def iter_records(self) -> Iterator[dict]:
        for name in sorted(os.listdir(self.path)):
            if name.endswith(".json"):
                with open(os.path.join(self.path, name), encoding="utf-8") as fh:
                    yield json.load(fh)


def summary_from_record(record: dict) -> TransactionSummary:
    return TransactionSummary(account=record["account"], text=record["text"],
                              sentences=list(record["sentences"]),
                              backend_tag=record["backend_tag"],
                              cache_key=record["cache_key"])


def summarize_account(account: str, prompt: str, key: str,
                      backend: SummarizerBackend,
                      store: EvidenceStore) -> TransactionSummary:
    """Cache-first summary generation; nothing is cached on backend errors."""
    cached = store.get(key)
    if cached is not None:
        return summary_from_record(cached)
    result = backend.complete(prompt)
    text = (result.text or "").strip()
    if not text:
        raise DataError(f"backend returned empty output for account {account!r}")
    sentences = split_sentences(text)
    if not sentences:
        raise DataError(f"backend output for {account!r} has no sentences")
    record = {
        "cache_key": key,
        "account": account,
        "text": text,
        "sentences": sentences,
        "backend_tag": backend.tag,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    store.put(record)
    return summary_from_record(record)


def summarize_node(graph: TransactionGraph, account: str,
                   backend: SummarizerBackend, store: EvidenceStore,
                   template_version: str = TEMPLATE_VERSION,
                   row_budget: int = 200) -> TransactionSummary:
    dossier = build_dossier(graph, account)
    key = dossier_cache_key(dossier, template_version)
    prompt = build_forensic_prompt(dossier, template_version, row_budget)
    return summarize_account(account, prompt, key, backend, store)


def generate_summaries(graph: TransactionGraph, accounts: Iterable[str],
                       backend: SummarizerBackend, store: EvidenceStore,
                       template_version: str = TEMPLATE_VERSION,
                       row_budget: int = 200,
                       max_workers: int = 1) -> dict[str, TransactionSummary]:
    """Summaries for many accounts, optionally with bounded concurrency."""
    accounts = list(accounts)
    if max_workers <= 1:
        return {a: summarize_node(graph, a, backend, store, template_version,
                                  row_budget) for a in accounts}
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(
            lambda a: summarize_node(graph, a, backend, store,
                                     template_version, row_budget), accounts))
    return dict(zip(accounts, results))


def audit_redaction(store: EvidenceStore, prompts: Iterable[str] = (),
                    id_patterns: Iterable[str] = DEFAULT_ID_PATTERNS) -> list[str]:
    """Scan cached summary texts and the given prompts for identifier leaks.

    Returns all matched identifier strings (empty list = clean). The store's
    ``account`` index field is the lookup key, not generated content, and is
    not part of the scan."""
    leaks: list[str] = []
    for record in store.iter_records():
        leaks.extend(find_identifier_leaks(record["text"], id_patterns))
        for sentence in record["sentences"]:
            leaks.extend(find_identifier_leaks(sentence, id_patterns))
    for prompt in prompts:
        leaks.extend(find_identifier_leaks(prompt, id_patterns))
    return leaks
