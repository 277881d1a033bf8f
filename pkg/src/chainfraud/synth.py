"""Deterministic synthetic transaction corpus with planted fraud motifs.

Benign accounts make small, steady transfers among random partners over the
whole time span. Fraud accounts are planted inside four motifs:

* fan-in: many distinct sources pay into the account over a short collection
  window, then most of the take is forwarded to a handful of destinations;
* fan-out: a treasury account disperses large amounts to many destinations;
* relay: chains of accounts that each forward nearly everything they receive
  within minutes (chain-hop laundering);
* burst: dozens of transfers crammed into a few hours.

A small share of benign accounts are high-degree service hubs so that high
degree alone does not give the label away. Everything is driven by one seeded
RNG; identical configs produce byte-identical transaction files.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .exceptions import ConfigError
from .ingest import TransactionGraph, ingest_transactions

DAY = 86_400
UNIT = 10 ** 8  # integer base units per displayed unit (generic chain)


@dataclass(frozen=True)
class SynthConfig:
    n_accounts: int = 2000
    fraud_ratio: float = 0.1
    motif_mix: tuple[tuple[str, float], ...] = (
        ("fan_in", 0.35), ("fan_out", 0.20), ("relay", 0.25), ("burst", 0.20))
    fan_width: int = 8
    hub_ratio: float = 0.01
    benign_tx_low: int = 3
    benign_tx_high: int = 12
    span_days: int = 180
    start_ts: int = 1_700_000_000
    noise_bad_tx: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraud_ratio < 1.0:
            raise ConfigError("fraud_ratio must be in (0, 1)")
        if self.n_accounts < 20:
            raise ConfigError("need at least 20 accounts")
        if round(self.n_accounts * self.fraud_ratio) < 1:
            raise ConfigError("fraud_ratio yields zero fraud accounts")
        names = [m for m, _ in self.motif_mix]
        if set(names) - {"fan_in", "fan_out", "relay", "burst"}:
            raise ConfigError(f"unknown motif in mix: {names}")


@dataclass
class SynthCorpus:
    rows: list[dict]
    labels: dict[str, int]
    motifs: dict[str, str] = field(default_factory=dict)


def _amount(units: float) -> str:
    return f"{units:.8f}"


def _account_id(rng: random.Random) -> str:
    return "0x" + "".join(rng.choice("0123456789abcdef") for _ in range(40))


def generate_transactions(cfg: SynthConfig) -> SynthCorpus:
    rng = random.Random(cfg.seed)
    n_fraud = round(cfg.n_accounts * cfg.fraud_ratio)
    accounts = []
    seen = set()
    while len(accounts) < cfg.n_accounts:
        acct = _account_id(rng)
        if acct not in seen:
            seen.add(acct)
            accounts.append(acct)
    fraud = accounts[:n_fraud]
    benign = accounts[n_fraud:]
    n_hubs = max(1, int(len(benign) * cfg.hub_ratio))
    hubs = benign[:n_hubs]
    plain = benign[n_hubs:]

    labels = {a: 1 for a in fraud}
    labels.update({a: 0 for a in benign})

    span = cfg.span_days * DAY
    t0 = cfg.start_ts
    rows: list[dict] = []
    serial = 0

    def emit(src, dst, units, ts, status="success"):
        nonlocal serial
        serial += 1
        rows.append({
            "tx_id": f"tx{serial:07d}",
            "from": src,
            "to": dst,
            "amount": _amount(units),
            "timestamp": int(ts),
            "fee": _amount(units * 0.001),
            "status": status,
        })

    # --- benign background -------------------------------------------------
    for acct in plain:
        n_tx = rng.randint(cfg.benign_tx_low, cfg.benign_tx_high)
        partners = rng.sample(plain, min(len(plain), rng.randint(2, 5)))
        for _ in range(n_tx):
            partner = rng.choice(partners)
            if partner == acct:
                continue
            units = rng.lognormvariate(-1.5, 0.8)  # ~0.05..1.5 units
            ts = t0 + rng.randint(0, span)
            if rng.random() < 0.5:
                emit(acct, partner, units, ts)
            else:
                emit(partner, acct, units, ts)

    # --- benign service hubs: high degree, steady, balanced ----------------
    for hub in hubs:
        customers = rng.sample(plain, min(len(plain), rng.randint(20, 40)))
        for customer in customers:
            units = rng.lognormvariate(-0.5, 0.6)
            ts = t0 + rng.randint(0, span)
            emit(customer, hub, units, ts)
            refund_ts = ts + rng.randint(DAY, 20 * DAY)
            emit(hub, customer, units * rng.uniform(0.9, 1.1), refund_ts)

    # --- fraud motifs -------------------------------------------------------
    motif_names = [m for m, _ in cfg.motif_mix]
    motif_weights = [w for _, w in cfg.motif_mix]
    motifs: dict[str, str] = {}
    relay_pool: list[str] = []
    for acct in fraud:
        motifs[acct] = rng.choices(motif_names, weights=motif_weights, k=1)[0]
        if motifs[acct] == "relay":
            relay_pool.append(acct)

    for acct in fraud:
        motif = motifs[acct]
        window_start = t0 + rng.randint(0, span - 3 * DAY)
        if motif == "fan_in":
            n_sources = rng.randint(cfg.fan_width, cfg.fan_width + 8)
            sources = rng.sample(plain, n_sources)
            collected = 0.0
            for src in sources:
                for _ in range(rng.randint(1, 2)):
                    units = rng.lognormvariate(1.5, 0.7)  # ~1.5..15 units
                    collected += units
                    emit(src, acct, units, window_start + rng.randint(0, 2 * DAY))
            n_dest = rng.randint(4, 8)
            dests = rng.sample(plain, n_dest)
            forward_ts = window_start + 2 * DAY + rng.randint(600, 6 * 3600)
            share = collected * 0.9 / n_dest
            for dst in dests:
                emit(acct, dst, share * rng.uniform(0.8, 1.2),
                     forward_ts + rng.randint(0, 3600))
        elif motif == "fan_out":
            n_dest = rng.randint(cfg.fan_width + 2, cfg.fan_width + 14)
            dests = rng.sample(plain, n_dest)
            for dst in dests:
                units = rng.lognormvariate(2.0, 0.6)  # ~3..20 units
                emit(acct, dst, units, window_start + rng.randint(0, DAY))
        elif motif == "relay":
            feeder = rng.choice(plain)
            units = rng.lognormvariate(3.0, 0.5)  # ~10..50 units
            ts = window_start
            emit(feeder, acct, units, ts)
            # forward through one or two more relays before the sinks
            chain = [acct]
            others = [r for r in relay_pool if r not in chain]
            rng.shuffle(others)
            chain += others[:rng.randint(0, 2)]
            carried = units
            for i, hop in enumerate(chain):
                carried *= rng.uniform(0.95, 0.99)
                ts += rng.randint(120, 900)
                if i + 1 < len(chain):
                    emit(hop, chain[i + 1], carried, ts)
                else:
                    sinks = rng.sample(plain, rng.randint(2, 4))
                    for sink in sinks:
                        emit(hop, sink, carried / len(sinks), ts + rng.randint(60, 600))
        elif motif == "burst":
            partners = rng.sample(plain, rng.randint(3, 6))
            n_tx = rng.randint(30, 60)
            for i in range(n_tx):
                partner = rng.choice(partners)
                units = rng.lognormvariate(0.0, 0.5)
                ts = window_start + rng.randint(0, 6 * 3600)
                if i % 3 == 0:
                    emit(partner, acct, units, ts)
                else:
                    emit(acct, partner, units, ts)

    # --- malformed/filtered noise exercising the ingest rules --------------
    n_noise = int(len(rows) * cfg.noise_bad_tx)
    for i in range(n_noise):
        a, b = rng.sample(accounts, 2)
        ts = t0 + rng.randint(0, span)
        if i % 2 == 0:
            emit(a, b, 0.0, ts)
        else:
            emit(a, b, rng.lognormvariate(0.0, 1.0), ts, status="failed")

    rows.sort(key=lambda r: (r["timestamp"], r["tx_id"]))
    return SynthCorpus(rows=rows, labels=labels, motifs=motifs)


def synthgen(cfg: SynthConfig) -> tuple[TransactionGraph, dict[str, int]]:
    """Generate a corpus and ingest it into a labeled TransactionGraph."""
    corpus = generate_transactions(cfg)
    graph, _ = ingest_transactions(corpus.rows, "generic")
    graph.labels.update({a: l for a, l in corpus.labels.items() if a in graph.nodes})
    return graph, corpus.labels


def write_transactions_jsonl(rows: list[dict], path: str) -> None:
    import json

    from .utils import atomic_write_text

    atomic_write_text(path, "".join(
        json.dumps(r, sort_keys=True) + "\n" for r in rows))
