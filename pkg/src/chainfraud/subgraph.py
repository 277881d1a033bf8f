"""Account-centered subgraphs: value-guided k-hop sampling plus
structural-importance compression.

Sampling ranks each frontier node's counterparties by the average transfer
amount over both directions and keeps the top K per hop. Compression scores
every neighbor as

    S_u = (ln(flow_in + flow_out + 1) + w * ln(deg_in + deg_out + 1)) / (hop_u + 1)

keeps the highest-scoring ``compression_budget`` neighbors, then re-adds the
nodes of a BFS shortest path from the center to each survivor so the result
stays connected.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .exceptions import ConfigError, DataError
from .ingest import EdgeRecord, TransactionGraph
from .utils import atomic_write_text


@dataclass(frozen=True)
class SamplingConfig:
    hops: int = 2
    neighbors_per_hop: int = 10
    compression_budget: int = 10
    structure_weight: float = 2.0

    def __post_init__(self):
        if self.hops < 1 or self.neighbors_per_hop < 1 or self.compression_budget < 1:
            raise ConfigError("hops, neighbors_per_hop and compression_budget must be >= 1")
        if self.structure_weight < 0:
            raise ConfigError("structure_weight must be >= 0")


@dataclass
class Subgraph:
    """A sampled neighborhood: ordered nodes, induced edges, hop distances.

    ``compressed`` records that the subgraph is the output of compress_sigc;
    scores recomputed on the reduced edge set would reshuffle the ranking, so
    re-compression trusts the flag instead of re-ranking.
    """

    center: str
    nodes: list[str]
    edges: list[EdgeRecord]
    hop: dict[str, int]
    compressed: bool = False
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._index:
            self._index = {n: i for i, n in enumerate(self.nodes)}
        if self.center not in self._index or self.hop.get(self.center) != 0:
            raise DataError("subgraph center must be a node at hop 0")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def index_of(self, node: str) -> int:
        return self._index[node]

    def adjacency(self) -> np.ndarray:
        """Boolean adjacency over the node ordering, direction dropped,
        diagonal left empty (self-edges do not add to it)."""
        n = len(self.nodes)
        a = np.zeros((n, n), dtype=bool)
        for e in self.edges:
            i, j = self._index[e.src], self._index[e.dst]
            if i != j:
                a[i, j] = True
                a[j, i] = True
        return a

    def flow_totals(self, node: str) -> tuple[int, int]:
        """(inflow, outflow) cumulative amounts of ``node`` inside the subgraph."""
        flow_in = flow_out = 0
        for e in self.edges:
            if e.dst == node:
                flow_in += e.cum_amount
            if e.src == node:
                flow_out += e.cum_amount
        return flow_in, flow_out

    def degree_totals(self, node: str) -> tuple[int, int]:
        """(in-degree, out-degree) of ``node`` inside the subgraph."""
        d_in = sum(1 for e in self.edges if e.dst == node)
        d_out = sum(1 for e in self.edges if e.src == node)
        return d_in, d_out


def _pair_stats(graph: TransactionGraph, u: str, v: str) -> tuple[int, int]:
    """(total amount, total tx count) over both directions of the pair."""
    total = count = 0
    for e in (graph.edge(u, v), graph.edge(v, u)):
        if e is not None:
            total += e.cum_amount
            count += e.tx_count
    return total, count


def _induced_edges(graph: TransactionGraph, nodes: Iterable[str]) -> list[EdgeRecord]:
    keep = set(nodes)
    out = []
    for src in sorted(keep):
        for dst in graph.out_index.get(src, ()):
            if dst in keep:
                out.append(graph.edges[(src, dst)])
    return out


def sample_khop(graph: TransactionGraph, center: str,
                cfg: SamplingConfig) -> Subgraph:
    """Expand ``cfg.hops`` hops from the center, keeping per frontier node the
    ``cfg.neighbors_per_hop`` counterparties with the highest average transfer
    amount (ties: higher total amount, then node id). Hop distances follow
    first-visit BFS order; the edge set is induced over all selected nodes.
    """
    if center not in graph.nodes:
        raise DataError(f"account {center!r} not present in the graph")

    selected = {center}
    hop = {center: 0}
    order = [center]
    frontier = [center]
    for k in range(1, cfg.hops + 1):
        next_frontier: list[str] = []
        for v in frontier:
            candidates = []
            for u in graph.neighbors(v):
                total, count = _pair_stats(graph, v, u)
                avg = total / count if count else 0.0
                candidates.append((-avg, -total, u))
            candidates.sort()
            for _, _, u in candidates[:cfg.neighbors_per_hop]:
                if u not in selected:
                    selected.add(u)
                    hop[u] = k
                    order.append(u)
                    next_frontier.append(u)
        frontier = next_frontier
        if not frontier:
            break
    return Subgraph(center, order, _induced_edges(graph, order), hop)


def structural_importance(sub: Subgraph, node: str, structure_weight: float) -> float:
    """Depth-discounted importance of a neighbor from its in/out flow and degree."""
    if node == sub.center:
        raise DataError("structural importance is defined for neighbors, not the center")
    if node not in sub.hop:
        raise DataError(f"{node!r} is not part of the subgraph")
    flow_in, flow_out = sub.flow_totals(node)
    d_in, d_out = sub.degree_totals(node)
    depth = sub.hop[node]
    return (math.log(flow_in + flow_out + 1)
            + structure_weight * math.log(d_in + d_out + 1)) / (depth + 1)


def _bfs_parents(sub: Subgraph) -> dict[str, Optional[str]]:
    """BFS tree over the undirected view, neighbors visited in node order."""
    adjacency: dict[str, list[str]] = {n: [] for n in sub.nodes}
    seen_pairs = set()
    for e in sub.edges:
        if e.src == e.dst:
            continue
        for a, b in ((e.src, e.dst), (e.dst, e.src)):
            if (a, b) not in seen_pairs:
                seen_pairs.add((a, b))
                adjacency[a].append(b)
    node_pos = {n: i for i, n in enumerate(sub.nodes)}
    for n in adjacency:
        adjacency[n].sort(key=node_pos.__getitem__)

    parents: dict[str, Optional[str]] = {sub.center: None}
    queue = deque([sub.center])
    while queue:
        v = queue.popleft()
        for u in adjacency[v]:
            if u not in parents:
                parents[u] = v
                queue.append(u)
    return parents


def compress_sigc(sub: Subgraph, cfg: SamplingConfig) -> Subgraph:
    """One-shot compression: rank neighbors by structural importance, keep the
    top ``compression_budget`` (center exempt), then restore the BFS shortest
    path to every survivor. Returns the input unchanged when already within
    budget or already compressed."""
    budget = cfg.compression_budget
    if sub.compressed or len(sub.nodes) <= budget:
        return sub

    scored = []
    for node in sub.nodes:
        if node == sub.center:
            continue
        flow_in, flow_out = sub.flow_totals(node)
        score = structural_importance(sub, node, cfg.structure_weight)
        scored.append((-score, -(flow_in + flow_out), node))
    scored.sort()
    retained = [node for _, _, node in scored[:budget]]

    parents = _bfs_parents(sub)
    keep = {sub.center}
    keep.update(retained)
    for node in retained:
        cur = parents.get(node)
        while cur is not None:
            keep.add(cur)
            cur = parents[cur]

    node_pos = {n: i for i, n in enumerate(sub.nodes)}
    nodes = sorted(keep, key=node_pos.__getitem__)
    edges = [e for e in sub.edges if e.src in keep and e.dst in keep]
    hop = {n: sub.hop[n] for n in nodes}
    return Subgraph(sub.center, nodes, edges, hop, compressed=True)


def is_connected(sub: Subgraph) -> bool:
    """True when every node is reachable from the center, ignoring direction."""
    adjacency: dict[str, set[str]] = {n: set() for n in sub.nodes}
    for e in sub.edges:
        if e.src != e.dst:
            adjacency[e.src].add(e.dst)
            adjacency[e.dst].add(e.src)
    seen = {sub.center}
    queue = deque([sub.center])
    while queue:
        v = queue.popleft()
        for u in adjacency[v]:
            if u not in seen:
                seen.add(u)
                queue.append(u)
    return len(seen) == len(sub.nodes)


def build_subgraph(graph: TransactionGraph, center: str,
                   cfg: SamplingConfig) -> Subgraph:
    """sample_khop followed by compress_sigc."""
    return compress_sigc(sample_khop(graph, center, cfg), cfg)


# -- persistence -----------------------------------------------------------

def subgraph_to_payload(sub: Subgraph) -> dict:
    return {
        "center": sub.center,
        "nodes": sub.nodes,
        "hop": {n: sub.hop[n] for n in sub.nodes},
        "compressed": sub.compressed,
        "edges": [[e.src, e.dst, e.cum_amount, e.tx_count, e.first_ts, e.last_ts,
                   {k: e.aux_sums[k] for k in sorted(e.aux_sums)}]
                  for e in sub.edges],
    }


def subgraph_from_payload(payload: dict) -> Subgraph:
    edges = [EdgeRecord(src, dst, int(cum), int(cnt), int(first), int(last),
                        {k: int(v) for k, v in aux.items()})
             for src, dst, cum, cnt, first, last, aux in payload["edges"]]
    return Subgraph(payload["center"], list(payload["nodes"]), edges,
                    {k: int(v) for k, v in payload["hop"].items()},
                    compressed=bool(payload.get("compressed", False)))


def save_subgraphs(subgraphs: Iterable[Subgraph], path: str) -> None:
    lines = [json.dumps(subgraph_to_payload(s), sort_keys=True) for s in subgraphs]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_subgraphs(path: str) -> Iterator[Subgraph]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield subgraph_from_payload(json.loads(line))
