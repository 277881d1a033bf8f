import pytest

from chainfraud.ingest import split_dataset
from chainfraud.model import TextEmbedder
from chainfraud.subgraph import SamplingConfig, build_subgraph
from chainfraud.summary import MemoryStore, MockSummarizer, generate_summaries
from chainfraud.synth import SynthConfig, synthgen
from chainfraud.train import build_training_data, subgraph_node_universe


def make_corpus(n_accounts=100, fraud_ratio=0.15, seed=2, embed_dim=32,
                sampling=None):
    """Small end-to-end world: synthetic graph, subgraphs, mock summaries."""
    graph, labels = synthgen(SynthConfig(n_accounts=n_accounts,
                                         fraud_ratio=fraud_ratio, seed=seed))
    cfg = sampling or SamplingConfig()
    labeled = {a: l for a, l in labels.items() if a in graph.nodes}
    subgraphs = {a: build_subgraph(graph, a, cfg) for a in sorted(labeled)}
    store = MemoryStore()
    universe = subgraph_node_universe(subgraphs)
    summaries = generate_summaries(graph, universe, MockSummarizer(), store)
    embedder = TextEmbedder(dim=embed_dim, seed=seed)
    data = build_training_data(graph, subgraphs, summaries, embedder)
    splits = split_dataset(labeled, (0.8, 0.1, 0.1), seed=seed)
    return graph, data, splits


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus()
