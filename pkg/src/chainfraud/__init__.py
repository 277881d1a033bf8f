"""Chain-agnostic fraud account detection over blockchain transaction graphs."""

from .estimator import FraudAccountDetector
from .ingest import (EdgeRecord, RawTransaction, TransactionGraph,
                     attach_labels, ingest_file, ingest_transactions,
                     split_dataset)
from .metrics import EvalReport, ScoreSet, compute_metrics
from .model import DualPathParams, TextEmbedder
from .policy import SplitPolicy, SummarySplit, remote_llm_split, split_summary
from .subgraph import (SamplingConfig, Subgraph, build_subgraph, compress_sigc,
                       sample_khop, structural_importance)
from .summary import (AccountDossier, DirectoryStore, MemoryStore,
                      MockSummarizer, RemoteConfig, RemoteSummarizer,
                      TransactionSummary, build_dossier, build_forensic_prompt,
                      summarize_account)
from .synth import SynthConfig, synthgen
from .train import (BaselineState, TrainConfig, TrainingData, alternate_train,
                    reward_from_loss, stage1_epoch, stage2_epoch,
                    update_baseline)

__version__ = "0.1.0"

__all__ = [
    "AccountDossier", "BaselineState", "DirectoryStore", "DualPathParams",
    "EdgeRecord", "EvalReport", "FraudAccountDetector", "MemoryStore",
    "MockSummarizer", "RawTransaction", "RemoteConfig", "RemoteSummarizer",
    "SamplingConfig", "ScoreSet", "SplitPolicy", "Subgraph", "SummarySplit",
    "SynthConfig", "TextEmbedder", "TrainConfig", "TrainingData",
    "TransactionGraph", "TransactionSummary", "alternate_train",
    "attach_labels", "build_dossier", "build_forensic_prompt",
    "build_subgraph", "compress_sigc", "compute_metrics", "ingest_file",
    "ingest_transactions", "remote_llm_split", "reward_from_loss",
    "sample_khop", "split_dataset", "split_summary", "stage1_epoch",
    "stage2_epoch", "structural_importance", "summarize_account", "synthgen",
    "update_baseline",
]
