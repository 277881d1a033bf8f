"""Sentence-selection policy splitting summaries into discriminative and
residual parts.

Each sentence is scored from a fixed, inspectable feature set (risk keyword
indicators plus length and numeral density); the policy turns the score into
an inclusion probability via a temperature-scaled sigmoid. Sampling the
per-sentence Bernoullis gives exact sequence log-probabilities, which is what
the REINFORCE stage trains against.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DataError
from .summary import BackendResult, SummarizerBackend, TransactionSummary
from .utils import sha256_hex

# Fixed keyword indicators; order defines the feature layout.
KEYWORDS = (
    "fan-in", "fan-out", "burst", "high-frequency", "pass-through", "relay",
    "dominance", "accumulation", "mixer", "dormant", "steady", "balanced",
)
FEATURE_NAMES = KEYWORDS + ("length", "numeral_density")
FEATURE_DIM = len(FEATURE_NAMES)

_LOG_EPS = 1e-12


def featurize_sentence(sentence: str) -> np.ndarray:
    lowered = sentence.lower()
    feats = np.zeros(FEATURE_DIM, dtype=np.float64)
    for i, kw in enumerate(KEYWORDS):
        if kw in lowered:
            feats[i] = 1.0
    feats[len(KEYWORDS)] = min(len(sentence) / 100.0, 3.0)
    digits = sum(c.isdigit() for c in sentence)
    feats[len(KEYWORDS) + 1] = digits / max(len(sentence), 1)
    return feats


def featurize_sentences(sentences: list[str]) -> np.ndarray:
    return np.stack([featurize_sentence(s) for s in sentences])


@dataclass
class SplitPolicy:
    weights: np.ndarray = field(
        default_factory=lambda: np.zeros(FEATURE_DIM, dtype=np.float64))
    bias: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (FEATURE_DIM,):
            raise ConfigError(
                f"policy weights must have shape ({FEATURE_DIM},), "
                f"got {self.weights.shape}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")

    def inclusion_probs(self, sentences: list[str]) -> np.ndarray:
        feats = featurize_sentences(sentences)
        z = (feats @ self.weights + self.bias) / self.temperature
        return 1.0 / (1.0 + np.exp(-z))

    def copy(self) -> "SplitPolicy":
        return SplitPolicy(self.weights.copy(), float(self.bias),
                           float(self.temperature))

    def digest(self) -> str:
        return sha256_hex(self.weights.tobytes()
                          + np.float64(self.bias).tobytes()
                          + np.float64(self.temperature).tobytes())

    def to_payload(self) -> dict:
        return {
            "feature_names": list(FEATURE_NAMES),
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "temperature": float(self.temperature),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "SplitPolicy":
        if list(payload.get("feature_names", [])) != list(FEATURE_NAMES):
            raise DataError("policy feature layout does not match this build")
        return cls(np.array(payload["weights"], dtype=np.float64),
                   float(payload["bias"]), float(payload["temperature"]))


@dataclass
class SummarySplit:
    disc_text: str
    resi_text: str
    selections: list[bool]
    logp_disc: float
    logp_resi: float


def _assemble(sentences: list[str], selections: np.ndarray,
              probs: np.ndarray) -> SummarySplit:
    if not selections.any():
        # Eq.-style BCE needs a nonempty discriminative side: promote the
        # single most likely sentence.
        selections = selections.copy()
        selections[int(np.argmax(probs))] = True
    p = np.clip(probs, _LOG_EPS, 1.0 - _LOG_EPS)
    logp_disc = float(np.log(p[selections]).sum())
    logp_resi = float(np.log1p(-p[~selections]).sum())
    disc = [s for s, keep in zip(sentences, selections) if keep]
    resi = [s for s, keep in zip(sentences, selections) if not keep]
    return SummarySplit(" ".join(disc), " ".join(resi),
                        [bool(x) for x in selections], logp_disc, logp_resi)


def split_summary(summary: TransactionSummary, policy: SplitPolicy,
                  mode: str = "deterministic",
                  rng: Optional[np.random.Generator] = None) -> SummarySplit:
    """Partition the summary's sentences into discriminative/residual sides.

    ``sample`` draws each sentence's side from its inclusion probability
    (requires a seeded rng); ``deterministic`` thresholds at 0.5 and is the
    validation/test path. Log-probabilities always describe the realized
    assignment.
    """
    if not summary.sentences:
        raise DataError("summary has no sentences to split")
    probs = policy.inclusion_probs(summary.sentences)
    if mode == "sample":
        if rng is None:
            raise ConfigError("sample mode needs a seeded rng")
        selections = rng.random(len(probs)) < probs
    elif mode == "deterministic":
        selections = probs >= 0.5
    else:
        raise ConfigError(f"unknown split mode {mode!r}")
    return _assemble(summary.sentences, selections, probs)


def split_logp_grad(policy: SplitPolicy, sentences: list[str],
                    selections: list[bool]) -> tuple[np.ndarray, float]:
    """Gradient of logp_disc + logp_resi w.r.t. policy weights and bias.

    d/dz [sel*log p + (1-sel)*log(1-p)] = sel - p with z the pre-sigmoid
    logit, so each sentence contributes (sel_i - p_i) * phi_i / temperature.
    """
    feats = featurize_sentences(sentences)
    probs = policy.inclusion_probs(sentences)
    sel = np.asarray(selections, dtype=np.float64)
    coeff = (sel - probs) / policy.temperature
    return feats.T @ coeff, float(coeff.sum())


# -- remote split agents -----------------------------------------------------

DISC_SPLIT_PROMPT = """[split-template v1]
You are the discriminative summary analyst. From the transaction summary
below, copy out only the sentences that carry fraud-relevant evidence along
these four aspects:
1. Transaction patterns: dense or high-frequency transfer behaviour.
2. Fund flows: aggregation then dispersal, multi-hop forwarding.
3. Associated addresses: interaction with mixers or other risky entities.
4. Temporal signs: activity concentrated in short or unusual windows.
Return the selected sentences verbatim, nothing else.

Summary:
{summary}
"""

RESI_SPLIT_PROMPT = """[split-template v1]
You are the residual summary analyst. From the transaction summary below,
copy out only the sentences that do NOT help fraud classification, along
these two aspects:
1. Noise: hallucinated, prompt-like, or speculative statements without
   transactional evidence.
2. Factual statements: plain descriptive facts with no risk signal.
Return the selected sentences verbatim, nothing else.

Summary:
{summary}
"""

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(text.lower()))


def _best_overlap(sentence: str, response_sentences: list[str]) -> float:
    """Containment overlap of the source sentence in the closest response
    sentence: |S ∩ R| / |S|."""
    src = _tokens(sentence)
    if not src:
        return 0.0
    best = 0.0
    for resp in response_sentences:
        inter = len(src & _tokens(resp))
        best = max(best, inter / len(src))
    return best


def remote_llm_split(summary: TransactionSummary, backend: SummarizerBackend,
                     surrogate_policy: Optional[SplitPolicy] = None,
                     min_overlap: float = 0.3) -> SummarySplit:
    """Split via the two remote analyst prompts, mapping the returned text
    back onto source sentences by best token overlap so the partition
    invariant holds.

    Sequence log-probabilities come from the backend's token_logprobs when
    reported; closed APIs without log-probabilities need a surrogate policy
    to score the realized assignment.
    """
    from .summary import split_sentences

    if not summary.sentences:
        raise DataError("summary has no sentences to split")
    disc_resp = backend.complete(DISC_SPLIT_PROMPT.format(summary=summary.text))
    resi_resp = backend.complete(RESI_SPLIT_PROMPT.format(summary=summary.text))
    disc_sentences = split_sentences(disc_resp.text or "")
    resi_sentences = split_sentences(resi_resp.text or "")

    covered = 0
    selections = np.zeros(len(summary.sentences), dtype=bool)
    for i, sentence in enumerate(summary.sentences):
        disc_score = _best_overlap(sentence, disc_sentences)
        resi_score = _best_overlap(sentence, resi_sentences)
        if max(disc_score, resi_score) >= min_overlap:
            covered += 1
        # ties go to the discriminative side; uncovered sentences are noise
        # the agents did not reproduce and default to the residual side
        selections[i] = (disc_score >= resi_score
                         and disc_score >= min_overlap)
    if covered == 0:
        raise DataError("backend split output covers no source sentence")

    if disc_resp.token_logprobs is not None and resi_resp.token_logprobs is not None:
        logp_disc = float(sum(disc_resp.token_logprobs))
        logp_resi = float(sum(resi_resp.token_logprobs))
        if not selections.any():
            selections[int(np.argmax(
                [_best_overlap(s, disc_sentences) for s in summary.sentences]))] = True
        disc = [s for s, keep in zip(summary.sentences, selections) if keep]
        resi = [s for s, keep in zip(summary.sentences, selections) if not keep]
        return SummarySplit(" ".join(disc), " ".join(resi),
                            [bool(x) for x in selections],
                            min(logp_disc, 0.0), min(logp_resi, 0.0))
    if surrogate_policy is None:
        raise ConfigError(
            "backend reports no token log-probabilities; pass a surrogate "
            "policy to score the realized split")
    probs = surrogate_policy.inclusion_probs(summary.sentences)
    return _assemble(summary.sentences, selections, probs)
