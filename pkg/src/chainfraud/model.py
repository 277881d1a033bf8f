"""Dual-path graph encoder over summary embeddings.

Each branch (discriminative or residual) runs a two-layer neighborhood
aggregation over the subgraph plus a linear self-projection of the raw
features:

    Z = A_hat @ relu(A_hat @ X @ W1 + b1) @ W2 + b2 + X @ Wt + bt

with A_hat the symmetric-normalized adjacency with self-loops. A branch is
fused with the original-summary path by a two-way softmax over pooled
attention scores, and the center row of the fused matrix feeds a sigmoid
head. The tri-view loss combines BCE on the discriminative branch, KL to
uniform on the residual branch, and a squared-dot-product orthogonality
penalty between the two fused center representations.

Everything is float64 numpy with hand-derived gradients; `backward` returns
exact analytic gradients for every parameter tensor.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DataError
from .subgraph import Subgraph

PROB_EPS = 1e-7
ROLES = ("disc", "resi", "orig")

CHECKPOINT_MAGIC = b"CFDP"
CHECKPOINT_VERSION = 1


# -- text embedding -----------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9]+")


@dataclass
class TextEmbedder:
    """Seeded feature-hashing embedder: word unigrams and bigrams are sign-
    hashed into ``dim`` buckets and the result is L2-normalized. Identical
    text always maps to the identical vector, across processes."""

    dim: int = 64
    backend: str = "hash"
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError("embedding dimension must be >= 2")
        if self.backend != "hash":
            raise ConfigError(f"unknown embedder backend {self.backend!r}")
        self._key = struct.pack("<q", self.seed)
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise DataError("cannot embed empty text")
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        words = _WORD_RE.findall(text.lower())
        if not words:
            raise DataError("text has no hashable tokens")
        grams = list(words)
        grams += [f"{a}_{b}" for a, b in zip(words, words[1:])]
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            h = hashlib.blake2b(gram.encode("utf-8"), key=self._key,
                                digest_size=8).digest()
            value = int.from_bytes(h, "little")
            bucket = value % self.dim
            sign = 1.0 if (value >> 62) & 1 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # all tokens cancelled; deterministic fallback direction
            vec[0] = 1.0
            norm = 1.0
        vec /= norm
        vec.flags.writeable = False
        self._cache[text] = vec
        return vec


def embed_text(text: str, embedder: TextEmbedder) -> np.ndarray:
    return embedder.embed(text)


# -- parameters ---------------------------------------------------------------

class DualPathParams:
    """All learnable tensors of the encoder, keyed by name.

    Per role (disc/resi/orig): two aggregation layers (w1/b1, w2/b2) and the
    self-projection (wt/bt). Shared: attention scoring vector/bias and the
    classifier head. Scalars are stored as 0-d arrays so the optimizer can
    treat every entry uniformly.
    """

    def __init__(self, embed_dim: int, hidden_dim: int = 64,
                 arrays: Optional[dict[str, np.ndarray]] = None):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        if arrays is not None:
            expected = self.spec()
            for name, shape in expected.items():
                if name not in arrays:
                    raise DataError(f"missing parameter tensor {name!r}")
                if tuple(arrays[name].shape) != shape:
                    raise DataError(
                        f"parameter {name!r} has shape {arrays[name].shape}, "
                        f"expected {shape}")
            extra = set(arrays) - set(expected)
            if extra:
                raise DataError(f"unexpected parameter tensors: {sorted(extra)}")
            self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        else:
            self.arrays = {name: np.zeros(shape, dtype=np.float64)
                           for name, shape in self.spec().items()}

    def spec(self) -> dict[str, tuple[int, ...]]:
        d, h = self.embed_dim, self.hidden_dim
        layout: dict[str, tuple[int, ...]] = {}
        for role in ROLES:
            layout[f"{role}_w1"] = (d, h)
            layout[f"{role}_b1"] = (h,)
            layout[f"{role}_w2"] = (h, h)
            layout[f"{role}_b2"] = (h,)
            layout[f"{role}_wt"] = (d, h)
            layout[f"{role}_bt"] = (h,)
        layout["attn_v"] = (h,)
        layout["attn_b"] = ()
        layout["fc_w"] = (h,)
        layout["fc_b"] = ()
        return layout

    @classmethod
    def init(cls, embed_dim: int, hidden_dim: int = 64,
             seed: int = 0) -> "DualPathParams":
        params = cls(embed_dim, hidden_dim)
        rng = np.random.default_rng(seed)
        for name, arr in params.arrays.items():
            if arr.ndim == 2:
                fan_in, fan_out = arr.shape
                std = np.sqrt(2.0 / (fan_in + fan_out))
                params.arrays[name] = rng.normal(0.0, std, size=arr.shape)
            elif name in ("attn_v", "fc_w"):
                std = np.sqrt(2.0 / (arr.shape[0] + 1))
                params.arrays[name] = rng.normal(0.0, std, size=arr.shape)
            # biases stay zero
        return params

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "DualPathParams":
        return DualPathParams(self.embed_dim, self.hidden_dim,
                              {k: v.copy() for k, v in self.arrays.items()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def digest(self) -> str:
        hasher = hashlib.sha256()
        for name in sorted(self.arrays):
            hasher.update(name.encode())
            hasher.update(np.ascontiguousarray(self.arrays[name]).tobytes())
        return hasher.hexdigest()

    # -- checkpoint io --------------------------------------------------------

    def save(self, path: str, meta: Optional[dict] = None) -> None:
        from .utils import atomic_write_bytes

        names = sorted(self.arrays)
        header = {
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "arrays": [{"name": n, "shape": list(self.arrays[n].shape)}
                       for n in names],
            "meta": meta or {},
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        blob = bytearray()
        blob += CHECKPOINT_MAGIC
        blob += struct.pack("<I", CHECKPOINT_VERSION)
        blob += struct.pack("<I", len(header_bytes))
        blob += header_bytes
        for n in names:
            blob += np.ascontiguousarray(self.arrays[n], dtype=np.float64).tobytes()
        atomic_write_bytes(path, bytes(blob))

    @classmethod
    def load(cls, path: str) -> tuple["DualPathParams", dict]:
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != CHECKPOINT_MAGIC:
            raise DataError(f"{path!r} is not a model checkpoint")
        version, = struct.unpack("<I", data[4:8])
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        hlen, = struct.unpack("<I", data[8:12])
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
        offset = 12 + hlen
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 8
            if offset + nbytes > len(data):
                raise DataError(f"checkpoint truncated at tensor {entry['name']!r}")
            arr = np.frombuffer(data[offset:offset + nbytes],
                                dtype=np.float64).reshape(shape).copy()
            arrays[entry["name"]] = arr
            offset += nbytes
        params = cls(header["embed_dim"], header["hidden_dim"], arrays)
        return params, header.get("meta", {})


# -- graph plumbing -----------------------------------------------------------

def normalized_adjacency(sub: Subgraph) -> np.ndarray:
    """Symmetric-normalized adjacency with self-loops over the node order."""
    a = sub.adjacency().astype(np.float64)
    np.fill_diagonal(a, 0.0)
    a += np.eye(len(sub.nodes))
    degree = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def assemble_features(base: np.ndarray, center_idx: int,
                      center_vec: Optional[np.ndarray]) -> np.ndarray:
    """Copy of the base feature matrix with the center row swapped in.
    ``center_vec`` None means an all-zero row (empty branch text)."""
    x = base.copy()
    if center_vec is None:
        x[center_idx, :] = 0.0
    else:
        x[center_idx, :] = center_vec
    return x


# -- forward ------------------------------------------------------------------

def gnn_forward(features: np.ndarray, a_hat: np.ndarray,
                params: DualPathParams, branch: str) -> np.ndarray:
    """Two aggregation layers plus the self-projection for one branch."""
    z, _ = _gnn_forward_cached(features, a_hat, params, branch)
    return z


def _gnn_forward_cached(x: np.ndarray, a_hat: np.ndarray,
                        params: DualPathParams, role: str):
    if role not in ROLES:
        raise ConfigError(f"unknown branch {role!r}")
    if x.ndim != 2 or x.shape[1] != params.embed_dim:
        raise DataError(
            f"feature matrix for branch {role!r} has shape {x.shape}, "
            f"expected (n, {params.embed_dim})")
    if a_hat.shape != (x.shape[0], x.shape[0]):
        raise DataError(
            f"adjacency shape {a_hat.shape} does not match {x.shape[0]} nodes")
    ax = a_hat @ x
    pre1 = ax @ params[f"{role}_w1"] + params[f"{role}_b1"]
    h1 = np.maximum(pre1, 0.0)
    ah1 = a_hat @ h1
    h2 = ah1 @ params[f"{role}_w2"] + params[f"{role}_b2"]
    z = h2 + x @ params[f"{role}_wt"] + params[f"{role}_bt"]
    cache = {"x": x, "ax": ax, "pre1": pre1, "h1": h1, "ah1": ah1}
    return z, cache


def attention_fuse(z_branch: np.ndarray, z_orig: np.ndarray,
                   params: DualPathParams) -> tuple[np.ndarray, float, float]:
    """Two-way softmax fusion over mean-pooled attention scores."""
    if z_branch.shape != z_orig.shape:
        raise DataError(
            f"branch shape {z_branch.shape} != original shape {z_orig.shape}")
    s1 = float(params["attn_v"] @ z_branch.mean(axis=0) + params["attn_b"])
    s2 = float(params["attn_v"] @ z_orig.mean(axis=0) + params["attn_b"])
    m = max(s1, s2)
    e1, e2 = np.exp(s1 - m), np.exp(s2 - m)
    w1 = float(e1 / (e1 + e2))
    w2 = 1.0 - w1
    return w1 * z_branch + w2 * z_orig, w1, w2


def predict_center(s_fused: np.ndarray, center_idx: int,
                   params: DualPathParams) -> float:
    z = float(params["fc_w"] @ s_fused[center_idx] + params["fc_b"])
    return float(1.0 / (1.0 + np.exp(-z)))


def triview_loss(p_disc: float, p_resi: float, s_disc: np.ndarray,
                 s_resi: np.ndarray, y: int, lambda_resi: float,
                 lambda_orth: float) -> tuple[float, float, float, float]:
    """(total, bce, kl-to-uniform, orthogonality) losses for one center node."""
    if lambda_resi < 0 or lambda_orth < 0:
        raise ConfigError("loss weights must be non-negative")
    pd = min(max(p_disc, PROB_EPS), 1.0 - PROB_EPS)
    pr = min(max(p_resi, PROB_EPS), 1.0 - PROB_EPS)
    loss_d = -(y * np.log(pd) + (1 - y) * np.log(1.0 - pd))
    loss_r = np.log(2.0) + pr * np.log(pr) + (1.0 - pr) * np.log(1.0 - pr)
    dot = float(s_disc @ s_resi)
    loss_o = dot * dot
    total = loss_d + lambda_resi * loss_r + lambda_orth * loss_o
    return float(total), float(loss_d), float(loss_r), float(loss_o)


@dataclass
class ForwardResult:
    p_disc: float
    p_resi: float
    s_disc: np.ndarray
    s_resi: np.ndarray
    loss: float
    loss_disc: float
    loss_resi: float
    loss_orth: float
    fuse_weights: dict[str, tuple[float, float]]
    _cache: dict


def forward(params: DualPathParams, a_hat: np.ndarray, x_disc: np.ndarray,
            x_resi: np.ndarray, x_orig: np.ndarray, center_idx: int, y: int,
            lambda_resi: float, lambda_orth: float) -> ForwardResult:
    """Full two-branch forward pass with cached intermediates for backward."""
    z_disc, c_disc = _gnn_forward_cached(x_disc, a_hat, params, "disc")
    z_resi, c_resi = _gnn_forward_cached(x_resi, a_hat, params, "resi")
    z_orig, c_orig = _gnn_forward_cached(x_orig, a_hat, params, "orig")

    s_mat_d, wd1, wd2 = attention_fuse(z_disc, z_orig, params)
    s_mat_r, wr1, wr2 = attention_fuse(z_resi, z_orig, params)
    s_disc = s_mat_d[center_idx].copy()
    s_resi = s_mat_r[center_idx].copy()

    zd = float(params["fc_w"] @ s_disc + params["fc_b"])
    zr = float(params["fc_w"] @ s_resi + params["fc_b"])
    p_disc = float(1.0 / (1.0 + np.exp(-zd)))
    p_resi = float(1.0 / (1.0 + np.exp(-zr)))

    loss, loss_d, loss_r, loss_o = triview_loss(
        p_disc, p_resi, s_disc, s_resi, y, lambda_resi, lambda_orth)

    cache = {
        "a_hat": a_hat, "center": center_idx, "y": y,
        "lambda_resi": lambda_resi, "lambda_orth": lambda_orth,
        "z": {"disc": z_disc, "resi": z_resi, "orig": z_orig},
        "gnn": {"disc": c_disc, "resi": c_resi, "orig": c_orig},
        "fuse": {"disc": (wd1, wd2), "resi": (wr1, wr2)},
        "p": (p_disc, p_resi),
    }
    return ForwardResult(p_disc=p_disc, p_resi=p_resi, s_disc=s_disc,
                         s_resi=s_resi, loss=loss, loss_disc=loss_d,
                         loss_resi=loss_r, loss_orth=loss_o,
                         fuse_weights={"disc": (wd1, wd2), "resi": (wr1, wr2)},
                         _cache=cache)


def _bce_dz(p: float, y: int) -> float:
    """d(BCE with clamped p)/d(logit); the loss is constant through the
    clamp, so the gradient there is exactly zero (matches finite differences
    of the implemented loss)."""
    if p <= PROB_EPS or p >= 1.0 - PROB_EPS:
        return 0.0
    return p - y


def _kl_dz(p: float) -> float:
    """d(KL((p,1-p)||uniform) with clamped p)/d(logit); zero through the clamp."""
    if p <= PROB_EPS or p >= 1.0 - PROB_EPS:
        return 0.0
    return float((np.log(p) - np.log(1.0 - p)) * p * (1.0 - p))


def backward(params: DualPathParams, result: ForwardResult
             ) -> dict[str, np.ndarray]:
    """Analytic gradients of the tri-view loss for every parameter tensor."""
    cache = result._cache
    a_hat = cache["a_hat"]
    center = cache["center"]
    y = cache["y"]
    lam1 = cache["lambda_resi"]
    lam2 = cache["lambda_orth"]
    p_disc, p_resi = cache["p"]
    s_disc, s_resi = result.s_disc, result.s_resi
    n = a_hat.shape[0]

    grads = params.zero_grads()

    dz_d = _bce_dz(p_disc, y)
    dz_r = lam1 * _kl_dz(p_resi)
    dot = float(s_disc @ s_resi)

    g_s_disc = dz_d * params["fc_w"] + lam2 * 2.0 * dot * s_resi
    g_s_resi = dz_r * params["fc_w"] + lam2 * 2.0 * dot * s_disc
    grads["fc_w"] += dz_d * s_disc + dz_r * s_resi
    grads["fc_b"] += np.asarray(dz_d + dz_r)

    dz_mats = {"disc": np.zeros_like(cache["z"]["disc"]),
               "resi": np.zeros_like(cache["z"]["resi"]),
               "orig": np.zeros_like(cache["z"]["orig"])}

    for branch, g_center in (("disc", g_s_disc), ("resi", g_s_resi)):
        w1, w2 = cache["fuse"][branch]
        z_b = cache["z"][branch]
        z_o = cache["z"]["orig"]
        g_s = np.zeros_like(z_b)
        g_s[center] = g_center
        dz_mats[branch] += w1 * g_s
        dz_mats["orig"] += w2 * g_s
        dw1 = float(np.sum(g_s * z_b))
        dw2 = float(np.sum(g_s * z_o))
        ds1 = (dw1 - dw2) * w1 * w2
        ds2 = -ds1
        pool_b = z_b.mean(axis=0)
        pool_o = z_o.mean(axis=0)
        grads["attn_v"] += ds1 * pool_b + ds2 * pool_o
        grads["attn_b"] += np.asarray(ds1 + ds2)
        dz_mats[branch] += (ds1 / n) * np.broadcast_to(params["attn_v"], z_b.shape)
        dz_mats["orig"] += (ds2 / n) * np.broadcast_to(params["attn_v"], z_o.shape)

    for role in ROLES:
        dz = dz_mats[role]
        c = cache["gnn"][role]
        grads[f"{role}_bt"] += dz.sum(axis=0)
        grads[f"{role}_wt"] += c["x"].T @ dz
        dh2 = dz
        grads[f"{role}_b2"] += dh2.sum(axis=0)
        grads[f"{role}_w2"] += c["ah1"].T @ dh2
        dah1 = dh2 @ params[f"{role}_w2"].T
        dh1 = a_hat @ dah1
        dpre1 = dh1 * (c["pre1"] > 0.0)
        grads[f"{role}_b1"] += dpre1.sum(axis=0)
        grads[f"{role}_w1"] += c["ax"].T @ dpre1

    return grads


def forward_infer(params: DualPathParams, a_hat: np.ndarray,
                  x_disc: np.ndarray, x_orig: np.ndarray,
                  center_idx: int) -> float:
    """Inference path: discriminative branch fused with the original branch,
    classifier head on the center row."""
    z_disc = gnn_forward(x_disc, a_hat, params, "disc")
    z_orig = gnn_forward(x_orig, a_hat, params, "orig")
    s_mat, _, _ = attention_fuse(z_disc, z_orig, params)
    return predict_center(s_mat, center_idx, params)
