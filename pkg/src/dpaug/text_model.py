"""Hashed n-gram features and a multinomial logistic-regression classifier.

Used for the teachers, the student discriminator and the downstream
classifier.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import LabelVocab, TextRecord

DEFAULT_DIM = 2**18
MODEL_MAGIC = b"DPAUGLM1"


@dataclass(frozen=True)
class FeatureVector:
    """Sparse feature vector: sorted unique ``indices`` with their ``values``."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


def feature_index(feature: str, dim: int) -> int:
    """CRC-32 of the UTF-8 feature string, modulo ``dim``."""
    return zlib.crc32(feature.encode("utf-8")) % dim


def _hashed_counts(text: str, dim: int) -> dict[int, float]:
    tokens = text.split()
    if not tokens:
        return {}
    counts: dict[int, float] = {}
    feats = ["u:" + t for t in tokens]
    feats += ["b:" + a + " " + b for a, b in zip(tokens, tokens[1:])]
    for f in feats:
        i = feature_index(f, dim)
        counts[i] = counts.get(i, 0.0) + 1.0
    scale = 1.0 / math.sqrt(len(tokens))
    return {i: c * scale for i, c in counts.items()}


def featurize(text: str, dim: int = DEFAULT_DIM) -> FeatureVector:
    """Unigram + bigram counts hashed into ``dim`` buckets, scaled by 1/sqrt(#tokens).

    Colliding features add up in their shared bucket. Empty text maps to the
    zero vector.
    """
    if dim < 1:
        raise ValueError(f"feature dim must be >= 1, got {dim}")
    counts = _hashed_counts(text, dim)
    idx = np.array(sorted(counts), dtype=np.int64)
    vals = np.array([counts[i] for i in idx], dtype=float)
    return FeatureVector(idx, vals, dim)


def featurize_many(texts: Sequence[str], dim: int = DEFAULT_DIM) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for t in texts:
        counts = _hashed_counts(t, dim)
        for i in sorted(counts):
            indices.append(i)
            data.append(counts[i])
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.array(data, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(texts), dim),
    )


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    dim: int = DEFAULT_DIM
    epochs: int = 40
    learning_rate: float = 4.0
    l2: float = 1e-5
    batch_size: int | None = 32  # None: full batch
    seed: int = 0

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class LinearModel:
    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray  # (n_classes,)
    vocab: LabelVocab
    fingerprint: str = ""
    loss_history: list[float] = field(default_factory=list, compare=False)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def scores(self, X: sp.spmatrix | np.ndarray) -> np.ndarray:
        return np.asarray(X @ self.weights.T) + self.bias

    def predict_proba_matrix(self, X) -> np.ndarray:
        if X.shape[1] != self.dim:
            raise ValueError(f"feature dim {X.shape[1]} does not match model dim {self.dim}")
        return softmax(self.scores(X))

    def predict_proba_texts(self, texts: Sequence[str]) -> np.ndarray:
        return self.predict_proba_matrix(featurize_many(texts, self.dim))

    def predict_texts(self, texts: Sequence[str]) -> np.ndarray:
        return np.argmax(self.predict_proba_texts(texts), axis=1)

    def to_bytes(self) -> bytes:
        """Serialize: magic, uint32-LE header length, JSON header, then
        weights and bias as little-endian float64 in C order."""
        header = json.dumps(
            {
                "dim": self.dim,
                "n_classes": self.n_classes,
                "classes": self.vocab.names,
                "fingerprint": self.fingerprint,
                "dtype": "<f8",
            },
            sort_keys=True,
        ).encode()
        return b"".join(
            [
                MODEL_MAGIC,
                struct.pack("<I", len(header)),
                header,
                np.ascontiguousarray(self.weights, dtype="<f8").tobytes(),
                np.ascontiguousarray(self.bias, dtype="<f8").tobytes(),
            ]
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LinearModel":
        if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
            raise ValueError("not a serialized LinearModel")
        off = len(MODEL_MAGIC)
        (hlen,) = struct.unpack("<I", blob[off : off + 4])
        off += 4
        header = json.loads(blob[off : off + hlen])
        off += hlen
        k, d = header["n_classes"], header["dim"]
        w = np.frombuffer(blob, dtype="<f8", count=k * d, offset=off).reshape(k, d).copy()
        b = np.frombuffer(blob, dtype="<f8", count=k, offset=off + 8 * k * d).copy()
        return cls(w, b, LabelVocab(header["classes"]), header["fingerprint"])

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "LinearModel":
        return cls.from_bytes(Path(path).read_bytes())


class Classifier(Protocol):
    """What the pipeline needs from a classifier backend."""

    vocab: LabelVocab

    def predict_proba_texts(self, texts: Sequence[str]) -> np.ndarray: ...


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model: LinearModel, x: FeatureVector) -> np.ndarray:
    if x.dim != model.dim:
        raise ValueError(f"feature dim {x.dim} does not match model dim {model.dim}")
    s = model.weights[:, x.indices] @ x.values + model.bias
    return softmax(s)


def loss_and_grad(W, b, X, y, l2):
    """Mean cross-entropy plus (l2/2)*||W||^2, and its gradient in (W, b)."""
    n = X.shape[0]
    P = softmax(np.asarray(X @ W.T) + b)
    loss = -np.mean(np.log(np.maximum(P[np.arange(n), y], 1e-300))) + 0.5 * l2 * np.sum(W * W)
    P[np.arange(n), y] -= 1.0
    P /= n
    gW = np.asarray((X.T @ P).T) + l2 * W
    gb = P.sum(axis=0)
    return loss, gW, gb


def init_model(vocab: LabelVocab, config: TrainConfig) -> LinearModel:
    k = len(vocab)
    return LinearModel(np.zeros((k, config.dim)), np.zeros(k), vocab, config.fingerprint())


def train_matrix(X, y: np.ndarray, vocab: LabelVocab, config: TrainConfig) -> LinearModel:
    """Mini-batch gradient descent on a prepared feature matrix."""
    y = np.asarray(y, dtype=np.int64)
    if len(vocab) < 2:
        raise ValueError("need at least two classes in the vocabulary")
    if len(np.unique(y)) < 2:
        raise ValueError("training data contains a single class")
    X = sp.csr_matrix(X)
    model = init_model(vocab, config)
    W, b = model.weights, model.bias
    n = X.shape[0]
    rng = np.random.default_rng(config.seed)
    bs = n if config.batch_size is None else min(config.batch_size, n)
    history = [loss_and_grad(W, b, X, y, config.l2)[0]]
    for _ in range(config.epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            _, gW, gb = loss_and_grad(W, b, X[idx], y[idx], config.l2)
            W -= config.learning_rate * gW
            b -= config.learning_rate * gb
        history.append(loss_and_grad(W, b, X, y, config.l2)[0])
    model.loss_history = history
    return model


def train(records: Sequence[TextRecord], vocab: LabelVocab, config: TrainConfig = TrainConfig()) -> LinearModel:
    X = featurize_many([r.text for r in records], config.dim)
    y = np.array([r.label.index for r in records])
    return train_matrix(X, y, vocab, config)
