"""Noisy release of the private label marginal."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import LabelVocab, Origin, TextRecord
from .dp_core import AccountingLedger, GaussianNoise, LedgerClosedError, MechanismParams

TUTOR_SENSITIVITY = math.sqrt(2.0)


@dataclass(frozen=True)
class LabelDistribution:
    probs: np.ndarray
    vocab: LabelVocab
    sigma_tutor: float
    sample_count: int
    ledger_event: int | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "labels": self.vocab.names,
                "probs": [float(p) for p in self.probs],
                "sigma": self.sigma_tutor,
                "N": self.sample_count,
                "ledger_event_id": self.ledger_event,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "LabelDistribution":
        d = json.loads(text)
        return cls(np.array(d["probs"]), LabelVocab(d["labels"]), d["sigma"], d["N"], d["ledger_event_id"])


def label_counts(records: Sequence[TextRecord], n_classes: int) -> np.ndarray:
    """Sum of one-hot label vectors."""
    counts = np.zeros(n_classes)
    for r in records:
        counts[r.label.index] += 1.0
    return counts


def clamp_renormalize(values: np.ndarray) -> np.ndarray:
    clipped = np.clip(values, 0.0, 1.0)
    total = clipped.sum()
    if total <= 0.0:
        warnings.warn("all label-distribution coordinates clamped to 0; using uniform", RuntimeWarning)
        return np.full(len(values), 1.0 / len(values))
    return clipped / total


def noisy_label_distribution(
    private: Sequence[TextRecord],
    vocab: LabelVocab,
    sigma_tutor: float,
    rng: GaussianNoise,
    ledger: AccountingLedger,
) -> LabelDistribution:
    """Noised label histogram of ``private``, clamped to [0, 1] and renormalized.

    Noise N(0, sigma_tutor^2) goes on the count vector (whose substitution
    sensitivity is sqrt(2)); the noisy counts are then divided by N.
    """
    if not private:
        raise ValueError("tutor needs at least one private record")
    if any(r.origin is not Origin.PRIVATE for r in private):
        raise ValueError("tutor input must be the private corpus only")
    if ledger.closed:
        raise LedgerClosedError("ledger is closed; cannot release the label distribution")
    n = len(private)
    counts = label_counts(private, len(vocab))
    noisy = (counts + rng.normal(sigma_tutor, len(vocab))) / n
    event = ledger.append(
        "tutor", MechanismParams(TUTOR_SENSITIVITY, sigma_tutor), 1, sample_count=n
    )
    return LabelDistribution(clamp_renormalize(noisy), vocab, float(sigma_tutor), n, event)
