"""Teacher ensemble on disjoint private shards, noisy vote aggregation, and
student distillation from noisy pseudo-labels."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import BINARY_VOCAB, IntegrityError, Origin, ShardPlan, TextRecord, partition
from .dp_core import AccountingLedger, GaussianNoise, LedgerClosedError, MechanismParams
from .text_model import LinearModel, TrainConfig, featurize_many, train_matrix

KD_SENSITIVITY = math.sqrt(2.0)
PRIVATE, PUBLIC = 0, 1


class PrivacyViolation(RuntimeError):
    """Private data reached a component that must never see it."""


@dataclass
class TeacherEnsemble:
    teachers: list[LinearModel]
    plan: ShardPlan

    @property
    def M(self) -> int:
        return len(self.teachers)

    @property
    def dim(self) -> int:
        return self.teachers[0].dim

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for m, t in enumerate(self.teachers):
            t.save(directory / f"teacher_{m:03d}.lm")
        plan = self.plan.to_dict()
        digest = hashlib.sha256(json.dumps(plan["assignments"], sort_keys=True).encode()).hexdigest()
        manifest = {"M": self.M, "seed": self.plan.seed, "assignments_digest": digest, "plan": plan}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "TeacherEnsemble":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        teachers = [LinearModel.load(directory / f"teacher_{m:03d}.lm") for m in range(manifest["M"])]
        return cls(teachers, ShardPlan.from_dict(manifest["plan"]))


@dataclass(frozen=True)
class VoteVector:
    sums: np.ndarray
    M: int


@dataclass(frozen=True)
class NoisyLabel:
    label: int
    noisy_scores: np.ndarray
    query_index: int = 0


@dataclass(frozen=True)
class DistillationConfig:
    sigma_kd: float
    max_queries: int
    student: TrainConfig = TrainConfig()
    seed: int = 0

    def __post_init__(self):
        if self.max_queries < 1:
            raise ValueError(f"query budget must be >= 1, got {self.max_queries}")
        if not self.sigma_kd > 0:
            raise ValueError(f"sigma_kd must be > 0, got {self.sigma_kd}")


def teacher_seed(seed: int, m: int) -> int:
    # depends only on (seed, m): a teacher's init/batch order never sees other shards
    return int(np.random.SeedSequence([seed, m]).generate_state(1)[0])


def _check_shards(shards: Sequence[Sequence[TextRecord]]):
    owner: dict[str, int] = {}
    for m, shard in enumerate(shards):
        if not shard:
            raise ValueError(f"shard {m} is empty")
        for r in shard:
            if r.origin is not Origin.PRIVATE:
                raise ValueError(f"shard {m} holds non-private record {r.id!r}")
            if r.id in owner:
                raise IntegrityError(f"private record {r.id!r} appears in shards {owner[r.id]} and {m}")
            owner[r.id] = m


def train_teachers(
    shards: Sequence[Sequence[TextRecord]],
    public_negatives: Sequence[TextRecord],
    config: TrainConfig,
    plan: ShardPlan | None = None,
) -> TeacherEnsemble:
    """Train teacher ``m`` on shard ``m`` (label private) plus negative slice ``m``.

    Negatives are split across teachers by the same seeded round-robin used
    for private shards.
    """
    _check_shards(shards)
    M = len(shards)
    if any(r.origin is Origin.PRIVATE for r in public_negatives):
        raise PrivacyViolation("public negatives contain a private record")
    if len(public_negatives) < M:
        raise ValueError(f"need at least {M} public negatives, got {len(public_negatives)}")
    if plan is None:
        plan = ShardPlan.from_shards([[r.id for r in s] for s in shards], seed=config.seed)
    neg_plan = partition(public_negatives, M, config.seed)
    neg_slices = neg_plan.shard_records(public_negatives)
    teachers = []
    for m, (pos, neg) in enumerate(zip(shards, neg_slices)):
        texts = [r.text for r in pos] + [r.text for r in neg]
        y = np.array([PRIVATE] * len(pos) + [PUBLIC] * len(neg))
        cfg = replace(config, seed=teacher_seed(config.seed, m))
        teachers.append(train_matrix(featurize_many(texts, cfg.dim), y, BINARY_VOCAB, cfg))
    return TeacherEnsemble(teachers, plan)


def teacher_probs(ensemble: TeacherEnsemble, texts: Sequence[str]) -> np.ndarray:
    """Per-teacher probabilities, shape (M, n, 2)."""
    X = featurize_many(texts, ensemble.dim)
    return np.stack([t.predict_proba_matrix(X) for t in ensemble.teachers])


def aggregate_votes_many(ensemble: TeacherEnsemble, texts: Sequence[str]) -> np.ndarray:
    return teacher_probs(ensemble, texts).sum(axis=0)


def aggregate_votes(ensemble: TeacherEnsemble, x: TextRecord) -> VoteVector:
    return VoteVector(aggregate_votes_many(ensemble, [x.text])[0], ensemble.M)


def noisy_label(votes: VoteVector, sigma_kd: float, rng: GaussianNoise, query_index: int = 0) -> NoisyLabel:
    """Argmax of the votes after adding N(0, sigma_kd^2) to every coordinate.

    Ties go to the lower class index.
    """
    noisy = votes.sums + rng.normal(sigma_kd, len(votes.sums))
    return NoisyLabel(int(np.argmax(noisy)), noisy, query_index)


def _check_candidates(candidates: Sequence[TextRecord]):
    for r in candidates:
        if r.origin is Origin.PRIVATE:
            raise PrivacyViolation(f"candidate {r.id!r} is a private record; the student must never see it")


def distill_student_with_report(
    ensemble: TeacherEnsemble,
    candidates: Sequence[TextRecord],
    config: DistillationConfig,
    ledger: AccountingLedger,
) -> tuple[LinearModel, dict]:
    _check_candidates(candidates)
    if not candidates:
        raise ValueError("no candidates to distill from")
    if len(candidates) > config.max_queries:
        raise ValueError(f"{len(candidates)} candidates exceed the query budget {config.max_queries}")
    if ledger.closed:
        raise LedgerClosedError("ledger is closed; cannot spend budget on teacher queries")

    votes = aggregate_votes_many(ensemble, [r.text for r in candidates])
    rng = GaussianNoise(config.seed)
    labels = np.empty(len(candidates), dtype=np.int64)
    for q, v in enumerate(votes):
        labels[q] = noisy_label(VoteVector(v, ensemble.M), config.sigma_kd, rng, q).label
    ledger.append("KD", MechanismParams(KD_SENSITIVITY, config.sigma_kd), len(candidates))

    # the student sees candidate texts and noisy labels only
    X = featurize_many([r.text for r in candidates], config.student.dim)
    student = train_matrix(X, labels, BINARY_VOCAB, config.student)
    report = {
        "queries": len(candidates),
        "query_budget": config.max_queries,
        "sigma_kd": config.sigma_kd,
        "noisy_label_agreement": float(np.mean(labels == np.argmax(votes, axis=1))),
        "private_label_rate": float(np.mean(labels == PRIVATE)),
    }
    return student, report


def distill_student(ensemble, candidates, config, ledger) -> LinearModel:
    return distill_student_with_report(ensemble, candidates, config, ledger)[0]
