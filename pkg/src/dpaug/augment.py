"""Candidate scoring, quota apportionment, selection and the end-to-end pipeline."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .candidate_source import DEFAULT_TEMPLATE, GenerationRequest, make_source
from .config import RunConfig
from .corpus import (
    LabelVocab,
    Origin,
    ShardPlan,
    TextRecord,
    dedup,
    load_jsonl,
    normalize_records,
    partition,
    save_jsonl,
)
from .dp_core import AccountingLedger, GaussianNoise
from .pate_kd import (
    PRIVATE,
    DistillationConfig,
    PrivacyViolation,
    TeacherEnsemble,
    distill_student_with_report,
    train_teachers,
)
from .text_model import LinearModel
from .tutor import LabelDistribution, noisy_label_distribution

log = logging.getLogger(__name__)

EPSILON_GRID = (0.1, 0.5, 1.0, 2.0, 4.0, 8.0)


class ShortageError(RuntimeError):
    def __init__(self, deficits: dict[str, int]):
        self.deficits = deficits
        detail = ", ".join(f"{k}: short by {v}" for k, v in deficits.items())
        super().__init__(f"not enough candidates ({detail})")


@dataclass(frozen=True)
class SelectionQuota:
    counts: tuple[int, ...]
    vocab: LabelVocab

    @property
    def total(self) -> int:
        return sum(self.counts)

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.vocab.names, self.counts))


@dataclass(frozen=True)
class ScoredCandidate:
    record: TextRecord
    score: float


@dataclass
class AugmentedDataset:
    records: list[TextRecord]
    quota: SelectionQuota
    provenance: dict = field(default_factory=dict)

    def class_counts(self) -> list[int]:
        counts = [0] * len(self.quota.vocab)
        for r in self.records:
            counts[r.label.index] += 1
        return counts


def largest_remainder(probs: Sequence[float], total: int) -> list[int]:
    """Integer apportionment of ``total`` proportional to ``probs``.

    Floors first, then one extra unit each to the largest fractional parts;
    equal remainders go to the lower index.
    """
    p = np.asarray(probs, dtype=float)
    p = p / p.sum()
    raw = p * total
    base = np.floor(raw).astype(int)
    # round away float noise so exact shares such as 0.6 * 10 do not become 5.999...
    rem = np.round(raw - base, 12)
    base[rem >= 1.0] += 1
    rem[rem >= 1.0] = 0.0
    left = total - int(base.sum())
    order = sorted(range(len(p)), key=lambda i: (-rem[i], i))
    for i in order[:left]:
        base[i] += 1
    return [int(x) for x in base]


def quotas(dist: LabelDistribution, n_aug: int) -> SelectionQuota:
    if n_aug < 1:
        raise ValueError(f"N_aug must be >= 1, got {n_aug}")
    return SelectionQuota(tuple(largest_remainder(dist.probs, n_aug)), dist.vocab)


def score_candidates(student: LinearModel, candidates: Sequence[TextRecord]) -> list[ScoredCandidate]:
    """Score = the student's probability that a candidate is private-like.

    Pure post-processing of the distilled student: spends no budget.
    """
    for r in candidates:
        if r.origin is Origin.PRIVATE:
            raise PrivacyViolation(f"candidate {r.id!r} is private")
    if not candidates:
        return []
    probs = student.predict_proba_texts([r.text for r in candidates])[:, PRIVATE]
    return [ScoredCandidate(r, float(s)) for r, s in zip(candidates, probs)]


def _by_class(candidates: Sequence[ScoredCandidate], n_classes: int):
    groups: list[list[ScoredCandidate]] = [[] for _ in range(n_classes)]
    for c in candidates:
        groups[c.record.label.index].append(c)
    return groups


def _check_supply(groups, quota: SelectionQuota):
    deficits = {
        quota.vocab.names[i]: q - len(g) for i, (g, q) in enumerate(zip(groups, quota.counts)) if len(g) < q
    }
    if deficits:
        raise ShortageError(deficits)


def _emit(chosen: list[TextRecord], quota: SelectionQuota, seed: int, provenance: dict) -> AugmentedDataset:
    ids = [r.id for r in chosen]
    if len(set(ids)) != len(ids):
        raise ValueError("selected records have duplicate ids")
    if any(r.origin is Origin.PRIVATE for r in chosen):
        raise PrivacyViolation("a private record reached the augmented dataset")
    order = np.random.default_rng(seed).permutation(len(chosen))
    return AugmentedDataset([chosen[i] for i in order], quota, provenance)


def select(candidates: Sequence[ScoredCandidate], quota: SelectionQuota, seed: int = 0,
           min_score: float | None = None) -> AugmentedDataset:
    """Per class, the ``quota`` highest-scoring candidates (ties: lower id first)."""
    if min_score is not None:
        candidates = [c for c in candidates if c.score >= min_score]
    groups = _by_class(candidates, len(quota.vocab))
    _check_supply(groups, quota)
    chosen = []
    for g, q in zip(groups, quota.counts):
        g = sorted(g, key=lambda c: (-c.score, c.record.id))
        chosen.extend(c.record for c in g[:q])
    return _emit(chosen, quota, seed, {"selection": "top-score"})


def uniform_select(candidates: Sequence[ScoredCandidate], quota: SelectionQuota, seed: int = 0) -> AugmentedDataset:
    """Baseline: same quotas, candidates drawn uniformly at random."""
    groups = _by_class(candidates, len(quota.vocab))
    _check_supply(groups, quota)
    rng = np.random.default_rng(seed)
    chosen = []
    for g, q in zip(groups, quota.counts):
        pick = sorted(rng.choice(len(g), size=q, replace=False)) if q else []
        chosen.extend(g[i].record for i in pick)
    return _emit(chosen, quota, seed, {"selection": "uniform-random"})


# --------------------------------------------------------------------------
# Pipeline
# --------------------------------------------------------------------------


def open_private_corpus(path, vocab: LabelVocab) -> list[TextRecord]:
    """The single entry point through which pipeline stages read private data."""
    records = load_jsonl(path, vocab)
    for r in records:
        if r.origin is not Origin.PRIVATE:
            raise ValueError(f"{path}: record {r.id!r} has origin {r.origin.value}, expected private")
    return records


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Pipeline:
    """Stage runner over a run directory.

    Every stage reads its inputs from and writes its artifacts to
    ``config.out_dir`` under fixed names, so stages can also be driven one at
    a time from the command line.
    """

    LABELS = "labels.json"
    PRIVATE = "private.jsonl"
    PUBLIC = "public.jsonl"
    PLAN = "shard_plan.json"
    TEACHERS = "teachers"
    STUDENT = "student.lm"
    STUDENT_QUERIES = "student_queries.jsonl"
    DISTILL_REPORT = "distill_report.json"
    TUTOR = "tutor.json"
    CANDIDATES = "candidates.jsonl"
    AUGMENTED = "augmented.jsonl"
    LEDGER = "ledger.json"
    SOURCE_STATE = "source_state.json"
    CONFIG = "config.resolved.json"
    MANIFEST = "manifest.json"
    BUDGET = "budget_report.json"

    def __init__(self, config: RunConfig, source_kwargs: dict | None = None):
        self.config = config.resolved()
        self.dir = Path(self.config.out_dir)
        self.source_kwargs = source_kwargs or {}
        self._source = None
        self._vocab = None

    # -- helpers ------------------------------------------------------------
    def path(self, name) -> Path:
        return self.dir / name

    def require(self, *names):
        for n in names:
            if not self.path(n).exists():
                raise FileNotFoundError(f"missing input {self.path(n)}; run the earlier stage first")

    @property
    def vocab(self) -> LabelVocab:
        if self._vocab is None:
            self._vocab = LabelVocab.load(self.path(self.LABELS))
        return self._vocab

    def load_ledger(self) -> AccountingLedger:
        p = self.path(self.LEDGER)
        return AccountingLedger.from_dict(json.loads(p.read_text())) if p.exists() else AccountingLedger()

    def save_ledger(self, ledger: AccountingLedger):
        _dump(self.path(self.LEDGER), ledger.to_dict())

    def template(self) -> str:
        if self.config.template_file:
            return Path(self.config.template_file).read_text(encoding="utf-8").strip()
        return DEFAULT_TEMPLATE

    def source(self):
        if self._source is None:
            if self.config.source is None:
                raise ValueError("no candidate source configured")
            self._source = make_source(self.config.source, self.vocab, **self.source_kwargs)
            state_path = self.path(self.SOURCE_STATE)
            if state_path.exists():
                self._restore_source(json.loads(state_path.read_text()))
        return self._source

    def _restore_source(self, state: dict):
        for name, n in state.items():
            if n:
                self._source.advance(GenerationRequest(self.vocab[name], n, self.template()))

    def _generate(self, counts: Sequence[int]) -> list[TextRecord]:
        src = self.source()
        out = []
        state_path = self.path(self.SOURCE_STATE)
        state = json.loads(state_path.read_text()) if state_path.exists() else {}
        for label, n in zip(self.vocab, counts):
            if n > 0:
                out.extend(src.next_batch(GenerationRequest(label, int(n), self.template())))
                state[label.name] = state.get(label.name, 0) + int(n)
        _dump(state_path, state)
        return out

    # -- stages -------------------------------------------------------------
    def ingest(self):
        cfg = self.config
        for attr in ("private_path", "public_path", "labels_path"):
            if not getattr(cfg, attr):
                raise FileNotFoundError(f"config.{attr} is not set")
        self.dir.mkdir(parents=True, exist_ok=True)
        vocab = LabelVocab.load(cfg.labels_path)
        vocab.save(self.path(self.LABELS))
        self._vocab = vocab
        private = dedup(normalize_records(open_private_corpus(cfg.private_path, vocab)))
        public = load_jsonl(cfg.public_path, vocab)
        if any(r.origin is Origin.PRIVATE for r in public):
            raise PrivacyViolation(f"{cfg.public_path} contains private-origin records")
        public = dedup(normalize_records(public))
        save_jsonl(private, self.path(self.PRIVATE))
        save_jsonl(public, self.path(self.PUBLIC))
        _dump(self.path(self.CONFIG), cfg.to_dict())
        return {"private": len(private), "public": len(public)}

    def partition(self) -> ShardPlan:
        self.require(self.LABELS, self.PRIVATE)
        private = open_private_corpus(self.path(self.PRIVATE), self.vocab)
        plan = partition(private, self.config.teachers, self.config.seeds["partition"])
        _dump(self.path(self.PLAN), plan.to_dict())
        return plan

    def train_teachers(self) -> TeacherEnsemble:
        self.require(self.LABELS, self.PRIVATE, self.PUBLIC, self.PLAN)
        private = open_private_corpus(self.path(self.PRIVATE), self.vocab)
        public = load_jsonl(self.path(self.PUBLIC), self.vocab)
        plan = ShardPlan.from_dict(json.loads(self.path(self.PLAN).read_text()))
        cfg = replace(self.config.model, seed=self.config.seeds["teachers"])
        ensemble = train_teachers(plan.shard_records(private), public, cfg, plan)
        teacher_dir = self.path(self.TEACHERS)
        if teacher_dir.exists():
            shutil.rmtree(teacher_dir)
        ensemble.save(teacher_dir)
        return ensemble

    def distill(self) -> LinearModel:
        self.require(self.LABELS, self.TEACHERS)
        ensemble = TeacherEnsemble.load(self.path(self.TEACHERS))
        ledger = self.load_ledger()
        per_label = largest_remainder([1.0] * len(self.vocab), self.config.queries)
        queries = self._generate(per_label)
        save_jsonl(queries, self.path(self.STUDENT_QUERIES))
        cfg = self.config
        student_cfg = replace(cfg.model, seed=cfg.seeds["student"])
        dcfg = DistillationConfig(cfg.sigma_kd(), cfg.queries, student_cfg, cfg.seeds["kd_noise"])
        student, report = distill_student_with_report(ensemble, queries, dcfg, ledger)
        student.save(self.path(self.STUDENT))
        _dump(self.path(self.DISTILL_REPORT), report)
        self.save_ledger(ledger)
        return student

    def tutor(self) -> LabelDistribution:
        self.require(self.LABELS, self.PRIVATE)
        private = open_private_corpus(self.path(self.PRIVATE), self.vocab)
        ledger = self.load_ledger()
        dist = noisy_label_distribution(
            private, self.vocab, self.config.sigma_tutor(), GaussianNoise(self.config.seeds["tutor_noise"]), ledger
        )
        self.path(self.TUTOR).write_text(dist.to_json() + "\n", encoding="utf-8")
        self.save_ledger(ledger)
        return dist

    def quota(self) -> SelectionQuota:
        self.require(self.TUTOR)
        dist = LabelDistribution.from_json(self.path(self.TUTOR).read_text())
        return quotas(dist, self.config.n_aug)

    def generate(self) -> list[TextRecord]:
        quota = self.quota()
        counts = [math.ceil(q * self.config.oversample) for q in quota.counts]
        candidates = self._generate(counts)
        save_jsonl(candidates, self.path(self.CANDIDATES))
        return candidates

    def select(self) -> AugmentedDataset:
        self.require(self.STUDENT, self.CANDIDATES)
        cfg = self.config
        quota = self.quota()
        student = LinearModel.load(self.path(self.STUDENT))
        candidates = load_jsonl(self.path(self.CANDIDATES), self.vocab)
        if cfg.merge_pools and self.path(self.STUDENT_QUERIES).exists():
            candidates += load_jsonl(self.path(self.STUDENT_QUERIES), self.vocab)
        scored = score_candidates(student, candidates)
        try:
            data = select(scored, quota, cfg.seeds["select"], cfg.min_score)
        except ShortageError as exc:
            log.info("refilling after shortage: %s", exc.deficits)
            refill = [0] * len(self.vocab)
            for name, deficit in exc.deficits.items():
                refill[self.vocab[name].index] = math.ceil(deficit * cfg.oversample)
            extra = self._generate(refill)
            candidates += extra
            save_jsonl(candidates, self.path(self.CANDIDATES))
            scored += score_candidates(student, extra)
            data = select(scored, quota, cfg.seeds["select"], cfg.min_score)
        save_jsonl(data.records, self.path(self.AUGMENTED))

        ledger = self.load_ledger()
        ledger.close()
        self.save_ledger(ledger)
        report = self.account()
        data.provenance.update(
            quota=quota.as_dict(),
            sigma_kd=cfg.sigma_kd(),
            sigma_tutor=cfg.sigma_tutor(),
            ledger_digest=ledger.digest(),
        )
        manifest = {
            "config": cfg.to_dict(),
            "seeds": cfg.seeds,
            "sigma_kd": cfg.sigma_kd(),
            "sigma_tutor": cfg.sigma_tutor(),
            "queries": cfg.queries,
            "quota": quota.as_dict(),
            "ledger_digest": ledger.digest(),
            "budget": report["total"],
            "augmented_sha256": file_digest(self.path(self.AUGMENTED)),
            "candidates_scored": len(scored),
        }
        _dump(self.path(self.MANIFEST), manifest)
        return data

    def account(self, epsilon_grid: Sequence[float] = EPSILON_GRID) -> dict:
        """Budget report for the run directory; touches no data."""
        ledger = self.load_ledger()
        deltas = {"KD": self.config.kd.delta, "tutor": self.config.tutor.delta}
        report = ledger.report(epsilon_grid, deltas)
        _dump(self.path(self.BUDGET), report)
        return report

    def run(self) -> tuple[AugmentedDataset, dict]:
        if self.path(self.LEDGER).exists():
            raise FileExistsError(f"{self.dir} already holds a run; use a fresh output directory")
        self.ingest()
        self.partition()
        self.train_teachers()
        self.distill()
        self.tutor()
        self.generate()
        data = self.select()
        return data, json.loads(self.path(self.BUDGET).read_text())


def run_pipeline(config: RunConfig, **source_kwargs) -> tuple[AugmentedDataset, dict]:
    return Pipeline(config, source_kwargs).run()
