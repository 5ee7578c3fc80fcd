"""Downstream metrics and the seeded experiment grid."""
from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import largest_remainder, quotas, score_candidates, select, uniform_select
from .candidate_source import FileSource, GenerationRequest
from .corpus import dedup, partition
from .dp_core import AccountingLedger, GaussianNoise, PrivacyBudget, calibrate_sigma, calibrate_sigma_composed
from .fixtures import FixtureSpec, make_fixture
from .pate_kd import (
    KD_SENSITIVITY,
    DistillationConfig,
    aggregate_votes_many,
    distill_student_with_report,
    train_teachers,
)
from .text_model import TrainConfig, train
from .tutor import TUTOR_SENSITIVITY, label_counts, noisy_label_distribution

log = logging.getLogger(__name__)

METHODS = ("private", "random", "ours")


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: list[dict]
    support: list[int]
    averaging: str = "weighted"


def metrics(predictions: Sequence[int], golds: Sequence[int], n_classes: int) -> MetricsReport:
    """Accuracy and support-weighted precision / recall / F1.

    Classes absent from ``golds`` carry zero weight; a class never predicted
    has precision 0.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(golds, dtype=np.int64)
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predictions vs {len(gold)} golds")
    if len(gold) == 0:
        raise ValueError("metrics need at least one prediction")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (gold, pred), 1)
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(predicted > 0, tp / predicted, 0.0)
        rec = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    w = support / support.sum()
    per_class = [
        {"class": i, "precision": float(prec[i]), "recall": float(rec[i]), "f1": float(f1[i]),
         "support": int(support[i])}
        for i in range(n_classes)
    ]
    return MetricsReport(
        accuracy=float(tp.sum() / len(gold)),
        precision=float(w @ prec),
        recall=float(w @ rec),
        f1=float(w @ f1),
        per_class=per_class,
        support=[int(s) for s in support],
    )


@dataclass
class ExperimentGrid:
    epsilons: list[float] = field(default_factory=lambda: [4.0])
    seeds: list[int] = field(default_factory=lambda: [0])
    n_aug: list[int] = field(default_factory=lambda: [500])
    teachers: list[int] = field(default_factory=lambda: [15])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    queries: int = 500
    kd_delta: float = 1e-6
    tutor_epsilon: float = 0.4
    tutor_delta: float = 1e-6
    oversample: float = 4.0
    model: TrainConfig = field(default_factory=lambda: TrainConfig(dim=2**14))
    fixture: FixtureSpec = field(default_factory=FixtureSpec)

    def __post_init__(self):
        for axis in ("epsilons", "seeds", "n_aug", "teachers", "methods"):
            if not getattr(self, axis):
                raise ValueError(f"grid axis {axis!r} is empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentGrid":
        d = dict(d)
        if "model" in d:
            d["model"] = TrainConfig(**d["model"])
        if "fixture" in d:
            fx = dict(d["fixture"])
            if fx.get("class_probs") is not None:
                fx["class_probs"] = tuple(fx["class_probs"])
            d["fixture"] = FixtureSpec(**fx)
        return cls(**d)


def _seeded(cfg: TrainConfig, *parts: int) -> TrainConfig:
    return replace(cfg, seed=int(np.random.SeedSequence(list(parts)).generate_state(1)[0]))


def run_point(grid: ExperimentGrid, seed: int, epsilon: float, n_teachers: int, n_aug: int) -> dict:
    """One grid point: the full pipeline in memory plus all comparators."""
    fx = make_fixture(seed, grid.fixture)
    vocab = fx.vocab
    private = dedup(fx.private_train)
    ledger = AccountingLedger()

    plan = partition(private, n_teachers, seed)
    ensemble = train_teachers(plan.shard_records(private), fx.public, _seeded(grid.model, seed, 1), plan)

    source = FileSource(fx.pool)
    per_label = largest_remainder([1.0] * len(vocab), grid.queries)
    queries = [r for lab, n in zip(vocab, per_label) if n for r in source.next_batch(GenerationRequest(lab, n))]
    sigma_kd = calibrate_sigma_composed(PrivacyBudget(epsilon, grid.kd_delta), KD_SENSITIVITY, grid.queries)
    dcfg = DistillationConfig(sigma_kd, grid.queries, _seeded(grid.model, seed, 2), seed)
    student, dreport = distill_student_with_report(ensemble, queries, dcfg, ledger)

    # discriminator diagnostics on the constructed private-vs-public test set
    texts = [t for t, _ in fx.disc_test]
    gold = np.array([y for _, y in fx.disc_test])
    votes = aggregate_votes_many(ensemble, texts)
    noise = GaussianNoise(seed + 7919).normal(sigma_kd, votes.size).reshape(votes.shape)
    disc = {
        "teachers_accuracy": float(np.mean(np.argmax(votes, axis=1) == gold)),
        "teachers_noise_accuracy": float(np.mean(np.argmax(votes + noise, axis=1) == gold)),
        "student_accuracy": float(np.mean(student.predict_texts(texts) == gold)),
    }

    sigma_tutor = calibrate_sigma(PrivacyBudget(grid.tutor_epsilon, grid.tutor_delta), TUTOR_SENSITIVITY)
    dist = noisy_label_distribution(private, vocab, sigma_tutor, GaussianNoise(seed + 104729), ledger)
    quota = quotas(dist, n_aug)
    counts = [int(np.ceil(q * grid.oversample)) for q in quota.counts]
    pool = [r for lab, n in zip(vocab, counts) if n for r in source.next_batch(GenerationRequest(lab, n))]
    scored = score_candidates(student, pool)

    test_texts = [r.text for r in fx.private_test]
    test_gold = [r.label.index for r in fx.private_test]
    down_cfg = _seeded(grid.model, seed, 3)
    results = {}
    for method in grid.methods:
        if method == "private":
            train_set = private
        elif method == "random":
            train_set = private + uniform_select(scored, quota, seed).records
        else:
            train_set = private + select(scored, quota, seed).records
        model = train(train_set, vocab, down_cfg)
        results[method] = asdict(metrics(model.predict_texts(test_texts), test_gold, len(vocab)))

    budgets = ledger.budgets({"KD": grid.kd_delta, "tutor": grid.tutor_delta})
    true_hist = label_counts(private, len(vocab)) / len(private)
    return {
        "seed": seed,
        "epsilon": epsilon,
        "teachers": n_teachers,
        "n_aug": n_aug,
        "sigma_kd": sigma_kd,
        "sigma_tutor": sigma_tutor,
        "discriminator": disc,
        "distillation": dreport,
        "downstream": results,
        "quota": quota.as_dict(),
        "label_distribution": {"labels": vocab.names, "private": true_hist.tolist(), "tutor": dist.probs.tolist()},
        "budget": {k: asdict(v) for k, v in budgets.items()},
    }


def run_experiment(grid: ExperimentGrid, out_dir=None) -> dict:
    """Run every grid point; optionally write per-point JSON and aggregate CSVs.

    CSV ``points.csv`` columns: seed, epsilon, teachers, n_aug, sigma_kd,
    teachers_accuracy, teachers_noise_accuracy, student_accuracy.
    CSV ``downstream.csv`` columns: seed, epsilon, teachers, n_aug, method,
    accuracy, precision, recall, f1.
    CSV ``label_distribution.csv`` columns: seed, label, private, tutor.
    """
    points = []
    for eps, m, n_aug, seed in itertools.product(grid.epsilons, grid.teachers, grid.n_aug, grid.seeds):
        log.info("grid point eps=%s teachers=%s n_aug=%s seed=%s", eps, m, n_aug, seed)
        points.append(run_point(grid, seed, eps, m, n_aug))

    point_rows = [
        {k: p[k] for k in ("seed", "epsilon", "teachers", "n_aug", "sigma_kd")} | p["discriminator"]
        for p in points
    ]
    down_rows = [
        {k: p[k] for k in ("seed", "epsilon", "teachers", "n_aug")}
        | {"method": meth}
        | {k: r[k] for k in ("accuracy", "precision", "recall", "f1")}
        for p in points
        for meth, r in p["downstream"].items()
    ]
    dist_rows = []
    seen = set()
    for p in points:
        if p["seed"] in seen:
            continue
        seen.add(p["seed"])
        ld = p["label_distribution"]
        for lab, a, b in zip(ld["labels"], ld["private"], ld["tutor"]):
            dist_rows.append({"seed": p["seed"], "label": lab, "private": a, "tutor": b})

    result = {"points": points, "tables": {"points": point_rows, "downstream": down_rows,
                                             "label_distribution": dist_rows}}
    if out_dir is not None:
        out = Path(out_dir)
        (out / "points").mkdir(parents=True, exist_ok=True)
        for i, p in enumerate(points):
            (out / "points" / f"point_{i:04d}.json").write_text(json.dumps(p, indent=2, sort_keys=True) + "\n")
        for name, rows in result["tables"].items():
            write_csv(out / f"{name}.csv", rows)
    return result


def write_csv(path, rows: list[dict]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
