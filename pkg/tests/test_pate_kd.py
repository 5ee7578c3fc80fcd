import math

import numpy as np
import pytest

from dpaug.corpus import BINARY_VOCAB, IntegrityError, LabelVocab, Origin, ShardPlan, TextRecord, partition
from dpaug.dp_core import AccountingLedger, GaussianNoise, LedgerClosedError
from dpaug.pate_kd import (
    KD_SENSITIVITY,
    PRIVATE,
    PUBLIC,
    DistillationConfig,
    PrivacyViolation,
    TeacherEnsemble,
    VoteVector,
    aggregate_votes,
    aggregate_votes_many,
    distill_student,
    distill_student_with_report,
    noisy_label,
    teacher_probs,
    train_teachers,
)
from dpaug.text_model import LinearModel, TrainConfig

VOCAB = LabelVocab(["cardiology", "neurology"])
CFG = TrainConfig(dim=1024, epochs=30)


def doc(rng, prefix, n=12):
    words = [f"{prefix}{rng.integers(20)}" for _ in range(n // 2)] + [f"w{rng.integers(50)}" for _ in range(n // 2)]
    rng.shuffle(words)
    return " ".join(words)


def corpus(n_private, n_public, seed=0):
    rng = np.random.default_rng(seed)
    private = [TextRecord(f"p{i:04d}", doc(rng, "priv"), VOCAB[i % 2], Origin.PRIVATE) for i in range(n_private)]
    public = [TextRecord(f"q{i:04d}", doc(rng, "pub"), VOCAB[i % 2], Origin.PUBLIC) for i in range(n_public)]
    return private, public


def fixed_teacher(p0):
    return LinearModel(np.zeros((2, 8)), np.log(np.array([p0, 1 - p0])), BINARY_VOCAB)


def test_three_teachers_ten_plus_ten():
    private, public = corpus(30, 30)
    plan = partition(private, 3, seed=0)
    ens = train_teachers(plan.shard_records(private), public, CFG, plan)
    assert ens.M == 3
    assert plan.sizes() == [10, 10, 10]
    # negatives are split 10/10/10 as well; every teacher fits its 20 records
    for m, shard in enumerate(plan.shard_records(private)):
        assert len(shard) == 10
        assert (ens.teachers[m].predict_texts([r.text for r in shard]) == PRIVATE).all()


def test_overlapping_shards_rejected():
    private, public = corpus(6, 6)
    with pytest.raises(IntegrityError):
        train_teachers([private[:4], private[3:]], public, CFG)


def test_empty_shard_and_public_in_shard_rejected():
    private, public = corpus(6, 6)
    with pytest.raises(ValueError, match="empty"):
        train_teachers([private, []], public, CFG)
    with pytest.raises(ValueError, match="non-private"):
        train_teachers([private[:3], public[:3]], public, CFG)
    with pytest.raises(PrivacyViolation):
        train_teachers([private[:3], private[3:]], public + private[:1], CFG)


def test_teachers_fit_separable_corpus():
    private, public = corpus(150, 150)
    plan = partition(private, 5, seed=1)
    ens = train_teachers(plan.shard_records(private), public, CFG, plan)
    negs = partition(public, 5, CFG.seed).shard_records(public)
    for m, (pos, neg) in enumerate(zip(plan.shard_records(private), negs)):
        texts = [r.text for r in pos + neg]
        gold = np.array([PRIVATE] * len(pos) + [PUBLIC] * len(neg))
        assert np.mean(ens.teachers[m].predict_texts(texts) == gold) >= 0.95


def test_vote_sums():
    ens = TeacherEnsemble([fixed_teacher(0.9), fixed_teacher(0.7)], ShardPlan(2, {}, 0))
    v = aggregate_votes(ens, TextRecord("c", "any text", VOCAB[0], Origin.SYNTHETIC))
    np.testing.assert_allclose(v.sums, [1.6, 0.4])
    assert teacher_probs(ens, ["x", "y"]).shape == (2, 2, 2)


def test_uniform_teachers_vote_half():
    M = 7
    ens = TeacherEnsemble([fixed_teacher(0.5)] * M, ShardPlan(M, {}, 0))
    np.testing.assert_allclose(aggregate_votes_many(ens, ["a", "b"]), M / 2)


def test_noisy_label_vanishing_noise():
    rng = GaussianNoise(0)
    assert noisy_label(VoteVector(np.array([15.0, 0.0]), 15), 1e-9, rng).label == PRIVATE
    assert noisy_label(VoteVector(np.array([7.4, 7.6]), 15), 1e-9, rng).label == PUBLIC


def test_noisy_label_tie_goes_to_lower_index():
    class Zero:
        def normal(self, sigma, n):
            return np.zeros(n)

    assert noisy_label(VoteVector(np.array([3.0, 3.0]), 6), 1.0, Zero()).label == 0


def test_flip_rate_follows_normal_cdf():
    sigma, g, n = 6.0, 6.0, 20000
    rng = GaussianNoise(42)
    votes = VoteVector(np.array([g, 0.0]), 15)
    flips = sum(noisy_label(votes, sigma, rng).label != 0 for _ in range(n))
    p = 0.5 * math.erfc(g / (sigma * math.sqrt(2)) / math.sqrt(2))
    assert abs(flips / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_near_noiseless_distillation_agrees_with_teachers():
    private, public = corpus(300, 600, seed=3)
    plan = partition(private, 15, seed=0)
    ens = train_teachers(plan.shard_records(private), public[:300], CFG, plan)
    rng = np.random.default_rng(9)
    queries = [TextRecord(f"s{i}", doc(rng, "priv" if i % 2 else "pub"), VOCAB[0], Origin.SYNTHETIC)
               for i in range(400)]
    test = [doc(rng, "priv" if i % 2 else "pub") for i in range(400)]
    ledger = AccountingLedger()
    student = distill_student(ens, queries, DistillationConfig(1e-9, 400, CFG, 0), ledger)
    target = np.argmax(aggregate_votes_many(ens, test), axis=1)
    assert np.mean(student.predict_texts(test) == target) >= 0.98


def test_ledger_records_one_kd_event():
    private, public = corpus(60, 60)
    plan = partition(private, 3, 0)
    ens = train_teachers(plan.shard_records(private), public, CFG, plan)
    rng = np.random.default_rng(1)
    queries = [TextRecord(f"s{i}", doc(rng, "priv" if i % 2 else "pub"), VOCAB[1], Origin.SYNTHETIC)
               for i in range(500)]
    ledger = AccountingLedger()
    _, report = distill_student_with_report(ens, queries, DistillationConfig(0.5, 500, CFG, 0), ledger)
    assert len(ledger.events) == 1
    ev = ledger.events[0]
    assert ev.mechanism_id == "KD" and ev.query_count == 500
    assert ev.params.sensitivity == KD_SENSITIVITY and ev.params.sigma == 0.5
    assert report["queries"] == 500 and 0 <= report["noisy_label_agreement"] <= 1


def test_distillation_guards():
    private, public = corpus(20, 20)
    plan = partition(private, 2, 0)
    ens = train_teachers(plan.shard_records(private), public, CFG, plan)
    cfg = DistillationConfig(1.0, 5, CFG, 0)
    with pytest.raises(PrivacyViolation):
        distill_student(ens, private[:3], cfg, AccountingLedger())
    with pytest.raises(ValueError):
        distill_student(ens, [], cfg, AccountingLedger())
    with pytest.raises(ValueError, match="budget"):
        distill_student(ens, public[:6], cfg, AccountingLedger())
    closed = AccountingLedger()
    closed.close()
    with pytest.raises(LedgerClosedError):
        distill_student(ens, public[:4], cfg, closed)
    with pytest.raises(ValueError):
        DistillationConfig(0.0, 5)


def test_substitution_changes_one_teacher():
    private, public = corpus(40, 40)
    plan = partition(private, 4, 0)
    a = train_teachers(plan.shard_records(private), public, CFG, plan)
    victim = private[17]
    swapped = [r if r.id != victim.id else r.with_text("completely different words here") for r in private]
    b = train_teachers(plan.shard_records(swapped), public, CFG, plan)
    changed = [m for m in range(4) if a.teachers[m].to_bytes() != b.teachers[m].to_bytes()]
    assert changed == [plan.assignments[victim.id]]


def test_ensemble_save_load(tmp_path):
    private, public = corpus(20, 20)
    plan = partition(private, 2, 5)
    ens = train_teachers(plan.shard_records(private), public, CFG, plan)
    ens.save(tmp_path / "t")
    back = TeacherEnsemble.load(tmp_path / "t")
    assert back.plan == plan
    assert [t.to_bytes() for t in back.teachers] == [t.to_bytes() for t in ens.teachers]
