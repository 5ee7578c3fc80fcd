import json
import math

import numpy as np
import pytest

from dpaug.augment import (
    Pipeline,
    ScoredCandidate,
    SelectionQuota,
    ShortageError,
    largest_remainder,
    quotas,
    run_pipeline,
    score_candidates,
    select,
    uniform_select,
)
from dpaug.config import NoiseSpec
from dpaug.corpus import BINARY_VOCAB, LabelVocab, Origin, TextRecord, load_jsonl, save_jsonl
from dpaug.dp_core import PrivacyBudget, compose_basic
from dpaug.pate_kd import PrivacyViolation
from dpaug.text_model import LinearModel
from dpaug.tutor import LabelDistribution
from helpers import run_config, write_fixture

AB = LabelVocab(["a", "b"])


def cand(rid, score, label=0, origin=Origin.SYNTHETIC):
    return ScoredCandidate(TextRecord(rid, "t", AB[label], origin), score)


@pytest.mark.parametrize("probs, total, expected", [
    ((0.6, 0.3, 0.1), 10, [6, 3, 1]),
    ((0.5, 0.5), 3, [2, 1]),
    ((1 / 3, 1 / 3, 1 / 3), 100, [34, 33, 33]),
    ((0.0, 1.0), 5, [0, 5]),
    ((0.25, 0.25, 0.5), 1, [0, 0, 1]),
])
def test_largest_remainder_examples(probs, total, expected):
    assert largest_remainder(probs, total) == expected


def test_largest_remainder_properties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = rng.dirichlet(np.ones(rng.integers(2, 12)))
        n = int(rng.integers(1, 5000))
        q = np.array(largest_remainder(p, n))
        assert q.sum() == n
        assert np.all(np.abs(q - p * n) < 1.0 + 1e-9)


def test_quotas_from_distribution():
    dist = LabelDistribution(np.array([0.6, 0.4]), AB, 1.0, 10)
    q = quotas(dist, 7)
    assert q.counts == (4, 3) and q.total == 7
    assert q.as_dict() == {"a": 4, "b": 3}
    with pytest.raises(ValueError):
        quotas(dist, 0)


def test_select_top_k():
    cands = [cand(f"c{i}", s) for i, s in enumerate([0.2, 0.9, 0.1, 0.7, 0.8])]
    data = select(cands, SelectionQuota((3, 0), AB))
    assert sorted(r.id for r in data.records) == ["c1", "c3", "c4"]
    assert data.class_counts() == [3, 0]


def test_select_shortage_reports_deficit():
    cands = [cand("a0", 0.5), cand("a1", 0.5), cand("b0", 0.5, 1)]
    with pytest.raises(ShortageError) as info:
        select(cands, SelectionQuota((2, 2), AB))
    assert info.value.deficits == {"b": 1}


def test_select_ties_prefer_lower_id():
    cands = [cand("z", 0.5), cand("m", 0.5), cand("q", 0.4)]
    data = select(cands, SelectionQuota((1, 0), AB))
    assert [r.id for r in data.records] == ["m"]


def test_select_min_score_filter():
    cands = [cand("x", 0.9), cand("y", 0.1)]
    with pytest.raises(ShortageError):
        select(cands, SelectionQuota((2, 0), AB), min_score=0.5)


def test_private_never_selected():
    with pytest.raises(PrivacyViolation):
        select([cand("p", 0.9, origin=Origin.PRIVATE)], SelectionQuota((1, 0), AB))


def test_uniform_select_matches_quota():
    cands = [cand(f"a{i}", i / 10) for i in range(10)] + [cand(f"b{i}", 0.5, 1) for i in range(5)]
    data = uniform_select(cands, SelectionQuota((4, 2), AB), seed=3)
    assert data.class_counts() == [4, 2]
    assert data.records == uniform_select(cands, SelectionQuota((4, 2), AB), seed=3).records


def test_score_candidates_is_private_probability():
    student = LinearModel(np.zeros((2, 16)), np.array([math.log(3.0), 0.0]), BINARY_VOCAB)
    scored = score_candidates(student, [TextRecord("c", "x y", AB[0], Origin.SYNTHETIC)])
    assert scored[0].score == pytest.approx(0.75)
    with pytest.raises(PrivacyViolation):
        score_candidates(student, [TextRecord("p", "x", AB[0], Origin.PRIVATE)])
    assert score_candidates(student, []) == []


@pytest.fixture(scope="module")
def fixture_paths(tmp_path_factory):
    return write_fixture(tmp_path_factory.mktemp("fixture"))


def test_pipeline_end_to_end(fixture_paths, tmp_path):
    cfg = run_config(fixture_paths, tmp_path / "run")
    data, report = run_pipeline(cfg)
    pipe = Pipeline(cfg)
    quota = pipe.quota()
    assert data.class_counts() == list(quota.counts) and quota.total == cfg.n_aug
    assert all(r.origin is Origin.SYNTHETIC for r in data.records)
    written = load_jsonl(tmp_path / "run" / "augmented.jsonl", pipe.vocab)
    assert written == data.records
    ledger = pipe.load_ledger()
    assert ledger.closed and [e.mechanism_id for e in ledger.events] == ["KD", "tutor"]
    assert ledger.events[0].query_count == cfg.queries
    total = compose_basic([PrivacyBudget(**b) for b in report["mechanisms"].values()])
    assert report["total"] == {"epsilon": total.epsilon, "delta": total.delta}
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["ledger_digest"] == ledger.digest()
    assert manifest["config"]["seeds"] == pipe.config.seeds
    with pytest.raises(FileExistsError):
        run_pipeline(cfg)


def test_pipeline_deterministic(fixture_paths, tmp_path):
    a = run_config(fixture_paths, tmp_path / "a")
    b = run_config(fixture_paths, tmp_path / "b")
    run_pipeline(a)
    run_pipeline(b)
    for name in ("augmented.jsonl", "ledger.json", "tutor.json", "student.lm", "budget_report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_scoring_more_candidates_leaves_ledger_unchanged(fixture_paths, tmp_path):
    small = run_config(fixture_paths, tmp_path / "small", n_aug=20, oversample=1.5)
    large = run_config(fixture_paths, tmp_path / "large", n_aug=20, oversample=15.0)
    _, r1 = run_pipeline(small)
    _, r2 = run_pipeline(large)
    m1 = json.loads((tmp_path / "small" / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "large" / "manifest.json").read_text())
    assert m2["candidates_scored"] >= 9 * m1["candidates_scored"]
    assert r1["total"] == r2["total"]
    assert m1["ledger_digest"] == m2["ledger_digest"]


def test_doubling_queries_raises_kd_epsilon(fixture_paths, tmp_path):
    reports = []
    for q in (40, 80):
        cfg = run_config(fixture_paths, tmp_path / f"q{q}", queries=q, kd=NoiseSpec(sigma=6.0))
        reports.append(run_pipeline(cfg)[1])
    assert reports[1]["mechanisms"]["KD"]["epsilon"] > reports[0]["mechanisms"]["KD"]["epsilon"]


def test_stage_requires_inputs(fixture_paths, tmp_path):
    pipe = Pipeline(run_config(fixture_paths, tmp_path / "empty"))
    with pytest.raises(FileNotFoundError, match="shard_plan.json|labels.json|private.jsonl"):
        pipe.train_teachers()


def test_shortage_triggers_one_refill(fixture_paths, tmp_path):
    cfg = run_config(fixture_paths, tmp_path / "refill", oversample=1.0)
    pipe = Pipeline(cfg)
    for stage in (pipe.ingest, pipe.partition, pipe.train_teachers, pipe.distill, pipe.tutor, pipe.generate):
        stage()
    n_before = len(load_jsonl(pipe.path(pipe.CANDIDATES), pipe.vocab))
    # drop a third of the candidates so the first select pass comes up short
    cands = load_jsonl(pipe.path(pipe.CANDIDATES), pipe.vocab)
    save_jsonl(cands[: 2 * len(cands) // 3], pipe.path(pipe.CANDIDATES))
    data = pipe.select()
    assert data.class_counts() == list(pipe.quota().counts)
    assert len(load_jsonl(pipe.path(pipe.CANDIDATES), pipe.vocab)) > 2 * n_before // 3
