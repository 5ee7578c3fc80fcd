"""Synthetic two-domain corpora for tests, demos and the experiment grid.

Documents are bags of tokens drawn from four pools: class keywords, words
typical of the private domain, words typical of the public generator, and
shared filler. The simulated generator emits, per requested label, a mix of
in-domain documents (private style, correct class keywords) and off-domain
documents (public style, keywords often from another class). A good
private-vs-public discriminator therefore picks cleaner augmentation data
than uniform random selection.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import LabelVocab, Origin, TextRecord, save_jsonl

SPECIALTIES = [
    "cardiology", "neurology", "orthopedic", "gastroenterology", "urology",
    "radiology", "dermatology", "nephrology", "pediatrics", "psychiatry",
]


@dataclass(frozen=True)
class FixtureSpec:
    n_classes: int = 5
    class_probs: tuple[float, ...] | None = None  # default: geometric skew
    n_private: int = 1600
    test_fraction: float = 0.25
    n_public: int = 1200
    pool_per_class: int = 1500
    disc_test_size: int = 400
    doc_length: int = 40
    keyword_rate: float = 0.10
    style_rate: float = 0.25
    keywords_per_class: int = 30
    style_words: int = 40
    filler_words: int = 300
    in_domain_rate: float = 0.3
    in_domain_style_mix: float = 0.7  # share of private-style tokens in in-domain generations
    off_domain_label_noise: float = 0.6

    def probs(self) -> np.ndarray:
        if self.class_probs is not None:
            p = np.asarray(self.class_probs, dtype=float)
        else:
            p = 0.75 ** np.arange(self.n_classes)
        return p / p.sum()


@dataclass
class Fixture:
    vocab: LabelVocab
    private_train: list[TextRecord]
    private_test: list[TextRecord]
    public: list[TextRecord]
    pool: list[TextRecord]
    disc_test: list[tuple[str, int]]  # (text, 0 private / 1 public)

    def write(self, directory) -> dict[str, str]:
        """Write the corpora as JSONL plus the label vocabulary; return the paths."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {
            "labels": d / "labels.json",
            "private": d / "private.jsonl",
            "private_test": d / "private_test.jsonl",
            "public": d / "public.jsonl",
            "pool": d / "pool.jsonl",
        }
        self.vocab.save(paths["labels"])
        save_jsonl(self.private_train, paths["private"])
        save_jsonl(self.private_test, paths["private_test"])
        save_jsonl(self.public, paths["public"])
        save_jsonl(self.pool, paths["pool"])
        return {k: str(v) for k, v in paths.items()}


class _DocSampler:
    def __init__(self, spec: FixtureSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        zipf = 1.0 / np.arange(1, spec.keywords_per_class + 1)
        self.kw_p = zipf / zipf.sum()

    def doc(self, cls: int, private_style: float) -> str:
        """``private_style`` is the probability that a style token is private-domain."""
        s, rng = self.spec, self.rng
        n = s.doc_length
        kinds = rng.choice(3, size=n, p=[s.keyword_rate, s.style_rate, 1 - s.keyword_rate - s.style_rate])
        kw = rng.choice(s.keywords_per_class, size=n, p=self.kw_p)
        sty = rng.integers(s.style_words, size=n)
        fil = rng.integers(s.filler_words, size=n)
        style = np.where(rng.random(n) < private_style, "p", "g")
        return " ".join(
            f"k{cls}x{kw[i]}" if k == 0 else f"{style[i]}{sty[i]}" if k == 1 else f"f{fil[i]}"
            for i, k in enumerate(kinds)
        )

    def generated(self, label: int) -> str:
        """One simulated generator output for ``label``."""
        s, rng = self.spec, self.rng
        if rng.random() < s.in_domain_rate:
            return self.doc(label, s.in_domain_style_mix)
        cls = label
        if rng.random() < s.off_domain_label_noise:
            cls = int(rng.integers(s.n_classes))
        return self.doc(cls, 0.0)


def make_fixture(seed: int = 0, spec: FixtureSpec = FixtureSpec()) -> Fixture:
    rng = np.random.default_rng(seed)
    vocab = LabelVocab(SPECIALTIES[: spec.n_classes] if spec.n_classes <= len(SPECIALTIES)
                       else [f"class{i}" for i in range(spec.n_classes)])
    sampler = _DocSampler(spec, rng)
    p = spec.probs()

    labels = rng.choice(spec.n_classes, size=spec.n_private, p=p)
    private = [
        TextRecord(f"priv-{i:05d}", sampler.doc(int(c), 1.0), vocab[int(c)], Origin.PRIVATE)
        for i, c in enumerate(labels)
    ]
    n_test = int(round(spec.test_fraction * spec.n_private))
    private_test, private_train = private[:n_test], private[n_test:]

    public = []
    for i in range(spec.n_public):
        c = int(rng.integers(spec.n_classes))
        public.append(TextRecord(f"pub-{i:05d}", sampler.generated(c), vocab[c], Origin.PUBLIC))

    pool = []
    for c in range(spec.n_classes):
        for j in range(spec.pool_per_class):
            pool.append(TextRecord(f"gen-{c:02d}-{j:05d}", sampler.generated(c), vocab[c], Origin.SYNTHETIC))

    disc_test = []
    for i in range(spec.disc_test_size):
        c = int(rng.choice(spec.n_classes, p=p))
        if i % 2 == 0:
            disc_test.append((sampler.doc(c, 1.0), 0))
        else:
            disc_test.append((sampler.generated(int(rng.integers(spec.n_classes))), 1))
    return Fixture(vocab, private_train, private_test, public, pool, disc_test)
