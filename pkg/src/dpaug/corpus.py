"""Text records, label vocabularies, normalization, dedup and teacher sharding."""
from __future__ import annotations

import enum
import json
import os
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

_WS = re.compile(r"\s+")


class Origin(str, enum.Enum):
    PRIVATE = "private"
    PUBLIC = "public"
    SYNTHETIC = "synthetic"


class CorpusFormatError(ValueError):
    """A corpus file could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class IntegrityError(RuntimeError):
    """A private record would reach more than one teacher."""


@dataclass(frozen=True)
class ClassLabel:
    index: int
    name: str


class LabelVocab:
    """Ordered class names; a label's index is its position."""

    def __init__(self, names: Sequence[str]):
        names = list(names)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate class names in {names}")
        self.names = names
        self._index = {n: i for i, n in enumerate(names)}

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return (ClassLabel(i, n) for i, n in enumerate(self.names))

    def __eq__(self, other):
        return isinstance(other, LabelVocab) and self.names == other.names

    def __repr__(self):
        return f"LabelVocab({self.names!r})"

    def __getitem__(self, key: int | str) -> ClassLabel:
        if isinstance(key, str):
            if key not in self._index:
                raise KeyError(f"unknown label {key!r}; vocabulary is {self.names}")
            return ClassLabel(self._index[key], key)
        if not 0 <= key < len(self.names):
            raise IndexError(f"label index {key} outside [0, {len(self.names)})")
        return ClassLabel(key, self.names[key])

    def __contains__(self, name):
        return name in self._index

    @classmethod
    def load(cls, path) -> "LabelVocab":
        with open(path, encoding="utf-8-sig") as fh:
            names = json.load(fh)
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise CorpusFormatError(f"{path}: label vocabulary must be a JSON array of strings")
        return cls(names)

    def save(self, path):
        Path(path).write_text(json.dumps(self.names, ensure_ascii=False) + "\n", encoding="utf-8")


# Discriminator vocabulary: index 0 = drawn from the private set, 1 = public.
BINARY_VOCAB = LabelVocab(["private", "public"])


@dataclass(frozen=True)
class TextRecord:
    id: str
    text: str
    label: ClassLabel
    origin: Origin

    def __post_init__(self):
        object.__setattr__(self, "origin", Origin(self.origin))

    def with_text(self, text: str) -> "TextRecord":
        return TextRecord(self.id, text, self.label, self.origin)


def normalize(text: str) -> str:
    """Lowercase, drop Unicode punctuation (category P*), collapse whitespace."""
    text = "".join(ch for ch in text.lower() if not unicodedata.category(ch).startswith("P"))
    return _WS.sub(" ", text).strip()


def normalize_records(records: Iterable[TextRecord], drop_empty: bool = True) -> list[TextRecord]:
    out = []
    for r in records:
        t = normalize(r.text)
        if t or not drop_empty:
            out.append(r.with_text(t))
    return out


def dedup(records: Iterable[TextRecord]) -> list[TextRecord]:
    """Keep the first occurrence of every (text, label) pair; order is stable."""
    seen = set()
    out = []
    for r in records:
        key = (r.text, r.label.index)
        if key not in seen:
            seen.add(key)
            out.append(r)
    return out


@dataclass(frozen=True)
class ShardPlan:
    """Record id -> shard index for ``M`` disjoint shards."""

    M: int
    assignments: Mapping[str, int]
    seed: int

    def sizes(self) -> list[int]:
        sizes = [0] * self.M
        for s in self.assignments.values():
            sizes[s] += 1
        return sizes

    def shard_records(self, records: Sequence[TextRecord]) -> list[list[TextRecord]]:
        """Split ``records`` by id under this plan, keeping input order within a shard."""
        shards: list[list[TextRecord]] = [[] for _ in range(self.M)]
        for r in records:
            if r.id not in self.assignments:
                raise KeyError(f"record {r.id!r} is not covered by the shard plan")
            shards[self.assignments[r.id]].append(r)
        return shards

    @classmethod
    def from_shards(cls, shard_ids: Sequence[Sequence[str]], seed: int = 0) -> "ShardPlan":
        assignments: dict[str, int] = {}
        for m, ids in enumerate(shard_ids):
            for rid in ids:
                if rid in assignments:
                    raise IntegrityError(
                        f"record {rid!r} assigned to shards {assignments[rid]} and {m}"
                    )
                assignments[rid] = m
        return cls(len(shard_ids), assignments, seed)

    def to_dict(self) -> dict:
        return {"M": self.M, "seed": self.seed, "assignments": dict(sorted(self.assignments.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "ShardPlan":
        return cls(int(d["M"]), {k: int(v) for k, v in d["assignments"].items()}, int(d["seed"]))


def partition(records: Sequence[TextRecord], M: int, seed: int) -> ShardPlan:
    """Seeded shuffle, then round-robin into ``M`` shards.

    The shuffle is numpy's Fisher-Yates (``Generator.permutation``) over a
    PCG64 stream. Shard ``i`` gets shuffled positions ``i, i + M, ...`` so
    lower shard indices receive the extra records.
    """
    if M < 1:
        raise ValueError(f"shard count must be >= 1, got {M}")
    if M > len(records):
        raise ValueError(f"cannot split {len(records)} records into {M} non-empty shards")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise IntegrityError("record ids are not unique")
    order = np.random.default_rng(seed).permutation(len(records))
    assignments = {ids[j]: pos % M for pos, j in enumerate(order)}
    return ShardPlan(M, assignments, seed)


def train_test_split(records: Sequence[TextRecord], test_fraction: float, seed: int):
    order = np.random.default_rng(seed).permutation(len(records))
    n_test = int(round(test_fraction * len(records)))
    test = sorted(order[:n_test])
    train = sorted(order[n_test:])
    return [records[i] for i in train], [records[i] for i in test]


# --------------------------------------------------------------------------
# JSONL
# --------------------------------------------------------------------------


def record_to_json(r: TextRecord) -> dict:
    return {"id": r.id, "text": r.text, "label": r.label.name, "origin": r.origin.value}


def load_jsonl(path, vocab: LabelVocab) -> list[TextRecord]:
    records = []
    with open(path, encoding="utf-8-sig") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}: invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise CorpusFormatError(f"{path}: expected a JSON object", lineno)
            missing = [k for k in ("id", "text", "label", "origin") if k not in obj]
            if missing:
                raise CorpusFormatError(f"{path}: missing key(s) {missing}", lineno)
            if obj["label"] not in vocab:
                raise CorpusFormatError(
                    f"{path}: unknown label {obj['label']!r}; vocabulary is {vocab.names}", lineno
                )
            try:
                origin = Origin(obj["origin"])
            except ValueError:
                raise CorpusFormatError(
                    f"{path}: origin must be one of {[o.value for o in Origin]}", lineno
                ) from None
            records.append(TextRecord(str(obj["id"]), obj["text"], vocab[obj["label"]], origin))
    return records


def save_jsonl(records: Iterable[TextRecord], path) -> None:
    """Write one JSON object per line; written via a temp file then renamed."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(record_to_json(r), ensure_ascii=False, sort_keys=True) + "\n")
    os.replace(tmp, path)
