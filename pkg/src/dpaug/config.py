"""Run configuration: JSON key/value document, dotted overrides, resolution."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .candidate_source import SourceConfig
from .dp_core import PrivacyBudget, calibrate_sigma, calibrate_sigma_composed
from .text_model import TrainConfig

SENSITIVITY = math.sqrt(2.0)
SEED_NAMES = ("partition", "teachers", "kd_noise", "student", "tutor_noise", "generate", "select")


class ConfigError(ValueError):
    pass


@dataclass
class NoiseSpec:
    """Either ``sigma`` or an (``epsilon``, ``delta``) target.

    ``delta`` may accompany ``sigma``; it is then only used for reporting.
    """

    sigma: float | None = None
    epsilon: float | None = None
    delta: float = 1e-6

    def check(self, name: str):
        if self.sigma is not None and self.epsilon is not None:
            raise ConfigError(f"{name}: give either sigma or epsilon, not both")
        if self.sigma is None and self.epsilon is None:
            raise ConfigError(f"{name}: one of sigma or epsilon is required")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError(f"{name}: sigma must be > 0")
        if self.epsilon is not None and not self.epsilon >= 0:
            raise ConfigError(f"{name}: epsilon must be >= 0")
        if not 0 < self.delta < 1:
            raise ConfigError(f"{name}: delta must lie in (0, 1)")


@dataclass
class RunConfig:
    private_path: str | None = None
    public_path: str | None = None
    labels_path: str | None = None
    out_dir: str = "run"
    teachers: int = 15
    kd: NoiseSpec = field(default_factory=lambda: NoiseSpec(epsilon=4.0))
    tutor: NoiseSpec = field(default_factory=lambda: NoiseSpec(epsilon=0.4))
    queries: int = 500
    n_aug: int = 500
    oversample: float = 4.0
    min_score: float | None = None
    merge_pools: bool = False
    seed: int = 0
    seeds: dict[str, int] = field(default_factory=dict)
    model: TrainConfig = field(default_factory=lambda: TrainConfig(dim=2**14))
    source: SourceConfig | None = None
    template_file: str | None = None

    def check(self):
        if self.teachers < 1:
            raise ConfigError(f"teachers must be >= 1, got {self.teachers}")
        if self.queries < 1:
            raise ConfigError(f"queries must be >= 1, got {self.queries}")
        if self.n_aug < 1:
            raise ConfigError(f"n_aug must be >= 1, got {self.n_aug}")
        if not self.oversample >= 1:
            raise ConfigError(f"oversample must be >= 1, got {self.oversample}")
        self.kd.check("kd")
        self.tutor.check("tutor")

    def resolved(self) -> "RunConfig":
        """Copy with every seed explicit."""
        cfg = copy.deepcopy(self)
        for i, name in enumerate(SEED_NAMES):
            cfg.seeds.setdefault(name, self.seed * 1000 + i)
        unknown = set(cfg.seeds) - set(SEED_NAMES)
        if unknown:
            raise ConfigError(f"unknown seed names {sorted(unknown)}")
        cfg.check()
        return cfg

    def sigma_kd(self) -> float:
        if self.kd.sigma is not None:
            return self.kd.sigma
        return calibrate_sigma_composed(PrivacyBudget(self.kd.epsilon, self.kd.delta), SENSITIVITY, self.queries)

    def sigma_tutor(self) -> float:
        if self.tutor.sigma is not None:
            return self.tutor.sigma
        return calibrate_sigma(PrivacyBudget(self.tutor.epsilon, self.tutor.delta), SENSITIVITY)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source"] = None if self.source is None else asdict(self.source)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            if "kd" in d:
                d["kd"] = NoiseSpec(**d["kd"])
            if "tutor" in d:
                d["tutor"] = NoiseSpec(**d["tutor"])
            if "model" in d:
                d["model"] = TrainConfig(**d["model"])
            if d.get("source") is not None:
                d["source"] = SourceConfig(**d["source"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8-sig"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def apply_override(d: dict, assignment: str) -> dict:
    """Set ``a.b.c=value`` in a nested dict; value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = d
    parts = key.strip().split(".")
    for p in parts[:-1]:
        if node.get(p) is None:
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value
    return d
