"""Differentially private text augmentation.

A teacher ensemble trained on disjoint private shards labels public
candidates through a noisy vote; the distilled student scores generated text
for private-likeness, and a noisy label histogram sets per-class quotas.
Every release goes through :class:`~dpaug.dp_core.AccountingLedger`.
"""
from .augment import AugmentedDataset, Pipeline, run_pipeline
from .config import NoiseSpec, RunConfig
from .corpus import LabelVocab, Origin, TextRecord
from .dp_core import (
    AccountingLedger,
    MechanismParams,
    PrivacyBudget,
    calibrate_sigma,
    calibrate_sigma_composed,
    compose_basic,
    gaussian_delta,
)

__all__ = [
    "AccountingLedger",
    "AugmentedDataset",
    "LabelVocab",
    "MechanismParams",
    "NoiseSpec",
    "Origin",
    "Pipeline",
    "PrivacyBudget",
    "RunConfig",
    "TextRecord",
    "calibrate_sigma",
    "calibrate_sigma_composed",
    "compose_basic",
    "gaussian_delta",
    "run_pipeline",
]
__version__ = "0.1.0"
