"""Gaussian-mechanism mathematics, noise sampling and privacy accounting.

The (epsilon, delta) curve of a Gaussian mechanism with L2 sensitivity
``sensitivity`` and noise scale ``sigma`` is

    delta(eps) = Phi(mu/2 - eps/mu) - exp(eps) * Phi(-mu/2 - eps/mu),   mu = sensitivity / sigma

which is also the (epsilon, delta) dual of a mu-GDP trade-off function.
Repeated homogeneous Gaussian queries compose as mu * sqrt(T).
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import log_ndtr

SQRT2 = math.sqrt(2.0)

SIGMA_BRACKET = (1e-6, 1e6)


class LedgerClosedError(RuntimeError):
    """Raised when appending to a ledger that has been closed."""


@dataclass(frozen=True)
class MechanismParams:
    sensitivity: float
    sigma: float

    def __post_init__(self):
        if not (self.sensitivity >= 0 and math.isfinite(self.sensitivity)):
            raise ValueError(f"sensitivity must be finite and >= 0, got {self.sensitivity}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")

    @property
    def mu(self) -> float:
        return self.sensitivity / self.sigma if math.isfinite(self.sigma) else 0.0


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")


@dataclass(frozen=True)
class GdpParam:
    mu: float

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")


@dataclass(frozen=True)
class NoiseVector:
    values: np.ndarray
    sigma: float
    seed_tag: int

    def __len__(self):
        return len(self.values)


# --------------------------------------------------------------------------
# Normal CDF and the Gaussian (epsilon, delta) curve
# --------------------------------------------------------------------------


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF, accurate in both tails (erfc based)."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"std_normal_cdf needs a finite argument, got {x}")
    return 0.5 * math.erfc(-x / SQRT2)


def _delta_for_mu(mu: float, epsilon: float) -> float:
    if mu == 0.0:
        return 0.0
    a = mu / 2.0 - epsilon / mu
    b = -mu / 2.0 - epsilon / mu
    # exp(eps) * Phi(b) in log space: exp(eps) alone overflows for eps > ~709
    second = math.exp(epsilon + float(log_ndtr(b))) if b > -1e150 else 0.0
    return min(1.0, max(0.0, std_normal_cdf(a) - second))


def gaussian_delta(epsilon: float, params: MechanismParams) -> float:
    """Tight delta at ``epsilon`` for one release of a Gaussian mechanism."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if params.sensitivity == 0.0:
        return 0.0
    return _delta_for_mu(params.mu, float(epsilon))


def calibrate_sigma(target: PrivacyBudget, sensitivity: float, rtol: float = 1e-12) -> float:
    """Smallest sigma whose Gaussian mechanism meets ``target``.

    Bisection over ``SIGMA_BRACKET``; the returned value is the upper end of
    the final bracket so ``gaussian_delta(target.epsilon, ...) <= target.delta``
    always holds.
    """
    if not 0.0 < target.delta < 1.0:
        raise ValueError(f"delta must lie strictly inside (0, 1), got {target.delta}")
    if not sensitivity > 0:
        raise ValueError(f"sensitivity must be > 0, got {sensitivity}")

    def delta_at(sigma):
        return gaussian_delta(target.epsilon, MechanismParams(sensitivity, sigma))

    lo, hi = SIGMA_BRACKET
    if delta_at(hi) > target.delta:
        raise ValueError(f"no sigma <= {hi:g} reaches {target}")
    if delta_at(lo) <= target.delta:
        return lo
    while (hi - lo) > rtol * hi:
        mid = 0.5 * (lo + hi)
        if delta_at(mid) <= target.delta:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_sigma_composed(target: PrivacyBudget, sensitivity: float, queries: int) -> float:
    """Per-query sigma so that ``queries`` Gaussian releases jointly meet ``target``.

    T homogeneous queries with ratio sensitivity/sigma are one Gaussian with
    ratio sqrt(T) * sensitivity / sigma, so this is a plain calibration at
    sensitivity * sqrt(T).
    """
    if queries < 1:
        raise ValueError(f"queries must be >= 1, got {queries}")
    return calibrate_sigma(target, sensitivity * math.sqrt(queries))


# --------------------------------------------------------------------------
# Gaussian-DP composition and conversion
# --------------------------------------------------------------------------


def compose_gdp(per_query: GdpParam, query_count: int) -> GdpParam:
    if query_count < 1:
        raise ValueError(f"query_count must be >= 1, got {query_count}")
    if query_count == 1:
        return per_query
    return GdpParam(per_query.mu * math.sqrt(query_count))


def gdp_to_budget(mu: GdpParam, epsilon: float) -> PrivacyBudget:
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    return PrivacyBudget(float(epsilon), _delta_for_mu(mu.mu, float(epsilon)))


def gdp_epsilon(mu: GdpParam, delta: float, tol: float = 1e-10) -> float:
    """Smallest epsilon with delta(epsilon) <= ``delta`` for a mu-GDP mechanism."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie strictly inside (0, 1), got {delta}")
    if _delta_for_mu(mu.mu, 0.0) <= delta:
        return 0.0
    hi = 1.0
    while _delta_for_mu(mu.mu, hi) > delta:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError(f"epsilon for mu={mu.mu} exceeds 1e6")
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if _delta_for_mu(mu.mu, mid) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


def compose_basic(budgets: Sequence[PrivacyBudget]) -> PrivacyBudget:
    if not budgets:
        raise ValueError("compose_basic needs at least one budget")
    return PrivacyBudget(
        sum(b.epsilon for b in budgets), min(1.0, sum(b.delta for b in budgets))
    )


# --------------------------------------------------------------------------
# Noise
# --------------------------------------------------------------------------


class GaussianNoise:
    """Seedable Gaussian noise stream.

    Uniforms come from numpy's PCG64 bit generator as ``(next_uint64 >> 11) * 2**-53``
    (``Generator.random``). Each pair ``(u1, u2)`` becomes two normals through
    Box-Muller: ``r = sqrt(-2 log(1 - u1))``, ``z = (r cos(2 pi u2), r sin(2 pi u2))``.
    A request for ``n`` values consumes ``ceil(n / 2)`` pairs; an odd trailing
    value is discarded, so calls never share a pair.

    ``seed=None`` seeds from OS entropy (production use).
    """

    def __init__(self, seed: int | None = None):
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def standard_normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self._gen.random(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def normal(self, sigma: float, n: int) -> np.ndarray:
        return sigma * self.standard_normal(n)


def sample_noise(sigma: float, dim: int, seed: int) -> NoiseVector:
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    return NoiseVector(GaussianNoise(seed).normal(sigma, dim), float(sigma), int(seed))


# --------------------------------------------------------------------------
# Brute-force sensitivity
# --------------------------------------------------------------------------


def substitution_neighbors(dataset: Sequence, pool: Iterable) -> Iterable[tuple[list, list]]:
    """Yield (D, D') pairs where D' replaces one element of D by a pool item."""
    pool = list(pool)
    base = list(dataset)
    for i, replacement in itertools.product(range(len(base)), pool):
        neighbor = base.copy()
        neighbor[i] = replacement
        yield base, neighbor


def brute_force_sensitivity(
    query: Callable[[list], Sequence[float]],
    base_datasets: Sequence[Sequence],
    pool: Sequence,
    max_pairs: int = 1000,
) -> float:
    """Max L2 distance of ``query`` over all single-substitution neighbours.

    Every dataset in ``base_datasets`` is paired with each dataset obtained by
    replacing one of its elements with an item of ``pool``.
    """
    worst = 0.0
    pairs = 0
    for dataset in base_datasets:
        if len(dataset) == 0:
            raise ValueError("brute_force_sensitivity got an empty dataset")
        out = np.asarray(query(list(dataset)), dtype=float)
        for _, neighbor in substitution_neighbors(dataset, pool):
            pairs += 1
            if pairs > max_pairs:
                raise ValueError(f"more than {max_pairs} neighbour pairs to enumerate")
            diff = out - np.asarray(query(neighbor), dtype=float)
            worst = max(worst, float(np.linalg.norm(diff)))
    return worst


# --------------------------------------------------------------------------
# Ledger
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerEvent:
    mechanism_id: str
    params: MechanismParams
    query_count: int
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def gdp(self) -> GdpParam:
        return compose_gdp(GdpParam(self.params.mu), self.query_count)

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism_id,
            "sensitivity": self.params.sensitivity,
            "sigma": self.params.sigma,
            "query_count": self.query_count,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LedgerEvent":
        return cls(
            d["mechanism"],
            MechanismParams(float(d["sensitivity"]), float(d["sigma"])),
            int(d["query_count"]),
            dict(d.get("meta", {})),
        )


class AccountingLedger:
    """Append-only log of privacy-spending events.

    Not thread safe: callers serialize appends.
    """

    def __init__(self, events: Iterable[LedgerEvent] = (), closed: bool = False):
        self._events: list[LedgerEvent] = list(events)
        self.closed = closed

    @property
    def events(self) -> tuple[LedgerEvent, ...]:
        return tuple(self._events)

    def __len__(self):
        return len(self._events)

    def append(self, mechanism_id: str, params: MechanismParams, query_count: int, **meta) -> int:
        if self.closed:
            raise LedgerClosedError("ledger is closed; no further privacy spending allowed")
        if query_count < 1:
            raise ValueError(f"query_count must be >= 1, got {query_count}")
        self._events.append(LedgerEvent(mechanism_id, params, int(query_count), meta))
        return len(self._events) - 1

    def close(self):
        self.closed = True

    def event_budget(self, event: LedgerEvent, delta: float | dict[str, float]) -> PrivacyBudget:
        d = delta[event.mechanism_id] if isinstance(delta, dict) else delta
        return PrivacyBudget(gdp_epsilon(event.gdp, d), d)

    def budgets(self, delta: float | dict[str, float]) -> dict[str, PrivacyBudget]:
        """(epsilon, delta) per mechanism id.

        Each event is converted at its mechanism's delta; events of the same
        mechanism then compose additively, like distinct mechanisms do.
        """
        grouped: dict[str, list[PrivacyBudget]] = {}
        for ev in self._events:
            grouped.setdefault(ev.mechanism_id, []).append(self.event_budget(ev, delta))
        return {k: compose_basic(v) for k, v in grouped.items()}

    def total(self, delta: float | dict[str, float]) -> PrivacyBudget:
        return compose_basic(list(self.budgets(delta).values()))

    def to_dict(self) -> dict:
        return {"closed": self.closed, "events": [e.to_dict() for e in self._events]}

    @classmethod
    def from_dict(cls, d: dict) -> "AccountingLedger":
        return cls((LedgerEvent.from_dict(e) for e in d["events"]), bool(d["closed"]))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def report(self, epsilon_grid: Sequence[float], delta: float | dict[str, float]) -> dict:
        """Accounting report: per-event delta curve, per-mechanism budgets, total.

        Events carrying ``meta["sample_count"]`` (the label tutor) additionally
        report the budget under the reading where sigma is the noise on the
        1/N-scaled mean rather than on the sum.
        """
        events = []
        for ev in self._events:
            mu = ev.gdp
            budget = self.event_budget(ev, delta)
            entry = ev.to_dict()
            entry["mu"] = mu.mu
            entry["delta_curve"] = [
                {"epsilon": float(e), "delta": gdp_to_budget(mu, e).delta} for e in epsilon_grid
            ]
            entry["budget"] = _budget_dict(budget)
            n = ev.meta.get("sample_count")
            if n:
                mean_mu = compose_gdp(GdpParam(ev.params.mu / n), ev.query_count)
                entry["interpretations"] = {
                    "noise_on_sum": entry["budget"],
                    "noise_on_mean": _budget_dict(
                        PrivacyBudget(gdp_epsilon(mean_mu, budget.delta), budget.delta)
                    ),
                }
            events.append(entry)
        budgets = self.budgets(delta) if self._events else {}
        return {
            "closed": self.closed,
            "events": events,
            "mechanisms": {k: _budget_dict(v) for k, v in budgets.items()},
            "total": _budget_dict(compose_basic(list(budgets.values()))) if budgets else None,
            "ledger_digest": self.digest(),
        }


def _budget_dict(b: PrivacyBudget) -> dict:
    return {"epsilon": b.epsilon, "delta": b.delta}
