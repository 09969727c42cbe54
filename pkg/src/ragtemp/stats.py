"""Run-level and condition-level aggregation of scores.

Per sample: mean, sample standard deviation (n - 1 denominator) and
coefficient of variation over the repeated runs of one condition. Per
condition: arithmetic means of those per-sample figures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (
    EmptyGroup,
    MixedKeys,
    NoComparablePairs,
    NonBaselineEntry,
    TooFewRuns,
    ZeroMean,
)
from .perturb import PerturbationKind


@dataclass(frozen=True, order=True)
class ConditionKey:
    model: str
    temperature: float
    perturbation: str
    question_type: str

    def __post_init__(self):
        object.__setattr__(self, "perturbation", PerturbationKind(self.perturbation).value)
        object.__setattr__(self, "temperature", float(self.temperature))


@dataclass(frozen=True)
class RunStats:
    sample_id: str
    key: ConditionKey
    n_runs: int
    mean: float
    std: float
    cv: float


@dataclass(frozen=True)
class ConditionStats:
    key: ConditionKey
    n_samples: int
    mean_of_means: float
    mean_of_stds: float
    mean_cv: float

    @property
    def condition_cv(self) -> float:
        """Secondary CV variant: mean_of_stds / mean_of_means."""
        if self.mean_of_means == 0:
            return 0.0 if self.mean_of_stds == 0 else math.nan
        return self.mean_of_stds / self.mean_of_means


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def per_sample_stats(scores: Sequence[float], sample_id: str, key: ConditionKey) -> RunStats:
    scores = [float(s) for s in scores]
    if len(scores) < 2:
        raise TooFewRuns(f"{sample_id}: {len(scores)} run(s), need at least 2")
    if any(not 0.0 <= s <= 1.0 for s in scores):
        raise ValueError(f"{sample_id}: scores must lie in [0, 1]")
    mean = _mean(scores)
    std = math.sqrt(math.fsum((s - mean) ** 2 for s in scores) / (len(scores) - 1))
    if std == 0:
        cv = 0.0
    elif mean == 0:
        raise ZeroMean(f"{sample_id}: mean is 0 with std {std}")
    else:
        cv = std / mean
    return RunStats(sample_id, key, len(scores), mean, std, cv)


def aggregate_condition(stats: Sequence[RunStats]) -> ConditionStats:
    if not stats:
        raise EmptyGroup("no run stats to aggregate")
    key = stats[0].key
    if any(s.key != key for s in stats):
        raise MixedKeys("run stats belong to different conditions")
    return ConditionStats(
        key=key,
        n_samples=len(stats),
        mean_of_means=_mean([s.mean for s in stats]),
        mean_of_stds=_mean([s.std for s in stats]),
        mean_cv=_mean([s.cv for s in stats]),
    )


def baseline_cv(condition_stats: Sequence[ConditionStats]) -> float:
    """Average mean_cv of the Original condition over the temperature grid."""
    if not condition_stats:
        raise EmptyGroup("no baseline conditions")
    first = condition_stats[0].key
    for c in condition_stats:
        if c.key.perturbation != PerturbationKind.Original.value:
            raise NonBaselineEntry(f"{c.key.perturbation} is not the unperturbed baseline")
        if (c.key.model, c.key.question_type) != (first.model, first.question_type):
            raise MixedKeys("baseline entries span several models or question types")
    return _mean([c.mean_cv for c in condition_stats])


def fragile_samples(run_stats: Iterable[RunStats], model: str, temperature: float,
                    question_type: str, perturbation) -> tuple[str, float]:
    """Sample with the largest drop in mean score from Original to ``perturbation``.

    Ties go to the lexicographically smallest sample id.
    """
    base_key = ConditionKey(model, temperature, PerturbationKind.Original, question_type)
    pert_key = ConditionKey(model, temperature, perturbation, question_type)
    base, pert = {}, {}
    for s in run_stats:
        if s.key == base_key:
            base[s.sample_id] = s.mean
        elif s.key == pert_key:
            pert[s.sample_id] = s.mean
    gaps = [(base[i] - pert[i], i) for i in base.keys() & pert.keys()]
    if not gaps:
        raise NoComparablePairs(f"no sample has both Original and {pert_key.perturbation} at {pert_key}")
    best = min(gaps, key=lambda g: (-g[0], g[1]))
    return best[1], best[0]


def group_run_stats(scores: Iterable[tuple[ConditionKey, str, float]]) -> list[RunStats]:
    """Collapse (key, sample_id, value) rows into RunStats; groups with < 2 runs are skipped."""
    groups: dict[tuple[ConditionKey, str], list[float]] = {}
    for key, sample_id, value in scores:
        groups.setdefault((key, sample_id), []).append(value)
    return [
        per_sample_stats(values, sid, key)
        for (key, sid), values in sorted(groups.items())
        if len(values) >= 2
    ]


def aggregate_all(run_stats: Iterable[RunStats]) -> list[ConditionStats]:
    groups: dict[ConditionKey, list[RunStats]] = {}
    for s in run_stats:
        groups.setdefault(s.key, []).append(s)
    return [aggregate_condition(groups[k]) for k in sorted(groups)]
