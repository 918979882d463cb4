"""Error statistics over PairResult collections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import NoEvaluablePoints

DEFAULT_TAUS = (5.0, 10.0)


@dataclass(frozen=True)
class MetricSummary:
    mean_error: float
    success_at: dict[float, float] = field(default_factory=dict)
    failure_rate: float = 0.0
    pair_count: int = 0
    evaluated_point_count: int = 0
    failed_count: int = 0

    def as_dict(self) -> dict:
        return {
            "mean_error": self.mean_error,
            "success_at": {f"{t:g}": v for t, v in self.success_at.items()},
            "failure_rate": self.failure_rate,
            "pair_count": self.pair_count,
            "failed_count": self.failed_count,
            "evaluated_point_count": self.evaluated_point_count,
        }


def success_curve(errors: Sequence[float], taus: Sequence[float]) -> list[float]:
    """Fraction of errors strictly below each tau (all zeros for no errors)."""
    taus = np.asarray(taus, dtype=np.float64)
    if taus.size and (np.diff(taus) <= 0).any():
        raise ValueError("taus must be strictly increasing")
    e = np.sort(np.asarray(errors, dtype=np.float64))
    if e.size == 0:
        return [0.0] * len(taus)
    return (np.searchsorted(e, taus, side="left") / e.size).tolist()


def summarize(results: Iterable, thresholds: Sequence[float] = DEFAULT_TAUS) -> MetricSummary:
    """Pool tie-point errors of non-failed pairs; failed pairs only count
    towards the failure rate."""
    results = list(results)
    if not results:
        raise ValueError("summarize needs at least one result")
    taus = sorted(float(t) for t in thresholds)
    failed = sum(1 for r in results if not r.ok)
    errors = np.concatenate([np.asarray(r.tiepoint_errors, dtype=np.float64) for r in results if r.ok] or [[]])
    fr = failed / len(results)
    if errors.size == 0:
        summary = MetricSummary(float("nan"), {t: 0.0 for t in taus}, fr, len(results), 0, failed)
        raise NoEvaluablePoints(
            f"no evaluable tie points ({failed}/{len(results)} pairs failed)", summary
        )
    curve = success_curve(errors, taus)
    return MetricSummary(float(errors.mean()), dict(zip(taus, curve)), fr, len(results), int(errors.size), failed)


def summarize_or_empty(results: Iterable, thresholds: Sequence[float] = DEFAULT_TAUS) -> MetricSummary:
    try:
        return summarize(results, thresholds)
    except NoEvaluablePoints as exc:
        return exc.summary


def merge_summaries(a: MetricSummary, b: MetricSummary) -> MetricSummary:
    """Point-weighted errors and success fractions, pair-weighted failure rate."""
    if set(a.success_at) != set(b.success_at):
        raise ValueError("summaries use different thresholds")
    n = a.evaluated_point_count + b.evaluated_point_count
    pairs = a.pair_count + b.pair_count
    failed = a.failed_count + b.failed_count

    def wmean(x, y):
        if n == 0:
            return float("nan")
        xs = x * a.evaluated_point_count if a.evaluated_point_count else 0.0
        ys = y * b.evaluated_point_count if b.evaluated_point_count else 0.0
        return (xs + ys) / n

    success = {t: (wmean(a.success_at[t], b.success_at[t]) if n else 0.0) for t in a.success_at}
    return MetricSummary(wmean(a.mean_error, b.mean_error), success, failed / pairs, pairs, n, failed)
