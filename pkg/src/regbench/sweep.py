"""Configuration grids and the deterministic sweep runner.

A sweep writes, under its output directory:

- ``pairs.csv``: one row per (run, pair)
- ``errors.csv``: one row per evaluated point
- ``runs/run_NNN.json``: per-run aggregate
- ``summary.csv`` and ``ranking.csv``: all runs, and the best run per matcher
- ``timing.csv``: wall-clock seconds, kept apart so the files above are
  byte-identical across reruns and worker counts
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .config import CONFIG_FIELDS, ProtocolConfig, cast_field, read_kv_file
from .errors import EmptyAxis, RegistrationError, UsageError
from .manifest import ScenePairManifest, read_manifest
from .matching import MatcherSpec, make_matcher
from .metrics import DEFAULT_TAUS, MetricSummary, summarize_or_empty
from .pipeline import FAILED, PairResult, match_cache_key, match_entry, run_pair

PAIR_COLUMNS = (
    "pair_id",
    "config_key",
    "matcher",
    "status",
    "correspondences",
    "inliers",
    "mean_err_px",
    "s_at_5",
    "s_at_10",
)
ERROR_COLUMNS = ("config_key", "matcher", "pair_id", "point", "error_px")
SUMMARY_COLUMNS = (
    "run",
    "matcher",
    "config_key",
    "mean_err_px",
    "s_at_5",
    "s_at_10",
    "failure_rate",
    "pairs",
    "points",
)


@dataclass(frozen=True)
class SweepGrid:
    axes: dict[str, tuple] = field(default_factory=dict)
    matchers: tuple[MatcherSpec, ...] = (MatcherSpec(),)

    def __post_init__(self):
        for name, values in self.axes.items():
            if name not in CONFIG_FIELDS:
                raise UsageError(f"unknown grid axis {name!r}")
            if len(values) == 0:
                raise EmptyAxis(f"grid axis {name!r} has no values")
            if len(set(values)) != len(values):
                raise UsageError(f"grid axis {name!r} repeats a value")
        if not self.matchers:
            raise EmptyAxis("grid has no matchers")
        labels = [m.label for m in self.matchers]
        if len(set(labels)) != len(labels):
            raise UsageError("grid repeats a matcher")

    @classmethod
    def from_kv(cls, kv: dict[str, list[str]], keypoint_budget: int | None = None) -> SweepGrid:
        kv = dict(kv)
        raw_matchers = kv.pop("matcher", ["builtin"])
        axes = {name: tuple(cast_field(name, v) for v in values) for name, values in kv.items()}
        budget = keypoint_budget or (axes.get("keypoint_budget") or (ProtocolConfig().keypoint_budget,))[0]
        try:
            matchers = tuple(MatcherSpec.parse(m, budget) for m in raw_matchers)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return cls(axes, matchers)

    @classmethod
    def from_file(cls, path) -> SweepGrid:
        return cls.from_kv(read_kv_file(path))

    def with_axes(self, **overrides) -> SweepGrid:
        return SweepGrid({**self.axes, **overrides}, self.matchers)

    @property
    def size(self) -> int:
        return len(self.matchers) * math.prod(len(v) for v in self.axes.values())


@dataclass(frozen=True)
class Run:
    index: int
    config: ProtocolConfig
    matcher: MatcherSpec

    @property
    def key(self) -> str:
        return self.config.key()


def expand_grid(grid: SweepGrid, base: ProtocolConfig | None = None) -> list[Run]:
    """Cross product in lexicographic order: matcher first, then config fields
    in declaration order, values in the order given."""
    base = base or ProtocolConfig()
    names = [n for n in CONFIG_FIELDS if n in grid.axes]
    runs = []
    for i, (matcher, *values) in enumerate(itertools.product(grid.matchers, *(grid.axes[n] for n in names))):
        try:
            config = base.with_(**dict(zip(names, values)))
        except ValueError as exc:
            raise UsageError(f"invalid grid cell {dict(zip(names, values))}: {exc}") from None
        runs.append(Run(i, config, matcher))
    return runs


@dataclass(frozen=True)
class RunAggregate:
    index: int
    matcher: str
    config_key: str
    summary: MetricSummary


def _rank_key(agg: RunAggregate):
    s = agg.summary
    err = s.mean_error if not math.isnan(s.mean_error) else math.inf
    return (err, -s.success_at.get(10.0, 0.0), s.failure_rate, agg.config_key)


def best_per_matcher(aggregates: Sequence[RunAggregate]) -> list[RunAggregate]:
    """Per matcher the lowest-error run (ties: higher S@10, lower failure
    rate, then config key), sorted by the same criteria."""
    best: dict[str, RunAggregate] = {}
    for agg in aggregates:
        cur = best.get(agg.matcher)
        if cur is None or _rank_key(agg) < _rank_key(cur):
            best[agg.matcher] = agg
    return sorted(best.values(), key=lambda a: (_rank_key(a), a.matcher))


# --- report writing ----------------------------------------------------------


def _num(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def _pair_row(run: Run, r: PairResult) -> list[str]:
    s = summarize_or_empty([r]) if r.ok and r.tiepoint_errors else None
    return [
        r.pair_id,
        run.key,
        run.matcher.label,
        r.status,
        str(r.correspondence_count),
        str(r.inlier_count),
        _num(s.mean_error) if s else "",
        _num(s.success_at[5.0]) if s else "",
        _num(s.success_at[10.0]) if s else "",
    ]


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_aggregates(output_dir: Path, aggregates: Sequence[RunAggregate]) -> None:
    def row(a: RunAggregate, lead):
        s = a.summary
        return [
            lead,
            a.matcher,
            a.config_key,
            _num(s.mean_error),
            _num(s.success_at.get(5.0)),
            _num(s.success_at.get(10.0)),
            _num(s.failure_rate),
            str(s.pair_count),
            str(s.evaluated_point_count),
        ]

    _write_csv(output_dir / "summary.csv", SUMMARY_COLUMNS, [row(a, a.index) for a in aggregates])
    ranked = best_per_matcher(aggregates)
    _write_csv(output_dir / "ranking.csv", ("rank",) + SUMMARY_COLUMNS[1:], [row(a, k) for k, a in enumerate(ranked, 1)])


def _finite_or_none(d):
    if isinstance(d, dict):
        return {k: _finite_or_none(v) for k, v in d.items()}
    if isinstance(d, float) and not math.isfinite(d):
        return None
    return d


def run_document(run: Run, summary: MetricSummary, failures: list[dict]) -> str:
    cfg = asdict(run.config)
    cfg["normalization"] = run.config.normalization.value
    doc = {
        "run": run.index,
        "config_key": run.key,
        "matcher": run.matcher.label,
        "config": cfg,
        "metrics": _finite_or_none(summary.as_dict()),
        "failed_pairs": failures,
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


# --- execution -----------------------------------------------------------------


@dataclass
class SweepResult:
    runs: list[Run]
    results: dict[tuple[int, str], PairResult]
    aggregates: list[RunAggregate]
    output_dir: Path | None


def _failed(pair_id: str, reason: str) -> PairResult:
    return PairResult(pair_id, FAILED, None, 0, 0, [], 0.0, reason)


def execute_runs(
    runs: Sequence[Run], entries: Sequence[ScenePairManifest], jobs: int = 1, dump_dir: Path | None = None
) -> dict[tuple[int, str], PairResult]:
    """Every (run, pair) result. Matching is shared across runs that differ
    only in geometry, threshold, gate or seed."""
    jobs = max(1, jobs)
    matchers: dict[tuple, object] = {}
    lock = threading.Lock()

    def matcher_for(run: Run):
        spec = MatcherSpec(run.matcher.kind, run.config.keypoint_budget, run.matcher.external_command, run.matcher.timeout)
        k = (spec.label, spec.keypoint_budget)
        with lock:
            if k not in matchers:
                matchers[k] = make_matcher(spec)
            return matchers[k]

    cache: dict = {}
    match_jobs = {}
    for run in runs:
        for e in entries:
            key = match_cache_key(e.pair_id, run.config, run.matcher.label)
            match_jobs.setdefault(key, (run, e))

    def do_match(item):
        key, (run, e) = item
        try:
            return key, match_entry(e, run.config, matcher_for(run), 1, dump_dir)
        except RegistrationError as exc:
            return key, exc

    def do_fit(item):
        run, e = item
        got = cache[match_cache_key(e.pair_id, run.config, run.matcher.label)]
        if isinstance(got, Exception):
            return (run.index, e.pair_id), _failed(e.pair_id, str(got))
        try:
            return (run.index, e.pair_id), run_pair(e, run.config, run.matcher, cache=cache)
        except RegistrationError as exc:
            return (run.index, e.pair_id), _failed(e.pair_id, str(exc))

    fits = [(run, e) for run in runs for e in entries]
    try:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                cache.update(pool.map(do_match, match_jobs.items()))
                results = dict(pool.map(do_fit, fits))
        else:
            cache.update(map(do_match, match_jobs.items()))
            results = dict(map(do_fit, fits))
    finally:
        for m in matchers.values():
            m.close()
    return results


def aggregate_runs(runs: Sequence[Run], entries, results, taus=DEFAULT_TAUS) -> list[RunAggregate]:
    out = []
    for run in runs:
        rs = [results[(run.index, e.pair_id)] for e in entries]
        out.append(RunAggregate(run.index, run.matcher.label, run.key, summarize_or_empty(rs, taus)))
    return out


def write_reports(output_dir, runs, entries, results, aggregates) -> None:
    output_dir = Path(output_dir)
    (output_dir / "runs").mkdir(parents=True, exist_ok=True)
    pair_rows, error_rows, timing_rows = [], [], []
    for run, agg in zip(runs, aggregates):
        failures = []
        for e in entries:
            r = results[(run.index, e.pair_id)]
            pair_rows.append(_pair_row(run, r))
            error_rows.extend([run.key, run.matcher.label, r.pair_id, k, repr(float(v))] for k, v in enumerate(r.tiepoint_errors))
            timing_rows.append([run.index, r.pair_id, f"{r.wall_clock:.6f}"])
            if not r.ok:
                failures.append({"pair_id": r.pair_id, "reason": r.failure_reason})
            elif r.tile_failures:
                failures.append({"pair_id": r.pair_id, "tile_failures": r.tile_failures})
        (output_dir / "runs" / f"run_{run.index:03d}.json").write_text(run_document(run, agg.summary, failures))
    _write_csv(output_dir / "pairs.csv", PAIR_COLUMNS, pair_rows)
    _write_csv(output_dir / "errors.csv", ERROR_COLUMNS, error_rows)
    write_aggregates(output_dir, aggregates)
    _write_csv(output_dir / "timing.csv", ("run", "pair_id", "wall_clock_s"), timing_rows)


def run_sweep(
    grid: SweepGrid | Sequence[Run],
    manifest,
    output_dir=None,
    jobs: int = 1,
    base: ProtocolConfig | None = None,
    dump_dir: Path | None = None,
) -> SweepResult:
    runs = expand_grid(grid, base) if isinstance(grid, SweepGrid) else list(grid)
    entries = read_manifest(manifest) if not isinstance(manifest, (list, tuple)) else list(manifest)
    if not entries:
        raise UsageError("manifest is empty")
    results = execute_runs(runs, entries, jobs, dump_dir)
    aggregates = aggregate_runs(runs, entries, results)
    if output_dir is not None:
        write_reports(output_dir, runs, entries, results, aggregates)
    return SweepResult(runs, results, aggregates, None if output_dir is None else Path(output_dir))


# --- re-aggregation ------------------------------------------------------------


def reaggregate(output_dir) -> list[RunAggregate]:
    """Rebuild summary.csv and ranking.csv from pairs.csv and errors.csv."""
    output_dir = Path(output_dir)
    try:
        with (output_dir / "pairs.csv").open(newline="") as fh:
            pairs = list(csv.DictReader(fh))
        with (output_dir / "errors.csv").open(newline="") as fh:
            errors = list(csv.DictReader(fh))
    except OSError as exc:
        raise UsageError(f"{output_dir} does not hold sweep reports: {exc}") from None
    points: dict[tuple[str, str, str], list[float]] = {}
    for row in errors:
        points.setdefault((row["matcher"], row["config_key"], row["pair_id"]), []).append(float(row["error_px"]))
    # runs appear in pairs.csv in index order
    members: dict[tuple[str, str], list[PairResult]] = {}
    for row in pairs:
        run = (row["matcher"], row["config_key"])
        errs = points.get((*run, row["pair_id"]), [])
        members.setdefault(run, []).append(
            PairResult(row["pair_id"], row["status"], None, int(row["inliers"]), int(row["correspondences"]), errs)
        )
    aggs = [
        RunAggregate(i, matcher, key, summarize_or_empty(rs))
        for i, ((matcher, key), rs) in enumerate(members.items())
    ]
    write_aggregates(output_dir, aggs)
    return aggs
