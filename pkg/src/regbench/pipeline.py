"""Per-pair registration: normalize, resize, tile and match, fit, evaluate."""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .config import ProtocolConfig
from .correspondences import Correspondences
from .errors import (
    BelowInlierGate,
    DegenerateConfiguration,
    ExternalMatcherFailure,
    InsufficientCorrespondences,
)
from .geometry import GeometricTransform, ransac_fit, transform_points
from .imaging import normalize, read_image, resize_long_side, write_png
from .manifest import ScenePairManifest, read_tiepoints
from .matching import MatcherSpec, make_matcher
from .tiling import aggregate, project_to_full_frame, tile_pairs, tile_set_key, whole_image_pair

OK, FAILED = "ok", "failed"


class TiePoint(NamedTuple):
    optical: tuple[float, float]
    sar: tuple[float, float]


@dataclass(eq=False)
class PairResult:
    pair_id: str
    status: str
    transform: GeometricTransform | None
    inlier_count: int
    correspondence_count: int
    tiepoint_errors: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    failure_reason: str = ""
    tile_failures: list[str] = field(default_factory=list)
    trace: list[tuple[str, dict]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OK

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.tiepoint_errors)) if self.tiepoint_errors else float("nan")


@dataclass(eq=False)
class MatchOutcome:
    """Stage-2 product: full-resolution correspondences for one pair."""

    corrs: Correspondences
    tile_key: str
    tile_count: int
    tile_failures: list[str]
    seconds: float
    shape: tuple[int, int] = (0, 0)  # raw optical (rows, cols)


def _tiepoint_array(tiepoints) -> np.ndarray:
    if isinstance(tiepoints, np.ndarray):
        return tiepoints.reshape(-1, 4).astype(np.float64)
    return np.array([[*tp.optical, *tp.sar] for tp in tiepoints], dtype=np.float64).reshape(-1, 4)


def predict_displacements(t: GeometricTransform, tiepoints: np.ndarray | Sequence[TiePoint]) -> list[float]:
    """||t(p_opt) - p_sar|| for each tie point (rows x_opt, y_opt, x_sar, y_sar)."""
    tp = _tiepoint_array(tiepoints)
    pred = transform_points(t, tp[:, :2])
    return np.hypot(*(pred - tp[:, 2:]).T).tolist()


def image_corners(width: int, height: int) -> np.ndarray:
    return np.array([(0.0, 0.0), (width - 1.0, 0.0), (width - 1.0, height - 1.0), (0.0, height - 1.0)])


def corner_errors(t: GeometricTransform, gt: GeometricTransform, width: int, height: int) -> list[float]:
    c = image_corners(width, height)
    return np.hypot(*(transform_points(t, c) - transform_points(gt, c)).T).tolist()


def ransac_seed(config: ProtocolConfig, pair_id: str) -> int:
    digest = hashlib.blake2b(f"{config.seed}|{pair_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _match_all(pairs, matcher, jobs: int):
    def one(pair):
        try:
            return pair.index, matcher.match(pair.src_tile, pair.dst_tile), None
        except ExternalMatcherFailure as exc:
            return pair.index, Correspondences.empty(), f"tile {pair.index}: {exc}"

    if jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]


def match_pair(
    optical: np.ndarray,
    sar: np.ndarray,
    config: ProtocolConfig,
    matcher,
    jobs: int = 1,
    dump_dir: Path | None = None,
    trace: list | None = None,
) -> MatchOutcome:
    """Stages 1-2 on raw gray images. ``matcher`` is any object with ``.match``."""
    trace = trace if trace is not None else []
    opt_n = normalize(optical, config.normalization)
    sar_n = normalize(sar, config.normalization)
    trace.append(("normalize", {"kind": config.normalization.value}))
    opt_r, s_opt = resize_long_side(opt_n, config.max_dimension)
    sar_r, s_sar = resize_long_side(sar_n, config.max_dimension)
    trace.append(("resize", {"optical_scale": s_opt, "sar_scale": s_sar}))

    t0 = time.monotonic()
    if max(opt_r.shape) <= config.tile_size and max(sar_r.shape) <= config.tile_size:
        pairs = [whole_image_pair(opt_r, sar_r)]
    else:
        pairs = tile_pairs(opt_r, sar_r, config.tile_size, config.tile_overlap)
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
        for p in pairs:
            r, c = p.index
            write_png(p.src_tile, dump_dir / f"r{r}_c{c}_optical.png")
            write_png(p.dst_tile, dump_dir / f"r{r}_c{c}_sar.png")
    by_index = {p.index: p for p in pairs}
    per_tile, failures = {}, []
    for index, corrs, err in _match_all(pairs, matcher, jobs):
        per_tile[index] = project_to_full_frame(corrs, by_index[index], s_opt, s_sar)
        if err:
            failures.append(err)
    corrs = aggregate(per_tile)
    seconds = time.monotonic() - t0
    trace.append(("match", {"tiles": len(pairs), "correspondences": len(corrs), "tile_failures": len(failures)}))
    return MatchOutcome(corrs, tile_set_key(pairs), len(pairs), sorted(failures), seconds, optical.shape)


def fit_pair(pair_id: str, outcome: MatchOutcome, config: ProtocolConfig, trace: list | None = None) -> PairResult:
    """Stage 3; errors are left empty for the caller to fill in."""
    trace = trace if trace is not None else []
    t0 = time.monotonic()
    n = len(outcome.corrs)
    try:
        fit = ransac_fit(outcome.corrs, config.geometry, config.ransac_params(ransac_seed(config, pair_id)))
    except (BelowInlierGate, InsufficientCorrespondences, DegenerateConfiguration) as exc:
        elapsed = outcome.seconds + time.monotonic() - t0
        trace.append(("ransac", {"status": FAILED, "reason": str(exc)}))
        best = getattr(exc, "best_inliers", 0)
        return PairResult(
            pair_id, FAILED, None, best, n, [], elapsed, str(exc), list(outcome.tile_failures), trace
        )
    elapsed = outcome.seconds + time.monotonic() - t0
    trace.append(("ransac", {"status": OK, "inliers": fit.inlier_count, "iterations": fit.iterations}))
    return PairResult(
        pair_id, OK, fit.transform, fit.inlier_count, n, [], elapsed, "", list(outcome.tile_failures), trace
    )


def with_budget(matcher, config: ProtocolConfig):
    if isinstance(matcher, str):
        matcher = MatcherSpec.parse(matcher)
    if isinstance(matcher, MatcherSpec):
        return replace(matcher, keypoint_budget=config.keypoint_budget)
    return matcher


def register_images(
    optical: np.ndarray,
    sar: np.ndarray,
    config: ProtocolConfig,
    matcher=None,
    pair_id: str = "",
    jobs: int = 1,
    dump_dir: Path | None = None,
) -> PairResult:
    """Stages 1-3 on in-memory images; no evaluation."""
    spec_or_obj = with_budget(matcher if matcher is not None else MatcherSpec(), config)
    trace: list = []
    if isinstance(spec_or_obj, MatcherSpec):
        with make_matcher(spec_or_obj) as m:
            outcome = match_pair(optical, sar, config, m, jobs, dump_dir, trace)
    else:
        outcome = match_pair(optical, sar, config, spec_or_obj, jobs, dump_dir, trace)
    return fit_pair(pair_id, outcome, config, trace)


def match_cache_key(pair_id: str, config: ProtocolConfig, label: str) -> tuple:
    """Everything stage 1-2 depends on; geometry/threshold/gate/seed are excluded."""
    return (
        pair_id,
        config.normalization.value,
        config.max_dimension,
        config.tile_size,
        config.tile_overlap,
        config.keypoint_budget,
        label,
    )


def matcher_label(matcher) -> str:
    spec = matcher if isinstance(matcher, MatcherSpec) else getattr(matcher, "spec", None)
    return spec.label if spec is not None else repr(matcher)


def match_entry(
    entry: ScenePairManifest,
    config: ProtocolConfig,
    matcher,
    jobs: int = 1,
    dump_dir: Path | None = None,
    trace: list | None = None,
) -> MatchOutcome:
    """Read a manifest pair and run stages 1-2 on it."""
    matcher = with_budget(matcher, config)
    optical = read_image(entry.optical_path)
    sar = read_image(entry.sar_path)
    pair_dump = None if dump_dir is None else Path(dump_dir) / entry.pair_id
    if isinstance(matcher, MatcherSpec):
        with make_matcher(matcher) as m:
            return match_pair(optical, sar, config, m, jobs, pair_dump, trace)
    return match_pair(optical, sar, config, matcher, jobs, pair_dump, trace)


def run_pair(
    entry: ScenePairManifest,
    config: ProtocolConfig,
    matcher=None,
    jobs: int = 1,
    dump_dir: Path | None = None,
    cache: dict | None = None,
    corners: bool | None = None,
) -> PairResult:
    """Register one manifest pair and score it.

    Errors are tie-point displacements when the entry has tie points, else
    corner discrepancies against ``gt_affine`` (or force corners with
    ``corners=True``). ``matcher`` is a MatcherSpec, a ``builtin`` /
    ``external:<cmd>`` string, or an already open matcher object. ``cache``
    (a dict) memoizes stage 1-2 output across configs that share it.
    """
    matcher = with_budget(matcher if matcher is not None else MatcherSpec(), config)
    if corners and entry.gt_affine is None:
        raise ValueError(f"pair {entry.pair_id}: corner errors need gt_affine")
    use_corners = corners if corners is not None else entry.tiepoints_path is None and entry.gt_affine is not None
    tiepoints = None if use_corners or entry.tiepoints_path is None else read_tiepoints(entry.tiepoints_path)

    key = match_cache_key(entry.pair_id, config, matcher_label(matcher))
    trace: list = []
    outcome = cache.get(key) if cache is not None else None
    if outcome is None:
        outcome = match_entry(entry, config, matcher, jobs, dump_dir, trace)
        if cache is not None:
            cache[key] = outcome
    else:
        trace.append(("match", {"cached": True, "correspondences": len(outcome.corrs)}))

    result = fit_pair(entry.pair_id, outcome, config, trace)
    if result.ok:
        if use_corners:
            h, w = outcome.shape
            result.tiepoint_errors = corner_errors(result.transform, entry.gt_transform(), w, h)
        elif tiepoints is not None:
            result.tiepoint_errors = predict_displacements(result.transform, tiepoints)
    trace.append(("evaluate", {"points": len(result.tiepoint_errors), "corners": bool(use_corners)}))
    return result


def run_pair_corners(entry: ScenePairManifest, config: ProtocolConfig, matcher=None, **kw) -> PairResult:
    return run_pair(entry, config, matcher, corners=True, **kw)
