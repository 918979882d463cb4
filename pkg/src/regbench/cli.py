"""Command-line entry point: ``regbench {run,sweep,retrieve,synth,report}``.

Values resolve as flag > ``--config`` file > built-in default. Exit codes:
0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import CONFIG_FIELDS, ProtocolConfig, cast_field, read_kv_file
from .errors import RegistrationError, UsageError
from .manifest import read_retrieval_manifest
from .matching import MatcherSpec
from .retrieval import DEFAULT_KS, retrieval_config, run_retrieval
from .sweep import Run, SweepGrid, expand_grid, reaggregate, run_sweep
from .synthgen import generate_retrieval_pool, scene_specs, write_retrieval_pool, write_scene_suite

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DEFAULT_OUTPUT = "regbench-out"

_DEFAULTS = ProtocolConfig()
# flag -> (type, default, help); the config-file key is the flag with underscores
PROTOCOL_FLAGS = {
    "normalization": (str, _DEFAULTS.normalization.value, "identity | percentile | zscore | clahe"),
    "max-dimension": (int, _DEFAULTS.max_dimension, "long-side resize cap in pixels"),
    "tile-size": (int, _DEFAULTS.tile_size, "tile edge in pixels"),
    "tile-overlap": (int, _DEFAULTS.tile_overlap, "tile overlap in pixels"),
    "geometry": (str, _DEFAULTS.geometry, "affine | homography"),
    "ransac-threshold": (float, _DEFAULTS.ransac_threshold, "RANSAC reprojection threshold in pixels"),
    "min-inliers": (int, _DEFAULTS.min_inliers, "inlier gate; fewer inliers marks the pair failed"),
    "keypoint-budget": (int, _DEFAULTS.keypoint_budget, "correspondences kept per tile"),
    "seed": (int, _DEFAULTS.seed, "RANSAC seed"),
}
SYNTH_FLAGS = {
    "scenes": (int, 10, "number of scene pairs"),
    "size": (int, 1024, "scene width and height in pixels"),
    "speckle": (float, 0.0, "speckle strength (gamma noise spread)"),
    "planted": (str, "affine", "planted transform: affine | homography"),
    "queries": (int, 0, "retrieval queries to generate (0 = none)"),
    "pool-size": (int, 13, "candidates per retrieval query"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser, protocol: bool = True) -> None:
    p.add_argument("--config", metavar="FILE", help="key = value file; flags override it")
    p.add_argument("--output-dir", metavar="DIR", help=f"report directory (default: {DEFAULT_OUTPUT})")
    p.add_argument("--jobs", type=int, metavar="N", help=f"worker threads (default: {os.cpu_count() or 1})")
    if not protocol:
        return
    p.add_argument("--manifest", metavar="FILE", help="JSON Lines manifest")
    p.add_argument(
        "--matcher",
        action="append",
        metavar="SPEC",
        help="builtin | external:<cmd>; repeatable for sweeps (default: builtin)",
    )
    for flag, (typ, default, text) in PROTOCOL_FLAGS.items():
        shown = f"{default:g}" if isinstance(default, float) else default
        p.add_argument(f"--{flag}", metavar=typ.__name__.upper(), help=f"{text} (default: {shown})")
    p.add_argument("--dump-tiles", metavar="DIR", help="write every normalized tile pair as PNG (default: off)")
    p.add_argument("--dry-run", action="store_true", default=None, help="print the run list and exit (default: off)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regbench", description="Optical-SAR registration benchmark harness.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_common(sub.add_parser("run", help="one configuration over a manifest"))
    sweep = sub.add_parser("sweep", help="every cell of a grid file over a manifest")
    _add_common(sweep)
    sweep.add_argument("--grid", metavar="FILE", help="grid file (key = v1, v2, ...)")
    _add_common(sub.add_parser("retrieve", help="rank candidate pools by inlier count"))
    synth = sub.add_parser("synth", help="write a synthetic scene suite and manifest")
    _add_common(synth, protocol=False)
    synth.add_argument("--seed", metavar="INT", help="first scene seed (default: 0)")
    for flag, (typ, default, text) in SYNTH_FLAGS.items():
        synth.add_argument(f"--{flag}", metavar=typ.__name__.upper(), help=f"{text} (default: {default})")
    synth.add_argument("--invert", action="store_true", default=None, help="invert SAR contrast (default: off)")
    report = sub.add_parser("report", help="re-aggregate an existing report directory")
    _add_common(report, protocol=False)
    return parser


class Settings:
    """Merged view of flags over config-file values over defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file: dict[str, list[str]] = read_kv_file(args.config) if args.config else {}

    def raw(self, key: str):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag, f"--{key.replace('_', '-')}"
        if key in self.file:
            vals = self.file[key]
            if len(vals) != 1:
                raise UsageError(f"{self.args.config}: {key} must have exactly one value")
            return vals[0], f"{self.args.config}: {key}"
        return None, None

    def get(self, key: str, typ, default):
        value, source = self.raw(key)
        if value is None:
            return default
        if isinstance(value, bool):
            return value
        try:
            if typ is bool:
                text = str(value).strip().lower()
                if text not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"expected a boolean, got {value!r}")
                return text in ("true", "1", "yes")
            return typ(value)
        except ValueError as exc:
            raise UsageError(f"{source}: {exc}") from None

    def protocol_overrides(self, flags: bool = True, file: bool = True, skip=()) -> dict:
        """Validated ProtocolConfig fields, each checked on its own so the
        diagnostic names the offending flag or file key."""
        out = {}
        for name in CONFIG_FIELDS:
            if name in skip:
                continue
            flag = getattr(self.args, name, None)
            if flag is not None and flags:
                value, source = flag, f"--{name.replace('_', '-')}"
            elif flag is None and file and name in self.file:
                value, source = self.raw(name)
            else:
                continue
            try:
                out[name] = cast_field(name, value)
                if name not in ("tile_size", "tile_overlap"):
                    ProtocolConfig().with_(**{name: out[name]})
            except (UsageError, ValueError) as exc:
                raise UsageError(f"{source}: {exc}") from None
        return out

    def config(self, base: ProtocolConfig | None = None) -> ProtocolConfig:
        try:
            return (base or ProtocolConfig()).with_(**self.protocol_overrides())
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def matchers(self, budget: int) -> list[MatcherSpec]:
        raw = self.args.matcher if getattr(self.args, "matcher", None) else self.file.get("matcher", ["builtin"])
        try:
            return [MatcherSpec.parse(m, budget) for m in raw]
        except ValueError as exc:
            raise UsageError(f"--matcher: {exc}") from None

    def manifest(self) -> Path:
        value, _ = self.raw("manifest")
        if value is None:
            raise UsageError("--manifest is required")
        return Path(value)

    def output_dir(self) -> Path:
        return Path(self.get("output_dir", str, DEFAULT_OUTPUT))

    def jobs(self) -> int:
        n = self.get("jobs", int, os.cpu_count() or 1)
        if n < 1:
            raise UsageError("--jobs must be >= 1")
        return n

    def dump_dir(self) -> Path | None:
        value, _ = self.raw("dump_tiles")
        return None if value is None else Path(value)

    def dry_run(self) -> bool:
        return self.get("dry_run", bool, False)


def _print_ranking(result, out) -> None:
    for agg in result.aggregates:
        s = agg.summary
        print(
            f"{agg.matcher}\t{agg.config_key}\tmean_err={s.mean_error:.4f}\t"
            f"S@5={s.success_at.get(5.0, 0):.3f}\tS@10={s.success_at.get(10.0, 0):.3f}\t"
            f"failure_rate={s.failure_rate:.3f}",
            file=out,
        )


def cmd_run(st: Settings, out) -> int:
    config = st.config()
    matchers = st.matchers(config.keypoint_budget)
    if len(matchers) != 1:
        raise UsageError("--matcher: run takes one matcher (use sweep for several)")
    runs = [Run(0, config, matchers[0])]
    if st.dry_run():
        print(f"{matchers[0].label}\t{config.key()}", file=out)
        return EXIT_OK
    result = run_sweep(runs, st.manifest(), st.output_dir(), st.jobs(), dump_dir=st.dump_dir())
    _print_ranking(result, out)
    return EXIT_OK


def cmd_sweep(st: Settings, out) -> int:
    grid_path, _ = st.raw("grid")
    if grid_path is None:
        raise UsageError("--grid is required")
    grid = SweepGrid.from_file(grid_path)
    # file values fill non-grid fields; flags pin an axis to one value
    try:
        base = ProtocolConfig().with_(**st.protocol_overrides(flags=False, skip=grid.axes))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    flag_axes = {k: (v,) for k, v in st.protocol_overrides(file=False).items()}
    if st.args.matcher:
        budget = flag_axes.get("keypoint_budget", (base.keypoint_budget,))[0]
        grid = SweepGrid(grid.axes, tuple(st.matchers(budget)))
    grid = grid.with_axes(**flag_axes)
    runs = expand_grid(grid, base)
    if st.dry_run():
        for run in runs:
            print(f"{run.matcher.label}\t{run.key}", file=out)
        print(f"{len(runs)} runs", file=sys.stderr)
        return EXIT_OK
    result = run_sweep(runs, st.manifest(), st.output_dir(), st.jobs(), dump_dir=st.dump_dir())
    _print_ranking(result, out)
    return EXIT_OK


def cmd_retrieve(st: Settings, out) -> int:
    config = st.config(retrieval_config())
    matchers = st.matchers(config.keypoint_budget)
    if len(matchers) != 1:
        raise UsageError("--matcher: retrieve takes one matcher")
    if st.dry_run():
        print(f"{matchers[0].label}\t{config.key()}", file=out)
        return EXIT_OK
    records = read_retrieval_manifest(st.manifest())
    pool = max(len(r.candidate_ids) for r in records)
    ks = sorted(set(k for k in DEFAULT_KS if k <= pool) | {pool})
    queries, summary = run_retrieval(records, matchers[0], config, ks)
    out_dir = st.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"config_key": config.key(), "matcher": matchers[0].label, "metrics": summary.as_dict()}
    (out_dir / "retrieval.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    lines = ["query_id,candidate_id,label,score"]
    for q in queries:
        for cid, lab, sc in zip(q.candidate_ids, q.labels, q.scores):
            lines.append(f"{q.query_id},{cid},{int(lab)},{sc:g}")
    (out_dir / "retrieval_scores.csv").write_text("\n".join(lines) + "\n")
    recall = " ".join(f"R@{k}={v:.3f}" for k, v in summary.recall_at.items())
    print(f"AUROC={summary.auroc:.4f} AUPRC={summary.auprc:.4f} {recall}", file=out)
    return EXIT_OK


def cmd_synth(st: Settings, out) -> int:
    vals = {k.replace("-", "_"): st.get(k.replace("-", "_"), typ, d) for k, (typ, d, _) in SYNTH_FLAGS.items()}
    seed = st.get("seed", int, 0)
    invert = st.get("invert", bool, False)
    if vals["planted"] not in ("affine", "homography"):
        raise UsageError(f"--planted: unknown geometry {vals['planted']!r}")
    if vals["scenes"] < 0 or vals["queries"] < 0:
        raise UsageError("--scenes and --queries must be >= 0")
    try:
        specs = scene_specs(vals["scenes"], vals["size"], vals["speckle"], invert, vals["planted"], seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out_dir = st.output_dir()
    if specs:
        print(write_scene_suite(out_dir, specs), file=out)
    if vals["queries"]:
        try:
            pool = generate_retrieval_pool(vals["queries"], vals["pool_size"], seed, speckle=vals["speckle"], invert=invert)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        print(write_retrieval_pool(out_dir, pool), file=out)
    return EXIT_OK


def cmd_report(st: Settings, out) -> int:
    for agg in reaggregate(st.output_dir()):
        s = agg.summary
        print(f"{agg.index}\t{agg.matcher}\t{agg.config_key}\tmean_err={s.mean_error:.4f}", file=out)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "retrieve": cmd_retrieve, "synth": cmd_synth, "report": cmd_report}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](Settings(args), out)
    except UsageError as exc:
        print(f"regbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RegistrationError, OSError) as exc:
        print(f"regbench: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
