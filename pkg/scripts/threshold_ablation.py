"""RANSAC threshold and inlier-gate ablations on a synthetic suite.

Runs grids/threshold_ablation.grid and grids/gating_ablation.grid and prints
one line per value.

    python scripts/threshold_ablation.py --scenes 4 --speckle 0.3
"""

import argparse
import tempfile
from pathlib import Path

from regbench.synthgen import scene_specs, write_scene_suite
from regbench.sweep import SweepGrid, run_sweep

GRIDS = Path(__file__).resolve().parents[1] / "grids"


def ablate(grid_name, axis, manifest, out, jobs):
    result = run_sweep(SweepGrid.from_file(GRIDS / grid_name), manifest, out, jobs=jobs)
    print(f"{axis:>16} {'mean px':>9} {'S@5':>6} {'S@10':>6} {'fail':>6}")
    for run, agg in zip(result.runs, result.aggregates):
        s = agg.summary
        print(
            f"{getattr(run.config, axis):>16g} {s.mean_error:>9.3f} {s.success_at[5.0]:>6.3f} "
            f"{s.success_at[10.0]:>6.3f} {s.failure_rate:>6.3f}"
        )
    print()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=4)
    ap.add_argument("--size", type=int, default=768)
    ap.add_argument("--speckle", type=float, default=0.3)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, help="report root (default: a temporary directory)")
    args = ap.parse_args()

    work = Path(tempfile.mkdtemp(prefix="ablation-"))
    out = args.out or work / "reports"
    manifest = write_scene_suite(work / "data", scene_specs(args.scenes, size=args.size, speckle=args.speckle))
    ablate("threshold_ablation.grid", "ransac_threshold", manifest, out / "threshold", args.jobs)
    ablate("gating_ablation.grid", "min_inliers", manifest, out / "gating", args.jobs)
    print(f"reports in {out}")


if __name__ == "__main__":
    main()
