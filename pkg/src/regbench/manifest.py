"""Scene-pair and retrieval manifests, tie-point CSVs and affine files.

A scene-pair manifest is JSON Lines, one pair per line::

    {"pair_id": "s01", "optical": "img/s01_opt.png", "sar": "img/s01_sar.png",
     "tiepoints": "tp/s01.csv", "gt_affine": [a, b, tx, c, d, ty]}

``tiepoints`` and ``gt_affine`` are optional (``gt_affine`` may also be a
path to a file holding the six numbers). A retrieval manifest holds one
query per line::

    {"query_id": "q00", "query": "q00.png",
     "candidates": [{"id": "q00_c00", "path": "..."}, ...], "positive": "q00_c07"}

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoError, UsageError
from .geometry import AffineTransform, GeometricTransform, transform_from_line, transform_to_line


@dataclass(frozen=True)
class ScenePairManifest:
    pair_id: str
    optical_path: Path
    sar_path: Path
    tiepoints_path: Path | None = None
    gt_affine: tuple[float, ...] | None = None
    retrieval_role: dict | None = None

    @property
    def evaluable(self) -> bool:
        return self.tiepoints_path is not None or self.gt_affine is not None

    def gt_transform(self) -> AffineTransform | None:
        return None if self.gt_affine is None else AffineTransform(np.reshape(self.gt_affine, (2, 3)))


@dataclass(frozen=True)
class RetrievalRecord:
    query_id: str
    query_path: Path
    candidate_ids: tuple[str, ...]
    candidate_paths: tuple[Path, ...]
    positive: str


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _read_jsonl(path) -> list[dict]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    records = []
    for n, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}:{n}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise UsageError(f"{path}:{n}: expected a JSON object")
        records.append(rec)
    if not records:
        raise UsageError(f"manifest {path} is empty")
    return records


def is_retrieval_manifest(path) -> bool:
    return "candidates" in _read_jsonl(path)[0]


def read_affine_file(path) -> tuple[float, ...]:
    try:
        t = transform_from_line(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read affine file {path}: {exc}") from exc
    if not isinstance(t, AffineTransform):
        raise UsageError(f"{path}: expected 6 numbers")
    return tuple(float(v) for v in t.coefficients())


def read_manifest(path) -> list[ScenePairManifest]:
    path = Path(path)
    base = path.parent
    out, seen = [], set()
    for n, rec in enumerate(_read_jsonl(path), 1):
        try:
            pid = str(rec["pair_id"])
            optical, sar = rec["optical"], rec["sar"]
        except KeyError as exc:
            raise UsageError(f"{path}:{n}: missing field {exc}") from None
        if pid in seen:
            raise UsageError(f"{path}:{n}: duplicate pair_id {pid!r}")
        seen.add(pid)
        gt = rec.get("gt_affine")
        if isinstance(gt, str):
            gt = read_affine_file(_resolve(base, gt))
        elif gt is not None:
            if len(gt) != 6:
                raise UsageError(f"{path}:{n}: gt_affine needs 6 numbers")
            gt = tuple(float(v) for v in gt)
        tp = rec.get("tiepoints")
        out.append(
            ScenePairManifest(
                pid,
                _resolve(base, optical),
                _resolve(base, sar),
                _resolve(base, tp) if tp else None,
                gt,
                rec.get("retrieval"),
            )
        )
    return out


def write_manifest(path, entries: list[ScenePairManifest]) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path) -> str:
        p = Path(p).resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    lines = []
    for e in entries:
        rec = {"pair_id": e.pair_id, "optical": rel(e.optical_path), "sar": rel(e.sar_path)}
        if e.tiepoints_path is not None:
            rec["tiepoints"] = rel(e.tiepoints_path)
        if e.gt_affine is not None:
            rec["gt_affine"] = list(e.gt_affine)
        if e.retrieval_role is not None:
            rec["retrieval"] = e.retrieval_role
        lines.append(json.dumps(rec))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def read_retrieval_manifest(path) -> list[RetrievalRecord]:
    path = Path(path)
    base = path.parent
    out = []
    for n, rec in enumerate(_read_jsonl(path), 1):
        try:
            cands = rec["candidates"]
            ids = tuple(str(c["id"]) for c in cands)
            paths = tuple(_resolve(base, c["path"]) for c in cands)
            qid, positive = str(rec["query_id"]), str(rec["positive"])
            query = _resolve(base, rec["query"])
        except (KeyError, TypeError) as exc:
            raise UsageError(f"{path}:{n}: malformed retrieval record ({exc})") from None
        if not ids:
            raise UsageError(f"{path}:{n}: empty candidate pool")
        if positive not in ids:
            raise UsageError(f"{path}:{n}: positive {positive!r} is not in the pool")
        if len(set(ids)) != len(ids):
            raise UsageError(f"{path}:{n}: duplicate candidate ids")
        out.append(RetrievalRecord(qid, query, ids, paths, positive))
    return out


def write_retrieval_manifest(path, records: list[RetrievalRecord]) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for r in records:
        lines.append(
            json.dumps(
                {
                    "query_id": r.query_id,
                    "query": str(Path(r.query_path).resolve().relative_to(base)),
                    "candidates": [
                        {"id": i, "path": str(Path(p).resolve().relative_to(base))}
                        for i, p in zip(r.candidate_ids, r.candidate_paths)
                    ],
                    "positive": r.positive,
                }
            )
        )
    path.write_text("\n".join(lines) + "\n")


# --- tie points / transforms ---------------------------------------------


def read_tiepoints(path) -> np.ndarray:
    """(N, 4) array of x_opt, y_opt, x_sar, y_sar; a header row is optional."""
    path = Path(path)
    rows = []
    try:
        with path.open(newline="") as fh:
            for n, row in enumerate(csv.reader(fh), 1):
                if not row or not "".join(row).strip():
                    continue
                try:
                    vals = [float(v) for v in row]
                except ValueError:
                    if n == 1:
                        continue  # header
                    raise UsageError(f"{path}:{n}: non-numeric tie point {row}") from None
                if len(vals) != 4:
                    raise UsageError(f"{path}:{n}: expected 4 columns, got {len(vals)}")
                rows.append(vals)
    except OSError as exc:
        raise IoError(f"cannot read tie points {path}: {exc}") from exc
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    if not np.isfinite(arr).all():
        raise UsageError(f"{path}: non-finite tie point")
    return arr


def write_tiepoints(path, tiepoints: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_opt", "y_opt", "x_sar", "y_sar"])
        for row in np.asarray(tiepoints).reshape(-1, 4):
            w.writerow([repr(float(v)) for v in row])


def write_transform(path, t: GeometricTransform) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(transform_to_line(t) + "\n")
