"""Correspondence sources.

``BuiltinMatcher`` is a small classical matcher (Harris corners, normalized
16x16 patches, mutual nearest neighbours with a ratio test) that makes the
whole pipeline runnable without model weights. ``ExternalMatcher`` drives any
other matcher through a line protocol on a subprocess's stdin/stdout::

    -> MATCH <id> <src_png> <dst_png>
    <- BEGIN <id> <count>
    <- x0 y0 x1 y1 conf          (count lines, tile-local pixels)
    <- END <id>
    <- ERR <id> <message>        (instead of BEGIN..END)
"""

from __future__ import annotations

import itertools
import math
import queue
import shlex
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, TextIO

import numpy as np
from scipy import ndimage

from .correspondences import Correspondences
from .errors import ExternalMatcherFailure
from .imaging import read_image, write_png

HARRIS_K = 0.04
HARRIS_SIGMA = 1.0
PATCH_SIZE = 16
PATCH_MARGIN = PATCH_SIZE // 2
RATIO_TEST = 0.9
DEFAULT_BUDGET = 4096
DEFAULT_TIMEOUT = 120.0
# responses below this fraction of the tile maximum are ignored
_RELATIVE_RESPONSE_FLOOR = 1e-3


@dataclass(frozen=True)
class MatcherSpec:
    kind: str = "builtin"
    keypoint_budget: int = DEFAULT_BUDGET
    external_command: str | None = None
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.kind not in ("builtin", "external"):
            raise ValueError(f"unknown matcher kind {self.kind!r}")
        if self.keypoint_budget < 1:
            raise ValueError("keypoint_budget must be >= 1")
        if self.kind == "external" and not self.external_command:
            raise ValueError("external matcher needs a command")

    @classmethod
    def parse(cls, text: str, keypoint_budget: int = DEFAULT_BUDGET, timeout: float = DEFAULT_TIMEOUT):
        text = text.strip()
        if text == "builtin":
            return cls("builtin", keypoint_budget, timeout=timeout)
        if text.startswith("external:") and text[len("external:"):].strip():
            return cls("external", keypoint_budget, text[len("external:"):].strip(), timeout)
        raise ValueError(f"unknown matcher {text!r} (expected 'builtin' or 'external:<cmd>')")

    @property
    def label(self) -> str:
        return "builtin" if self.kind == "builtin" else f"external:{self.external_command}"


# --- builtin detector / descriptor ----------------------------------------


def harris_response(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1, mode="reflect")
    gy = ndimage.sobel(img, axis=0, mode="reflect")
    sxx = ndimage.gaussian_filter(gx * gx, HARRIS_SIGMA)
    syy = ndimage.gaussian_filter(gy * gy, HARRIS_SIGMA)
    sxy = ndimage.gaussian_filter(gx * gy, HARRIS_SIGMA)
    return sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) ** 2


def _subpixel_offset(minus: np.ndarray, center: np.ndarray, plus: np.ndarray) -> np.ndarray:
    curv = minus - 2.0 * center + plus
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(curv < 0, 0.5 * (minus - plus) / curv, 0.0)
    return np.clip(off, -0.5, 0.5)


def detect_keypoints(img: np.ndarray, budget: int) -> tuple[np.ndarray, np.ndarray]:
    """Harris corners after 3x3 non-max suppression, strongest ``budget`` first.

    Returns ``(points, responses)`` with points as (x, y) rows refined to
    sub-pixel precision by a 1-D parabola fit per axis. Only corners at least
    8 px from the border are kept so their descriptor patch fits.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    h, w = img.shape
    if h < PATCH_SIZE + 1 or w < PATCH_SIZE + 1:
        return np.empty((0, 2)), np.empty(0)
    r = harris_response(img)
    peak = r.max()
    if not peak > 0:
        return np.empty((0, 2)), np.empty(0)
    local_max = ndimage.maximum_filter(r, size=3, mode="constant", cval=-np.inf)
    keep = (r == local_max) & (r > _RELATIVE_RESPONSE_FLOOR * peak)
    keep[:PATCH_MARGIN] = False
    keep[h - PATCH_MARGIN:] = False
    keep[:, :PATCH_MARGIN] = False
    keep[:, w - PATCH_MARGIN:] = False
    ys, xs = np.nonzero(keep)
    resp = r[ys, xs]
    order = np.lexsort((xs, ys, -resp))[:budget]
    ys, xs, resp = ys[order], xs[order], resp[order]
    dx = _subpixel_offset(r[ys, xs - 1], resp, r[ys, xs + 1])
    dy = _subpixel_offset(r[ys - 1, xs], resp, r[ys + 1, xs])
    return np.column_stack([xs + dx, ys + dy]), resp


def describe(img: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm, zero-mean 16x16 patch descriptors.

    Returns ``(descriptors, valid)``; flat patches have no descriptor.
    """
    if len(points) == 0:
        return np.empty((0, PATCH_SIZE * PATCH_SIZE), np.float32), np.zeros(0, bool)
    cx = np.rint(points[:, 0]).astype(int)
    cy = np.rint(points[:, 1]).astype(int)
    offs = np.arange(-PATCH_MARGIN, PATCH_MARGIN)
    rows = cy[:, None, None] + offs[None, :, None]
    cols = cx[:, None, None] + offs[None, None, :]
    patches = np.asarray(img, dtype=np.float64)[rows, cols].reshape(len(points), -1)
    patches = patches - patches.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(patches, axis=1)
    valid = norms > 1e-9
    desc = np.zeros_like(patches)
    desc[valid] = patches[valid] / norms[valid, None]
    return desc.astype(np.float32), valid


def describe_and_match(src_kps, dst_kps, src_img, dst_img, ratio: float = RATIO_TEST) -> Correspondences:
    """Mutual nearest neighbours in descriptor space filtered by Lowe's ratio.

    Confidence is ``1 - best / second_best`` descriptor distance.
    """
    src_pts = np.asarray(src_kps[0] if isinstance(src_kps, tuple) else src_kps, dtype=np.float64).reshape(-1, 2)
    dst_pts = np.asarray(dst_kps[0] if isinstance(dst_kps, tuple) else dst_kps, dtype=np.float64).reshape(-1, 2)
    ds, vs = describe(src_img, src_pts)
    dd, vd = describe(dst_img, dst_pts)
    src_pts, ds = src_pts[vs], ds[vs]
    dst_pts, dd = dst_pts[vd], dd[vd]
    if len(src_pts) == 0 or len(dst_pts) == 0:
        return Correspondences.empty()

    sim = ds @ dd.T
    best = np.argmax(sim, axis=1)
    back = np.argmax(sim, axis=0)
    mutual = back[best] == np.arange(len(src_pts))
    s1 = sim[np.arange(len(src_pts)), best].astype(np.float64)
    d1 = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * s1))
    if sim.shape[1] > 1:
        sim[np.arange(len(src_pts)), best] = -np.inf
        s2 = sim.max(axis=1).astype(np.float64)
        d2 = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * s2))
    else:
        d2 = np.full(len(src_pts), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(d2 > 0, d1 / d2, 1.0)
    keep = mutual & (rel < ratio)
    idx = np.nonzero(keep)[0]
    conf = np.clip(1.0 - rel[idx], 0.0, 1.0)
    return Correspondences(src_pts[idx], dst_pts[best[idx]], conf)


class BuiltinMatcher:
    def __init__(self, spec: MatcherSpec | None = None):
        self.spec = spec or MatcherSpec()

    def match(self, src_tile: np.ndarray, dst_tile: np.ndarray) -> Correspondences:
        budget = self.spec.keypoint_budget
        sk = detect_keypoints(src_tile, budget)
        dk = detect_keypoints(dst_tile, budget)
        return describe_and_match(sk, dk, src_tile, dst_tile)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# --- external adapter ------------------------------------------------------


def _cap_budget(corrs: Correspondences, budget: int) -> Correspondences:
    if len(corrs) <= budget:
        return corrs
    order = np.argsort(-corrs.conf, kind="stable")[:budget]
    return corrs.subset(np.sort(order))


class ExternalMatcher:
    """Client for one persistent adapter subprocess.

    Requests are serialized with a lock, so a single instance can be shared
    by worker threads. Any protocol violation or timeout kills the process;
    the next request starts a fresh one.
    """

    def __init__(self, spec: MatcherSpec):
        if spec.kind != "external":
            raise ValueError("ExternalMatcher needs an external MatcherSpec")
        self.spec = spec
        self._args = shlex.split(spec.external_command)
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue | None = None
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        self._tmp = tempfile.TemporaryDirectory(prefix="regbench-tiles-")

    def _start(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self._args,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ExternalMatcherFailure(f"cannot start adapter {self.spec.external_command!r}: {exc}") from exc
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc.stdout, self._lines), daemon=True).start()

    @staticmethod
    def _pump(stream, lines: queue.Queue) -> None:
        for line in stream:
            lines.put(line)
        lines.put(None)

    def _kill(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                pass
            for s in (self._proc.stdin, self._proc.stdout):
                try:
                    s.close()
                except OSError:
                    pass
        self._proc = None
        self._lines = None

    def _readline(self, deadline: float, rid: int) -> str:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise ExternalMatcherFailure(f"request {rid}: timed out after {self.spec.timeout} s")
        try:
            line = self._lines.get(timeout=remaining)
        except queue.Empty:
            raise ExternalMatcherFailure(f"request {rid}: timed out after {self.spec.timeout} s") from None
        if line is None:
            code = self._proc.poll()
            raise ExternalMatcherFailure(f"request {rid}: adapter exited (code {code})")
        return line.rstrip("\r\n")

    def _exchange(self, rid: int, src_path: Path, dst_path: Path) -> Correspondences:
        if self._proc is None or self._proc.poll() is not None:
            self._kill()
            self._start()
        deadline = time.monotonic() + self.spec.timeout
        try:
            self._proc.stdin.write(f"MATCH {rid} {src_path} {dst_path}\n")
            self._proc.stdin.flush()
        except OSError as exc:
            raise ExternalMatcherFailure(f"request {rid}: cannot write to adapter: {exc}") from exc

        head = self._readline(deadline, rid).split(maxsplit=2)
        if len(head) >= 2 and head[0] == "ERR" and head[1] == str(rid):
            raise ExternalMatcherFailure(f"request {rid}: adapter error: {head[2] if len(head) > 2 else ''}")
        if len(head) != 3 or head[0] != "BEGIN" or head[1] != str(rid):
            raise ExternalMatcherFailure(f"request {rid}: malformed header {' '.join(head)!r}")
        try:
            count = int(head[2])
        except ValueError:
            raise ExternalMatcherFailure(f"request {rid}: bad count {head[2]!r}") from None
        if count < 0:
            raise ExternalMatcherFailure(f"request {rid}: negative count")
        rows = np.empty((count, 5))
        for k in range(count):
            line = self._readline(deadline, rid)
            parts = line.split()
            try:
                if len(parts) != 5:
                    raise ValueError
                rows[k] = [float(p) for p in parts]
            except ValueError:
                raise ExternalMatcherFailure(f"request {rid}: malformed row {line!r}") from None
        if not np.isfinite(rows).all():
            raise ExternalMatcherFailure(f"request {rid}: non-finite values")
        tail = self._readline(deadline, rid)
        if tail.split() != ["END", str(rid)]:
            raise ExternalMatcherFailure(f"request {rid}: expected 'END {rid}', got {tail!r}")
        return Correspondences(rows[:, 0:2], rows[:, 2:4], np.clip(rows[:, 4], 0.0, 1.0))

    def match(self, src_tile: np.ndarray, dst_tile: np.ndarray) -> Correspondences:
        with self._lock:
            rid = next(self._ids)
            tmp = Path(self._tmp.name)
            src_path, dst_path = tmp / f"src_{rid}.png", tmp / f"dst_{rid}.png"
            write_png(src_tile, src_path)
            write_png(dst_tile, dst_path)
            try:
                corrs = self._exchange(rid, src_path, dst_path)
            except ExternalMatcherFailure as exc:
                # ERR keeps the stream in sync; anything else leaves it unknown
                if "adapter error" not in str(exc):
                    self._kill()
                raise
            finally:
                src_path.unlink(missing_ok=True)
                dst_path.unlink(missing_ok=True)
        return _cap_budget(corrs, self.spec.keypoint_budget)

    def close(self) -> None:
        with self._lock:
            if self._proc is not None:
                try:
                    self._proc.stdin.close()
                    self._proc.wait(timeout=5)
                except (OSError, subprocess.TimeoutExpired):
                    pass
                self._kill()
            self._tmp.cleanup()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_matcher(spec: MatcherSpec):
    return BuiltinMatcher(spec) if spec.kind == "builtin" else ExternalMatcher(spec)


def match_tiles(src_tile: np.ndarray, dst_tile: np.ndarray, spec: MatcherSpec) -> Correspondences:
    """One-shot tile matching; an external spec spawns a short-lived adapter."""
    if src_tile.size == 0 or dst_tile.size == 0:
        raise ValueError("tiles must be non-empty")
    with make_matcher(spec) as matcher:
        return matcher.match(src_tile, dst_tile)


# --- adapter side ----------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def serve_adapter(
    match_fn: Callable[[np.ndarray, np.ndarray], Correspondences],
    stdin: TextIO | None = None,
    stdout: TextIO | None = None,
) -> None:
    """Answer MATCH requests until stdin closes. For writing adapters in Python."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        parts = line.split()
        if not parts:
            continue
        rid = parts[1] if len(parts) > 1 else "?"
        if parts[0] != "MATCH" or len(parts) != 4:
            stdout.write(f"ERR {rid} bad request\n")
            stdout.flush()
            continue
        try:
            corrs = match_fn(read_image(parts[2]), read_image(parts[3]))
        except Exception as exc:  # reported to the engine, not raised
            stdout.write(f"ERR {rid} {type(exc).__name__}: {exc}\n".replace("\n", " ").rstrip() + "\n")
            stdout.flush()
            continue
        out = [f"BEGIN {rid} {len(corrs)}"]
        for (x0, y0), (x1, y1), c in zip(corrs.src, corrs.dst, corrs.conf):
            out.append(" ".join(_fmt(v) for v in (x0, y0, x1, y1, c)))
        out.append(f"END {rid}")
        stdout.write("\n".join(out) + "\n")
        stdout.flush()
