"""Synthetic optical/SAR-like scene pairs with exact ground truth.

The optical scene is a procedural texture (multi-octave value noise plus
soft-edged rectangles) defined in continuous coordinates, so the SAR-like
side is rendered by evaluating the same texture at gt^-1(pixel) rather than
by resampling pixels. Degradations: global contrast inversion and
multiplicative gamma speckle.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import AffineTransform, GeometricTransform, Homography
from .imaging import write_png
from .manifest import (
    RetrievalRecord,
    ScenePairManifest,
    write_manifest,
    write_retrieval_manifest,
    write_tiepoints,
    write_transform,
)

_OCTAVES = ((96.0, 1.0), (48.0, 0.6), (24.0, 0.4), (12.0, 0.25))
_EDGE = 1.5  # soft edge width of blobs, px
_BLOB_AREA = 900.0  # one blob per this many px^2


def _stream(*parts) -> np.random.Generator:
    digest = hashlib.blake2b("|".join(map(str, parts)).encode(), digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


class Texture:
    """Seeded procedural intensity field, evaluable at any (x, y)."""

    def __init__(self, seed: int, width: int, height: int, pad: float = 256.0):
        rng = _stream("texture", seed)
        self.x0, self.y0 = -pad, -pad
        span_x, span_y = width + 2 * pad, height + 2 * pad
        self.lattices = []
        for cell, amp in _OCTAVES:
            nx, ny = int(math.ceil(span_x / cell)) + 2, int(math.ceil(span_y / cell)) + 2
            self.lattices.append((cell, amp, rng.uniform(-1.0, 1.0, size=(ny, nx))))
        self.amp_total = sum(a for _, a in _OCTAVES)
        n_blobs = int(span_x * span_y / _BLOB_AREA)
        cx = rng.uniform(self.x0, self.x0 + span_x, n_blobs)
        cy = rng.uniform(self.y0, self.y0 + span_y, n_blobs)
        hw = rng.uniform(3.0, 16.0, n_blobs)
        hh = rng.uniform(3.0, 16.0, n_blobs)
        self.blobs = np.column_stack([cx - hw, cy - hh, cx + hw, cy + hh, rng.uniform(0, 255, n_blobs)])

    def _noise(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        total = np.zeros_like(x)
        for cell, amp, lat in self.lattices:
            gx = np.clip((x - self.x0) / cell, 0, lat.shape[1] - 1.000001)
            gy = np.clip((y - self.y0) / cell, 0, lat.shape[0] - 1.000001)
            ix, iy = np.floor(gx).astype(int), np.floor(gy).astype(int)
            fx, fy = gx - ix, gy - iy
            fx = fx * fx * (3 - 2 * fx)
            fy = fy * fy * (3 - 2 * fy)
            top = lat[iy, ix] * (1 - fx) + lat[iy, ix + 1] * fx
            bot = lat[iy + 1, ix] * (1 - fx) + lat[iy + 1, ix + 1] * fx
            total += amp * (top * (1 - fy) + bot * fy)
        return 128.0 + 110.0 * total / self.amp_total

    def render(self, width: int, height: int, inverse: GeometricTransform | None = None) -> np.ndarray:
        """Image whose pixel (i, j) shows the texture at inverse(j, i)."""
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        if inverse is not None:
            pts = inverse.apply(np.column_stack([xx.ravel(), yy.ravel()]))
            xx, yy = pts[:, 0].reshape(height, width), pts[:, 1].reshape(height, width)
        img = self._noise(xx, yy)
        forward = inverse.inverse() if inverse is not None else None
        for x0, y0, x1, y1, value in self.blobs:
            corners = np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
            if forward is not None:
                corners = forward.apply(corners)
            c0 = max(int(np.floor(corners[:, 0].min())) - 3, 0)
            c1 = min(int(np.ceil(corners[:, 0].max())) + 4, width)
            r0 = max(int(np.floor(corners[:, 1].min())) - 3, 0)
            r1 = min(int(np.ceil(corners[:, 1].max())) + 4, height)
            if c0 >= c1 or r0 >= r1:
                continue
            bx, by = xx[r0:r1, c0:c1], yy[r0:r1, c0:c1]
            alpha = (
                np.clip(0.5 + (bx - x0) / _EDGE, 0, 1)
                * np.clip(0.5 + (x1 - bx) / _EDGE, 0, 1)
                * np.clip(0.5 + (by - y0) / _EDGE, 0, 1)
                * np.clip(0.5 + (y1 - by) / _EDGE, 0, 1)
            )
            patch = img[r0:r1, c0:c1]
            img[r0:r1, c0:c1] = patch + alpha * (value - patch)
        return np.clip(img, 0.0, 255.0)


def planted_affine(
    seed: int, width: int, height: int, max_rot_deg=3.0, scale_jitter=0.03, shear=0.02, max_shift=20.0
) -> AffineTransform:
    """Mild random affine about the image centre (orthorectified-like misregistration)."""
    rng = _stream("planted", seed)
    th = math.radians(rng.uniform(-max_rot_deg, max_rot_deg))
    sx, sy = 1.0 + rng.uniform(-scale_jitter, scale_jitter, 2)
    k = rng.uniform(-shear, shear)
    lin = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]) @ np.array([[sx, k], [0, sy]])
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    t = c - lin @ c + rng.uniform(-max_shift, max_shift, 2)
    return AffineTransform(np.column_stack([lin, t]))


def planted_homography(seed: int, width: int, height: int, perspective=2e-5, **kw) -> Homography:
    a = planted_affine(seed, width, height, **kw).matrix
    rng = _stream("perspective", seed)
    c = np.array([[1, 0, -(width - 1) / 2], [0, 1, -(height - 1) / 2], [0, 0, 1.0]])
    p = np.eye(3)
    p[2, :2] = rng.uniform(-perspective, perspective, 2)
    return Homography(a @ np.linalg.inv(c) @ p @ c)


@dataclass(frozen=True)
class SynthSpec:
    width: int = 1024
    height: int = 1024
    planted_transform: GeometricTransform = field(default_factory=AffineTransform.identity)
    speckle_strength: float = 0.0
    invert_contrast: bool = False
    texture_seed: int = 0
    tiepoint_grid: int = 10

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise ValueError("synthetic scenes must be at least 64 x 64")
        if self.speckle_strength < 0:
            raise ValueError("speckle_strength must be >= 0")
        if self.tiepoint_grid < 1:
            raise ValueError("tiepoint_grid must be >= 1")


@dataclass(eq=False)
class SynthPair:
    optical: np.ndarray
    sar: np.ndarray
    tiepoints: np.ndarray  # (N, 4): x_opt, y_opt, x_sar, y_sar
    gt: GeometricTransform


def degrade(img: np.ndarray, speckle: float, invert: bool, rng: np.random.Generator) -> np.ndarray:
    out = 255.0 - img if invert else img
    if speckle > 0:
        looks = 1.0 / speckle**2
        out = np.clip(out * rng.gamma(looks, 1.0 / looks, size=out.shape), 0.0, 255.0)
    return out


def grid_tiepoints(spec: SynthSpec) -> np.ndarray:
    n = spec.tiepoint_grid
    mx, my = 0.1 * (spec.width - 1), 0.1 * (spec.height - 1)
    xs = np.linspace(mx, spec.width - 1 - mx, n)
    ys = np.linspace(my, spec.height - 1 - my, n)
    opt = np.array([(x, y) for y in ys for x in xs])
    sar = spec.planted_transform.apply(opt)
    inside = (
        (sar[:, 0] >= 0) & (sar[:, 0] <= spec.width - 1) & (sar[:, 1] >= 0) & (sar[:, 1] <= spec.height - 1)
    )
    return np.column_stack([opt, sar])[inside]


def generate_pair(spec: SynthSpec) -> SynthPair:
    tex = Texture(spec.texture_seed, spec.width, spec.height)
    optical = tex.render(spec.width, spec.height)
    sar = tex.render(spec.width, spec.height, spec.planted_transform.inverse())
    sar = degrade(sar, spec.speckle_strength, spec.invert_contrast, _stream("speckle", spec.texture_seed))
    return SynthPair(optical, sar, grid_tiepoints(spec), spec.planted_transform)


def scene_specs(
    n: int = 10, size: int = 1024, speckle: float = 0.0, invert: bool = False, geometry: str = "affine", first_seed: int = 0
) -> list[SynthSpec]:
    """The frozen scene set: seeds first_seed .. first_seed + n - 1."""
    out = []
    for seed in range(first_seed, first_seed + n):
        t = planted_affine(seed, size, size) if geometry == "affine" else planted_homography(seed, size, size)
        out.append(SynthSpec(size, size, t, speckle, invert, seed))
    return out


def write_scene_suite(out_dir, specs: list[SynthSpec], prefix: str = "scene", corner_gt: bool = False) -> Path:
    """Render scenes to PNG + tie-point CSV + transform files; returns the manifest path."""
    out_dir = Path(out_dir)
    entries = []
    for spec in specs:
        pid = f"{prefix}{spec.texture_seed:03d}"
        pair = generate_pair(spec)
        opt_p = out_dir / "images" / f"{pid}_optical.png"
        sar_p = out_dir / "images" / f"{pid}_sar.png"
        tp_p = out_dir / "tiepoints" / f"{pid}.csv"
        write_png(pair.optical, opt_p)
        write_png(pair.sar, sar_p)
        write_tiepoints(tp_p, pair.tiepoints)
        write_transform(out_dir / "gt" / f"{pid}.txt", pair.gt)
        gt = None
        if corner_gt and isinstance(pair.gt, AffineTransform):
            gt = tuple(float(v) for v in pair.gt.coefficients())
        entries.append(ScenePairManifest(pid, opt_p, sar_p, None if corner_gt else tp_p, gt))
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, entries)
    return manifest


# --- retrieval pools -------------------------------------------------------


@dataclass(eq=False)
class RetrievalQuerySet:
    query_id: str
    query: np.ndarray
    candidate_ids: list[str]
    candidates: list[np.ndarray]
    positive: str


def generate_retrieval_pool(
    n_queries: int,
    pool_size: int,
    seed: int = 0,
    patch_size: int = 128,
    speckle: float = 0.1,
    invert: bool = False,
    max_rot_deg: float = 2.0,
    max_shift: float = 4.0,
) -> list[RetrievalQuerySet]:
    """Each query is a warped, degraded view of exactly one candidate; the
    other candidates are independent textures."""
    if pool_size < 2:
        raise ValueError("pool_size must be >= 2")
    out = []
    for q in range(n_queries):
        rng = _stream("pool", seed, q)
        pos_slot = int(rng.integers(pool_size))
        ids = [f"q{q:02d}_c{j:02d}" for j in range(pool_size)]
        cands = []
        query = None
        for j in range(pool_size):
            tex_seed = int(_stream("pool-texture", seed, q, j).integers(2**62))
            tex = Texture(tex_seed, patch_size, patch_size, pad=64.0)
            cands.append(tex.render(patch_size, patch_size))
            if j == pos_slot:
                warp = planted_affine(tex_seed, patch_size, patch_size, max_rot_deg, 0.02, 0.01, max_shift)
                view = tex.render(patch_size, patch_size, warp.inverse())
                query = degrade(view, speckle, invert, _stream("pool-speckle", seed, q))
        out.append(RetrievalQuerySet(f"q{q:02d}", query, ids, cands, ids[pos_slot]))
    return out


def write_retrieval_pool(out_dir, pool: list[RetrievalQuerySet]) -> Path:
    out_dir = Path(out_dir)
    records = []
    for qs in pool:
        qp = out_dir / "queries" / f"{qs.query_id}.png"
        write_png(qs.query, qp)
        paths = []
        for cid, img in zip(qs.candidate_ids, qs.candidates):
            p = out_dir / "candidates" / f"{cid}.png"
            write_png(img, p)
            paths.append(p)
        records.append(RetrievalRecord(qs.query_id, qp, tuple(qs.candidate_ids), tuple(paths), qs.positive))
    manifest = out_dir / "retrieval.jsonl"
    write_retrieval_manifest(manifest, records)
    return manifest
