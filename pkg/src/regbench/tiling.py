"""Overlapping tile grids and tile-to-scene coordinate bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .correspondences import Correspondences


def axis_origins(dim: int, tile_size: int, overlap: int) -> list[int]:
    """Tile start offsets along one axis; the last one is clamped to the edge."""
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    if not 0 <= overlap < tile_size:
        raise ValueError(f"overlap must satisfy 0 <= overlap < tile_size, got {overlap}")
    if dim <= tile_size:
        return [0]
    stride = tile_size - overlap
    count = math.ceil((dim - tile_size) / stride) + 1
    origins = [min(k * stride, dim - tile_size) for k in range(count)]
    return sorted(set(origins))


@dataclass(frozen=True)
class TileGrid:
    width: int
    height: int
    tile_size: int
    overlap: int
    xs: tuple[int, ...]
    ys: tuple[int, ...]

    @property
    def stride(self) -> int:
        return self.tile_size - self.overlap

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.ys), len(self.xs)

    @property
    def origins(self) -> list[tuple[int, int]]:
        """(x0, y0) per tile, row-major."""
        return [(x, y) for y in self.ys for x in self.xs]

    def window(self, row: int, col: int) -> tuple[slice, slice]:
        y0, x0 = self.ys[row], self.xs[col]
        return (
            slice(y0, min(y0 + self.tile_size, self.height)),
            slice(x0, min(x0 + self.tile_size, self.width)),
        )

    def __len__(self) -> int:
        return len(self.xs) * len(self.ys)


def build_grid(width: int, height: int, tile_size: int, overlap: int) -> TileGrid:
    return TileGrid(
        width,
        height,
        tile_size,
        overlap,
        tuple(axis_origins(width, tile_size, overlap)),
        tuple(axis_origins(height, tile_size, overlap)),
    )


@dataclass(eq=False)
class TilePair:
    index: tuple[int, int]
    src_tile: np.ndarray
    dst_tile: np.ndarray
    src_origin: tuple[int, int]
    dst_origin: tuple[int, int]


def tile_pairs(src: np.ndarray, dst: np.ndarray, tile_size: int, overlap: int) -> list[TilePair]:
    """Crop both images on their own grids and pair tiles by grid index.

    When the two grids differ in shape only the common index range is used.
    """
    gs = build_grid(src.shape[1], src.shape[0], tile_size, overlap)
    gd = build_grid(dst.shape[1], dst.shape[0], tile_size, overlap)
    rows = min(gs.shape[0], gd.shape[0])
    cols = min(gs.shape[1], gd.shape[1])
    pairs = []
    for r in range(rows):
        for c in range(cols):
            pairs.append(
                TilePair(
                    (r, c),
                    src[gs.window(r, c)],
                    dst[gd.window(r, c)],
                    (gs.xs[c], gs.ys[r]),
                    (gd.xs[c], gd.ys[r]),
                )
            )
    return pairs


def whole_image_pair(src: np.ndarray, dst: np.ndarray) -> TilePair:
    return TilePair((0, 0), src, dst, (0, 0), (0, 0))


def tile_set_key(pairs: Iterable[TilePair]) -> str:
    return ";".join(f"{p.index}:{p.src_origin}:{p.dst_origin}" for p in pairs)


def project_to_full_frame(
    corrs: Correspondences, pair: TilePair, src_scale: float = 1.0, dst_scale: float = 1.0
) -> Correspondences:
    """Tile-local coordinates -> full-resolution scene coordinates."""
    for s in (src_scale, dst_scale):
        if not 0.0 < s <= 1.0:
            raise ValueError(f"scale must lie in (0, 1], got {s}")
    src = (corrs.src + np.asarray(pair.src_origin, dtype=np.float64)) / src_scale
    dst = (corrs.dst + np.asarray(pair.dst_origin, dtype=np.float64)) / dst_scale
    return Correspondences(src, dst, corrs.conf.copy())


def aggregate(per_tile) -> Correspondences:
    """Concatenate per-tile sets in ascending (row, col) order.

    ``per_tile`` is a mapping or an iterable of (index, Correspondences);
    the result does not depend on the order the tiles finished in.
    """
    items = per_tile.items() if hasattr(per_tile, "items") else per_tile
    ordered = sorted(items, key=lambda kv: tuple(kv[0]))
    return Correspondences.concat(c for _, c in ordered)
