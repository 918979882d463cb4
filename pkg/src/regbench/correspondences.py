"""Matched point pairs stored column-wise for vectorized geometry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np


class Correspondence(NamedTuple):
    src: tuple[float, float]
    dst: tuple[float, float]
    confidence: float = 1.0


@dataclass(eq=False)
class Correspondences:
    """N matched pairs: ``src`` (N, 2) in the optical frame, ``dst`` (N, 2) in the
    SAR frame, ``conf`` (N,) in [0, 1]. Coordinates are (x, y) pixels with the
    origin at the centre of the top-left pixel."""

    src: np.ndarray
    dst: np.ndarray
    conf: np.ndarray | None = None

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.float64).reshape(-1, 2)
        self.dst = np.asarray(self.dst, dtype=np.float64).reshape(-1, 2)
        if self.conf is None:
            self.conf = np.ones(len(self.src))
        self.conf = np.asarray(self.conf, dtype=np.float64).reshape(-1)
        if not (len(self.src) == len(self.dst) == len(self.conf)):
            raise ValueError(
                f"length mismatch: src {len(self.src)}, dst {len(self.dst)}, conf {len(self.conf)}"
            )
        if not (np.isfinite(self.src).all() and np.isfinite(self.dst).all()):
            raise ValueError("correspondence coordinates must be finite")
        if len(self.conf) and (self.conf.min() < 0.0 or self.conf.max() > 1.0):
            raise ValueError("confidence must lie in [0, 1]")

    @classmethod
    def empty(cls) -> Correspondences:
        return cls(np.empty((0, 2)), np.empty((0, 2)), np.empty(0))

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> Correspondences:
        rows = [tuple(p) for p in pairs]
        if not rows:
            return cls.empty()
        src = [r[0] for r in rows]
        dst = [r[1] for r in rows]
        conf = [r[2] if len(r) > 2 else 1.0 for r in rows]
        return cls(src, dst, conf)

    @classmethod
    def concat(cls, parts: Iterable[Correspondences]) -> Correspondences:
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.src for p in parts]),
            np.concatenate([p.dst for p in parts]),
            np.concatenate([p.conf for p in parts]),
        )

    def __len__(self) -> int:
        return len(self.src)

    def __iter__(self) -> Iterator[Correspondence]:
        for s, d, c in zip(self.src, self.dst, self.conf):
            yield Correspondence((float(s[0]), float(s[1])), (float(d[0]), float(d[1])), float(c))

    def subset(self, index) -> Correspondences:
        return Correspondences(self.src[index], self.dst[index], self.conf[index])

    def equals(self, other: Correspondences) -> bool:
        return (
            np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.conf, other.conf)
        )
