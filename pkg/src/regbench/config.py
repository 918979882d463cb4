"""Protocol configuration and the flat ``key = value`` config/grid file format.

Config and grid files share one syntax::

    # comment
    geometry = affine, homography      # comma-separated list (grid axes)
    max_dimension = 1024, 1536
    matcher = builtin                  # one matcher per line; repeat the key
    matcher = external:python3 my_adapter.py

Keys may be written with dashes or underscores.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import UsageError
from .geometry import MIN_SAMPLE, MODEL_KINDS, RansacParams
from .imaging import Normalization

# defaults for the four-stage protocol
DEFAULT_MAX_DIMENSION = 2048
DEFAULT_TILE_SIZE = 768
DEFAULT_TILE_OVERLAP = 256
DEFAULT_THRESHOLD = 10.0
DEFAULT_MIN_INLIERS = 6
DEFAULT_KEYPOINT_BUDGET = 4096


@dataclass(frozen=True)
class ProtocolConfig:
    normalization: Normalization = Normalization.IDENTITY
    max_dimension: int = DEFAULT_MAX_DIMENSION
    tile_size: int = DEFAULT_TILE_SIZE
    tile_overlap: int = DEFAULT_TILE_OVERLAP
    geometry: str = "affine"
    ransac_threshold: float = DEFAULT_THRESHOLD
    min_inliers: int = DEFAULT_MIN_INLIERS
    keypoint_budget: int = DEFAULT_KEYPOINT_BUDGET
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "normalization", Normalization.parse(self.normalization))
        if self.geometry not in MODEL_KINDS:
            raise ValueError(f"unknown geometry {self.geometry!r} (choose from {', '.join(MODEL_KINDS)})")
        if self.max_dimension < 1:
            raise ValueError("max_dimension must be >= 1")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if not 0 <= self.tile_overlap < self.tile_size:
            raise ValueError("tile_overlap must satisfy 0 <= overlap < tile_size")
        if not self.ransac_threshold > 0:
            raise ValueError("ransac_threshold must be > 0")
        if self.min_inliers < 1:
            raise ValueError("min_inliers must be >= 1")
        if self.keypoint_budget < 1:
            raise ValueError("keypoint_budget must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def key(self) -> str:
        return (
            f"norm={self.normalization.value}|maxdim={self.max_dimension}|tile={self.tile_size}"
            f"|ov={self.tile_overlap}|geom={self.geometry}|thr={self.ransac_threshold:g}"
            f"|mininl={self.min_inliers}|kp={self.keypoint_budget}|seed={self.seed}"
        )

    def ransac_params(self, seed: int) -> RansacParams:
        # gates below the minimal sample are vacuous: a fit always has that many inliers
        gate = max(self.min_inliers, MIN_SAMPLE[self.geometry])
        return RansacParams(reproj_threshold=self.ransac_threshold, min_inliers=gate, seed=seed)

    def with_(self, **changes) -> ProtocolConfig:
        return replace(self, **changes)


CONFIG_FIELDS = tuple(f.name for f in fields(ProtocolConfig))
_CASTS = {
    "normalization": Normalization.parse,
    "max_dimension": int,
    "tile_size": int,
    "tile_overlap": int,
    "geometry": str,
    "ransac_threshold": float,
    "min_inliers": int,
    "keypoint_budget": int,
    "seed": int,
}


def cast_field(name: str, raw):
    try:
        return _CASTS[name](raw.strip() if isinstance(raw, str) else raw)
    except KeyError:
        raise UsageError(f"unknown config key {name!r}") from None
    except ValueError as exc:
        raise UsageError(f"bad value for {name}: {exc}") from None


def _canon(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def parse_kv_text(text: str, source: str = "<text>") -> dict[str, list[str]]:
    """Parse the flat format into key -> list of raw string values."""
    out: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = _canon(key)
        value = value.strip()
        if not value:
            raise UsageError(f"{source}:{lineno}: empty value for {key!r}")
        if key == "matcher":
            out.setdefault(key, []).append(value)
        else:
            out.setdefault(key, []).extend(v.strip() for v in value.split(",") if v.strip())
    return out


def read_kv_file(path) -> dict[str, list[str]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return parse_kv_text(text, str(path))
