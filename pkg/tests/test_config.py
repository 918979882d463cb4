import pytest
from hypothesis import given, strategies as st

from regbench.config import ProtocolConfig, cast_field, parse_kv_text, read_kv_file
from regbench.errors import UsageError
from regbench.imaging import Normalization


def test_defaults():
    c = ProtocolConfig()
    assert (c.max_dimension, c.tile_size, c.tile_overlap) == (2048, 768, 256)
    assert (c.ransac_threshold, c.min_inliers, c.keypoint_budget) == (10.0, 6, 4096)
    assert c.geometry == "affine" and c.normalization is Normalization.IDENTITY


def test_key_format():
    key = ProtocolConfig(normalization="clahe", ransac_threshold=0.5).key()
    assert key == "norm=clahe|maxdim=2048|tile=768|ov=256|geom=affine|thr=0.5|mininl=6|kp=4096|seed=0"


@pytest.mark.parametrize(
    "kw",
    [
        {"geometry": "pinhole"},
        {"normalization": "gamma"},
        {"tile_overlap": 768},
        {"tile_overlap": -1},
        {"ransac_threshold": 0.0},
        {"min_inliers": 0},
        {"keypoint_budget": 0},
        {"max_dimension": 0},
        {"seed": -1},
    ],
)
def test_invalid_fields(kw):
    with pytest.raises(ValueError):
        ProtocolConfig(**kw)


def test_unknown_geometry_message():
    with pytest.raises(ValueError, match="unknown geometry"):
        ProtocolConfig(geometry="pinhole")


def test_gate_clamped_to_minimal_sample():
    assert ProtocolConfig(min_inliers=2).ransac_params(0).min_inliers == 3
    assert ProtocolConfig(min_inliers=2, geometry="homography").ransac_params(0).min_inliers == 4
    assert ProtocolConfig(min_inliers=8).ransac_params(7).min_inliers == 8


def test_parse_kv_text():
    text = """
    # comment
    geometry = affine, homography   # trailing
    max-dimension = 1024
    matcher = builtin
    matcher = external:python3 adapter.py --a=1,2
    """
    kv = parse_kv_text(text)
    assert kv["geometry"] == ["affine", "homography"]
    assert kv["max_dimension"] == ["1024"]
    assert kv["matcher"] == ["builtin", "external:python3 adapter.py --a=1,2"]


@pytest.mark.parametrize("text", ["geometry affine", "geometry ="])
def test_parse_kv_errors(text):
    with pytest.raises(UsageError):
        parse_kv_text(text)


def test_cast_field():
    assert cast_field("ransac_threshold", " 3 ") == 3.0
    assert cast_field("normalization", "CLAHE") is Normalization.CLAHE
    with pytest.raises(UsageError):
        cast_field("min_inliers", "many")
    with pytest.raises(UsageError):
        cast_field("colour", "red")


def test_read_kv_file_missing(tmp_path):
    with pytest.raises(UsageError):
        read_kv_file(tmp_path / "none.cfg")


@given(st.floats(0.01, 100, allow_nan=False), st.integers(1, 50), st.sampled_from(["affine", "homography"]))
def test_key_is_injective_on_changed_fields(thr, mininl, geom):
    a = ProtocolConfig(ransac_threshold=thr, min_inliers=mininl, geometry=geom)
    b = a.with_(min_inliers=mininl + 1)
    assert a.key() != b.key()
    assert a.with_().key() == a.key()
