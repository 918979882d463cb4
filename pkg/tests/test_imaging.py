import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image

from oracles import brute_percentile
from regbench.errors import IoError, UnsupportedBandCount
from regbench.imaging import (
    Normalization,
    clahe,
    normalize,
    read_image,
    resize_long_side,
    to_gray,
    write_png,
)

KINDS = list(Normalization)

images = hnp.arrays(
    np.float64,
    hnp.array_shapes(min_dims=2, max_dims=2, min_side=2, max_side=40),
    elements=st.floats(0, 255, allow_nan=False),
)


@pytest.mark.parametrize("kind", KINDS)
def test_constant_image_is_fixed_point(kind):
    img = np.full((33, 47), 91.0)
    np.testing.assert_array_equal(normalize(img, kind), img)


def test_identity_is_bit_identical():
    img = np.random.default_rng(0).uniform(0, 255, (20, 30))
    out = normalize(img, "identity")
    assert out.tobytes() == img.tobytes()


def test_percentile_on_ramp():
    ramp = np.arange(0, 100, 10, dtype=float).reshape(1, 10)
    p2 = brute_percentile(ramp.ravel(), 2)  # 1.8
    p98 = brute_percentile(ramp.ravel(), 98)  # 88.2
    assert p2 == pytest.approx(1.8) and p98 == pytest.approx(88.2)
    expected = [min(255.0, max(0.0, (v - p2) * 255.0 / (p98 - p2))) for v in ramp.ravel()]
    out = normalize(ramp, "percentile").ravel()
    np.testing.assert_allclose(out, expected, atol=1e-9)
    assert out[0] == 0.0 and out[-1] == 255.0
    assert 0 < out[1] < out[8] < 255


def test_percentile_idempotent_on_stretched_image():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 255, (50, 50))
    img[:2] = 0.0
    img[-2:] = 255.0
    once = normalize(img, "percentile")
    assert np.percentile(once, 2) == 0.0 and np.percentile(once, 98) == 255.0
    np.testing.assert_allclose(normalize(once, "percentile"), once, atol=1e-9)


def test_zscore_mapping():
    img = np.array([[0.0, 10.0], [20.0, 30.0]])
    z = (img - 15.0) / np.std(img)
    np.testing.assert_allclose(normalize(img, "zscore"), np.clip(128 + 64 * z, 0, 255))


@settings(max_examples=100, deadline=None)
@given(images, st.sampled_from(KINDS))
def test_range_closure(img, kind):
    out = normalize(img, kind)
    assert out.shape == img.shape
    assert out.min() >= 0.0 and out.max() <= 255.0


@settings(max_examples=100, deadline=None)
@given(images, st.sampled_from([Normalization.PERCENTILE, Normalization.ZSCORE]))
def test_monotone(img, kind):
    out = normalize(img, kind).ravel()
    order = np.argsort(img.ravel(), kind="stable")
    assert (np.diff(out[order]) >= -1e-9).all()


def test_clahe_matches_opencv():
    cv2 = pytest.importorskip("cv2")
    rng = np.random.default_rng(4)
    base = rng.normal(100, 25, (128, 160)).cumsum(axis=1) / 10
    img = np.clip(base - base.min(), 0, 255).astype(np.uint8)
    ref = cv2.createCLAHE(clipLimit=2.0, tileGridSize=(8, 8)).apply(img).astype(float)
    ours = clahe(img.astype(float))
    # rounding and interpolation-phase conventions differ slightly
    assert np.abs(ours - ref).mean() < 1.0
    assert np.corrcoef(ours.ravel(), ref.ravel())[0, 1] > 0.99


def test_clahe_locality():
    rng = np.random.default_rng(5)
    left = rng.uniform(40, 90, (128, 64))
    a = np.hstack([left, rng.uniform(0, 255, (128, 64))])
    b = np.hstack([left, rng.uniform(200, 210, (128, 64))])
    ca, cb = clahe(a), clahe(b)
    # 16 px tiles: columns < 40 only blend LUTs of tiles fully inside the left half
    np.testing.assert_array_equal(ca[:, :40], cb[:, :40])
    assert not np.array_equal(ca[:, 70:], cb[:, 70:])


def test_clahe_spreads_narrow_histogram():
    img = np.random.default_rng(2).uniform(100, 110, (64, 64))
    out = clahe(img)
    assert out.max() - out.min() > 30


def test_resize_examples():
    out, s = resize_long_side(np.zeros((2048, 4096)), 1024)
    assert out.shape == (512, 1024) and s == 0.25
    img = np.ones((600, 800))
    out, s = resize_long_side(img, 2048)
    assert out is img and s == 1.0
    out, s = resize_long_side(np.zeros((1000, 1536)), 1024)
    assert out.shape == (667, 1024) and s == pytest.approx(2 / 3)


def test_resize_samples_scaled_coordinates():
    yy, xx = np.mgrid[0:300, 0:400].astype(float)
    plane = 0.25 * xx + 0.1 * yy
    out, s = resize_long_side(plane, 100)
    oy, ox = np.mgrid[0:out.shape[0], 0:out.shape[1]].astype(float)
    # bilinear is exact on a linear ramp
    np.testing.assert_allclose(out, 0.25 * ox / s + 0.1 * oy / s, atol=1e-9)


def test_resize_deterministic():
    img = np.random.default_rng(7).uniform(0, 255, (301, 517))
    a, _ = resize_long_side(img, 200)
    b, _ = resize_long_side(img.copy(), 200)
    assert a.tobytes() == b.tobytes()


def test_to_gray():
    band = np.arange(12, dtype=np.uint8).reshape(3, 4)
    np.testing.assert_array_equal(to_gray(band), band.astype(float))
    white = np.full((2, 2, 3), 255, np.uint8)
    np.testing.assert_allclose(to_gray(white), 255.0)
    red = np.zeros((1, 1, 3), np.uint8)
    red[..., 0] = 255
    assert to_gray(red)[0, 0] == pytest.approx(76.245)
    sixteen = np.array([[1000, 3000]], dtype=np.uint16)
    np.testing.assert_allclose(to_gray(sixteen), [[0.0, 255.0]])
    with pytest.raises(UnsupportedBandCount):
        to_gray(np.zeros((4, 4, 4), np.uint8))


def test_png_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (20, 30)).astype(float)
    write_png(img, tmp_path / "a.png")
    np.testing.assert_array_equal(read_image(tmp_path / "a.png"), img)
    rgb = np.zeros((5, 6, 3), np.uint8)
    rgb[..., 1] = 100
    Image.fromarray(rgb).save(tmp_path / "rgb.png")
    np.testing.assert_allclose(read_image(tmp_path / "rgb.png"), 58.7)


def test_read_16bit_tiff(tmp_path):
    arr = np.array([[0, 500], [1000, 2000]], dtype=np.uint16)
    Image.fromarray(arr).save(tmp_path / "sar.tif")
    np.testing.assert_allclose(read_image(tmp_path / "sar.tif"), arr / 2000 * 255)


def test_read_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_image(tmp_path / "nope.png")
