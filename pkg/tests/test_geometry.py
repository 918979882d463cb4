import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import map_affine, map_homography, planted_instance, random_affine, random_homography
from regbench.correspondences import Correspondences
from regbench.errors import DegenerateConfiguration, DegeneratePoint
from regbench.geometry import (
    AffineTransform,
    Homography,
    apply_transform,
    compose,
    fit_affine_lsq,
    fit_homography_dlt,
    residuals,
    transform_from_line,
    transform_to_line,
)


def test_apply_identity_affine():
    assert apply_transform(AffineTransform.identity(), (37.5, -4.0)) == (37.5, -4.0)


def test_apply_scaled_affine():
    t = AffineTransform([[2, 0, 10], [0, 2, 20]])
    assert apply_transform(t, (1, 1)) == (12.0, 22.0)


def test_apply_diagonal_homography():
    # [2 0 0; 0 2 0; 0 0 1] @ (3, 4, 1) = (6, 8, 1)
    t = Homography(np.diag([2.0, 2.0, 1.0]))
    assert apply_transform(t, (3, 4)) == (6.0, 8.0)


def test_apply_homography_at_infinity():
    h = Homography([[1, 0, 0], [0, 1, 0], [1, 0, 1]])
    with pytest.raises(DegeneratePoint):
        apply_transform(h, (-1.0, 5.0))
    r = residuals(h, Correspondences([[-1.0, 5.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]))
    assert r[0] == np.inf and r[1] == 0.0


def test_homography_normalization():
    h = Homography(np.diag([4.0, 4.0, 2.0]))
    np.testing.assert_array_equal(h.h, np.diag([2.0, 2.0, 1.0]))
    # h22 ~ 0 falls back to unit Frobenius norm with positive trace
    g = Homography([[-1.0, 0, 0], [0, -1.0, 0], [0, 1.0, 0.0]])
    assert np.linalg.norm(g.h) == pytest.approx(1.0)
    assert np.trace(g.h) > 0


def test_fit_affine_three_exact_pairs():
    t = fit_affine_lsq([(0, 0), (1, 0), (0, 1)], [(10, 20), (12, 20), (10, 22)])
    np.testing.assert_allclose(t.m, [[2, 0, 10], [0, 2, 20]], atol=1e-12)


def test_fit_affine_src_equals_dst_is_identity():
    pts = np.random.default_rng(3).uniform(0, 500, size=(20, 2))
    np.testing.assert_allclose(fit_affine_lsq(pts, pts).m, np.eye(2, 3), atol=1e-12)


def test_fit_affine_recovers_seeded_affine():
    rng = np.random.default_rng(11)
    m = random_affine(rng)
    src = rng.uniform(0, 1000, size=(50, 2))
    t = fit_affine_lsq(src, map_affine(m, src))
    np.testing.assert_allclose(t.m, m, atol=1e-9, rtol=0)


def test_fit_affine_collinear_rejected():
    src = [(0, 0), (1, 1), (2, 2), (3, 3)]
    with pytest.raises(DegenerateConfiguration):
        fit_affine_lsq(src, src)


def test_fit_homography_identity_square():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    np.testing.assert_allclose(fit_homography_dlt(sq, sq).h, np.eye(3), atol=1e-12)


def test_fit_homography_embeds_affine():
    sq = np.array([(0, 0), (100, 0), (100, 100), (0, 100)], dtype=float)
    h = fit_homography_dlt(sq, sq + [5, 7]).h
    np.testing.assert_allclose(h[:2], [[1, 0, 5], [0, 1, 7]], atol=1e-9)
    np.testing.assert_allclose(h[2], [0, 0, 1], atol=1e-9)


def test_fit_homography_seeded_projective():
    rng = np.random.default_rng(5)
    hm = random_homography(rng)
    src = rng.uniform(0, 1000, size=(30, 2))
    est = Homography(fit_homography_dlt(src, map_homography(hm, src)).h)
    corners = np.array([(0, 0), (1000, 0), (1000, 1000), (0, 1000)], dtype=float)
    err = np.hypot(*(est.apply(corners) - map_homography(hm, corners)).T)
    assert err.max() < 1e-6


def test_fit_homography_collinear_rejected():
    src = [(0, 0), (1, 0), (2, 0), (0, 1)]
    with pytest.raises(DegenerateConfiguration):
        fit_homography_dlt(src, src)


def test_residuals_examples():
    ident = AffineTransform.identity()
    pts = np.arange(10.0).reshape(5, 2)
    assert residuals(ident, Correspondences(pts, pts)).tolist() == [0.0] * 5
    assert residuals(ident, Correspondences([(0, 0)], [(3, 4)])).tolist() == [5.0]


def test_residuals_equal_injected_noise():
    rng = np.random.default_rng(21)
    src, dst, m, inl, eps = planted_instance(rng)
    r = residuals(AffineTransform(m), Correspondences(src[inl], dst[inl]))
    np.testing.assert_allclose(r, np.hypot(eps[:, 0], eps[:, 1]), atol=1e-9, rtol=0)


def test_serialization_roundtrip():
    rng = np.random.default_rng(0)
    a = AffineTransform(random_affine(rng))
    h = Homography(random_homography(rng))
    assert len(transform_to_line(a).split()) == 6
    assert len(transform_to_line(h).split()) == 9
    np.testing.assert_array_equal(transform_from_line(transform_to_line(a)).m, a.m)
    np.testing.assert_array_equal(transform_from_line(transform_to_line(h)).h, h.h)
    with pytest.raises(ValueError):
        transform_from_line("1 2 3")


def test_compose_and_inverse():
    rng = np.random.default_rng(2)
    a = AffineTransform(random_affine(rng))
    both = compose(a.inverse(), a)
    np.testing.assert_allclose(both.m, np.eye(2, 3), atol=1e-12)
    h = Homography(random_homography(rng))
    assert isinstance(compose(h, a), Homography)


coords = st.floats(-1000, 1000, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_affine_exact_on_three_pairs(seed):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 1000, size=(3, 2))
    a, b = src[1] - src[0], src[2] - src[0]
    if abs(a[0] * b[1] - a[1] * b[0]) < 1e3:
        return
    dst = map_affine(random_affine(rng), src)
    t = fit_affine_lsq(src, dst)
    assert np.abs(t.apply(src) - dst).max() < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_homography_exact_on_four_pairs(seed):
    rng = np.random.default_rng(seed)
    src = np.array([(0, 0), (1000, 0), (1000, 1000), (0, 1000)], float) + rng.uniform(-150, 150, (4, 2))
    dst = map_homography(random_homography(rng), src)
    t = fit_homography_dlt(src, dst)
    assert np.abs(t.apply(src) - dst).max() < 1e-6


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_homography_of_affine_data_has_affine_bottom_row(seed):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 1000, size=(20, 2))
    h = fit_homography_dlt(src, map_affine(random_affine(rng), src)).h
    np.testing.assert_allclose(h[2], [0, 0, 1], atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), coords, coords)
def test_affine_fit_translation_equivariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 1000, size=(25, 2))
    dst = map_affine(random_affine(rng), src) + rng.normal(0, 1.0, size=(25, 2))
    base = fit_affine_lsq(src, dst)
    shift = AffineTransform.translation(dx, dy)
    moved = fit_affine_lsq(src + [dx, dy], dst + [dx, dy])
    # T^-1 . A' . T must give back the original fit
    back = compose(shift.inverse(), compose(moved, shift))
    np.testing.assert_allclose(back.m, base.m, atol=1e-9, rtol=0)
