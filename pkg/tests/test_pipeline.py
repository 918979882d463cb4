import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regbench.config import ProtocolConfig
from regbench.correspondences import Correspondences
from regbench.errors import ExternalMatcherFailure, IoError
from regbench.geometry import AffineTransform
from regbench.imaging import normalize, write_png
from regbench.manifest import ScenePairManifest, read_manifest
from regbench.matching import BuiltinMatcher
from regbench.pipeline import (
    MatchOutcome,
    TiePoint,
    corner_errors,
    fit_pair,
    match_pair,
    predict_displacements,
    register_images,
    run_pair,
    run_pair_corners,
)
from regbench.synthgen import SynthSpec, generate_pair, planted_affine, scene_specs, write_scene_suite

THR3 = ProtocolConfig(ransac_threshold=3.0)


@pytest.fixture(scope="module")
def scene():
    return generate_pair(SynthSpec(512, 512, planted_affine(11, 512, 512), texture_seed=11))


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("suite")
    return read_manifest(write_scene_suite(root, scene_specs(1, size=512, first_seed=5)))[0]


def corner_gap(a, b, w, h):
    return max(corner_errors(a, b, w, h))


def test_self_registration(scene, tmp_path):
    write_png(scene.optical, tmp_path / "o.png")
    tp = np.column_stack([scene.tiepoints[:, :2], scene.tiepoints[:, :2]])
    np.savetxt(tmp_path / "t.csv", tp, delimiter=",")
    entry = ScenePairManifest("self", tmp_path / "o.png", tmp_path / "o.png", tmp_path / "t.csv")
    r = run_pair(entry, THR3)
    assert r.ok
    np.testing.assert_allclose(r.transform.matrix, AffineTransform.identity().matrix, atol=1e-6)
    assert max(r.tiepoint_errors) < 1.0


def test_planted_affine_recovered(suite):
    r = run_pair(suite, ProtocolConfig())
    assert r.ok and r.inlier_count >= 6 and r.correspondence_count >= r.inlier_count
    assert np.mean(r.tiepoint_errors) < 1.0
    assert r.wall_clock >= 0
    assert [name for name, _ in r.trace] == ["normalize", "resize", "match", "ransac", "evaluate"]


def test_blank_sar_fails(scene, tmp_path):
    write_png(scene.optical, tmp_path / "o.png")
    write_png(np.full((512, 512), 90.0), tmp_path / "s.png")
    entry = ScenePairManifest("blank", tmp_path / "o.png", tmp_path / "s.png", None, (1, 0, 0, 0, 1, 0))
    r = run_pair(entry, ProtocolConfig())
    assert r.status == "failed" and r.transform is None and r.tiepoint_errors == []
    assert r.correspondence_count < 6 and r.failure_reason


def test_missing_image_raises(tmp_path):
    entry = ScenePairManifest("x", tmp_path / "no.png", tmp_path / "no.png")
    with pytest.raises(IoError):
        run_pair(entry, ProtocolConfig())


def test_predict_displacements_examples():
    a = planted_affine(1, 500, 500)
    opt = np.random.default_rng(0).uniform(0, 500, (20, 2))
    assert predict_displacements(AffineTransform.identity(), np.column_stack([opt, opt])) == [0.0] * 20
    tp = np.column_stack([opt, a.apply(opt)])
    assert max(predict_displacements(a, tp)) < 1e-9
    moved = AffineTransform(a.m + np.array([[0, 0, 2.0], [0, 0, 0]]))
    np.testing.assert_allclose(predict_displacements(moved, tp), 2.0, atol=1e-9)
    pts = [TiePoint(tuple(p), tuple(q)) for p, q in zip(opt, a.apply(opt))]
    assert predict_displacements(a, pts) == predict_displacements(a, tp)


def test_corner_error_examples():
    a = planted_affine(2, 640, 480)
    assert corner_errors(a, a, 640, 480) == [0.0] * 4
    moved = AffineTransform(a.m + np.array([[0, 0, 3.0], [0, 0, 4.0]]))
    np.testing.assert_allclose(np.mean(corner_errors(moved, a, 640, 480)), 5.0)


def test_corner_protocol_on_noisy_pair(tmp_path):
    specs = scene_specs(1, size=512, speckle=0.5, first_seed=8)
    entry = read_manifest(write_scene_suite(tmp_path, specs, corner_gt=True))[0]
    assert entry.tiepoints_path is None
    r = run_pair_corners(entry, ProtocolConfig())
    assert r.ok and len(r.tiepoint_errors) == 4
    assert np.mean(r.tiepoint_errors) < 2.0
    with pytest.raises(ValueError):
        run_pair_corners(ScenePairManifest("n", entry.optical_path, entry.sar_path), ProtocolConfig())


def test_identity_normalization_only_skips_stage_one(scene):
    cfg = ProtocolConfig(normalization="clahe")
    a = match_pair(scene.optical, scene.sar, cfg, BuiltinMatcher())
    pre = [normalize(img, "clahe") for img in (scene.optical, scene.sar)]
    b = match_pair(*pre, cfg.with_(normalization="identity"), BuiltinMatcher())
    assert a.corrs.equals(b.corrs)


def test_frame_invariant_under_resize():
    size = 1200
    gt = planted_affine(21, size, size)
    p = generate_pair(SynthSpec(size, size, gt, texture_seed=21))
    full = register_images(p.optical, p.sar, ProtocolConfig(max_dimension=2048))
    half = register_images(p.optical, p.sar, ProtocolConfig(max_dimension=1024))
    assert full.ok and half.ok
    assert corner_gap(full.transform, half.transform, size, size) < 0.5
    assert any(v["optical_scale"] < 1 for k, v in half.trace if k == "resize")


def test_determinism_and_jobs(scene):
    cfg = ProtocolConfig(tile_size=256, tile_overlap=64)
    a = register_images(scene.optical, scene.sar, cfg, jobs=1)
    b = register_images(scene.optical, scene.sar, cfg, jobs=4)
    assert np.array_equal(a.transform.matrix, b.transform.matrix)
    assert a.inlier_count == b.inlier_count


def test_small_pairs_bypass_tiling(scene):
    r = register_images(scene.optical, scene.sar, ProtocolConfig())
    assert dict(r.trace)["match"]["tiles"] == 1
    r = register_images(scene.optical, scene.sar, ProtocolConfig(tile_size=256, tile_overlap=64))
    assert dict(r.trace)["match"]["tiles"] == 9


class FlakyMatcher:
    """Builtin matcher that refuses the top-left tile."""

    def __init__(self):
        self.inner = BuiltinMatcher()

    def match(self, a, b):
        if getattr(self, "calls", 0) == 0:
            self.calls = 1
            raise ExternalMatcherFailure("adapter error: boom")
        return self.inner.match(a, b)


def test_tile_failure_does_not_fail_pair(scene):
    r = register_images(scene.optical, scene.sar, ProtocolConfig(tile_size=256, tile_overlap=64), FlakyMatcher())
    assert r.ok and len(r.tile_failures) == 1 and "boom" in r.tile_failures[0]


def test_dump_tiles_and_cache(suite, tmp_path):
    cache = {}
    cfg = ProtocolConfig(tile_size=384, tile_overlap=128)
    a = run_pair(suite, cfg, dump_dir=tmp_path, cache=cache)
    assert sorted(p.name for p in (tmp_path / suite.pair_id).iterdir())[:2] == ["r0_c0_optical.png", "r0_c0_sar.png"]
    b = run_pair(suite, cfg.with_(geometry="homography"), cache=cache)
    assert len(cache) == 1 and dict(b.trace)["match"]["cached"]
    c = run_pair(suite, cfg, cache=cache)
    assert np.array_equal(a.transform.matrix, c.transform.matrix)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 30), st.integers(1, 20))
def test_raising_gate_never_rescues_a_failure(seed, gate, bump):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 40))
    src = rng.uniform(0, 300, (n, 2))
    dst = src + rng.normal(0, 30, (n, 2))
    k = int(rng.integers(0, n))
    dst[:k] = src[:k] + 5.0
    outcome = MatchOutcome(Correspondences(src, dst), "", 1, [], 0.0, (300, 300))
    low = fit_pair("p", outcome, ProtocolConfig(min_inliers=gate, ransac_threshold=3.0))
    high = fit_pair("p", outcome, ProtocolConfig(min_inliers=gate + bump, ransac_threshold=3.0))
    if not low.ok:
        assert not high.ok
