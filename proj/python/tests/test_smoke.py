"""Smoke checks for the python module: wiring, shapes, and one short loop."""

import math
import pathlib
import re

import numpy as np
import pytest

import backsplat as bs


def test_rodrigues_exp_basics():
    assert np.allclose(bs.rodrigues_exp(np.zeros(3)), np.eye(3))
    yaw = bs.rodrigues_exp(np.array([0.0, math.pi / 2, 0.0]))
    # +z maps to +x under a quarter turn about y.
    assert np.allclose(yaw @ np.array([0.0, 0.0, 1.0]), [1.0, 0.0, 0.0], atol=1e-12)


def test_transform_matrix():
    xf = bs.SimilarityTransform()
    xf.scale = np.array([2.0, 2.0, 2.0])
    xf.translation = np.array([1.0, 0.0, 0.0])
    T = xf.to_matrix()
    assert T.shape == (4, 4)
    assert np.allclose(T[:3, :3], 2.0 * np.eye(3))
    assert np.allclose(T[:3, 3], [1.0, 0.0, 0.0])


def test_bind_and_render_sphere():
    verts, tris = bs.icosphere(1, 0.5)
    cloud = bs.bind_kernels(verts, tris)
    assert cloud.kernel_count == tris.shape[0]
    cloud.set_color(0, np.array([0.9, 0.1, 0.1]))
    assert np.allclose(cloud.color(0), [0.9, 0.1, 0.1])

    cam = bs.camera_from_orbit(0.0, 10.0, 2.0, np.zeros(3), 40.0, 48, 48)
    img = bs.render(cloud, verts, bs.SimilarityTransform.identity(), cam,
                    background=np.array([0.2, 0.3, 0.4]))
    assert img.shape == (48, 48, 4)
    assert img.min() >= 0.0 and img.max() <= 1.0
    # The sphere covers the image center; the corner shows pure background.
    assert img[24, 24, 3] > 0.5
    assert np.allclose(img[0, 0, :3], [0.2, 0.3, 0.4])
    assert img[0, 0, 3] == 0.0


def test_image_metrics_identities():
    rng = np.random.default_rng(3)
    a = rng.uniform(0.0, 1.0, size=(16, 16, 3))
    assert math.isinf(bs.psnr(a, a))
    assert bs.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert bs.mean_abs_diff(a, a) == 0.0
    b = np.clip(a + 0.1, 0.0, 1.0)
    assert bs.psnr(a, b) < math.inf
    assert bs.mean_abs_diff(a, b) > 0.0


def test_distribution_metrics_identities():
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(64, 6))
    assert bs.fid(feats, feats) == pytest.approx(0.0, abs=1e-8)
    other = rng.normal(size=(64, 6)) + 2.0
    assert bs.fid(feats, other) > 1.0
    assert bs.kid(feats, other) == pytest.approx(bs.kid(other, feats), rel=1e-9)
    assert bs.kid(feats, other) > bs.kid(feats, rng.normal(size=(64, 6)))


def test_short_loop(tmp_path):
    scene_dir = tmp_path / "scene"
    bs.write_scene_files(bs.build_toy_scene(), str(scene_dir), 42)
    toml = scene_dir / "scene.toml"
    text = toml.read_text()
    # Shrink resolutions and schedules so the loop runs in seconds.
    for key, value in [
        ("real_width", 32), ("real_height", 32),
        ("pseudo_width", 32), ("pseudo_height", 32),
        ("fit_steps", 15), ("align_steps", 10),
        ("invert_steps_w", 6), ("invert_steps_theta", 3),
        ("back_views", 2), ("count", 3),
    ]:
        text, n = re.subn(rf"(?m)^{key} = .*$", f"{key} = {value}", text)
        assert n == 1, key
    toml.write_text(text)

    out = tmp_path / "run"
    rows = bs.run_loop(str(toml), str(out), seed=7, rounds=1)
    assert (out / "checkpoint.json").exists()
    assert (out / "report.csv").exists()
    stages = {stage for stage, _, _ in rows}
    assert {"fit", "round1", "final"} <= stages
    fit_psnr = next(v for s, m, v in rows if s == "fit" and m == "psnr_az180")
    assert fit_psnr > 5.0
