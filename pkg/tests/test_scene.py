import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsplat.scene import (BundleError, Camera, CameraTrajectory, SceneBundle, cluster_ldi,
                             depth_clusters, gaussians_from_image, lift_pixel, read_bundle,
                             read_depth, write_bundle, write_depth, quat_to_matrix, matrix_to_quat)
from flowsplat.scene.gaussians import SCALE_K
from flowsplat.synthlab import scene_to_bundle


def _cam(**kw):
    base = dict(fx=500.0, fy=500.0, cx=32.0, cy=24.0, width=64, height=48)
    base.update(kw)
    return Camera(**base)


def test_principal_point_lifts_onto_axis():
    np.testing.assert_allclose(lift_pixel(_cam(), (32.0, 24.0), 7.0), [0, 0, 7.0])


def test_pinhole_lateral_offset():
    p = lift_pixel(_cam(), (82.0, 24.0), 10.0)
    np.testing.assert_allclose(p, [1.0, 0.0, 10.0], atol=1e-12)


def test_lift_project_roundtrip(rng):
    cam = Camera.look_at((0, -8, 7), (0, -2, 0), (0, 0, 1), 300, 310, 64, 48)
    uv = rng.uniform([0, 0], [64, 48], size=(1000, 2))
    d = rng.uniform(1, 50, 1000)
    back, z = cam.project(lift_pixel(cam, uv, d))
    np.testing.assert_allclose(back, uv, atol=1e-9)
    np.testing.assert_allclose(z, d, atol=1e-9)


def test_lift_rejects_nonpositive_depth():
    with pytest.raises(ValueError):
        lift_pixel(_cam(), (1.0, 1.0), 0.0)


def test_camera_invariants():
    with pytest.raises(ValueError):
        _cam(fx=0.0)
    with pytest.raises(ValueError):
        _cam(R=np.diag([1.0, 1.0, 2.0]))


def test_quaternion_roundtrip(rng):
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        R = quat_to_matrix(q)
        q2 = matrix_to_quat(R)
        assert min(np.abs(q - q2).max(), np.abs(q + q2).max()) < 1e-12


def test_camera_dict_roundtrip():
    cam = Camera.look_at((1, -8, 7), (0, -2, 0), (0, 0, 1), 64, 64, 64, 64)
    back = Camera.from_dict(cam.to_dict())
    np.testing.assert_allclose(back.R, cam.R, atol=1e-12)
    exact = Camera.from_dict(cam.to_dict(exact=True))
    assert np.array_equal(exact.R, cam.R)


def test_trajectory_ordering():
    cam = _cam()
    with pytest.raises(ValueError):
        CameraTrajectory([0, 2, 1], [cam] * 3)
    tr = CameraTrajectory.dolly(cam, 4, (0.1, 0, 0))
    np.testing.assert_allclose(tr.cameras[3].center - cam.center, [0.3, 0, 0], atol=1e-12)
    back = CameraTrajectory.from_list(tr.to_list())
    assert back.frames == [0, 1, 2, 3]


def test_ldi_examples():
    assert len(cluster_ldi(np.full((4, 4), 3.0), 1.0)) == 1
    d = np.full((4, 4), 5.0)
    d[:, 2:] = 50.0
    layers = cluster_ldi(d, 10.0)
    assert len(layers) == 2
    assert layers[0].depth_range == (5.0, 5.0) and layers[1].depth_range == (50.0, 50.0)
    stair = np.arange(1.0, 11.0).reshape(2, 5)
    assert len(cluster_ldi(stair, 1.5)) == 1
    with pytest.raises(ValueError):
        depth_clusters(np.zeros((0, 0)), 1.0)
    with pytest.raises(ValueError):
        depth_clusters(np.array([[1.0, -1.0]]), 1.0)


def _single_linkage_oracle(values, thr):
    """Union-find over all pairs closer than thr."""
    n = len(values)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i
    for i in range(n):
        for j in range(i + 1, n):
            if abs(values[i] - values[j]) < thr:
                parent[find(i)] = find(j)
    return [find(i) for i in range(n)]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.5, 30.0), min_size=1, max_size=25), st.floats(0.1, 5.0))
def test_ldi_matches_single_linkage(vals, thr):
    v = np.array(vals)
    labels = depth_clusters(v.reshape(1, -1), thr).ravel()
    oracle = _single_linkage_oracle(v, thr)
    for i in range(len(v)):
        for j in range(len(v)):
            assert (labels[i] == labels[j]) == (oracle[i] == oracle[j])
    layers = cluster_ldi(v.reshape(1, -1), thr)
    covered = np.sum([l.valid for l in layers], axis=0)
    assert np.all(covered == 1)
    assert all(a.depth_range[1] < b.depth_range[0] for a, b in zip(layers, layers[1:]))


def test_gaussians_from_image(rock_scene):
    s = rock_scene
    G = gaussians_from_image(s.image, s.depth, s.mask, s.camera)
    assert len(G) == s.depth.size
    assert np.all(G.opacities == 1.0)
    np.testing.assert_allclose(G.scales[:, 0], SCALE_K * s.depth.ravel() / s.camera.fx)
    assert G.fluid.sum() == s.mask.sum()
    uv, _ = s.camera.project(G.centers[G.fluid])
    rc = np.rint(uv[:, ::-1]).astype(int)
    assert s.mask[rc[:, 0], rc[:, 1]].all()
    np.linalg.cholesky(G.covariances())
    np.testing.assert_allclose(np.linalg.norm(G.quats, axis=1), 1.0)


def test_scale_proportional_to_depth():
    cam = _cam(width=2, height=1, cx=0.5, cy=0.0)
    G = gaussians_from_image(np.zeros((1, 2, 3)), np.array([[3.0, 6.0]]), np.zeros((1, 2), bool), cam)
    assert G.scales[1, 0] == pytest.approx(2 * G.scales[0, 0])


def test_gaussians_shape_mismatch():
    with pytest.raises(ValueError):
        gaussians_from_image(np.zeros((4, 4, 3)), np.ones((4, 5)), np.zeros((4, 4), bool), _cam())


def test_depth_file_roundtrip(tmp_path, rng):
    d = rng.uniform(1, 20, size=(5, 7)).astype(np.float32)
    write_depth(tmp_path / "d.bin", d)
    raw = (tmp_path / "d.bin").read_bytes()
    assert raw[:4] == b"DPTH" and len(raw) == 12 + 4 * 35
    assert np.array_equal(read_depth(tmp_path / "d.bin"), d.astype(np.float64))
    (tmp_path / "bad.bin").write_bytes(raw[:-4])
    with pytest.raises(BundleError):
        read_depth(tmp_path / "bad.bin")


def test_bundle_roundtrip(tmp_path, rock_scene):
    b = scene_to_bundle(rock_scene)
    write_bundle(b, tmp_path / "b")
    back = read_bundle(tmp_path / "b")
    assert np.abs(back.image - b.image).max() <= 0.5 / 255 + 1e-12
    np.testing.assert_allclose(back.depth, b.depth, rtol=1e-6)
    assert np.array_equal(back.mask, b.mask)
    assert np.array_equal(back.obstacle, b.obstacle)
    np.testing.assert_allclose(back.camera.R, b.camera.R, atol=1e-12)
    assert len(back.trajectory) == len(b.trajectory)
    assert back.meta == b.meta


def test_bundle_missing_file(tmp_path, rock_scene):
    write_bundle(scene_to_bundle(rock_scene), tmp_path / "b")
    (tmp_path / "b" / "depth.bin").unlink()
    with pytest.raises(BundleError, match="depth.bin"):
        read_bundle(tmp_path / "b")


def test_bundle_validation(rock_scene):
    b = scene_to_bundle(rock_scene)
    with pytest.raises(BundleError):
        SceneBundle(b.image, -b.depth, b.mask, b.camera, b.trajectory)
    with pytest.raises(BundleError):
        SceneBundle(b.image[:-1], b.depth, b.mask, b.camera, b.trajectory)
