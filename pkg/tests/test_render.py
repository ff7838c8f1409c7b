from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from conftest import random_pose, small_sphere
from silpose.errors import ShapeMismatch
from silpose.geometry import CameraPose, Mesh
from silpose.render import (
    RenderConfig,
    area_resize,
    iou,
    load_semantic_pngs,
    load_silhouette_png,
    pad_to_square,
    render_silhouette,
    render_vertex_colors,
    save_semantic_pngs,
    save_silhouette_png,
    silhouette_loss_grad,
    silhouette_mse,
    splat_semantics,
    visibility,
)


def quad(x0, x1, y0, y1, z=0.0):
    v = np.array([[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]], dtype=np.float64)
    return Mesh(v, [[0, 1, 2], [0, 2, 3]])


def test_empty_mesh_renders_zero():
    img = render_silhouette(Mesh(np.zeros((0, 3)), np.zeros((0, 3))), CameraPose(), RenderConfig(32))
    assert img.shape == (32, 32) and not img.any()


def test_large_triangle_covers_everything():
    m = Mesh(np.array([[-4.0, -4.0, 0.0], [8.0, -4.0, 0.0], [-4.0, 8.0, 0.0]]), [[0, 1, 2]])
    assert render_silhouette(m, CameraPose(), RenderConfig(64)).min() >= 0.99


def test_half_square_covers_half():
    img = render_silhouette(quad(-1.0, 0.0, -1.0, 1.0), CameraPose(), RenderConfig(128))
    assert abs(img.mean() - 0.5) <= 0.02


def test_coverage_in_unit_interval(rng):
    img = render_silhouette(small_sphere(), random_pose(rng), RenderConfig(48))
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_vertex_color_at_barycenter():
    res = 128
    c = (64 + 0.5) * 2.0 / res - 1.0
    off = np.array([[-0.5, -0.3], [0.6, -0.2], [-0.1, 0.5]])
    v = np.column_stack([c + off, np.zeros(3)])
    img = render_vertex_colors(Mesh(v, [[0, 1, 2]]), np.eye(3), CameraPose(), RenderConfig(res))
    assert np.allclose(img[:, 64, 64], 1.0 / 3.0, atol=1e-9)


def test_vertex_colors_bounded_by_coverage(rng):
    mesh = small_sphere()
    cfg = RenderConfig(64)
    pose = random_pose(rng)
    C = rng.dirichlet(np.ones(3), size=mesh.n_vertices).T
    img = render_vertex_colors(mesh, C, pose, cfg)
    face_id, _ = visibility(mesh, pose, cfg)
    assert np.all(img.sum(0) <= (face_id >= 0) + 1e-12)


def test_splat_zero_semantics():
    mesh = small_sphere()
    acc = splat_semantics(mesh, CameraPose(), np.zeros((2, 32, 32)), RenderConfig(32))
    assert acc.shape == (2, mesh.n_vertices) and not acc.any()


def test_splat_skips_occluded_vertices():
    front = quad(-0.8, 0.8, -0.8, 0.8, z=0.0)
    back = quad(-0.4, 0.4, -0.4, 0.4, z=1.0)
    mesh = Mesh(np.vstack([front.vertices, back.vertices]), np.vstack([front.faces, back.faces + 4]))
    acc = splat_semantics(mesh, CameraPose(), np.ones((1, 64, 64)), RenderConfig(64))
    assert np.all(acc[0, 4:] == 0.0)
    assert np.all(acc[0, :4] > 0.0)


def test_splat_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        splat_semantics(small_sphere(), CameraPose(), np.ones((1, 10, 12)), RenderConfig(10))


@given(st.integers(0, 10_000))
def test_splat_is_adjoint_of_render(seed):
    rng = np.random.default_rng(seed)
    mesh = small_sphere(8, 6)
    pose = random_pose(rng)
    cfg = RenderConfig(24)
    C = rng.normal(size=(2, mesh.n_vertices))
    S = rng.normal(size=(2, 24, 24))
    lhs = np.sum(render_vertex_colors(mesh, C, pose, cfg) * S)
    rhs = np.sum(C * splat_semantics(mesh, pose, S, cfg))
    assert abs(lhs - rhs) <= 1e-6 * max(1.0, abs(lhs))


def test_mse_constant_offset():
    x = np.random.default_rng(3).random((16, 16))
    loss, _ = silhouette_mse(x + 0.1, x)
    assert np.isclose(loss, 0.01)


def test_mse_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        silhouette_mse(np.zeros((4, 4)), np.zeros((4, 5)))


def test_iou_shifted_squares():
    a = np.zeros((40, 40))
    b = np.zeros((40, 40))
    a[5:15, 5:15] = 1.0
    b[5:15, 10:20] = 1.0
    assert np.isclose(iou(a, b), 1.0 / 3.0)


def test_iou_of_two_empty_images_is_one():
    assert iou(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0


def test_soft_matches_hard_away_from_edges(rng):
    mesh = small_sphere(12, 10)
    cfg = RenderConfig(96, sigma=1.0)
    pose = random_pose(rng)
    soft = render_silhouette(mesh, pose, cfg) > 0.5
    hard = visibility(mesh, pose, cfg)[0] >= 0
    # pixels more than 3 sigma from the silhouette boundary
    far = ~(ndimage.binary_dilation(hard, iterations=4) & ndimage.binary_dilation(~hard, iterations=4))
    assert np.array_equal(soft[far], hard[far])


def test_smaller_sigma_is_closer_to_hard(rng):
    mesh = small_sphere(12, 10)
    pose = random_pose(rng)
    hard = visibility(mesh, pose, RenderConfig(64))[0] >= 0
    errs = [np.abs(render_silhouette(mesh, pose, RenderConfig(64, s)) - hard).sum() for s in (2.0, 1.0, 0.5)]
    assert errs[0] > errs[1] > errs[2]


def test_reverse_and_forward_gradients_agree(rng):
    mesh = small_sphere()
    cfg = RenderConfig(48)
    for _ in range(3):
        target = render_silhouette(mesh, random_pose(rng), cfg)
        pose = random_pose(rng)
        lf, gf, _ = silhouette_loss_grad(mesh, pose, target, cfg, mode="forward")
        lr, gr, _ = silhouette_loss_grad(mesh, pose, target, cfg, mode="reverse")
        assert np.isclose(lf, lr)
        assert np.allclose(gf, gr, rtol=1e-9, atol=1e-12 * np.abs(gf).max())


def test_tangents_match_finite_differences(rng):
    mesh = small_sphere()
    cfg = RenderConfig(40)
    pose = random_pose(rng)
    _, tangents = render_silhouette(mesh, pose, cfg, with_grad=True)
    theta = pose.to_vector()
    h = 1e-4
    for k in range(8):
        e = np.zeros(8)
        e[k] = h
        fd = (render_silhouette(mesh, CameraPose.from_vector(theta + e), cfg)
              - render_silhouette(mesh, CameraPose.from_vector(theta - e), cfg)) / (2 * h)
        err = np.abs(fd - tangents[k]).max() / max(np.abs(fd).max(), 1e-12)
        assert err < 1e-3


def test_unknown_gradient_mode():
    with pytest.raises(ValueError):
        silhouette_loss_grad(small_sphere(), CameraPose(), np.zeros((8, 8)), RenderConfig(8), mode="x")


def test_area_resize_preserves_mean(rng):
    img = rng.random((50, 70))
    out = area_resize(img, 20, 30)
    assert out.shape == (20, 30)
    assert np.isclose(out.mean(), img.mean())


def test_area_resize_block_average():
    img = np.arange(16.0).reshape(4, 4)
    assert np.allclose(area_resize(img, 2), [[2.5, 4.5], [10.5, 12.5]])


def test_pad_to_square_centers():
    out, (top, left) = pad_to_square(np.ones((2, 6)))
    assert out.shape == (6, 6) and (top, left) == (2, 0)
    assert out.sum() == 12


def test_png_round_trip(tmp_path, rng):
    img = np.round(rng.random((10, 12)) * 255) / 255
    save_silhouette_png(img, tmp_path / "m.png")
    assert np.allclose(load_silhouette_png(tmp_path / "m.png"), img)
    sem = np.round(rng.random((3, 10, 12)) * 255) / 255
    save_semantic_pngs(sem, tmp_path / "s")
    assert np.allclose(load_semantic_pngs(tmp_path / "s", 3), sem)


def test_render_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(0)
    with pytest.raises(ValueError):
        RenderConfig(8, sigma=0.0)


def test_kernel_exp_matches_numpy():
    from silpose._raster import _exp_neg

    x = -np.concatenate([np.linspace(0.0, 50.0, 2001), [100.0, 700.0, 750.0]])
    got = np.array([_exp_neg(v) for v in x])
    assert np.allclose(got, np.exp(x), rtol=1e-13, atol=0.0)


def test_thin_faces_fade_out():
    from silpose import _raster

    faces = np.array([[0, 1, 2]])

    def coverage(height):
        uv = np.array([[4.0, 8.0], [12.0, 8.0], [8.0, 8.0 + height]])
        return 1.0 - _raster.soft_q(uv, faces, 16, 16, 1.0)

    assert coverage(1e-6).max() < 1e-9
    assert coverage(2.0).max() > 0.5
    # coverage grows smoothly with thickness
    hs = np.linspace(0.0, 0.5, 51)
    peaks = np.array([coverage(h).max() for h in hs])
    assert np.all(np.diff(peaks) >= -1e-12)
