"""Soft silhouette rendering, vertex-color rendering and silhouette metrics.

Images are plain numpy arrays: a silhouette is (H, W) with values in [0, 1],
a semantic image is (K, H, W) with per-pixel class mass summing to at most 1
(the remainder is "no class").
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import _raster
from .errors import ShapeMismatch
from .geometry import N_CAMERA_PARAMS, CameraPose, Mesh, project


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 128
    sigma: float = 1.0  # soft-edge width in pixels

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def to_pixels(xy, resolution):
    return (np.asarray(xy) + 1.0) * (0.5 * resolution)


def _faces(mesh):
    return np.ascontiguousarray(mesh.faces, dtype=np.int64)


def render_silhouette(mesh: Mesh, pose: CameraPose, cfg: RenderConfig, with_grad: bool = False):
    """Soft coverage ``1 - prod_f (1 - D_f)``.

    With ``with_grad`` also returns the (8, H, W) tangent images, one per
    camera parameter in ``(qw, qx, qy, qz, s, tx, ty, z0)`` order.
    """
    res = cfg.resolution
    if len(mesh.faces) == 0:
        img = np.zeros((res, res))
        return (img, np.zeros((N_CAMERA_PARAMS, res, res))) if with_grad else img
    if not with_grad:
        xy, _ = project(pose, mesh.vertices)
        uv = np.ascontiguousarray(to_pixels(xy, res))
        return 1.0 - _raster.soft_q(uv, _faces(mesh), res, res, float(cfg.sigma))
    xy, _, dxy = project(pose, mesh.vertices, with_tangents=True)
    uv = np.ascontiguousarray(to_pixels(xy, res))
    duv = np.ascontiguousarray(dxy * (0.5 * res))
    Q, G = _raster.soft_q_tangents(uv, duv, _faces(mesh), res, res, float(cfg.sigma))
    tangents = np.moveaxis(G * Q[..., None], -1, 0)
    return 1.0 - Q, tangents


def silhouette_loss_grad(mesh: Mesh, pose: CameraPose, target, cfg: RenderConfig,
                         mode: str = "reverse"):
    """MSE against ``target`` and its gradient w.r.t. the 8 camera parameters.

    Returns ``(loss, grad, rendered)``. ``mode="forward"`` contracts the
    tangent images; ``mode="reverse"`` pulls the pixel gradient back to the
    projected vertices, which is cheaper.
    """
    if mode == "forward":
        rendered, tangents = render_silhouette(mesh, pose, cfg, with_grad=True)
        loss, dpix = silhouette_mse(rendered, target)
        grad = np.tensordot(tangents, dpix, axes=([1, 2], [0, 1]))
        return loss, grad, rendered
    if mode != "reverse":
        raise ValueError(f"unknown mode {mode!r}")
    res = cfg.resolution
    if len(mesh.faces) == 0:
        rendered = np.zeros((res, res))
        loss, _ = silhouette_mse(rendered, target)
        return loss, np.zeros(N_CAMERA_PARAMS), rendered
    xy, _, dxy = project(pose, mesh.vertices, with_tangents=True)
    uv = to_pixels(xy, res)
    rendered, loss, grad_uv = _coverage_loss_vjp(uv, mesh.faces, res, cfg.sigma, target)
    grad = (grad_uv.reshape(1, -1) @ dxy.reshape(-1, N_CAMERA_PARAMS))[0] * (0.5 * res)
    return loss, grad, rendered


_workspace = threading.local()


def _pair_buffers(n):
    """Per-thread reusable pair storage of at least ``n`` entries."""
    pix = getattr(_workspace, "pix", None)
    if pix is None or len(pix) < n:
        n = max(n, 2 * len(pix) if pix is not None else n)
        _workspace.pix = np.empty(n, dtype=np.int32)
        _workspace.rg = np.empty((n, 6))
    return _workspace.pix, _workspace.rg


def _coverage_pairs(uv, faces, resolution, sigma):
    uv = np.ascontiguousarray(uv, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    sigma = float(sigma)
    pix, rg = _pair_buffers(_raster.pair_bound(uv, faces, resolution, resolution, sigma))
    Q, start = _raster.soft_q_pairs(uv, faces, resolution, resolution, sigma, pix, rg)
    return Q, faces, len(uv), (start, pix, rg)


def _coverage_loss_vjp(uv, faces, resolution, sigma, target):
    Q, faces, n, (start, pix, rg) = _coverage_pairs(uv, faces, resolution, sigma)
    coverage = 1.0 - Q
    target = np.asarray(target, dtype=np.float64)
    _check_same(coverage, target)
    diff = coverage - target
    loss = float(np.mean(diff * diff))
    wpix = (diff * Q).ravel() * (2.0 / diff.size)
    return coverage, loss, _raster.vjp_from_pairs(faces, n, start, pix, rg, wpix)


def silhouette_vjp_pixels(uv, faces, resolution, sigma, dpix, target=None):
    """Coverage image and the gradient of ``sum(dpix * coverage)`` w.r.t. the
    pixel-space vertex positions ``uv`` (N, 2).

    When ``target`` is given, ``dpix`` is ignored and the MSE gradient
    against it is used instead (it depends on the coverage itself).
    """
    if target is not None:
        coverage, _, grad = _coverage_loss_vjp(uv, faces, resolution, sigma, target)
        return coverage, grad
    Q, faces, n, (start, pix, rg) = _coverage_pairs(uv, faces, resolution, sigma)
    wpix = np.ascontiguousarray((np.asarray(dpix, dtype=np.float64) * Q).ravel())
    return 1.0 - Q, _raster.vjp_from_pairs(faces, n, start, pix, rg, wpix)


def soft_coverage_pixels(uv, faces, resolution, sigma):
    uv = np.ascontiguousarray(uv, dtype=np.float64)
    Q = _raster.soft_q(uv, np.ascontiguousarray(faces, dtype=np.int64),
                       resolution, resolution, float(sigma))
    return 1.0 - Q


def visibility(mesh: Mesh, pose: CameraPose, cfg: RenderConfig):
    """Hard z-buffer: (face index or -1, barycentric weights) per pixel."""
    res = cfg.resolution
    xy, depth = project(pose, mesh.vertices)
    uv = np.ascontiguousarray(to_pixels(xy, res))
    return _raster.hard_visibility(uv, np.ascontiguousarray(depth), _faces(mesh), res, res)


def render_vertex_colors(mesh: Mesh, colors, pose: CameraPose, cfg: RenderConfig):
    """Barycentric interpolation of per-vertex colors (K, N_v) on visible faces."""
    colors = np.asarray(colors, dtype=np.float64)
    K = colors.shape[0]
    res = cfg.resolution
    out = np.zeros((K, res, res))
    if len(mesh.faces) == 0:
        return out
    face_id, bary = visibility(mesh, pose, cfg)
    rows, cols = np.nonzero(face_id >= 0)
    tri = mesh.faces[face_id[rows, cols]]  # (P, 3)
    w = bary[rows, cols]  # (P, 3)
    out[:, rows, cols] = np.einsum("kpj,pj->kp", colors[:, tri], w)
    return out


def splat_semantics(mesh: Mesh, pose: CameraPose, sem, cfg: RenderConfig):
    """Adjoint of ``render_vertex_colors``: accumulate pixel class mass onto
    the vertices of the visible face with barycentric weights. Returns (K, N_v)."""
    sem = np.asarray(sem, dtype=np.float64)
    res = cfg.resolution
    if sem.shape[1:] != (res, res):
        raise ShapeMismatch(f"semantic image {sem.shape[1:]} does not match resolution {res}")
    K = sem.shape[0]
    acc = np.zeros((K, mesh.n_vertices))
    if len(mesh.faces) == 0:
        return acc
    face_id, bary = visibility(mesh, pose, cfg)
    rows, cols = np.nonzero(face_id >= 0)
    tri = mesh.faces[face_id[rows, cols]].ravel()  # (P*3,)
    w = bary[rows, cols].ravel()
    vals = sem[:, rows, cols]  # (K, P)
    for k in range(K):
        acc[k] = np.bincount(tri, weights=np.repeat(vals[k], 3) * w, minlength=mesh.n_vertices)
    return acc


def _check_same(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")


def silhouette_mse(rendered, target):
    """Mean squared pixel error and its per-pixel gradient."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same(rendered, target)
    diff = rendered - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def iou(rendered, target, bin_threshold: float = 0.5) -> float:
    rendered = np.asarray(rendered)
    target = np.asarray(target)
    _check_same(rendered, target)
    a = rendered > bin_threshold
    b = target > bin_threshold
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def area_resize(img, out_h: int, out_w: int | None = None):
    """Resample the last two axes by exact area averaging."""
    out_w = out_h if out_w is None else out_w
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    if (h, w) == (out_h, out_w):
        return img.copy()
    Ah = _area_matrix(h, out_h)
    Aw = _area_matrix(w, out_w)
    return Ah @ img @ Aw.T


def _area_matrix(n_in, n_out):
    # overlap of output cell i with input cell j, normalized per output cell
    edges_out = np.linspace(0.0, n_in, n_out + 1)
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(1, n_in + 1)[None, :])
    A = np.clip(hi - lo, 0.0, None)
    return A / A.sum(axis=1, keepdims=True)


def pad_to_square(img):
    """Zero-pad the last two axes symmetrically to a square frame.

    Returns the padded array and the (top, left) offsets.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    n = max(h, w)
    top = (n - h) // 2
    left = (n - w) // 2
    out = np.zeros(img.shape[:-2] + (n, n))
    out[..., top:top + h, left:left + w] = img
    return out, (top, left)


def save_silhouette_png(img, path) -> None:
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_silhouette_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def save_semantic_pngs(sem, stem) -> list[Path]:
    """One gray PNG per class: ``<stem>.class<k>.png``."""
    stem = Path(stem)
    paths = []
    for k, channel in enumerate(np.asarray(sem)):
        p = stem.parent / f"{stem.name}.class{k}.png"
        save_silhouette_png(channel, p)
        paths.append(p)
    return paths


def load_semantic_pngs(stem, n_classes: int):
    stem = Path(stem)
    return np.stack(
        [load_silhouette_png(stem.parent / f"{stem.name}.class{k}.png") for k in range(n_classes)]
    )
