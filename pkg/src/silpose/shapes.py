"""Procedural test shapes: a box and star-shaped creatures built directly
on the shared sphere-grid topology."""

from __future__ import annotations

import numpy as np

from .geometry import Mesh
from .remesh import GRID_U, GRID_V, SphereGrid

_BOX_FACES = np.array(
    [
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ],
    dtype=np.int64,
)


def box_mesh(extents=(1.0, 0.6, 0.8)) -> Mesh:
    """Axis-aligned box centered at the origin with half-sizes ``extents``,
    outward-facing triangles."""
    hx, hy, hz = extents
    verts = np.array([[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)], dtype=np.float64)
    return Mesh(verts, _BOX_FACES.copy())


def radial_grid(radius_fn, U: int = GRID_U, V: int = GRID_V) -> SphereGrid:
    """Sphere grid whose vertex in unit direction ``d`` sits at
    ``radius_fn(d) * d``, scaled to unit bounding radius."""
    unit = SphereGrid.sphere(U, V).points
    r = radius_fn(unit.reshape(-1, 3)).reshape(unit.shape[:2])
    pts = unit * r[..., None]
    return SphereGrid(pts / np.linalg.norm(pts, axis=-1).max())


def _bump(d, center, amplitude, width):
    c = np.asarray(center, dtype=np.float64)
    c = c / np.linalg.norm(c)
    return amplitude * np.exp((d @ c - 1.0) / width)


def _body(d, axes=(0.42, 0.38, 1.0)):
    a = np.asarray(axes)
    return 1.0 / np.sqrt(np.sum((d / a) ** 2, axis=1))


def creature(symmetric: bool = True, U: int = GRID_U, V: int = GRID_V) -> SphereGrid:
    """Quadruped-like blob facing +z with +y up.

    The symmetric variant is mirror-symmetric under ``x -> -x``, so its
    front and back silhouettes coincide. The asymmetric variant adds a
    one-sided wing and offsets the head so that no two views share a
    silhouette.
    """

    def radius(d):
        r = _body(d)
        hx = 0.0 if symmetric else 0.25
        r = r + _bump(d, (hx, 0.45, 0.9), 0.75, 0.035)  # head
        r = r + _bump(d, (0.0, 0.05, -1.0), 0.45, 0.003)  # tail
        for sx in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                r = r + _bump(d, (0.35 * sx, -0.8, 0.5 * sz), 0.55, 0.012)  # legs
        if not symmetric:
            r = r + _bump(d, (1.0, 0.55, 0.1), 0.6, 0.02)  # wing on +x only
        return r

    return radial_grid(radius, U, V)
