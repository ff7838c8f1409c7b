from __future__ import annotations

import numpy as np

from silpose.geometry import CameraPose, quat_from_view
from silpose.render import RenderConfig, iou, render_silhouette
from silpose.shapes import box_mesh, creature


def test_box_faces_point_outward():
    m = box_mesh()
    a, b, c = (m.vertices[m.faces[:, k]] for k in range(3))
    assert np.all(np.sum(np.cross(b - a, c - a) * (a + b + c), axis=1) > 0)


def test_creatures_have_unit_radius():
    for sym in (True, False):
        g = creature(sym)
        assert np.isclose(np.linalg.norm(g.points, axis=-1).max(), 1.0)


def test_symmetric_creature_is_mirror_symmetric():
    g = creature(True)
    P = g.vertices()
    mirrored = P * np.array([-1.0, 1.0, 1.0])
    d = np.linalg.norm(mirrored[:, None] - P[None], axis=-1).min(axis=1)
    assert d.max() < 1e-9


def test_front_and_back_silhouettes_coincide_only_when_symmetric():
    cfg = RenderConfig(96)

    def pair(mesh):
        a = render_silhouette(mesh, CameraPose(quat_from_view(0.0, 0.0), 0.9), cfg)
        b = render_silhouette(mesh, CameraPose(quat_from_view(180.0, 0.0), 0.9), cfg)
        return iou(a, b)

    # the fixed quad diagonal is not mirror symmetric, so only the
    # binarized silhouettes are compared
    assert pair(creature(True).mesh()) > 0.99
    assert pair(creature(False).mesh()) < 0.8
