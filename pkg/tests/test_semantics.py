from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_pose, small_sphere
from silpose.errors import EmptySelection, ShapeMismatch
from silpose.geometry import CameraPose, quat_from_view
from silpose.pose import PoseEstimate
from silpose.semantics import (
    accumulate,
    export_colored_obj,
    infer_template,
    load_template,
    profile_distance,
    save_template,
    select_images,
    smooth_miou,
    template_from_accumulator,
)


def est(iid, q, v_agr=0.0, iou=0.9, tid=0):
    return PoseEstimate(iid, tid, np.asarray(q, float), 1.0, np.zeros(2), 0.0, iou, None, v_agr, True, "silhouette")


def test_smoothed_histogram_example():
    st_ = template_from_accumulator(np.array([[3.0], [1.0]]), eps=0.01)
    assert np.allclose(st_.colors[:, 0], [3.01 / 4.02, 1.01 / 4.02])
    assert np.allclose(st_.colors[:, 0], [0.74876, 0.25124], atol=1e-5)


def test_eps_must_be_positive():
    with pytest.raises(ValueError):
        template_from_accumulator(np.ones((2, 3)), eps=0.0)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_rows_are_distributions(seed, K):
    rng = np.random.default_rng(seed)
    A = rng.random((K, 20)) * rng.integers(0, 2, size=(K, 20))
    eps = 1e-3
    C = template_from_accumulator(A, eps).colors
    assert np.allclose(C.sum(axis=0), 1.0, atol=1e-9)
    assert np.all(C >= eps / (K * eps + A.sum(axis=0)) - 1e-15)


def test_never_rendered_vertices_are_uniform():
    mesh = small_sphere()
    sem = np.zeros((3, 32, 32))
    sem[0, 10:20, 10:20] = 1.0
    # the sphere is small in frame, so its back half never shows
    st_ = infer_template(mesh, [(CameraPose(s=0.5), sem)], 3)
    A = accumulate(mesh, [(CameraPose(s=0.5), sem)], 3)
    untouched = A.sum(axis=0) == 0
    assert untouched.any()
    assert np.all(st_.colors[:, untouched] == 1.0 / 3.0)


def test_order_invariance(rng):
    mesh = small_sphere()
    sel = [(random_pose(rng), rng.random((2, 40, 40))) for _ in range(5)]
    a = infer_template(mesh, sel, 2, resolution=40).colors
    b = infer_template(mesh, sel[::-1], 2, resolution=40).colors
    assert np.allclose(a, b, atol=1e-12)


def test_empty_selection():
    with pytest.raises(EmptySelection):
        infer_template(small_sphere(), [], 2)


def test_class_count_mismatch():
    with pytest.raises(ShapeMismatch):
        accumulate(small_sphere(), [(CameraPose(), np.ones((3, 16, 16)))], 2, resolution=16)


def test_profile_distance():
    assert profile_distance(quat_from_view(90.0, 0.0)) < 1e-12
    assert profile_distance(quat_from_view(-90.0, 0.0)) < 1e-12
    assert np.isclose(profile_distance(quat_from_view(0.0, 0.0)), 0.5)


def test_select_images():
    side = quat_from_view(90.0, 5.0)
    ests = [est(f"p{k}", side, iou=k / 200) for k in range(150)]
    ests.append(est("front", quat_from_view(0.0, 0.0), iou=1.0))
    ests.append(est("ambiguous", side, v_agr=0.4, iou=1.0))
    (sel,) = select_images(ests, 1)
    ids = [e.image_id for e in sel]
    assert len(sel) == 100 and "front" not in ids and "ambiguous" not in ids
    assert ids[0] == "p149"


def test_select_by_template():
    side = quat_from_view(90.0, 0.0)
    sel = select_images([est("a", side, tid=1), est("b", side, tid=0)], 2)
    assert [[e.image_id for e in s] for s in sel] == [["b"], ["a"]]


def test_miou_hand_case():
    a = np.array([[[0.5, 1.0]]])
    b = np.array([[[1.0, 0.5]]])
    assert smooth_miou(a, b) == 0.5


def test_miou_absent_class_counts_as_one():
    a = np.zeros((2, 4, 4))
    a[0] = 1.0
    assert smooth_miou(a, a.copy()) == 1.0


def test_miou_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        smooth_miou(np.zeros((2, 3, 3)), np.zeros((3, 3, 3)))


@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_miou_properties(seed, c):
    rng = np.random.default_rng(seed)
    a = rng.random((3, 6, 6))
    b = rng.random((3, 6, 6))
    m = smooth_miou(a, b)
    assert 0.0 <= m <= 1.0
    assert np.isclose(m, smooth_miou(b, a), atol=1e-12)
    assert np.isclose(smooth_miou(a, a), 1.0)
    assert np.isclose(smooth_miou(c * a, c * b), m, atol=1e-12)


def test_miou_disjoint_is_zero():
    a = np.zeros((2, 4, 4))
    b = np.zeros((2, 4, 4))
    a[:, :2] = 1.0
    b[:, 2:] = 1.0
    assert smooth_miou(a, b) == 0.0


def test_template_file_round_trip(tmp_path, rng):
    st_ = template_from_accumulator(rng.random((3, 7)), 1e-3, template_id=2)
    save_template(st_, tmp_path / "t.txt")
    back = load_template(tmp_path / "t.txt")
    assert back.template_id == 2 and back.eps == 1e-3
    assert np.array_equal(back.colors, st_.colors)


def test_colored_obj_export(tmp_path, rng):
    mesh = small_sphere()
    st_ = template_from_accumulator(rng.random((2, mesh.n_vertices)))
    export_colored_obj(mesh, st_, tmp_path / "c.obj")
    vlines = [ln for ln in (tmp_path / "c.obj").read_text().splitlines() if ln.startswith("v ")]
    assert len(vlines) == mesh.n_vertices and all(len(ln.split()) == 7 for ln in vlines)
