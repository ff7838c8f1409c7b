"""Semantic templates: per-vertex class distributions inferred from posed
semantic maps, and the smooth mIoU used to compare semantic images."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptySelection, ShapeMismatch
from .geometry import Mesh, geodesic_distance, profile_quats, save_obj
from .render import RenderConfig, area_resize, pad_to_square, splat_semantics

DEFAULT_EPS = 1e-3

# argmax-class colors for the OBJ preview; cycles for K > len
PALETTE = np.array(
    [
        [0.894, 0.102, 0.110],
        [0.216, 0.494, 0.722],
        [0.302, 0.686, 0.290],
        [0.596, 0.306, 0.639],
        [1.000, 0.498, 0.000],
        [1.000, 1.000, 0.200],
        [0.651, 0.337, 0.157],
        [0.969, 0.506, 0.749],
    ]
)


@dataclass
class SemanticTemplate:
    template_id: int
    colors: np.ndarray  # (K, N_v), columns are class distributions
    eps: float = DEFAULT_EPS

    @property
    def n_classes(self) -> int:
        return self.colors.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.colors.shape[1]


def template_from_accumulator(A, eps: float = DEFAULT_EPS, template_id: int = 0) -> SemanticTemplate:
    """Additively smoothed per-vertex histogram ``(eps + a_k) / (K eps + sum_j a_j)``."""
    A = np.asarray(A, dtype=np.float64)
    if not eps > 0:
        raise ValueError("smoothing constant must be positive")
    K = A.shape[0]
    colors = (eps + A) / (K * eps + A.sum(axis=0, keepdims=True))
    return SemanticTemplate(template_id, colors, eps)


def semantic_target(sem_image, resolution: int):
    """Pad a (K, H, W) map to square and area-resample it."""
    sem = np.asarray(sem_image, dtype=np.float64)
    if sem.shape[1] != sem.shape[2]:
        sem, _ = pad_to_square(sem)
    return area_resize(sem, resolution)


def accumulate(mesh: Mesh, selection, n_classes: int, resolution: int = 256, sigma: float = 1.0):
    """Sum of semantic splats over ``(pose, semantic image)`` pairs, (K, N_v)."""
    cfg = RenderConfig(resolution, sigma)
    A = np.zeros((n_classes, mesh.n_vertices))
    for pose, sem in selection:
        sem = semantic_target(sem, resolution)
        if sem.shape[0] != n_classes:
            raise ShapeMismatch(f"semantic map has {sem.shape[0]} classes, expected {n_classes}")
        A += splat_semantics(mesh, pose, sem, cfg)
    return A


def infer_template(mesh: Mesh, selection, n_classes: int, eps: float = DEFAULT_EPS,
                   template_id: int = 0, resolution: int = 256) -> SemanticTemplate:
    """Project posed semantic maps onto the mesh in a single pass."""
    selection = list(selection)
    if not selection:
        raise EmptySelection(f"no images selected for template {template_id}")
    A = accumulate(mesh, selection, n_classes, resolution)
    return template_from_accumulator(A, eps, template_id)


def profile_distance(q) -> float:
    """Cosine distance from ``q`` to the nearer of the two profile views."""
    return float(np.min(geodesic_distance(profile_quats(), np.asarray(q)[None, :])))


def select_images(estimates, n_templates: int, agr_threshold: float = 0.3,
                  max_profile_distance: float = 0.5, ntop: int = 100):
    """Per template: unambiguous near-profile silhouette estimates, best IoU
    first (ties keep input order), at most ``ntop``."""
    out = [[] for _ in range(n_templates)]
    for e in estimates:
        if not e.v_agr < agr_threshold:
            continue
        # round-off guard: an exactly frontal view sits on the boundary
        if not profile_distance(e.q) < max_profile_distance - 1e-9:
            continue
        out[e.template_id].append(e)
    return [sorted(sel, key=lambda e: -e.iou)[:ntop] for sel in out]


def infer_templates_from_estimates(estimates, records, templates, n_classes: int, cfg):
    """Semantic template per mesh template; ``None`` where nothing qualifies."""
    by_id = {r.image_id: r for r in records}
    selections = select_images(estimates, len(templates), cfg.agr_threshold,
                               cfg.profile_distance, cfg.ntop)
    out = []
    for tid, (mesh, sel) in enumerate(zip(templates, selections)):
        pairs = [(e.pose, by_id[e.image_id].semantics) for e in sel
                 if by_id[e.image_id].semantics is not None]
        if not pairs:
            out.append(None)
            continue
        out.append(infer_template(mesh, pairs, n_classes, cfg.eps_smooth, tid, cfg.final_resolution))
    return out


def smooth_miou(rendered, target) -> float:
    """Mean over classes of ``sum(min) / sum(max)``; a class absent from
    both maps counts as 1."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    K = a.shape[0]
    if K == 0:
        return 1.0
    num = np.minimum(a, b).reshape(K, -1).sum(axis=1)
    den = np.maximum(a, b).reshape(K, -1).sum(axis=1)
    per_class = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    return float(per_class.mean())


def save_template(st: SemanticTemplate, path) -> None:
    """JSON header line, then one row of K reals per vertex."""
    header = {"template_id": st.template_id, "K": st.n_classes, "N_v": st.n_vertices, "eps_s": st.eps}
    rows = [" ".join(f"{x:.17g}" for x in col) for col in st.colors.T]
    Path(path).write_text(json.dumps(header) + "\n" + "".join(r + "\n" for r in rows))


def load_template(path) -> SemanticTemplate:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    K, nv = int(header["K"]), int(header["N_v"])
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != nv:
        raise ValueError(f"{path}: expected {nv} rows, found {len(body)}")
    colors = np.array([[float(x) for x in ln.split()] for ln in body]).reshape(nv, K).T
    return SemanticTemplate(int(header["template_id"]), np.ascontiguousarray(colors), float(header["eps_s"]))


def export_colored_obj(mesh: Mesh, st: SemanticTemplate, path) -> None:
    """OBJ with each vertex colored by its most likely class."""
    cls = np.argmax(st.colors, axis=0)
    save_obj(mesh, path, vertex_colors=PALETTE[cls % len(PALETTE)])
