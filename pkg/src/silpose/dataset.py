"""Image collections: quality filters, semantic class pruning, on-disk
layout and a synthetic benchmark generator.

Layout under a dataset root::

    manifest.json
    images/<id>.png
    masks/<id>.png
    semantics/<id>.class<k>.png
    poses_gt.jsonl          (synthetic datasets only)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MalformedManifest, MissingFile
from .geometry import CameraPose, Mesh, project, quat_from_view
from .pose import PoseEstimate, read_poses, write_poses
from .render import (
    RenderConfig,
    load_semantic_pngs,
    load_silhouette_png,
    render_silhouette,
    render_vertex_colors,
    save_semantic_pngs,
    save_silhouette_png,
)

MANIFEST_VERSION = 1
MIN_MASK_AREA = 96 * 96
MIN_CLASS_FREQUENCY = 0.25


@dataclass
class ImageRecord:
    image_id: str
    mask: np.ndarray  # (H, W) in [0, 1]
    semantics: np.ndarray | None = None  # (K, H, W)
    category: str = ""
    source_id: str | None = None  # instances cut from the same photo share this
    image: np.ndarray | None = None  # (H, W, 3) uint8, optional

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.semantics is not None:
            self.semantics = np.asarray(self.semantics, dtype=np.float64)
            if self.semantics.shape[1:] != self.mask.shape:
                raise ValueError(f"{self.image_id}: semantic map and mask sizes differ")
        if self.source_id is None:
            self.source_id = self.image_id

    @property
    def size(self) -> tuple[int, int]:
        """(W, H)"""
        return self.mask.shape[1], self.mask.shape[0]

    @property
    def bbox(self) -> tuple[int, int, int, int] | None:
        """Inclusive (x0, y0, x1, y1) of the binarized mask, None if empty."""
        rows, cols = np.nonzero(self.mask > 0.5)
        if rows.size == 0:
            return None
        return int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    class_names: list[str] = field(default_factory=list)
    category: str = ""
    rejected: dict[str, list[str]] = field(default_factory=dict)
    class_frequency: list[float] = field(default_factory=list)
    class_mapping: dict[int, int] = field(default_factory=dict)  # old -> new channel

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def _bbox_overlap(a, b) -> bool:
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def rejection_reasons(records) -> dict[str, list[str]]:
    """Reasons per image id (empty list means the record passes)."""
    reasons = {r.image_id: [] for r in records}
    boxes = {}
    for r in records:
        m = r.mask > 0.5
        if np.count_nonzero(m) < MIN_MASK_AREA:
            reasons[r.image_id].append("size")
        if m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any():
            reasons[r.image_id].append("border")
        boxes[r.image_id] = r.bbox
    for i, a in enumerate(records):
        for b in records[i + 1:]:
            if a.source_id != b.source_id:
                continue
            ba, bb = boxes[a.image_id], boxes[b.image_id]
            if ba is not None and bb is not None and _bbox_overlap(ba, bb):
                for r in (a, b):
                    if "occlusion" not in reasons[r.image_id]:
                        reasons[r.image_id].append("occlusion")
    return reasons


def filter_instances(records, class_names=None, category: str = "") -> DatasetManifest:
    """Keep instances that are large enough, do not touch the image border
    and whose bounding box does not overlap another instance from the same
    source image."""
    records = list(records)
    reasons = rejection_reasons(records)
    kept = [r for r in records if not reasons[r.image_id]]
    rejected = {k: v for k, v in reasons.items() if v}
    if class_names is None:
        K = next((r.semantics.shape[0] for r in records if r.semantics is not None), 0)
        class_names = [f"class{k}" for k in range(K)]
    return DatasetManifest(kept, list(class_names), category, rejected)


def class_frequency(records, n_classes: int):
    """Fraction of records with semantics in which each class appears."""
    with_sem = [r for r in records if r.semantics is not None]
    if not with_sem:
        return np.zeros(n_classes)
    present = np.array([[r.semantics[k].max() > 0 for k in range(n_classes)] for r in with_sem])
    return present.mean(axis=0)


def prune_semantic_classes(manifest: DatasetManifest, min_fraction: float = MIN_CLASS_FREQUENCY) -> DatasetManifest:
    """Drop classes present in fewer than ``min_fraction`` of the images and
    renumber the survivors. With no survivors the semantics are removed."""
    K = manifest.n_classes
    freq = class_frequency(manifest.records, K)
    keep = [k for k in range(K) if freq[k] >= min_fraction]
    mapping = {old: new for new, old in enumerate(keep)}
    records = []
    for r in manifest.records:
        sem = None
        if r.semantics is not None and keep:
            sem = r.semantics[keep]
        records.append(ImageRecord(r.image_id, r.mask, sem, r.category, r.source_id, r.image))
    return DatasetManifest(
        records,
        [manifest.class_names[k] for k in keep],
        manifest.category,
        dict(manifest.rejected),
        [float(freq[k]) for k in keep],
        mapping,
    )


# ---------------------------------------------------------------- disk


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingFile(f"missing file: {path}")
    return path


def write_dataset(manifest: DatasetManifest, root) -> None:
    root = Path(root)
    for sub in ("images", "masks", "semantics"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    recs = []
    for r in manifest.records:
        save_silhouette_png(r.mask, root / "masks" / f"{r.image_id}.png")
        image = r.image if r.image is not None else _preview_image(r)
        Image.fromarray(image, mode="RGB").save(root / "images" / f"{r.image_id}.png")
        if r.semantics is not None:
            save_semantic_pngs(r.semantics, root / "semantics" / r.image_id)
        w, h = r.size
        bbox = r.bbox
        recs.append(
            {
                "id": r.image_id,
                "w": w,
                "h": h,
                "bbox": list(bbox) if bbox is not None else None,
                "has_semantics": r.semantics is not None,
                "source_id": r.source_id,
            }
        )
    doc = {
        "version": MANIFEST_VERSION,
        "category": manifest.category,
        "K": manifest.n_classes,
        "class_names": list(manifest.class_names),
        "records": recs,
        "rejected": manifest.rejected,
    }
    (root / "manifest.json").write_text(json.dumps(doc, indent=1) + "\n")


def _preview_image(r: ImageRecord):
    """Gray object on black, tinted by the first semantic channels if any."""
    img = np.repeat((r.mask * 160.0)[:, :, None], 3, axis=2)
    if r.semantics is not None:
        for k in range(min(3, r.semantics.shape[0])):
            img[:, :, k] += r.semantics[k] * 95.0
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def read_manifest(root) -> dict:
    path = _require(Path(root) / "manifest.json")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"{path}: {exc}") from None
    for key in ("version", "K", "class_names", "records"):
        if key not in doc:
            raise MalformedManifest(f"{path}: missing key {key!r}")
    if len(doc["class_names"]) != doc["K"]:
        raise MalformedManifest(f"{path}: K={doc['K']} but {len(doc['class_names'])} class names")
    for rec in doc["records"]:
        for key in ("id", "w", "h", "has_semantics"):
            if key not in rec:
                raise MalformedManifest(f"{path}: record missing key {key!r}")
    return doc


def load_dataset(root) -> DatasetManifest:
    root = Path(root)
    doc = read_manifest(root)
    K = int(doc["K"])
    records = []
    for rec in doc["records"]:
        rid = str(rec["id"])
        mask = load_silhouette_png(_require(root / "masks" / f"{rid}.png"))
        if mask.shape != (rec["h"], rec["w"]):
            raise MalformedManifest(f"{rid}: mask is {mask.shape}, manifest says {(rec['h'], rec['w'])}")
        sem = None
        if rec["has_semantics"] and K > 0:
            for k in range(K):
                _require(root / "semantics" / f"{rid}.class{k}.png")
            sem = load_semantic_pngs(root / "semantics" / rid, K)
        img_path = root / "images" / f"{rid}.png"
        image = None
        if img_path.exists():
            with Image.open(img_path) as im:
                image = np.asarray(im.convert("RGB"))
        records.append(ImageRecord(rid, mask, sem, doc.get("category", ""), rec.get("source_id"), image))
    return DatasetManifest(records, list(doc["class_names"]), doc.get("category", ""), dict(doc.get("rejected", {})))


def ground_truth_path(root) -> Path:
    return Path(root) / "poses_gt.jsonl"


def read_ground_truth(root) -> dict[str, PoseEstimate]:
    path = _require(ground_truth_path(root))
    return {e.image_id: e for e in read_poses(path)}


# ---------------------------------------------------------------- synthetic


VIEW_SETS = ("uniform", "profile", "frontback", "mixed")


def sample_view(rng, view_set: str):
    """Draw (azimuth, elevation) in degrees.

    ``profile``: within 30 degrees of a side view, elevation in [-15, 30].
    ``frontback``: within 25 degrees of the front or back view, elevation in
    [-15, 15]; for a left/right symmetric object these are ambiguous.
    ``mixed``: half profile, half frontback. ``uniform``: azimuth anywhere,
    elevation in [-45, 45].
    """
    if view_set == "mixed":
        view_set = "profile" if rng.random() < 0.5 else "frontback"
    if view_set == "profile":
        side = 90.0 if rng.random() < 0.5 else -90.0
        return side + rng.uniform(-30.0, 30.0), rng.uniform(-15.0, 30.0)
    if view_set == "frontback":
        base = 0.0 if rng.random() < 0.5 else 180.0
        return base + rng.uniform(-25.0, 25.0), rng.uniform(-15.0, 15.0)
    if view_set == "uniform":
        return rng.uniform(0.0, 360.0), rng.uniform(-45.0, 45.0)
    raise ValueError(f"unknown view set {view_set!r}; choose from {VIEW_SETS}")


def front_back_labels(mesh: Mesh):
    """Two classes split at the template's z = 0 plane: front (+z) is 0."""
    return (mesh.vertices[:, 2] < 0.0).astype(np.int64)


def synth_dataset(templates, n: int, seed: int, resolution: int = 384, view_set: str = "profile",
                  vertex_labels=None, n_classes: int | None = None, fill: float = 0.6,
                  z0_max: float = 0.2, category: str = "synthetic"):
    """Render ``n`` images of randomly chosen templates at seeded poses.

    Returns (manifest, ground-truth estimates). ``vertex_labels`` is one
    integer array per template; the semantic map is the rendered one-hot
    labels. Scale is chosen so the object spans about ``fill`` of the frame.
    """
    rng = np.random.default_rng(seed)
    if vertex_labels is None:
        vertex_labels = [front_back_labels(m) for m in templates]
    if n_classes is None:
        n_classes = int(max(int(l.max()) for l in vertex_labels) + 1)
    cfg = RenderConfig(resolution)
    width = len(str(max(n - 1, 0)))
    records, gts = [], []
    for i in range(n):
        tid = int(rng.integers(len(templates)))
        mesh = templates[tid]
        az, el = sample_view(rng, view_set)
        q = quat_from_view(az, el)
        z0 = float(rng.uniform(0.0, z0_max))
        xy, _ = project(CameraPose(q, 1.0, np.zeros(2), z0), mesh.vertices)
        span = max(np.ptp(xy[:, 0]), np.ptp(xy[:, 1]))
        s = float(2.0 * fill / span * rng.uniform(0.9, 1.1))
        t = rng.uniform(-0.1, 0.1, 2)
        pose = CameraPose(q, s, t, z0)
        mask = (render_silhouette(mesh, pose, cfg) > 0.5).astype(np.float64)
        onehot = np.eye(n_classes)[vertex_labels[tid]].T  # (K, N_v)
        sem = render_vertex_colors(mesh, onehot, pose, cfg) * mask
        rid = f"img{i:0{width}d}"
        records.append(ImageRecord(rid, mask, sem, category))
        gts.append(
            PoseEstimate(rid, tid, q, s, t, z0, iou=1.0, miou=1.0, v_agr=0.0, accepted=True, phase="reference")
        )
    manifest = DatasetManifest(records, [f"class{k}" for k in range(n_classes)], category)
    return manifest, gts


def write_synth(manifest: DatasetManifest, gts, root) -> None:
    write_dataset(manifest, root)
    write_poses(gts, ground_truth_path(root))
