"""Multi-hypothesis camera fitting, ambiguity detection and semantic
resolution.

An image is fitted by optimizing a set of camera hypotheses independently
against its silhouette. Hypotheses are then scored: a softmax over their
IoUs gives confidence weights, and the agreement score measures how much
confident hypotheses disagree about the rotation. Ambiguous images are
rejected, and later revisited once semantic templates exist, with the
smooth mIoU taking the role of the IoU.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySilhouette, MissingSemantics, NonFiniteGradient, PoleCrossing
from .geometry import N_CAMERA_PARAMS, CameraPose, Mesh, project, quat_from_view, quat_normalize
from .optim import FullMatrixAdamState, adam_fm_step
from .render import (
    RenderConfig,
    area_resize,
    iou,
    pad_to_square,
    render_silhouette,
    render_vertex_colors,
    silhouette_loss_grad,
)

MIN_SCALE = 1e-3


@dataclass(frozen=True)
class PipelineConfig:
    n_azimuth: int = 8
    n_elevation: int = 5
    elevation_range: tuple[float, float] = (-60.0, 60.0)
    iterations: int = 100
    lr: float = 0.1
    lr_late: float = 0.01
    lr_decay_after: int = 80
    # (resolution, last iteration rendered at it)
    resolution_schedule: tuple[tuple[int, int], ...] = ((128, 30), (192, 60), (256, 100))
    prune_after: tuple[int, ...] = (30, 60)
    final_resolution: int = 256
    sigma: float = 1.0
    tau: float = 0.01
    agr_threshold: float = 0.3
    eps_smooth: float = 1e-3
    ntop: int = 100
    worst_fraction: float = 0.1
    profile_distance: float = 0.5
    multi_template: bool = False
    threads: int = 1

    def resolution_at(self, it: int) -> int:
        """Render resolution for 1-based iteration ``it``."""
        for res, last in self.resolution_schedule:
            if it <= last:
                return res
        return self.resolution_schedule[-1][0]

    def lr_at(self, it: int) -> float:
        return self.lr if it <= self.lr_decay_after else self.lr_late


def parse_resolution_schedule(text: str) -> tuple[tuple[int, int], ...]:
    """``"128:30,192:60,256:100"`` -> ((128, 30), (192, 60), (256, 100))."""
    out = []
    for part in text.split(","):
        res, _, last = part.strip().partition(":")
        if not last:
            raise ValueError(f"bad schedule entry {part!r}, expected RES:LAST_ITER")
        out.append((int(res), int(last)))
    lasts = [b for _, b in out]
    if any(r <= 0 for r, _ in out) or lasts != sorted(lasts):
        raise ValueError(f"bad resolution schedule {text!r}")
    return tuple(out)


@dataclass
class HypothesisSet:
    """All camera hypotheses for one image, stored as parallel arrays.

    ``theta`` rows are ``(qw, qx, qy, qz, s, tx, ty, z0)``; hypotheses are
    laid out template-major (index = template * n_c + camera).
    """

    image_id: str
    theta: np.ndarray
    template_ids: np.ndarray
    n_c: int
    n_t: int
    iou: np.ndarray = None
    miou: np.ndarray = None
    failed: np.ndarray = None
    index: np.ndarray = None  # original hypothesis indices (survive pruning)

    def __post_init__(self):
        n = len(self.theta)
        if self.iou is None:
            self.iou = np.zeros(n)
        if self.failed is None:
            self.failed = np.zeros(n, dtype=bool)
        if self.index is None:
            self.index = np.arange(n)

    def __len__(self):
        return len(self.theta)

    def pose(self, i: int) -> CameraPose:
        return CameraPose.from_vector(self.theta[i])

    def quats(self):
        return quat_normalize(self.theta[:, :4])

    def keep(self, idx) -> None:
        idx = np.asarray(idx)
        self.theta = self.theta[idx]
        self.template_ids = self.template_ids[idx]
        self.iou = self.iou[idx]
        self.failed = self.failed[idx]
        self.index = self.index[idx]
        if self.miou is not None:
            self.miou = self.miou[idx]

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "n_c": self.n_c,
            "n_t": self.n_t,
            "index": self.index.tolist(),
            "template_ids": self.template_ids.tolist(),
            "theta": [[_fmt(x) for x in row] for row in self.theta],
            "iou": [_fmt(x) for x in self.iou],
            "failed": self.failed.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HypothesisSet":
        return cls(
            image_id=d["image_id"],
            theta=np.array(d["theta"], dtype=np.float64).reshape(-1, N_CAMERA_PARAMS),
            template_ids=np.array(d["template_ids"], dtype=np.int64),
            n_c=int(d["n_c"]),
            n_t=int(d["n_t"]),
            iou=np.array(d["iou"], dtype=np.float64),
            failed=np.array(d["failed"], dtype=bool),
            index=np.array(d["index"], dtype=np.int64),
        )


@dataclass
class ScoreReport:
    values: np.ndarray  # the per-hypothesis scores (IoU or mIoU)
    v_conf: np.ndarray
    D: np.ndarray
    v_agr: float
    tau: float


@dataclass
class PoseEstimate:
    image_id: str
    template_id: int
    q: np.ndarray
    s: float
    t: np.ndarray
    z0: float
    iou: float
    miou: float | None
    v_agr: float
    accepted: bool
    phase: str  # "silhouette" or "semantics"

    @property
    def pose(self) -> CameraPose:
        return CameraPose(self.q, self.s, self.t, self.z0)

    def to_record(self) -> dict:
        """Record with the fixed field order used in pose files."""
        return {
            "image_id": self.image_id,
            "template_id": int(self.template_id),
            "q": [_fmt(x) for x in self.q],
            "s": _fmt(self.s),
            "t": [_fmt(x) for x in self.t],
            "z0": _fmt(self.z0),
            "iou": _fmt(self.iou),
            "miou": None if self.miou is None else _fmt(self.miou),
            "v_agr": _fmt(self.v_agr),
            "accepted": bool(self.accepted),
            "phase": self.phase,
        }

    @classmethod
    def from_record(cls, r: dict) -> "PoseEstimate":
        return cls(
            image_id=str(r["image_id"]),
            template_id=int(r["template_id"]),
            q=np.array(r["q"], dtype=np.float64),
            s=float(r["s"]),
            t=np.array(r["t"], dtype=np.float64),
            z0=float(r["z0"]),
            iou=float(r["iou"]),
            miou=None if r.get("miou") is None else float(r["miou"]),
            v_agr=float(r["v_agr"]),
            accepted=bool(r["accepted"]),
            phase=str(r["phase"]),
        )


def _fmt(x) -> float:
    """Round to 9 significant digits so text output is stable."""
    return float(f"{float(x):.9g}")


def write_poses(estimates, path) -> None:
    lines = [json.dumps(e.to_record()) for e in estimates]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_poses(path) -> list[PoseEstimate]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(PoseEstimate.from_record(json.loads(line)))
    return out


def write_hypotheses(sets, path) -> None:
    Path(path).write_text("".join(json.dumps(h.to_dict()) + "\n" for h in sets))


def read_hypotheses(path) -> list[HypothesisSet]:
    return [
        HypothesisSet.from_dict(json.loads(line))
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]


# ---------------------------------------------------------------- init


def initial_rotations(cfg: PipelineConfig = PipelineConfig()):
    """Azimuth-major grid of view rotations, shape (n_azimuth * n_elevation, 4)."""
    az = 360.0 * np.arange(cfg.n_azimuth) / cfg.n_azimuth
    lo, hi = cfg.elevation_range
    el = np.linspace(lo, hi, cfg.n_elevation) if cfg.n_elevation > 1 else np.array([0.5 * (lo + hi)])
    return np.stack([quat_from_view(a, e) for a in az for e in el])


def screen_bbox(mask):
    """Bounding box extent (max side) and centroid of a square mask, both in
    screen units."""
    rows, cols = np.nonzero(mask)
    n = mask.shape[0]
    extent = max(rows.max() - rows.min() + 1, cols.max() - cols.min() + 1) * 2.0 / n
    centroid = np.array([(cols.mean() + 0.5) * 2.0 / n - 1.0, (rows.mean() + 0.5) * 2.0 / n - 1.0])
    return extent, centroid


def init_hypotheses(templates, target, cfg: PipelineConfig = PipelineConfig(), image_id: str = "") -> HypothesisSet:
    """One hypothesis per (template, initial rotation).

    Scale makes the projected template span 90% of the mask's bounding box;
    the translation puts the template origin on the mask centroid.
    """
    if not templates:
        raise ValueError("at least one template is required")
    target = np.asarray(target, dtype=np.float64)
    if target.shape[0] != target.shape[1]:
        target, _ = pad_to_square(target)
    mask = target > 0.5
    if not mask.any():
        raise EmptySilhouette(f"image {image_id!r} has an empty silhouette")
    extent, centroid = screen_bbox(mask)
    rots = initial_rotations(cfg)
    thetas, tids = [], []
    for ti, mesh in enumerate(templates):
        for q in rots:
            xy, _ = project(CameraPose(q, 1.0, np.zeros(2), 0.0), mesh.vertices)
            span = max(np.ptp(xy[:, 0]), np.ptp(xy[:, 1]))
            s = 0.9 * extent / span if span > 0 else 1.0
            thetas.append(np.concatenate([q, [s], centroid, [0.0]]))
            tids.append(ti)
    return HypothesisSet(image_id, np.array(thetas), np.array(tids, dtype=np.int64), len(rots), len(templates))


# ---------------------------------------------------------------- optimize


def _project_constraints(theta):
    theta[:, :4] = quat_normalize(theta[:, :4])
    theta[:, 4] = np.maximum(theta[:, 4], MIN_SCALE)
    theta[:, 7] = np.maximum(theta[:, 7], 0.0)


def prune_worst(hs: HypothesisSet) -> None:
    """Drop the worst half by IoU (ties favor lower indices); the best
    hypothesis always survives."""
    n = len(hs)
    keep_n = max(1, n // 2)
    order = np.lexsort((hs.index, -hs.iou))  # best first, stable on index
    hs.keep(np.sort(order[:keep_n]))


def _targets_by_res(target, cfg):
    res_set = {r for r, _ in cfg.resolution_schedule} | {cfg.final_resolution}
    return {r: area_resize(target, r) for r in sorted(res_set)}


def optimize_silhouette(hs: HypothesisSet, templates, target, cfg: PipelineConfig = PipelineConfig()) -> HypothesisSet:
    """Fit every hypothesis to ``target`` with full-matrix Adam (in place).

    Hypotheses that raise a render error are frozen and scored IoU 0.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape[0] != target.shape[1]:
        target, _ = pad_to_square(target)
    targets = _targets_by_res(target, cfg)
    adam = FullMatrixAdamState(N_CAMERA_PARAMS, lr=cfg.lr, batch=len(hs))
    prune_points = set(cfg.prune_after) if cfg.multi_template else set()
    for it in range(1, cfg.iterations + 1):
        res = cfg.resolution_at(it)
        rcfg = RenderConfig(res, cfg.sigma)
        tgt = targets[res]
        grads = np.zeros_like(hs.theta)
        for i in range(len(hs)):
            if hs.failed[i]:
                continue
            mesh = templates[hs.template_ids[i]]
            try:
                _, g, rendered = silhouette_loss_grad(mesh, hs.pose(i), tgt, rcfg)
                if not np.all(np.isfinite(g)):
                    raise NonFiniteGradient("non-finite camera gradient")
            except (PoleCrossing, NonFiniteGradient):
                hs.failed[i] = True
                hs.iou[i] = 0.0
                continue
            grads[i] = g
            hs.iou[i] = iou(rendered, tgt)
        adam.lr = cfg.lr_at(it)
        new = adam_fm_step(adam, hs.theta, grads)
        new[hs.failed] = hs.theta[hs.failed]
        _project_constraints(new)
        hs.theta = new
        if it in prune_points and len(hs) > 1:
            before = hs.index.copy()
            prune_worst(hs)
            adam.select(np.searchsorted(before, hs.index))
    _final_iou(hs, templates, targets[cfg.final_resolution], RenderConfig(cfg.final_resolution, cfg.sigma))
    return hs


def _final_iou(hs, templates, tgt, rcfg):
    for i in range(len(hs)):
        if hs.failed[i]:
            hs.iou[i] = 0.0
            continue
        try:
            rendered = render_silhouette(templates[hs.template_ids[i]], hs.pose(i), rcfg)
        except PoleCrossing:
            hs.failed[i] = True
            hs.iou[i] = 0.0
            continue
        hs.iou[i] = iou(rendered, tgt)


# ---------------------------------------------------------------- scoring


def confidence_weights(v_iou, tau: float = 0.01):
    """``softmax(v_iou / tau)`` with max-subtraction."""
    z = np.asarray(v_iou, dtype=np.float64) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def agreement_score(quats, v_conf):
    """Pairwise distances ``D = 1 - (Q^T Q)^2`` and ``sum(D * c c^T)``."""
    Q = quat_normalize(np.asarray(quats, dtype=np.float64))
    c = np.asarray(v_conf, dtype=np.float64)
    dot = Q @ Q.T
    D = np.clip(1.0 - dot * dot, 0.0, 1.0)
    np.fill_diagonal(D, 0.0)
    return D, float(np.sum(D * np.outer(c, c)))


def score_hypotheses(values, quats, tau: float = 0.01) -> ScoreReport:
    values = np.asarray(values, dtype=np.float64)
    v_conf = confidence_weights(values, tau)
    D, v_agr = agreement_score(quats, v_conf)
    return ScoreReport(values, v_conf, D, v_agr, tau)


def ambiguity_filter(v_agr: float, threshold: float = 0.3) -> bool:
    """Accept unless the agreement score exceeds ``threshold``."""
    return bool(v_agr <= threshold)


def best_index(values) -> int:
    """Index of the maximum; ties go to the lowest index."""
    return int(np.argmax(np.asarray(values)))


def silhouette_estimate(hs: HypothesisSet, cfg: PipelineConfig = PipelineConfig()) -> PoseEstimate:
    rep = score_hypotheses(hs.iou, hs.quats(), cfg.tau)
    b = best_index(hs.iou)
    th = hs.theta[b]
    return PoseEstimate(
        image_id=hs.image_id,
        template_id=int(hs.template_ids[b]),
        q=th[:4].copy(),
        s=float(th[4]),
        t=th[5:7].copy(),
        z0=float(th[7]),
        iou=float(hs.iou[b]),
        miou=None,
        v_agr=rep.v_agr,
        accepted=ambiguity_filter(rep.v_agr, cfg.agr_threshold),
        phase="silhouette",
    )


def fit_image(image_id, templates, target, cfg: PipelineConfig = PipelineConfig()):
    """Initialize and optimize all hypotheses for one image; returns the
    hypothesis set and its silhouette-phase estimate."""
    hs = init_hypotheses(templates, target, cfg, image_id)
    optimize_silhouette(hs, templates, target, cfg)
    return hs, silhouette_estimate(hs, cfg)


def map_images(fn, items, threads: int = 1):
    """Ordered map, optionally over a thread pool (kernels release the GIL)."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- semantics


def _semantic_target(sem_image, res):
    sem = np.asarray(sem_image, dtype=np.float64)
    if sem.shape[1] != sem.shape[2]:
        sem, _ = pad_to_square(sem)
    return area_resize(sem, res)


def hypothesis_mious(hs: HypothesisSet, templates, sem_templates, sem_image, cfg: PipelineConfig = PipelineConfig()):
    """Smooth mIoU of every hypothesis's rendered semantic template."""
    from .semantics import smooth_miou

    rcfg = RenderConfig(cfg.final_resolution, cfg.sigma)
    tgt = _semantic_target(sem_image, cfg.final_resolution)
    out = np.zeros(len(hs))
    for i in range(len(hs)):
        if hs.failed[i]:
            continue
        tid = hs.template_ids[i]
        rendered = render_vertex_colors(templates[tid], sem_templates[tid].colors, hs.pose(i), rcfg)
        out[i] = smooth_miou(rendered, tgt)
    return out


def resolve_with_semantics(hs: HypothesisSet, templates, sem_templates, sem_image,
                           cfg: PipelineConfig = PipelineConfig()) -> PoseEstimate:
    """Re-score the hypotheses by smooth mIoU and pick the best.

    The per-dataset worst-fraction cut is applied separately by
    ``apply_worst_cut``. Raises ``MissingSemantics`` when there is no
    semantic map.
    """
    if sem_image is None:
        raise MissingSemantics(f"image {hs.image_id!r} has no semantic map")
    hs.miou = hypothesis_mious(hs, templates, sem_templates, sem_image, cfg)
    rep = score_hypotheses(hs.miou, hs.quats(), cfg.tau)
    b = best_index(hs.miou)
    th = hs.theta[b]
    return PoseEstimate(
        image_id=hs.image_id,
        template_id=int(hs.template_ids[b]),
        q=th[:4].copy(),
        s=float(th[4]),
        t=th[5:7].copy(),
        z0=float(th[7]),
        iou=float(hs.iou[b]),
        miou=float(hs.miou[b]),
        v_agr=rep.v_agr,
        accepted=ambiguity_filter(rep.v_agr, cfg.agr_threshold),
        phase="semantics",
    )


def apply_worst_cut(estimates, fraction: float = 0.1) -> list[PoseEstimate]:
    """Reject the ``floor(fraction * n)`` lowest-mIoU semantics-phase
    estimates (ties: later list position goes first)."""
    pool = [i for i, e in enumerate(estimates) if e.phase == "semantics"]
    n_cut = int(math.floor(fraction * len(pool) + 1e-9))
    if n_cut == 0:
        return list(estimates)
    order = sorted(pool, key=lambda i: (estimates[i].miou, -i))
    out = list(estimates)
    for i in order[:n_cut]:
        e = out[i]
        out[i] = PoseEstimate(**{**e.__dict__, "accepted": False})
    return out


@dataclass
class PipelineResult:
    silhouette: list[PoseEstimate]
    final: list[PoseEstimate]
    hypotheses: list[HypothesisSet]
    sem_templates: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)


def run_silhouette_phase(records, templates, cfg: PipelineConfig = PipelineConfig()):
    """Fit every record; failures are collected, never raised.

    Returns (hypothesis sets, estimates, failures) where failures maps
    image id to an error message.
    """
    def work(rec):
        try:
            return fit_image(rec.image_id, templates, rec.mask, cfg)
        except (EmptySilhouette, ValueError) as exc:
            return exc

    results = map_images(work, records, cfg.threads)
    sets, ests, failures = [], [], {}
    for rec, r in zip(records, results):
        if isinstance(r, Exception):
            failures[rec.image_id] = f"{type(r).__name__}: {r}"
            continue
        sets.append(r[0])
        ests.append(r[1])
    return sets, ests, failures


def run_resolution_phase(sets, silhouette_estimates, records, templates, sem_templates,
                         cfg: PipelineConfig = PipelineConfig()):
    sem_by_id = {r.image_id: r.semantics for r in records}

    def work(pair):
        hs, est = pair
        try:
            return resolve_with_semantics(hs, templates, sem_templates, sem_by_id.get(hs.image_id), cfg)
        except MissingSemantics:
            return est

    resolved = map_images(work, list(zip(sets, silhouette_estimates)), cfg.threads)
    return apply_worst_cut(resolved, cfg.worst_fraction)


def run_pipeline(records, templates, cfg: PipelineConfig = PipelineConfig(), n_classes: int | None = None) -> PipelineResult:
    """Silhouette fitting, ambiguity detection, semantic template inference
    and resolution, each exactly once."""
    from .semantics import infer_templates_from_estimates

    sets, ests, failures = run_silhouette_phase(records, templates, cfg)
    K = n_classes
    if K is None:
        K = next((r.semantics.shape[0] for r in records if r.semantics is not None), 0)
    if K == 0:
        return PipelineResult(ests, list(ests), sets, [], failures)
    sem_templates = infer_templates_from_estimates(ests, records, templates, K, cfg)
    if any(t is None for t in sem_templates):
        # a template without any usable image cannot be resolved against
        return PipelineResult(ests, list(ests), sets, sem_templates, failures)
    final = run_resolution_phase(sets, ests, records, templates, sem_templates, cfg)
    return PipelineResult(ests, final, sets, sem_templates, failures)
