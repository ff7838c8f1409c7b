"""Remeshing raw templates onto a shared UV-sphere topology.

A ``U x V`` sphere grid (U around the up axis with a seam wrap, V from the
north pole to the south pole) is deformed so that its silhouettes match
those of a raw template from a fixed set of random views, under flatness,
quad-Laplacian and edge-length regularizers. Grid vertex ``(j, i)`` (row
``j`` in V, column ``i`` in U) has index ``j * U + i``; the whole first and
last rows are copies of the two poles and are kept coincident by
optimizing one shared position per pole.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import NonRenderableTemplate
from .geometry import CameraPose, Mesh, project, quat_from_view, quat_to_matrix, save_obj
from .optim import MomentumState, momentum_step
from .render import RenderConfig, iou, render_silhouette, silhouette_vjp_pixels, to_pixels, visibility

GRID_U = 32
GRID_V = 32
VIEW_SCALE = 0.9  # screen half-extent of a unit-radius template


@dataclass
class SphereGrid:
    """Vertex grid of shape (V, U, 3) with fixed two-triangles-per-quad
    triangulation."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ValueError("grid points must have shape (V, U, 3)")
        if self.points.shape[0] < 3 or self.points.shape[1] < 3:
            raise ValueError("grid needs at least 3 rows and 3 columns")

    @property
    def U(self) -> int:
        return self.points.shape[1]

    @property
    def V(self) -> int:
        return self.points.shape[0]

    @classmethod
    def sphere(cls, U: int = GRID_U, V: int = GRID_V, radius: float = 1.0, center=(0.0, 0.0, 0.0)):
        theta = np.pi * np.arange(V) / (V - 1)
        phi = 2.0 * np.pi * np.arange(U) / U
        st = np.sin(theta)[:, None]
        pts = np.stack(
            [st * np.cos(phi)[None, :], np.cos(theta)[:, None] * np.ones((1, U)), st * np.sin(phi)[None, :]],
            axis=-1,
        )
        pts[0] = [0.0, 1.0, 0.0]
        pts[-1] = [0.0, -1.0, 0.0]
        return cls(pts * radius + np.asarray(center, dtype=np.float64))

    def vertices(self):
        return self.points.reshape(-1, 3)

    def mesh(self) -> Mesh:
        return Mesh(self.vertices(), grid_faces(self.U, self.V), (self.U, self.V))

    def copy(self) -> "SphereGrid":
        return SphereGrid(self.points.copy())


def grid_faces(U: int, V: int, with_pole_slivers: bool = False):
    """Faces ``(a, c, b), (a, d, c)`` per quad with ``a=(j,i)``,
    ``b=(j+1,i)``, ``c=(j+1,i+1)``, ``d=(j,i+1)`` (column index wraps);
    on the unit sphere grid they are wound counter-clockwise seen from
    outside.

    The triangles whose two corners are copies of the same pole have zero
    area; they are omitted unless ``with_pole_slivers``.
    """
    faces = []
    for j in range(V - 1):
        for i in range(U):
            a = j * U + i
            b = (j + 1) * U + i
            c = (j + 1) * U + (i + 1) % U
            d = j * U + (i + 1) % U
            if with_pole_slivers or j != V - 2:
                faces.append((a, c, b))
            if with_pole_slivers or j != 0:
                faces.append((a, d, c))
    return np.array(faces, dtype=np.int64)


def weld_matrix(U: int, V: int):
    """Sparse (U*V, n_free) map from free vertices to grid vertices: one
    free position per pole, one per other grid vertex."""
    n_free = (V - 2) * U + 2
    rows = np.arange(U * V)
    cols = np.empty(U * V, dtype=np.int64)
    cols[:U] = 0
    cols[U:(V - 1) * U] = 1 + np.arange((V - 2) * U)
    cols[(V - 1) * U:] = n_free - 1
    return sp.csr_matrix((np.ones(U * V), (rows, cols)), shape=(U * V, n_free))


# ---------------------------------------------------------------- losses


def _neighbor_average_matrix(U: int, V: int, wrap_u: bool = True, boundary: str = "clamp"):
    """Sparse M with ``(M P)_v`` the mean of the quad neighbors of ``v``.

    Column neighbors wrap when ``wrap_u``. Missing neighbors at the first
    and last row (and column, without wrap) are either replaced by the
    vertex itself (``clamp``) or the whole axis is left out of the average
    (``drop``), which makes the residual vanish on affine lattices.
    """
    if boundary not in ("clamp", "drop"):
        raise ValueError(f"unknown boundary mode {boundary!r}")
    rows, cols, vals = [], [], []
    for j in range(V):
        for i in range(U):
            v = j * U + i
            pairs = []
            # axis U
            if wrap_u:
                pairs.append((j * U + (i - 1) % U, j * U + (i + 1) % U))
            elif 0 < i < U - 1:
                pairs.append((v - 1, v + 1))
            elif boundary == "clamp":
                pairs.append((v - 1 if i > 0 else v, v + 1 if i < U - 1 else v))
            # axis V
            if 0 < j < V - 1:
                pairs.append((v - U, v + U))
            elif boundary == "clamp":
                pairs.append((v - U if j > 0 else v, v + U if j < V - 1 else v))
            if not pairs:
                pairs.append((v, v))
            n = 2 * len(pairs)
            for p in pairs:
                for u in p:
                    rows.append(v)
                    cols.append(u)
                    vals.append(1.0 / n)
    N = U * V
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def _difference_matrices(U: int, V: int, wrap_u: bool = True):
    """Sparse forward differences along U (column) and V (row) edges."""
    N = U * V
    idx = np.arange(N).reshape(V, U)
    if wrap_u:
        a_u = idx.ravel()
        b_u = np.roll(idx, -1, axis=1).ravel()
    else:
        a_u = idx[:, :-1].ravel()
        b_u = idx[:, 1:].ravel()
    a_v = idx[:-1].ravel()
    b_v = idx[1:].ravel()

    def diff(a, b):
        n = len(a)
        r = np.concatenate([np.arange(n), np.arange(n)])
        c = np.concatenate([b, a])
        v = np.concatenate([np.ones(n), -np.ones(n)])
        return sp.csr_matrix((v, (r, c)), shape=(n, N))

    return diff(a_u, b_u), diff(a_v, b_v)


def _adjacent_face_pairs(faces, weld=None):
    """Index pairs of faces sharing an edge; ``weld`` maps vertex ids to
    canonical ids so that coincident pole copies count as one vertex."""
    f = faces if weld is None else weld[faces]
    edges = {}
    pairs = []
    for fi, tri in enumerate(f):
        for k in range(3):
            e = tuple(sorted((int(tri[k]), int(tri[(k + 1) % 3]))))
            if e in edges:
                for other in edges[e]:
                    pairs.append((other, fi))
                edges[e].append(fi)
            else:
                edges[e] = [fi]
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _scatter_rows(index, rows, n):
    """``out[index[k]] += rows[k]`` for (M, 3) ``rows``."""
    return np.stack([np.bincount(index, weights=rows[:, c], minlength=n) for c in range(3)], axis=1)


def flatness(vertices, faces, pairs, with_grad: bool = False):
    """Mean over adjacent face pairs of ``(1 - cos)^2`` of their normals."""
    P = np.asarray(vertices, dtype=np.float64)
    a, b, c = P[faces[:, 0]], P[faces[:, 1]], P[faces[:, 2]]
    e1 = b - a
    e2 = c - a
    cr = np.cross(e1, e2)
    nrm = np.linalg.norm(cr, axis=1, keepdims=True)
    n = cr / np.where(nrm > 0, nrm, 1.0)
    if len(pairs) == 0:
        return (0.0, np.zeros_like(P)) if with_grad else 0.0
    n1 = n[pairs[:, 0]]
    n2 = n[pairs[:, 1]]
    cos = np.sum(n1 * n2, axis=1)
    one_minus = 1.0 - cos
    loss = float(np.mean(one_minus**2))
    if not with_grad:
        return loss
    coef = (-2.0 * one_minus / len(pairs))[:, None]
    gn = _scatter_rows(pairs.T.ravel(), np.concatenate([coef * n2, coef * n1]), len(n))
    # through the normalization n = cr / |cr|
    gcr = (gn - n * np.sum(gn * n, axis=1, keepdims=True)) / np.where(nrm > 0, nrm, np.inf)
    gb = np.cross(e2, gcr)
    gc = np.cross(gcr, e1)
    ga = -(gb + gc)
    G = _scatter_rows(faces.T.ravel(), np.concatenate([ga, gb, gc]), len(P))
    return loss, G


def quad_laplacian(points, wrap_u: bool = True, boundary: str = "clamp", with_grad: bool = False, _M=None):
    """Mean squared distance of each grid vertex from its quad-neighbor mean."""
    P = np.asarray(points, dtype=np.float64)
    V, U = P.shape[:2]
    flat = P.reshape(-1, 3)
    M = _neighbor_average_matrix(U, V, wrap_u, boundary) if _M is None else _M
    R = flat - M @ flat
    loss = float(np.sum(R * R) / len(flat))
    if not with_grad:
        return loss
    G = 2.0 * (R - M.T @ R) / len(flat)
    return loss, G.reshape(P.shape)


def edge_length_terms(points, wrap_u: bool = True):
    """Per-vertex ``(|v[i+1,j]-v[i,j]|_1 + |v[i,j+1]-v[i,j]|_1) / 6``;
    edges leaving the grid contribute zero."""
    P = np.asarray(points, dtype=np.float64)
    du = np.zeros(P.shape[:2])
    dv = np.zeros(P.shape[:2])
    if wrap_u:
        du[:] = np.abs(np.roll(P, -1, axis=1) - P).sum(-1)
    else:
        du[:, :-1] = np.abs(P[:, 1:] - P[:, :-1]).sum(-1)
    dv[:-1] = np.abs(P[1:] - P[:-1]).sum(-1)
    return (du + dv) / 6.0


def edge_length(points, wrap_u: bool = True, with_grad: bool = False, _D=None):
    P = np.asarray(points, dtype=np.float64)
    V, U = P.shape[:2]
    loss = float(edge_length_terms(P, wrap_u).mean())
    if not with_grad:
        return loss
    Du, Dv = _difference_matrices(U, V, wrap_u) if _D is None else _D
    flat = P.reshape(-1, 3)
    G = (Du.T @ np.sign(Du @ flat) + Dv.T @ np.sign(Dv @ flat)) / (6.0 * U * V)
    return loss, G.reshape(P.shape)


def alignment(grids, with_grad: bool = False):
    """``(1/N_t^2) sum_ij sum_v |V_i[v] - V_j[v]|_2`` over template pairs."""
    Ps = [np.asarray(g, dtype=np.float64).reshape(-1, 3) for g in grids]
    nt = len(Ps)
    loss = 0.0
    Gs = [np.zeros_like(P) for P in Ps]
    for i in range(nt):
        for j in range(nt):
            if i == j:
                continue
            d = Ps[i] - Ps[j]
            norm = np.linalg.norm(d, axis=1)
            loss += norm.sum()
            if with_grad:
                unit = d / np.where(norm > 0, norm, np.inf)[:, None]
                Gs[i] += unit / nt**2
                Gs[j] -= unit / nt**2
    loss /= nt**2
    if not with_grad:
        return float(loss)
    return float(loss), [G.reshape(np.shape(g)) for G, g in zip(Gs, grids)]


class _Operators:
    """Cached sparse operators and adjacency for one grid size."""

    def __init__(self, U: int, V: int):
        self.U, self.V = U, V
        self.faces = grid_faces(U, V)
        weld = np.arange(U * V)
        weld[:U] = 0
        weld[(V - 1) * U:] = (V - 1) * U
        self.pairs = _adjacent_face_pairs(self.faces, weld)
        self.M = _neighbor_average_matrix(U, V, True, "clamp")
        self.D = _difference_matrices(U, V, True)
        self.W = weld_matrix(U, V)


_OPS: dict[tuple[int, int], _Operators] = {}


def _ops(U: int, V: int) -> _Operators:
    key = (U, V)
    if key not in _OPS:
        _OPS[key] = _Operators(U, V)
    return _OPS[key]


def remesh_losses(grids) -> dict[str, float]:
    """Regularizer values summed over templates (align couples them)."""
    grids = [g if isinstance(g, SphereGrid) else SphereGrid(g) for g in grids]
    out = {"flat": 0.0, "lap": 0.0, "len": 0.0, "align": 0.0}
    for g in grids:
        ops = _ops(g.U, g.V)
        out["flat"] += flatness(g.vertices(), ops.faces, ops.pairs)
        out["lap"] += quad_laplacian(g.points, _M=ops.M)
        out["len"] += edge_length(g.points)
    out["align"] = alignment([g.points for g in grids]) if len(grids) > 1 else 0.0
    return out


# ---------------------------------------------------------------- fitting


@dataclass
class RemeshConfig:
    n_views: int = 64
    view_resolution: int = 256
    views_per_step: int = 1
    w_flat: float = 1e-5
    w_lap: float = 3e-3
    w_len: float = 1e-2
    w_align: float = 1e-3
    sigma: float = 1.0
    seed: int = 0
    grid_u: int = GRID_U
    grid_v: int = GRID_V
    max_steps: int | None = None  # cap on top of the schedule stop, for quick runs
    momentum: MomentumState = field(default_factory=MomentumState)

    def __post_init__(self):
        for name in ("w_flat", "w_lap", "w_len", "w_align"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def random_views(n: int, rng, scale: float = VIEW_SCALE):
    """Azimuth uniform in [0, 360), elevation uniform in [-60, 60], z0 = 0,
    framing a unit-radius template centered at the origin."""
    views = []
    for _ in range(n):
        az = rng.uniform(0.0, 360.0)
        el = rng.uniform(-60.0, 60.0)
        views.append(CameraPose(quat_from_view(az, el), scale, np.zeros(2), 0.0))
    return views


def _normalize_template(mesh: Mesh):
    if len(mesh.faces) == 0 or len(mesh.vertices) == 0:
        raise NonRenderableTemplate("template has no faces")
    if not np.all(np.isfinite(mesh.vertices)):
        raise NonRenderableTemplate("template has non-finite vertices")
    center = 0.5 * (mesh.vertices.min(0) + mesh.vertices.max(0))
    radius = float(np.linalg.norm(mesh.vertices - center, axis=1).max())
    if not radius > 0:
        raise NonRenderableTemplate("template has zero extent")
    return Mesh((mesh.vertices - center) / radius, mesh.faces), center, radius


def render_targets(mesh: Mesh, views, resolution: int, sigma: float = 1.0):
    cfg = RenderConfig(resolution, sigma)
    targets = [render_silhouette(mesh, v, cfg) for v in views]
    if all(np.count_nonzero(t > 0.5) == 0 for t in targets):
        raise NonRenderableTemplate("template silhouette is empty in every view")
    return targets


def silhouette_grad(grid_vertices, faces, view: CameraPose, target, resolution: int, sigma: float):
    """MSE of one view and its gradient w.r.t. the 3D vertices (z0 = 0)."""
    xy, _ = project(view, grid_vertices)
    uv = to_pixels(xy, resolution)
    rendered, g_uv = silhouette_vjp_pixels(uv, faces, resolution, sigma, None, target=target)
    diff = rendered - target
    loss = float(np.mean(diff * diff))
    R = quat_to_matrix(view.q)
    J = (0.5 * resolution * view.s) * R[:2]  # d uv / d v
    return loss, g_uv @ J


def remesh(raw_templates, cfg: RemeshConfig = RemeshConfig(), log=None) -> list[SphereGrid]:
    """Fit one sphere grid per raw template (jointly when ``w_align`` couples
    several). Templates are fitted in their own normalized frame (unit
    bounding radius) and mapped back afterwards."""
    rng = np.random.default_rng(cfg.seed)
    views = random_views(cfg.n_views, rng)
    normed = [_normalize_template(m) for m in raw_templates]
    targets = [render_targets(m, views, cfg.view_resolution, cfg.sigma) for m, _, _ in normed]
    ops = _ops(cfg.grid_u, cfg.grid_v)
    W = ops.W
    init = SphereGrid.sphere(cfg.grid_u, cfg.grid_v).vertices()
    # free parameters: pole rows collapse to a single position each
    counts = np.asarray(W.sum(axis=0)).ravel()
    free = [(W.T @ init) / counts[:, None] for _ in normed]
    n_t = len(normed)
    state = MomentumState(**{k: getattr(cfg.momentum, k) for k in
                             ("beta", "lr_start", "lr_peak", "warmup", "decay", "lr_stop")})
    step = 0
    while not state.done:
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
        picks = rng.integers(cfg.n_views, size=cfg.views_per_step)
        full = [W @ f for f in free]
        grads = []
        total = 0.0
        for ti in range(n_t):
            P = full[ti]
            G = np.zeros_like(P)
            for k in picks:
                loss, g = silhouette_grad(P, ops.faces, views[k], targets[ti][k],
                                          cfg.view_resolution, cfg.sigma)
                total += loss / len(picks)
                G += g / len(picks)
            if cfg.w_flat:
                l, g = flatness(P, ops.faces, ops.pairs, with_grad=True)
                G += cfg.w_flat * g
                total += cfg.w_flat * l
            pts = P.reshape(cfg.grid_v, cfg.grid_u, 3)
            if cfg.w_lap:
                l, g = quad_laplacian(pts, with_grad=True, _M=ops.M)
                G += cfg.w_lap * g.reshape(-1, 3)
                total += cfg.w_lap * l
            if cfg.w_len:
                l, g = edge_length(pts, with_grad=True, _D=ops.D)
                G += cfg.w_len * g.reshape(-1, 3)
                total += cfg.w_len * l
            grads.append(G)
        if n_t > 1 and cfg.w_align:
            l, gs = alignment(full, with_grad=True)
            total += cfg.w_align * l
            for ti in range(n_t):
                grads[ti] += cfg.w_align * gs[ti]
        theta = np.concatenate([f.ravel() for f in free])
        g_free = np.concatenate([(W.T @ g).ravel() for g in grads])
        theta = momentum_step(state, theta, g_free)
        free = [x.reshape(-1, 3) for x in np.split(theta, n_t)]
        if log is not None and step % 1000 == 0:
            log(step, total / max(n_t, 1), state.lr)
        step += 1
    out = []
    for f, (_, center, radius) in zip(free, normed):
        P = (W @ f) * radius + center
        out.append(SphereGrid(P.reshape(cfg.grid_v, cfg.grid_u, 3)))
    return out


def heldout_iou(grid: SphereGrid, raw: Mesh, n_views: int = 16, seed: int = 12345, resolution: int = 256) -> float:
    """Mean IoU between grid and raw template over views disjoint from the
    fitting set (a separate seed)."""
    normed, center, radius = _normalize_template(raw)
    gm = Mesh((grid.vertices() - center) / radius, grid_faces(grid.U, grid.V))
    views = random_views(n_views, np.random.default_rng(seed))
    cfg = RenderConfig(resolution)
    return float(np.mean([iou(render_silhouette(gm, v, cfg), render_silhouette(normed, v, cfg)) for v in views]))


def inverted_faces(grid: SphereGrid, n_views: int = 16, seed: int = 12345, resolution: int = 128) -> int:
    """Visible faces whose projected orientation disagrees with the majority
    of visible faces in the same view, summed over random views.

    A fold in the grid shows up as a visible face wound the other way; a
    clean surface gives 0.
    """
    mesh = grid.mesh()
    normed = mesh.normalized()
    cfg = RenderConfig(resolution)
    total = 0
    for view in random_views(n_views, np.random.default_rng(seed)):
        face_id, _ = visibility(normed, view, cfg)
        vis = np.unique(face_id[face_id >= 0])
        if vis.size == 0:
            continue
        xy, _ = project(view, normed.vertices)
        a, b, c = (xy[normed.faces[vis, k]] for k in range(3))
        area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        pos = int(np.count_nonzero(area > 0))
        neg = int(np.count_nonzero(area < 0))
        total += min(pos, neg)
    return total


def save_grid(grid: SphereGrid, obj_path) -> Path:
    """Write the OBJ and a ``<stem>.grid.json`` topology sidecar."""
    obj_path = Path(obj_path)
    save_obj(grid.mesh(), obj_path)
    side = obj_path.with_suffix(".grid.json")
    side.write_text(
        json.dumps(
            {
                "U": grid.U,
                "V": grid.V,
                "index": "j*U+i",
                "seam": "column U-1 connects to column 0",
                "poles": {"north_row": 0, "south_row": grid.V - 1},
            }
        )
        + "\n"
    )
    return side


def load_grid(obj_path) -> SphereGrid:
    from .geometry import load_obj

    obj_path = Path(obj_path)
    side = json.loads(obj_path.with_suffix(".grid.json").read_text())
    mesh = load_obj(obj_path)
    return SphereGrid(mesh.vertices.reshape(side["V"], side["U"], 3))


def load_template(path) -> Mesh:
    """OBJ template; grid dimensions are attached when a sidecar exists."""
    from .geometry import load_obj

    path = Path(path)
    mesh = load_obj(path)
    side = path.with_suffix(".grid.json")
    if side.exists():
        d = json.loads(side.read_text())
        mesh = Mesh(mesh.vertices, mesh.faces, (int(d["U"]), int(d["V"])))
    return mesh
