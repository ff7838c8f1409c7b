"""Compiled rasterization kernels.

All kernels take vertex positions in continuous pixel coordinates, shape
(N, 2), columns ``(u, v)``; pixel ``(row, col)`` has its center at
``(col + 0.5, row + 0.5)``.

Per-face soft coverage is ``D = sigmoid(d / sigma) * taper(d)`` where ``d``
is the signed distance to the face boundary (positive inside). Outside the
face ``d`` is minus the Euclidean distance to the triangle; inside it is a
p-norm soft minimum of the three edge-line distances. Both pieces are C1 and
agree to first order on the boundary, which keeps finite differences of the
rendered image consistent with the analytic tangents (a plain ``min`` has
kinks along the medial axis). The taper is a C2 smootherstep that brings
``D`` to exactly zero at ``d = -3 sigma``, so per-face work is confined to
the face grown by ``3 sigma``.

The outside distance has a kink of its own when a face degenerates and its
projected orientation flips (edge-on slivers along the contour). Each face
is therefore weighted by a smootherstep fade of its thickness
``|2 area| / sqrt(sum of squared edge lengths)`` that reaches 1 at
``FADE_WIDTH * sigma``. The fade and its slope vanish at zero area, so the
image stays C1 through the flip; faces thicker than the fade width are
untouched.

Coverage is aggregated as ``Q = prod_f (1 - D_f)`` and ``alpha = 1 - Q``.
With ``r_f = D_f' / (1 - D_f)`` the derivative is
``d alpha = Q * sum_f r_f * d(d_f)``.

Gradients of ``d`` w.r.t. the two endpoints of the edge that determines it
have the closed form ``-(1 - t) n`` and ``-t n``, with ``n`` the unit inward
normal (or the unit vector from the nearest point, outside) and ``t`` the
position of the foot point along the edge.
"""

from __future__ import annotations

import math

import numba
import numpy as np

SOFTMIN_POWER = 8  # fixed by the repeated squaring in _inside
TAPER_START = 1.0  # sigma units outside the face where the taper begins
TAPER_END = 3.0
_AREA_EPS = 1e-10
FADE_WIDTH = 0.25  # faces thinner than this (in sigma) fade out

# exp(x) for x <= 0 without a libm call: Cody-Waite reduction to
# |r| <= ln(2)/2 and a degree-12 Taylor polynomial (relative error below 1e-13).
_POW2 = 2.0 ** np.arange(-1022, 1, dtype=np.float64)
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_LOG2E = 1.4426950408889634

_jit = numba.njit(cache=True, fastmath=True, nogil=True)
_inline = numba.njit(cache=True, fastmath=True, nogil=True, inline="always")


@_inline
def _exp_neg(x):
    if x < -700.0:
        return 0.0
    k = math.floor(x * _LOG2E + 0.5)
    r = (x - k * _LN2_HI) - k * _LN2_LO
    p = 1.0 / 479001600.0
    p = 1.0 / 39916800.0 + r * p
    p = 1.0 / 3628800.0 + r * p
    p = 1.0 / 362880.0 + r * p
    p = 1.0 / 40320.0 + r * p
    p = 1.0 / 5040.0 + r * p
    p = 1.0 / 720.0 + r * p
    p = 1.0 / 120.0 + r * p
    p = 1.0 / 24.0 + r * p
    p = 1.0 / 6.0 + r * p
    p = 0.5 + r * p
    p = 1.0 + r * p
    p = 1.0 + r * p
    return p * _POW2[int(k) + 1022]


@_inline
def _face(uv, f0, f1, f2, fade_width):
    """Edge data of triangle (f0, f1, f2) as a flat tuple.

    Per edge e (a->b, b->c, c->a): start (sx, sy), direction (dx, dy),
    direction / length^2 (qx, qy), unit inward normal (nx, ny) and offset k
    such that the line distance is ``nx * x + ny * y + k``. Then the
    signed doubled area (zero for degenerate faces), the fade factor and
    its six partials w.r.t. (ax, ay, bx, by, cx, cy).
    """
    ax = uv[f0, 0]; ay = uv[f0, 1]
    bx = uv[f1, 0]; by = uv[f1, 1]
    cx = uv[f2, 0]; cy = uv[f2, 1]
    area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if abs(area2) < _AREA_EPS:
        z = 0.0
        return (z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, z, 0.0,
                z, z, z, z, z, z, z)
    o = 1.0 if area2 > 0 else -1.0
    d0x = bx - ax; d0y = by - ay
    d1x = cx - bx; d1y = cy - by
    d2x = ax - cx; d2y = ay - cy
    s0 = d0x * d0x + d0y * d0y
    s1 = d1x * d1x + d1y * d1y
    s2 = d2x * d2x + d2y * d2y
    i0 = o / math.sqrt(s0)
    i1 = o / math.sqrt(s1)
    i2 = o / math.sqrt(s2)
    n0x = -d0y * i0; n0y = d0x * i0
    n1x = -d1y * i1; n1y = d1x * i1
    n2x = -d2y * i2; n2y = d2x * i2
    # thickness w = |area2| / sqrt(s0 + s1 + s2) and fade smootherstep(w / width)
    ssum = s0 + s1 + s2
    isq = 1.0 / math.sqrt(ssum)
    w = o * area2 * isq
    x = w / fade_width
    fade = 1.0
    p0 = 0.0; p1 = 0.0; p2 = 0.0; p3 = 0.0; p4 = 0.0; p5 = 0.0
    if x < 1.0:
        fade = x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
        k = 30.0 * x * x * (1.0 - x) * (1.0 - x) / fade_width
        ka = k * o * isq  # times d(area2)
        ks = -k * w / ssum  # times d(ssum) / 2
        p0 = ka * (by - cy) + ks * (2.0 * ax - bx - cx)
        p1 = ka * (cx - bx) + ks * (2.0 * ay - by - cy)
        p2 = ka * (cy - ay) + ks * (2.0 * bx - ax - cx)
        p3 = ka * (ax - cx) + ks * (2.0 * by - ay - cy)
        p4 = ka * (ay - by) + ks * (2.0 * cx - ax - bx)
        p5 = ka * (bx - ax) + ks * (2.0 * cy - ay - by)
    return (
        ax, ay, d0x, d0y, d0x / s0, d0y / s0, n0x, n0y, -(n0x * ax + n0y * ay),
        bx, by, d1x, d1y, d1x / s1, d1y / s1, n1x, n1y, -(n1x * bx + n1y * by),
        cx, cy, d2x, d2y, d2x / s2, d2y / s2, n2x, n2y, -(n2x * cx + n2y * cy),
        area2, fade, p0, p1, p2, p3, p4, p5,
    )


@_inline
def _span(nx, ny, k, py, cut, xlo, xhi):
    """Tighten [xlo, xhi] to where ``nx * x + ny * py + k > -cut``."""
    beta = ny * py + k + cut
    if nx > 1e-15:
        v = -beta / nx
        if v > xlo:
            xlo = v
    elif nx < -1e-15:
        v = -beta / nx
        if v < xhi:
            xhi = v
    elif beta <= 0.0:
        xhi = -1e300
    return xlo, xhi


@_inline
def _row_span(F, py, cut, c_lo, c_hi):
    """Column range of pixel centers on row ``py`` whose three edge-line
    distances all exceed ``-cut``."""
    xlo, xhi = _span(F[6], F[7], F[8], py, cut, -1e300, 1e300)
    xlo, xhi = _span(F[15], F[16], F[17], py, cut, xlo, xhi)
    xlo, xhi = _span(F[24], F[25], F[26], py, cut, xlo, xhi)
    if xhi <= xlo:
        return 0, -1
    i0 = c_lo
    i1 = c_hi
    if xlo > -1e299:
        j = int(math.floor(xlo - 0.5)) + 1
        if j > i0:
            i0 = j
    if xhi < 1e299:
        j = int(math.ceil(xhi - 0.5)) - 1
        if j < i1:
            i1 = j
    return i0, i1


@_inline
def _window(a, b, c, cut, size):
    lo = min(a, min(b, c)) - cut
    hi = max(a, max(b, c)) + cut
    i0 = max(int(math.ceil(lo - 0.5)), 0)
    i1 = min(int(math.floor(hi - 0.5)), size - 1)
    return i0, i1


@_inline
def _inside(l0, l1, l2):
    """Soft minimum ``(l0^-8 + l1^-8 + l2^-8)^(-1/8)`` and its partials
    ``(d / l_e)^9``, for positive line distances."""
    m = min(l0, min(l1, l2))
    # m / l_e with a single division
    p01 = l0 * l1
    inv = m / (p01 * l2)
    r0 = l1 * l2 * inv
    r1 = l0 * l2 * inv
    r2 = p01 * inv
    a0 = r0 * r0; a0 *= a0; a0 *= a0
    a1 = r1 * r1; a1 *= a1; a1 *= a1
    a2 = r2 * r2; a2 *= a2; a2 *= a2
    q = math.sqrt(math.sqrt(math.sqrt(1.0 / (a0 + a1 + a2))))
    d = m * q
    q9 = q * q; q9 *= q9; q9 *= q9; q9 *= q
    return d, a0 * r0 * q9, a1 * r1 * q9, a2 * r2 * q9


@_inline
def _seg(px, py, sx, sy, dx, dy, qx, qy):
    """Squared distance to a segment, clamped foot parameter, offset vector."""
    t = (px - sx) * qx + (py - sy) * qy
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    ox = px - (sx + t * dx)
    oy = py - (sy + t * dy)
    return ox * ox + oy * oy, t, ox, oy


@_inline
def _outside(px, py, l0, l1, l2, F):
    """Distance from an outside point to the triangle.

    Returns (dist, edge, t, ox, oy): the nearest edge, the clamped foot
    parameter on it and the offset from the foot point to ``p``. Only edges
    whose line the point lies behind can hold the nearest point.
    """
    best = 1e300
    be = -1
    bt = 0.0
    bx = 0.0
    by = 0.0
    if l0 <= 0.0:
        s, t, ox, oy = _seg(px, py, F[0], F[1], F[2], F[3], F[4], F[5])
        if s < best:
            best = s; be = 0; bt = t; bx = ox; by = oy
    if l1 <= 0.0:
        s, t, ox, oy = _seg(px, py, F[9], F[10], F[11], F[12], F[13], F[14])
        if s < best:
            best = s; be = 1; bt = t; bx = ox; by = oy
    if l2 <= 0.0:
        s, t, ox, oy = _seg(px, py, F[18], F[19], F[20], F[21], F[22], F[23])
        if s < best:
            best = s; be = 2; bt = t; bx = ox; by = oy
    return math.sqrt(best), be, bt, bx, by


@_inline
def _one_minus_d_out(dist, inv_sigma):
    """``1 - D`` and ``r = D' / (1 - D)`` (per unit of ``d``) for ``d = -dist``.

    With ``e = exp(-dist / sigma)`` and taper ``w``: ``1 - D = (1 + e - e w)
    / (1 + e)`` and ``r = e (w / (1 + e) + w') / (1 + e - e w)``; both share
    one reciprocal.
    """
    u = dist * inv_sigma
    e = _exp_neg(-u)
    x = (TAPER_END - u) * (1.0 / (TAPER_END - TAPER_START))
    if x >= 1.0:
        inv = 1.0 / (1.0 + e)
        return inv, e * inv * inv_sigma
    w = x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
    dw = 30.0 * x * x * (1.0 - x) * (1.0 - x) * (1.0 / (TAPER_END - TAPER_START))
    ope = 1.0 + e
    num = ope - e * w
    inv = 1.0 / (ope * num)
    return num * num * inv, e * (w + dw * ope) * inv * inv_sigma


@_inline
def _pair_unfaded(px, py, F, cut, inv_sigma):
    """``_pair`` before the thin-face fade is applied."""
    l0 = F[6] * px + F[7] * py + F[8]
    l1 = F[15] * px + F[16] * py + F[17]
    l2 = F[24] * px + F[25] * py + F[26]
    if l0 > 0.0 and l1 > 0.0 and l2 > 0.0:
        d, w0, w1, w2 = _inside(l0, l1, l2)
        e = _exp_neg(-d * inv_sigma)
        inv = 1.0 / (1.0 + e)
        om = e * inv
        r = inv * inv_sigma
        t0 = (px - F[0]) * F[4] + (py - F[1]) * F[5]
        t1 = (px - F[9]) * F[13] + (py - F[10]) * F[14]
        t2 = (px - F[18]) * F[22] + (py - F[19]) * F[23]
        # line e pulls its start by -(1 - t) n w and its end by -t n w
        a0 = w0 * (1.0 - t0); b0 = w0 * t0
        a1 = w1 * (1.0 - t1); b1 = w1 * t1
        a2 = w2 * (1.0 - t2); b2 = w2 * t2
        g0 = -(a0 * F[6] + b2 * F[24])
        g1 = -(a0 * F[7] + b2 * F[25])
        g2 = -(a1 * F[15] + b0 * F[6])
        g3 = -(a1 * F[16] + b0 * F[7])
        g4 = -(a2 * F[24] + b1 * F[15])
        g5 = -(a2 * F[25] + b1 * F[16])
        return True, om, r, g0, g1, g2, g3, g4, g5
    dist, be, t, ox, oy = _outside(px, py, l0, l1, l2, F)
    if dist >= cut:
        return False, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    om, r = _one_minus_d_out(dist, inv_sigma)
    if dist > 1e-12:
        inv = 1.0 / dist
        gx = ox * inv
        gy = oy * inv
    else:
        # on the boundary the outward normal is the limit direction
        gx = -F[9 * be + 6]
        gy = -F[9 * be + 7]
    ga = 1.0 - t
    g0 = 0.0; g1 = 0.0; g2 = 0.0; g3 = 0.0; g4 = 0.0; g5 = 0.0
    if be == 0:
        g0 = gx * ga; g1 = gy * ga; g2 = gx * t; g3 = gy * t
    elif be == 1:
        g2 = gx * ga; g3 = gy * ga; g4 = gx * t; g5 = gy * t
    else:
        g4 = gx * ga; g5 = gy * ga; g0 = gx * t; g1 = gy * t
    return True, om, r, g0, g1, g2, g3, g4, g5


@_inline
def _pair(px, py, F, cut, inv_sigma):
    """Everything one pixel needs from one face.

    Returns (valid, 1 - D, r, g0..g5) where ``r * g`` is ``dD/d(ax, ay, bx,
    by, cx, cy) / (1 - D)``.
    """
    ok, om, r, g0, g1, g2, g3, g4, g5 = _pair_unfaded(px, py, F, cut, inv_sigma)
    fade = F[28]
    if not ok or fade == 1.0:
        return ok, om, r, g0, g1, g2, g3, g4, g5
    # D = fade * D0: dD = fade * dD0 + D0 * d(fade), with dD0 = r * om * g
    d0 = 1.0 - om
    om_f = 1.0 - fade * d0
    inv = 1.0 / om_f
    a = fade * r * om * inv
    b = d0 * inv
    return (True, om_f, 1.0, a * g0 + b * F[29], a * g1 + b * F[30], a * g2 + b * F[31],
            a * g3 + b * F[32], a * g4 + b * F[33], a * g5 + b * F[34])


@_inline
def _pair_value_unfaded(px, py, F, cut, inv_sigma):
    l0 = F[6] * px + F[7] * py + F[8]
    l1 = F[15] * px + F[16] * py + F[17]
    l2 = F[24] * px + F[25] * py + F[26]
    if l0 > 0.0 and l1 > 0.0 and l2 > 0.0:
        d, w0, w1, w2 = _inside(l0, l1, l2)
        e = _exp_neg(-d * inv_sigma)
        return e / (1.0 + e)
    dist, be, t, ox, oy = _outside(px, py, l0, l1, l2, F)
    if dist >= cut:
        return 1.0
    return _one_minus_d_out(dist, inv_sigma)[0]


@_inline
def _pair_value(px, py, F, cut, inv_sigma):
    """``1 - D`` only (1.0 outside the support)."""
    om = _pair_value_unfaded(px, py, F, cut, inv_sigma)
    return 1.0 - F[28] * (1.0 - om)


@_jit
def soft_q(uv, faces, height, width, sigma):
    """Per-pixel ``prod_f (1 - D_f)``; coverage is ``1 - Q``."""
    Q = np.ones((height, width))
    cut = TAPER_END * sigma
    inv_sigma = 1.0 / sigma
    fade_width = FADE_WIDTH * sigma
    for fi in range(faces.shape[0]):
        F = _face(uv, faces[fi, 0], faces[fi, 1], faces[fi, 2], fade_width)
        if F[27] == 0.0:
            continue
        c_lo, c_hi = _window(F[0], F[9], F[18], cut, width)
        r0, r1 = _window(F[1], F[10], F[19], cut, height)
        for row in range(r0, r1 + 1):
            py = row + 0.5
            i0, i1 = _row_span(F, py, cut, c_lo, c_hi)
            for col in range(i0, i1 + 1):
                Q[row, col] *= _pair_value(col + 0.5, py, F, cut, inv_sigma)
    return Q


@_jit
def soft_q_tangents(uv, duv, faces, height, width, sigma):
    """Forward mode: Q as in ``soft_q`` plus G (H, W, L) with
    ``d(coverage)/d(param_l) = Q * G[..., l]``; ``duv`` is (N, 2, L)."""
    L = duv.shape[2]
    Q = np.ones((height, width))
    G = np.zeros((height, width, L))
    cut = TAPER_END * sigma
    inv_sigma = 1.0 / sigma
    fade_width = FADE_WIDTH * sigma
    T = np.zeros((6, L))
    for fi in range(faces.shape[0]):
        f0 = faces[fi, 0]
        f1 = faces[fi, 1]
        f2 = faces[fi, 2]
        F = _face(uv, f0, f1, f2, fade_width)
        if F[27] == 0.0:
            continue
        for l in range(L):
            T[0, l] = duv[f0, 0, l]
            T[1, l] = duv[f0, 1, l]
            T[2, l] = duv[f1, 0, l]
            T[3, l] = duv[f1, 1, l]
            T[4, l] = duv[f2, 0, l]
            T[5, l] = duv[f2, 1, l]
        c_lo, c_hi = _window(F[0], F[9], F[18], cut, width)
        r0, r1 = _window(F[1], F[10], F[19], cut, height)
        for row in range(r0, r1 + 1):
            py = row + 0.5
            i0, i1 = _row_span(F, py, cut, c_lo, c_hi)
            for col in range(i0, i1 + 1):
                ok, om, r, g0, g1, g2, g3, g4, g5 = _pair(col + 0.5, py, F, cut, inv_sigma)
                if not ok:
                    continue
                Q[row, col] *= om
                g0 *= r; g1 *= r; g2 *= r; g3 *= r; g4 *= r; g5 *= r
                for l in range(L):
                    G[row, col, l] += (
                        g0 * T[0, l] + g1 * T[1, l] + g2 * T[2, l]
                        + g3 * T[3, l] + g4 * T[4, l] + g5 * T[5, l]
                    )
    return Q, G


@_jit
def pair_bound(uv, faces, height, width, sigma):
    """Upper bound on the number of pairs ``soft_q_pairs`` records."""
    cut = TAPER_END * sigma
    bound = 0
    for fi in range(faces.shape[0]):
        c_lo, c_hi = _window(uv[faces[fi, 0], 0], uv[faces[fi, 1], 0], uv[faces[fi, 2], 0], cut, width)
        r0, r1 = _window(uv[faces[fi, 0], 1], uv[faces[fi, 1], 1], uv[faces[fi, 2], 1], cut, height)
        if c_hi >= c_lo and r1 >= r0:
            bound += (c_hi - c_lo + 1) * (r1 - r0 + 1)
    return bound


@_jit
def soft_q_pairs(uv, faces, height, width, sigma, pix, rg):
    """``soft_q`` that also records, per face, the covered pixels and
    ``r * d(d)/d(face vertices)`` so that a reverse pass needs no
    re-rasterization (see ``vjp_from_pairs``).

    ``pix`` (int32) and ``rg`` (M, 6) are caller-provided workspaces of at
    least ``pair_bound`` entries. Returns (Q, start): the pairs of face
    ``f`` occupy ``start[f]:start[f + 1]`` with ``pix`` the flat pixel
    index and ``rg`` the six weighted partials.
    """
    n_faces = faces.shape[0]
    cut = TAPER_END * sigma
    inv_sigma = 1.0 / sigma
    fade_width = FADE_WIDTH * sigma
    Q = np.ones((height, width))
    start = np.zeros(n_faces + 1, dtype=np.int64)
    n = 0
    for fi in range(n_faces):
        start[fi] = n
        F = _face(uv, faces[fi, 0], faces[fi, 1], faces[fi, 2], fade_width)
        if F[27] == 0.0:
            continue
        c_lo, c_hi = _window(F[0], F[9], F[18], cut, width)
        r0, r1 = _window(F[1], F[10], F[19], cut, height)
        for row in range(r0, r1 + 1):
            py = row + 0.5
            i0, i1 = _row_span(F, py, cut, c_lo, c_hi)
            for col in range(i0, i1 + 1):
                ok, om, r, g0, g1, g2, g3, g4, g5 = _pair(col + 0.5, py, F, cut, inv_sigma)
                if not ok:
                    continue
                Q[row, col] *= om
                pix[n] = row * width + col
                rg[n, 0] = r * g0
                rg[n, 1] = r * g1
                rg[n, 2] = r * g2
                rg[n, 3] = r * g3
                rg[n, 4] = r * g4
                rg[n, 5] = r * g5
                n += 1
    start[n_faces] = n
    return Q, start


@_jit
def vjp_from_pairs(faces, n_vertices, start, pix, rg, wpix):
    """Reverse pass over the pairs recorded by ``soft_q_pairs``; ``wpix``
    is ``gpix * Q`` flattened."""
    grad = np.zeros((n_vertices, 2))
    for fi in range(faces.shape[0]):
        a0 = 0.0; a1 = 0.0; a2 = 0.0; a3 = 0.0; a4 = 0.0; a5 = 0.0
        for k in range(start[fi], start[fi + 1]):
            c = wpix[pix[k]]
            a0 += c * rg[k, 0]; a1 += c * rg[k, 1]; a2 += c * rg[k, 2]
            a3 += c * rg[k, 3]; a4 += c * rg[k, 4]; a5 += c * rg[k, 5]
        grad[faces[fi, 0], 0] += a0
        grad[faces[fi, 0], 1] += a1
        grad[faces[fi, 1], 0] += a2
        grad[faces[fi, 1], 1] += a3
        grad[faces[fi, 2], 0] += a4
        grad[faces[fi, 2], 1] += a5
    return grad


@numba.njit(cache=True, nogil=True)
def hard_visibility(uv, depth, faces, height, width):
    """Z-buffer pass: nearest face index per pixel (-1 if none) and the
    screen-space barycentric weights of its three vertices. Smaller depth
    is nearer."""
    face_id = -np.ones((height, width), dtype=np.int64)
    bary = np.zeros((height, width, 3))
    zbuf = np.full((height, width), np.inf)
    for fi in range(faces.shape[0]):
        f0 = faces[fi, 0]
        f1 = faces[fi, 1]
        f2 = faces[fi, 2]
        ax = uv[f0, 0]; ay = uv[f0, 1]
        bx = uv[f1, 0]; by = uv[f1, 1]
        cx = uv[f2, 0]; cy = uv[f2, 1]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area2) < _AREA_EPS:
            continue
        c0, c1 = _window(ax, bx, cx, 0.0, width)
        r0, r1 = _window(ay, by, cy, 0.0, height)
        za = depth[f0]
        zb = depth[f1]
        zc = depth[f2]
        for row in range(r0, r1 + 1):
            py = row + 0.5
            for col in range(c0, c1 + 1):
                px = col + 0.5
                w0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / area2
                w1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / area2
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                z = w0 * za + w1 * zb + w2 * zc
                if z < zbuf[row, col]:
                    zbuf[row, col] = z
                    face_id[row, col] = fi
                    bary[row, col, 0] = w0
                    bary[row, col, 1] = w1
                    bary[row, col, 2] = w2
    return face_id, bary
