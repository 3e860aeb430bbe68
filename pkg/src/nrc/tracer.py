"""Monte Carlo path tracer with cache-terminated rendering and training paths.

The heavy lifting is done by numba kernels operating on the flat
:class:`~nrc.scene.SceneData` arrays. Vectors are passed around as plain
float triples to keep everything in registers.

A rendering path stops at the first vertex ``x_n`` whose area spread
``a(x_1..x_n)`` exceeds ``c * a0``; that vertex becomes a cache query. A
training path continues from there (the "suffix") until the suffix's own
spread exceeds ``c * a0`` again, and the cache prediction at the final
vertex seeds the training targets. A fraction ``u`` of training suffixes
ignore the spread test and are ended by Russian roulette only.

BSDF: Lambertian diffuse plus a normalised Phong lobe whose exponent is
derived from the roughness (``2 / r^2 - 2``); roughness 0 gives a mirror.
Mirror bounces add nothing to the spread sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .scene import Scene, SceneData

INV_PI = 1.0 / math.pi
MAX_PHONG_EXPONENT = 1.0e4
GRAZING_COS = 0.01

# Termination reasons.
SPREAD, ROULETTE, ESCAPED, MAX_DEPTH, ABSORBED = 0, 1, 2, 3, 4
REASONS = {SPREAD: "spread", ROULETTE: "russian-roulette", ESCAPED: "escaped",
           MAX_DEPTH: "max-depth", ABSORBED: "absorbed"}

# Per-vertex record layout.
V_POS, V_OMEGA, V_NORMAL, V_ROUGH, V_ALPHA, V_BETA = 0, 3, 6, 9, 10, 13
V_CONTRIB, V_WEIGHT, V_PDF, V_COS, V_SEGLEN, V_THROUGHPUT = 16, 19, 22, 23, 24, 25
V_DELTA, V_EMISSION = 28, 29
VERTEX_FIELDS = 32
QUERY_FIELDS = 16  # pos, omega, normal, rough, alpha, beta

jit = nb.njit(cache=True, fastmath=False)


# --------------------------------------------------------------------------
# small vector helpers

@jit
def dot(ax, ay, az, bx, by, bz):
    return ax * bx + ay * by + az * bz


@jit
def normalize(x, y, z):
    n = math.sqrt(x * x + y * y + z * z)
    if n == 0.0:
        return 0.0, 0.0, 0.0
    return x / n, y / n, z / n


@jit
def cross(ax, ay, az, bx, by, bz):
    return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx


@jit
def onb(nx, ny, nz):
    """Orthonormal tangent pair for a unit normal (branchless construction)."""
    sign = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    return (1.0 + sign * nx * nx * a, sign * b, -sign * nx,
            b, sign + ny * ny * a, -ny)


@jit
def to_world(lx, ly, lz, nx, ny, nz):
    tx, ty, tz, bx, by, bz = onb(nx, ny, nz)
    return (lx * tx + ly * bx + lz * nx,
            lx * ty + ly * by + lz * ny,
            lx * tz + ly * bz + lz * nz)


@jit
def reflect(wx, wy, wz, nx, ny, nz):
    d = 2.0 * dot(wx, wy, wz, nx, ny, nz)
    return d * nx - wx, d * ny - wy, d * nz - wz


# --------------------------------------------------------------------------
# intersection

@jit
def _hit_sphere(sph, i, ox, oy, oz, dx, dy, dz, tmin, tmax):
    cx, cy, cz, r = sph[i, 0], sph[i, 1], sph[i, 2], sph[i, 3]
    px, py, pz = ox - cx, oy - cy, oz - cz
    b = dot(px, py, pz, dx, dy, dz)
    c = dot(px, py, pz, px, py, pz) - r * r
    disc = b * b - c
    if disc < 0.0:
        return -1.0
    s = math.sqrt(disc)
    t = -b - s
    if t > tmin and t < tmax:
        return t
    t = -b + s
    if t > tmin and t < tmax:
        return t
    return -1.0


@jit
def _hit_triangle(tris, i, ox, oy, oz, dx, dy, dz, tmin, tmax):
    e1x, e1y, e1z = tris[i, 3], tris[i, 4], tris[i, 5]
    e2x, e2y, e2z = tris[i, 6], tris[i, 7], tris[i, 8]
    px, py, pz = cross(dx, dy, dz, e2x, e2y, e2z)
    det = dot(e1x, e1y, e1z, px, py, pz)
    if abs(det) < 1e-14:
        return -1.0
    inv = 1.0 / det
    sx, sy, sz = ox - tris[i, 0], oy - tris[i, 1], oz - tris[i, 2]
    u = dot(sx, sy, sz, px, py, pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0
    qx, qy, qz = cross(sx, sy, sz, e1x, e1y, e1z)
    v = dot(dx, dy, dz, qx, qy, qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0
    t = dot(e2x, e2y, e2z, qx, qy, qz) * inv
    if t > tmin and t < tmax:
        return t
    return -1.0


@jit
def intersect_scene(sd, ox, oy, oz, dx, dy, dz, tmin, tmax):
    """Nearest hit as ``(t, kind, index)``; ``kind`` -1 when nothing is hit."""
    best, kind, idx = tmax, -1, -1
    for i in range(sd.spheres.shape[0]):
        t = _hit_sphere(sd.spheres, i, ox, oy, oz, dx, dy, dz, tmin, best)
        if t > 0.0:
            best, kind, idx = t, 0, i
    for i in range(sd.tris.shape[0]):
        t = _hit_triangle(sd.tris, i, ox, oy, oz, dx, dy, dz, tmin, best)
        if t > 0.0:
            best, kind, idx = t, 1, i
    return best, kind, idx


@jit
def occluded(sd, ox, oy, oz, dx, dy, dz, tmax):
    for i in range(sd.spheres.shape[0]):
        if _hit_sphere(sd.spheres, i, ox, oy, oz, dx, dy, dz, 0.0, tmax) > 0.0:
            return True
    for i in range(sd.tris.shape[0]):
        if _hit_triangle(sd.tris, i, ox, oy, oz, dx, dy, dz, 0.0, tmax) > 0.0:
            return True
    return False


@jit
def surface(sd, kind, idx, px, py, pz):
    """Front-face normal, material index, emission scale and light pdf/area."""
    if kind == 0:
        c = sd.spheres[idx]
        nx, ny, nz = normalize(px - c[0], py - c[1], pz - c[2])
        if sd.sph_flip[idx] > 0.0:
            nx, ny, nz = -nx, -ny, -nz
        return nx, ny, nz, sd.sph_mat[idx], sd.sph_escale[idx], sd.sph_lpdf[idx]
    t = sd.tris[idx]
    return t[9], t[10], t[11], sd.tri_mat[idx], sd.tri_escale[idx], sd.tri_lpdf[idx]


# --------------------------------------------------------------------------
# BSDF

@jit
def phong_exponent(rough):
    r2 = rough * rough
    if r2 * (MAX_PHONG_EXPONENT + 2.0) <= 2.0:  # also guards r2 underflowing to 0
        return MAX_PHONG_EXPONENT
    return min(max(2.0 / (rough * rough) - 2.0, 0.0), MAX_PHONG_EXPONENT)


@jit
def lobe_probability(mat):
    """Probability of picking the specular lobe (channel-max weighting)."""
    d = max(mat[0], max(mat[1], mat[2]))
    s = max(mat[3], max(mat[4], mat[5]))
    if d + s <= 0.0:
        return -1.0
    return s / (d + s)


@jit
def bsdf_eval(mat, nx, ny, nz, wox, woy, woz, wix, wiy, wiz):
    """Non-delta BSDF value (RGB) and the sampling pdf of ``wi``."""
    cos_i = dot(nx, ny, nz, wix, wiy, wiz)
    cos_o = dot(nx, ny, nz, wox, woy, woz)
    ps = lobe_probability(mat)
    if cos_i <= 0.0 or cos_o <= 0.0 or ps < 0.0:
        return 0.0, 0.0, 0.0, 0.0
    fr = mat[0] * INV_PI
    fg = mat[1] * INV_PI
    fb = mat[2] * INV_PI
    pdf = (1.0 - ps) * cos_i * INV_PI
    if ps > 0.0 and mat[6] > 0.0:
        e = phong_exponent(mat[6])
        rx, ry, rz = reflect(wox, woy, woz, nx, ny, nz)
        ca = dot(rx, ry, rz, wix, wiy, wiz)
        if ca > 0.0:
            lobe = ca ** e
            norm = (e + 2.0) * 0.5 * INV_PI * lobe
            fr += mat[3] * norm
            fg += mat[4] * norm
            fb += mat[5] * norm
            pdf += ps * (e + 1.0) * 0.5 * INV_PI * lobe
    return fr, fg, fb, pdf


@jit
def bsdf_sample(mat, nx, ny, nz, wox, woy, woz, u0, u1):
    """Sample an incident direction.

    Returns ``(wi, pdf, throughput, is_delta, ok)`` flattened into a tuple;
    ``throughput`` is ``f * cos / pdf`` (or ``beta / p_spec`` for mirrors).
    """
    ps = lobe_probability(mat)
    if ps < 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, False, False
    delta = mat[6] <= 0.0
    if u0 < ps:
        u0 = u0 / ps
        rx, ry, rz = reflect(wox, woy, woz, nx, ny, nz)
        if delta:
            if dot(nx, ny, nz, rx, ry, rz) <= 0.0:
                return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, False, False
            return rx, ry, rz, ps, mat[3] / ps, mat[4] / ps, mat[5] / ps, True, True
        e = phong_exponent(mat[6])
        ca = u0 ** (1.0 / (e + 1.0))
        sa = math.sqrt(max(0.0, 1.0 - ca * ca))
        phi = 2.0 * math.pi * u1
        wix, wiy, wiz = to_world(sa * math.cos(phi), sa * math.sin(phi), ca, rx, ry, rz)
    else:
        u0 = (u0 - ps) / (1.0 - ps)
        r = math.sqrt(u0)
        phi = 2.0 * math.pi * u1
        z = math.sqrt(max(0.0, 1.0 - u0))
        wix, wiy, wiz = to_world(r * math.cos(phi), r * math.sin(phi), z, nx, ny, nz)
    cos_i = dot(nx, ny, nz, wix, wiy, wiz)
    if cos_i <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, False, False
    if delta:
        # diffuse branch of a diffuse + mirror material
        pdf = (1.0 - ps) * cos_i * INV_PI
        if pdf <= 0.0:
            return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, False, False
        k = 1.0 / (1.0 - ps)
        return wix, wiy, wiz, pdf, mat[0] * k, mat[1] * k, mat[2] * k, False, True
    fr, fg, fb, pdf = bsdf_eval(mat, nx, ny, nz, wox, woy, woz, wix, wiy, wiz)
    if pdf <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, False, False
    k = cos_i / pdf
    return wix, wiy, wiz, pdf, fr * k, fg * k, fb * k, False, True


# --------------------------------------------------------------------------
# lights

@jit
def _pick_light(cdf, u):
    lo, hi = 0, cdf.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    return lo


@jit
def sample_light(sd, u0, u1, u2):
    """Point on an emitter: ``(p, front normal, Le, pdf per area)``."""
    j = _pick_light(sd.light_cdf, u0)
    kind = sd.light_kind[j]
    idx = sd.light_index[j]
    if kind == 0:
        c = sd.spheres[idx]
        z = 1.0 - 2.0 * u1
        r = math.sqrt(max(0.0, 1.0 - z * z))
        phi = 2.0 * math.pi * u2
        dx, dy, dz = r * math.cos(phi), r * math.sin(phi), z
        px, py, pz = c[0] + c[3] * dx, c[1] + c[3] * dy, c[2] + c[3] * dz
        if sd.sph_flip[idx] > 0.0:
            dx, dy, dz = -dx, -dy, -dz
        m = sd.materials[sd.sph_mat[idx]]
        s = sd.sph_escale[idx]
        return px, py, pz, dx, dy, dz, m[7] * s, m[8] * s, m[9] * s, sd.sph_lpdf[idx]
    t = sd.tris[idx]
    su = math.sqrt(u1)
    b1 = su * (1.0 - u2)
    b2 = su * u2
    px = t[0] + b1 * t[3] + b2 * t[6]
    py = t[1] + b1 * t[4] + b2 * t[7]
    pz = t[2] + b1 * t[5] + b2 * t[8]
    m = sd.materials[sd.tri_mat[idx]]
    s = sd.tri_escale[idx]
    return px, py, pz, t[9], t[10], t[11], m[7] * s, m[8] * s, m[9] * s, sd.tri_lpdf[idx]


@jit
def light_sample_term(sd, px, py, pz, nx, ny, nz, wox, woy, woz, mat, u0, u1, u2):
    """Light-sampling half of the MIS direct-light estimator (RGB)."""
    if sd.light_cdf.shape[0] == 0:
        return 0.0, 0.0, 0.0
    lx, ly, lz, lnx, lny, lnz, er, eg, eb, lpdf = sample_light(sd, u0, u1, u2)
    dx, dy, dz = lx - px, ly - py, lz - pz
    d2 = dot(dx, dy, dz, dx, dy, dz)
    if d2 <= 0.0:
        return 0.0, 0.0, 0.0
    dist = math.sqrt(d2)
    dx, dy, dz = dx / dist, dy / dist, dz / dist
    cos_l = -dot(lnx, lny, lnz, dx, dy, dz)
    cos_i = dot(nx, ny, nz, dx, dy, dz)
    if cos_l <= 0.0 or cos_i <= 0.0:
        return 0.0, 0.0, 0.0
    fr, fg, fb, pdf_b = bsdf_eval(mat, nx, ny, nz, wox, woy, woz, dx, dy, dz)
    if fr + fg + fb <= 0.0:
        return 0.0, 0.0, 0.0
    eps = sd.eps
    if occluded(sd, px + eps * nx, py + eps * ny, pz + eps * nz, dx, dy, dz, dist - 2.0 * eps):
        return 0.0, 0.0, 0.0
    p_light = lpdf * d2 / cos_l
    w = p_light * p_light / (p_light * p_light + pdf_b * pdf_b)
    k = cos_i * w / p_light
    return er * fr * k, eg * fg * k, eb * fb * k


@jit
def bsdf_hit_mis(sd, lpdf_area, cos_l, d2, pdf_b, delta):
    """MIS weight of an emitter reached by BSDF sampling."""
    if delta or lpdf_area <= 0.0:
        return 1.0
    p_light = lpdf_area * d2 / cos_l
    return pdf_b * pdf_b / (pdf_b * pdf_b + p_light * p_light)


# --------------------------------------------------------------------------
# spreads

@jit
def primary_spread_value(dist, cos1):
    return dist * dist / (4.0 * math.pi * max(cos1, GRAZING_COS))


@jit
def spread_term(seglen, pdf, cos_in, delta):
    if delta:
        return 0.0
    if pdf <= 0.0 or cos_in <= 0.0:
        return math.inf
    return math.sqrt(seglen * seglen / (pdf * cos_in))


# --------------------------------------------------------------------------
# path kernel

@jit
def _write_vertex(vb, i, px, py, pz, ox, oy, oz, nx, ny, nz, mat,
                  pdf, cos_in, seglen, tr, tg, tb, delta, er, eg, eb):
    vb[i, 0], vb[i, 1], vb[i, 2] = px, py, pz
    vb[i, 3], vb[i, 4], vb[i, 5] = ox, oy, oz
    vb[i, 6], vb[i, 7], vb[i, 8] = nx, ny, nz
    vb[i, V_ROUGH] = mat[6]
    for c in range(3):
        vb[i, V_ALPHA + c] = mat[c]
        vb[i, V_BETA + c] = mat[3 + c]
        vb[i, V_CONTRIB + c] = 0.0
        vb[i, V_WEIGHT + c] = 0.0
    vb[i, V_PDF] = pdf
    vb[i, V_COS] = cos_in
    vb[i, V_SEGLEN] = seglen
    vb[i, V_THROUGHPUT], vb[i, V_THROUGHPUT + 1], vb[i, V_THROUGHPUT + 2] = tr, tg, tb
    vb[i, V_DELTA] = 1.0 if delta else 0.0
    vb[i, V_EMISSION], vb[i, V_EMISSION + 1], vb[i, V_EMISSION + 2] = er, eg, eb


@jit
def trace_one(sd, ox, oy, oz, dx, dy, dz, train, unbiased, c_term, max_depth, rr_start,
              rng, vb, res):
    """Trace a single camera path.

    ``vb`` receives one row per vertex (see the ``V_*`` layout). ``res`` gets
    ``[L(3), T_query(3), a0]``: the rendering radiance without the cache
    term and the throughput the cache prediction at the query vertex must
    be multiplied with. Returns ``(n_vertices, query_index, tail_index,
    reason)``; indices are -1 when absent.
    """
    for k in range(7):
        res[k] = 0.0
    t, kind, idx = intersect_scene(sd, ox, oy, oz, dx, dy, dz, 0.0, math.inf)
    if kind < 0:
        return 0, -1, -1, ESCAPED
    px, py, pz = ox + t * dx, oy + t * dy, oz + t * dz
    fnx, fny, fnz, mi, escale, lpdf = surface(sd, kind, idx, px, py, pz)
    mat = sd.materials[mi]
    wox, woy, woz = -dx, -dy, -dz
    cos_front = dot(fnx, fny, fnz, wox, woy, woz)
    er = eg = eb = 0.0
    if cos_front > 0.0:
        er, eg, eb = mat[7] * escale, mat[8] * escale, mat[9] * escale
    sgn = 1.0 if cos_front >= 0.0 else -1.0
    nx, ny, nz = sgn * fnx, sgn * fny, sgn * fnz
    cos1 = abs(cos_front)
    a0 = primary_spread_value(t, cos1)
    thresh = c_term * a0
    res[6] = a0
    Lr, Lg, Lb = er, eg, eb
    Tr = Tg = Tb = 1.0          # rendering throughput
    Ur = Ug = Ub = 1.0          # training-path throughput (for roulette)
    _write_vertex(vb, 0, px, py, pz, wox, woy, woz, nx, ny, nz, mat,
                  1.0, cos1, t, 1.0, 1.0, 1.0, False, er, eg, eb)

    i = 0
    spread = 0.0
    rendering = True
    query = -1
    tail = -1
    reason = SPREAD
    eps = sd.eps
    while True:
        if rendering:
            at_limit = i >= max_depth - 1
            if (i > 0 and spread * spread > thresh) or at_limit:
                query = i
                res[3], res[4], res[5] = Tr, Tg, Tb
                if at_limit:
                    reason = MAX_DEPTH
                if not train or at_limit:
                    break
                rendering = False
                spread = 0.0
        else:
            if not unbiased and spread * spread > thresh:
                tail = i
                reason = SPREAD
                break
            if not unbiased and i >= max_depth - 1:
                tail = i
                reason = MAX_DEPTH
                break

        # scatter at vertex i
        px, py, pz = vb[i, 0], vb[i, 1], vb[i, 2]
        wox, woy, woz = vb[i, 3], vb[i, 4], vb[i, 5]
        nx, ny, nz = vb[i, 6], vb[i, 7], vb[i, 8]
        cr, cg, cb = light_sample_term(sd, px, py, pz, nx, ny, nz, wox, woy, woz, mat,
                                       rng.random(), rng.random(), rng.random())
        if rendering:
            Lr += Tr * cr
            Lg += Tg * cg
            Lb += Tb * cb
        wix, wiy, wiz, pdf, wr, wg, wb, delta, ok = bsdf_sample(
            mat, nx, ny, nz, wox, woy, woz, rng.random(), rng.random())
        if not ok:
            vb[i, V_CONTRIB], vb[i, V_CONTRIB + 1], vb[i, V_CONTRIB + 2] = cr, cg, cb
            reason = ABSORBED
            break
        if not rendering and unbiased:
            if i >= max_depth - 1:
                vb[i, V_CONTRIB], vb[i, V_CONTRIB + 1], vb[i, V_CONTRIB + 2] = cr, cg, cb
                reason = MAX_DEPTH
                break
            if i >= rr_start:
                q = min(1.0, max(Ur * wr, max(Ug * wg, Ub * wb)))
                if rng.random() >= q:
                    vb[i, V_CONTRIB], vb[i, V_CONTRIB + 1], vb[i, V_CONTRIB + 2] = cr, cg, cb
                    reason = ROULETTE
                    break
                wr, wg, wb = wr / q, wg / q, wb / q
        side = 1.0 if dot(nx, ny, nz, wix, wiy, wiz) >= 0.0 else -1.0
        sx, sy, sz = px + side * eps * nx, py + side * eps * ny, pz + side * eps * nz
        t, kind, idx = intersect_scene(sd, sx, sy, sz, wix, wiy, wiz, 0.0, math.inf)
        if kind < 0:
            vb[i, V_CONTRIB], vb[i, V_CONTRIB + 1], vb[i, V_CONTRIB + 2] = cr, cg, cb
            vb[i, V_WEIGHT], vb[i, V_WEIGHT + 1], vb[i, V_WEIGHT + 2] = wr, wg, wb
            reason = ESCAPED
            break
        qx, qy, qz = sx + t * wix, sy + t * wiy, sz + t * wiz
        fnx, fny, fnz, mi, escale, lpdf = surface(sd, kind, idx, qx, qy, qz)
        nmat = sd.materials[mi]
        cos_front = -dot(fnx, fny, fnz, wix, wiy, wiz)
        er = eg = eb = 0.0
        if cos_front > 0.0:
            seg = math.sqrt((qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2)
            w = bsdf_hit_mis(sd, lpdf, cos_front, seg * seg, pdf, delta)
            er, eg, eb = nmat[7] * escale, nmat[8] * escale, nmat[9] * escale
            cr += wr * w * er
            cg += wg * w * eg
            cb += wb * w * eb
            if rendering:
                Lr += Tr * wr * w * er
                Lg += Tg * wg * w * eg
                Lb += Tb * wb * w * eb
        vb[i, V_CONTRIB], vb[i, V_CONTRIB + 1], vb[i, V_CONTRIB + 2] = cr, cg, cb
        vb[i, V_WEIGHT], vb[i, V_WEIGHT + 1], vb[i, V_WEIGHT + 2] = wr, wg, wb
        if rendering:
            Tr, Tg, Tb = Tr * wr, Tg * wg, Tb * wb
        Ur, Ug, Ub = Ur * wr, Ug * wg, Ub * wb
        sgn = 1.0 if cos_front >= 0.0 else -1.0
        seglen = math.sqrt((qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2)
        cos_in = abs(cos_front)
        spread += spread_term(seglen, pdf, cos_in, delta)
        i += 1
        mat = nmat
        _write_vertex(vb, i, qx, qy, qz, -wix, -wiy, -wiz, sgn * fnx, sgn * fny, sgn * fnz,
                      mat, pdf, cos_in, seglen, Ur, Ug, Ub, delta, er, eg, eb)

    res[0], res[1], res[2] = Lr, Lg, Lb
    return i + 1, query, tail, reason


@jit
def trace_reference_one(sd, ox, oy, oz, dx, dy, dz, max_depth, rr_start, rng):
    """Unbiased path tracing (NEE + MIS + Russian roulette), no cache."""
    t, kind, idx = intersect_scene(sd, ox, oy, oz, dx, dy, dz, 0.0, math.inf)
    if kind < 0:
        return 0.0, 0.0, 0.0
    px, py, pz = ox + t * dx, oy + t * dy, oz + t * dz
    fnx, fny, fnz, mi, escale, lpdf = surface(sd, kind, idx, px, py, pz)
    mat = sd.materials[mi]
    wox, woy, woz = -dx, -dy, -dz
    cos_front = dot(fnx, fny, fnz, wox, woy, woz)
    Lr = Lg = Lb = 0.0
    if cos_front > 0.0:
        Lr, Lg, Lb = mat[7] * escale, mat[8] * escale, mat[9] * escale
    sgn = 1.0 if cos_front >= 0.0 else -1.0
    nx, ny, nz = sgn * fnx, sgn * fny, sgn * fnz
    Tr = Tg = Tb = 1.0
    eps = sd.eps
    depth = 0
    while depth < max_depth:
        cr, cg, cb = light_sample_term(sd, px, py, pz, nx, ny, nz, wox, woy, woz, mat,
                                       rng.random(), rng.random(), rng.random())
        Lr += Tr * cr
        Lg += Tg * cg
        Lb += Tb * cb
        wix, wiy, wiz, pdf, wr, wg, wb, delta, ok = bsdf_sample(
            mat, nx, ny, nz, wox, woy, woz, rng.random(), rng.random())
        if not ok:
            break
        Tr, Tg, Tb = Tr * wr, Tg * wg, Tb * wb
        if depth >= rr_start:
            q = min(1.0, max(Tr, max(Tg, Tb)))
            if rng.random() >= q:
                break
            Tr, Tg, Tb = Tr / q, Tg / q, Tb / q
        side = 1.0 if dot(nx, ny, nz, wix, wiy, wiz) >= 0.0 else -1.0
        sx, sy, sz = px + side * eps * nx, py + side * eps * ny, pz + side * eps * nz
        t, kind, idx = intersect_scene(sd, sx, sy, sz, wix, wiy, wiz, 0.0, math.inf)
        if kind < 0:
            break
        qx, qy, qz = sx + t * wix, sy + t * wiy, sz + t * wiz
        fnx, fny, fnz, mi, escale, lpdf = surface(sd, kind, idx, qx, qy, qz)
        mat = sd.materials[mi]
        cos_front = -dot(fnx, fny, fnz, wix, wiy, wiz)
        if cos_front > 0.0:
            seg2 = (qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2
            w = bsdf_hit_mis(sd, lpdf, cos_front, seg2, pdf, delta)
            Lr += Tr * w * mat[7] * escale
            Lg += Tg * w * mat[8] * escale
            Lb += Tb * w * mat[9] * escale
        sgn = 1.0 if cos_front >= 0.0 else -1.0
        nx, ny, nz = sgn * fnx, sgn * fny, sgn * fnz
        px, py, pz = qx, qy, qz
        wox, woy, woz = -wix, -wiy, -wiz
        depth += 1
    return Lr, Lg, Lb


# --------------------------------------------------------------------------
# frame kernels

@jit
def camera_ray(cam, width, height, x, y, jx, jy):
    """Pinhole ray through pixel ``(x, y)`` (row 0 at the top) with jitter."""
    # cam: position(3), forward(3), right(3), up(3), tan(fov/2)
    aspect = width / height
    sx = (2.0 * (x + jx) / width - 1.0) * cam[12] * aspect
    sy = (1.0 - 2.0 * (y + jy) / height) * cam[12]
    dx = cam[3] + sx * cam[6] + sy * cam[9]
    dy = cam[4] + sx * cam[7] + sy * cam[10]
    dz = cam[5] + sx * cam[8] + sy * cam[11]
    dx, dy, dz = normalize(dx, dy, dz)
    return cam[0], cam[1], cam[2], dx, dy, dz


@jit
def _copy_query(dst, j, vb, i):
    for f in range(QUERY_FIELDS):
        dst[j, f] = vb[i, f]


@jit
def trace_frame_kernel(sd, cam, width, height, train_mask, u_unbiased, c_term, max_depth,
                       rr_start, rng, pix_l, pix_t, pix_query, pix_has_query,
                       rec, path_offsets, path_tail, path_tail_query, path_reason,
                       path_unbiased, path_pixel):
    """Trace one path per pixel; pixels flagged in ``train_mask`` also train.

    Training vertices of path ``p`` are written to
    ``rec[path_offsets[p]:path_offsets[p + 1]]``; ``path_tail[p]`` is 1 when
    the path ended in a self-training cache query whose inputs are stored
    in ``path_tail_query[p]``.
    """
    vb = np.zeros((max_depth + 2, VERTEX_FIELDS))
    res = np.zeros(7)
    n_rec = 0
    p = 0
    path_offsets[0] = 0
    for y in range(height):
        for x in range(width):
            pix = y * width + x
            ox, oy, oz, dx, dy, dz = camera_ray(cam, width, height, x, y,
                                                rng.random(), rng.random())
            train = train_mask[pix] != 0
            unbiased = False
            if train:
                unbiased = rng.random() < u_unbiased
            n, query, tail, reason = trace_one(sd, ox, oy, oz, dx, dy, dz, train, unbiased,
                                               c_term, max_depth, rr_start, rng, vb, res)
            for c in range(3):
                pix_l[pix, c] = res[c]
                pix_t[pix, c] = res[3 + c]
            if query >= 0:
                pix_has_query[pix] = 1
                _copy_query(pix_query, pix, vb, query)
            else:
                pix_has_query[pix] = 0
            if train:
                n_train_vertices = n if tail < 0 else tail
                for i in range(n_train_vertices):
                    for f in range(VERTEX_FIELDS):
                        rec[n_rec, f] = vb[i, f]
                    n_rec += 1
                path_offsets[p + 1] = n_rec
                path_tail[p] = 1 if tail >= 0 else 0
                if tail >= 0:
                    _copy_query(path_tail_query, p, vb, tail)
                path_reason[p] = reason
                path_unbiased[p] = 1 if unbiased else 0
                path_pixel[p] = pix
                p += 1
    return n_rec


@jit
def reference_frame_kernel(sd, cam, width, height, spp, max_depth, rr_start, rng, out):
    for y in range(height):
        for x in range(width):
            pix = y * width + x
            ar = ag = ab = 0.0
            for s in range(spp):
                ox, oy, oz, dx, dy, dz = camera_ray(cam, width, height, x, y,
                                                    rng.random(), rng.random())
                r, g, b = trace_reference_one(sd, ox, oy, oz, dx, dy, dz, max_depth,
                                              rr_start, rng)
                ar += r
                ag += g
                ab += b
            out[pix, 0] = ar / spp
            out[pix, 1] = ag / spp
            out[pix, 2] = ab / spp


@jit
def primary_kernel(sd, cam, width, height, rng, jitter, emission, query, has_query):
    """Primary-hit emission and query inputs, for visualising the cache.

    Without ``jitter`` rays pass through pixel centres and ``rng`` is unused.
    """
    vb = np.zeros((1, VERTEX_FIELDS))
    for y in range(height):
        for x in range(width):
            pix = y * width + x
            jx, jy = 0.5, 0.5
            if jitter:
                jx, jy = rng.random(), rng.random()
            ox, oy, oz, dx, dy, dz = camera_ray(cam, width, height, x, y, jx, jy)
            t, kind, idx = intersect_scene(sd, ox, oy, oz, dx, dy, dz, 0.0, math.inf)
            if kind < 0:
                has_query[pix] = 0
                continue
            px, py, pz = ox + t * dx, oy + t * dy, oz + t * dz
            fnx, fny, fnz, mi, escale, lpdf = surface(sd, kind, idx, px, py, pz)
            mat = sd.materials[mi]
            cf = -dot(fnx, fny, fnz, dx, dy, dz)
            if cf > 0.0:
                for c in range(3):
                    emission[pix, c] = mat[7 + c] * escale
            sgn = 1.0 if cf >= 0.0 else -1.0
            _write_vertex(vb, 0, px, py, pz, -dx, -dy, -dz, sgn * fnx, sgn * fny, sgn * fnz,
                          mat, 1.0, abs(cf), t, 1.0, 1.0, 1.0, False, 0.0, 0.0, 0.0)
            _copy_query(query, pix, vb, 0)
            has_query[pix] = 1


@jit
def backpropagate_targets(rec, path_offsets, tail_values, targets):
    """Training targets ``c_i + w_i * target_{i+1}``, seeded by each path's tail."""
    n_paths = path_offsets.shape[0] - 1
    for p in range(n_paths):
        nr, ng, nb_ = tail_values[p, 0], tail_values[p, 1], tail_values[p, 2]
        for i in range(path_offsets[p + 1] - 1, path_offsets[p] - 1, -1):
            nr = rec[i, V_CONTRIB] + rec[i, V_WEIGHT] * nr
            ng = rec[i, V_CONTRIB + 1] + rec[i, V_WEIGHT + 1] * ng
            nb_ = rec[i, V_CONTRIB + 2] + rec[i, V_WEIGHT + 2] * nb_
            targets[i, 0], targets[i, 1], targets[i, 2] = nr, ng, nb_


# --------------------------------------------------------------------------
# Python-facing API

@dataclass
class Hit:
    t: float
    position: np.ndarray
    normal: np.ndarray
    material: int


@dataclass
class PathVertex:
    position: np.ndarray
    normal: np.ndarray
    omega: np.ndarray
    material: tuple  # (diffuse, specular, roughness)
    pdf: float
    cos_theta: float
    throughput: np.ndarray
    segment_length: float
    delta: bool


@dataclass
class TracedPath:
    vertices: list = field(default_factory=list)
    radiance: np.ndarray = field(default_factory=lambda: np.zeros(3))
    targets: np.ndarray | None = None
    termination: str = "escaped"
    query_index: int = -1
    tail_index: int = -1
    unbiased: bool = False
    a0: float = 0.0


def packed(scene) -> SceneData:
    return scene if isinstance(scene, SceneData) else scene.pack()


def camera_array(scene: Scene) -> np.ndarray:
    p, fwd, right, up = scene.camera.basis()
    return np.concatenate([p, fwd, right, up, [math.tan(math.radians(scene.camera.fov) / 2)]])


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("direction must be non-zero")
    return v / n


def intersect(scene, origin, direction):
    """Nearest hit along a ray, or ``None`` if it escapes."""
    sd = packed(scene)
    o = np.asarray(origin, float)
    d = _unit(direction)
    t, kind, idx = intersect_scene(sd, *o, *d, sd.eps, math.inf)
    if kind < 0:
        return None
    p = o + t * d
    nx, ny, nz, mi, _, _ = surface(sd, kind, idx, *p)
    return Hit(float(t), p, np.array([nx, ny, nz]), int(mi))


def sample_bsdf(material, omega_out, normal, u):
    """Sample the BSDF of ``material`` (a :class:`~nrc.scene.Material`).

    Returns ``(omega_in, pdf, throughput, is_delta)``; ``omega_in`` is None
    when the sample is rejected (below the surface or black material).
    """
    n = np.asarray(normal, float)
    if not np.linalg.norm(n) > 0:
        raise ValueError("degenerate normal")
    n = n / np.linalg.norm(n)
    wo = _unit(omega_out)
    mat = np.array([*material.diffuse, *material.specular, material.roughness, *material.emission],
                   dtype=np.float64)
    wx, wy, wz, pdf, tr, tg, tb, delta, ok = bsdf_sample(mat, *n, *wo, float(u[0]), float(u[1]))
    if not ok:
        return None, 0.0, np.zeros(3), False
    return np.array([wx, wy, wz]), float(pdf), np.array([tr, tg, tb]), bool(delta)


@jit
def _direct_light(sd, px, py, pz, nx, ny, nz, wox, woy, woz, mat, rng):
    cr, cg, cb = light_sample_term(sd, px, py, pz, nx, ny, nz, wox, woy, woz, mat,
                                   rng.random(), rng.random(), rng.random())
    wix, wiy, wiz, pdf, wr, wg, wb, delta, ok = bsdf_sample(
        mat, nx, ny, nz, wox, woy, woz, rng.random(), rng.random())
    if ok:
        eps = sd.eps
        side = 1.0 if dot(nx, ny, nz, wix, wiy, wiz) >= 0.0 else -1.0
        sx, sy, sz = px + side * eps * nx, py + side * eps * ny, pz + side * eps * nz
        t, kind, idx = intersect_scene(sd, sx, sy, sz, wix, wiy, wiz, 0.0, math.inf)
        if kind >= 0:
            qx, qy, qz = sx + t * wix, sy + t * wiy, sz + t * wiz
            fnx, fny, fnz, mi, escale, lpdf = surface(sd, kind, idx, qx, qy, qz)
            cos_l = -dot(fnx, fny, fnz, wix, wiy, wiz)
            if cos_l > 0.0:
                m = sd.materials[mi]
                d2 = (qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2
                w = bsdf_hit_mis(sd, lpdf, cos_l, d2, pdf, delta)
                cr += wr * w * m[7] * escale
                cg += wg * w * m[8] * escale
                cb += wb * w * m[9] * escale
    return cr, cg, cb


@jit
def _direct_light_many(sd, px, py, pz, nx, ny, nz, wox, woy, woz, mat, rng, n):
    ar = ag = ab = 0.0
    for _ in range(n):
        r, g, b = _direct_light(sd, px, py, pz, nx, ny, nz, wox, woy, woz, mat, rng)
        ar += r
        ag += g
        ab += b
    return ar / n, ag / n, ab / n


def next_event_estimate(scene, position, normal, omega_out, material, rng, n_samples: int = 1):
    """MIS direct-light estimate at a surface point.

    One light sample (emitter chosen proportional to power, uniform on its
    area) and one BSDF sample per iteration, combined with the power
    heuristic. Averages ``n_samples`` iterations.
    """
    sd = packed(scene)
    mat = np.array([*material.diffuse, *material.specular, material.roughness, *material.emission],
                   dtype=np.float64)
    n = _unit(normal)
    wo = _unit(omega_out)
    if np.dot(n, wo) < 0:
        n = -n
    out = _direct_light_many(sd, *np.asarray(position, float), *n, *wo, mat, rng, int(n_samples))
    return np.array(out)


def area_spread(positions, pdfs, cosines, delta=None) -> float:
    """Accumulated footprint of a subpath ``x_1 .. x_n``.

    ``pdfs[i]`` and ``cosines[i]`` belong to the segment arriving at vertex
    ``i`` (entry 0 is unused). Zero pdf or cosine gives ``inf``; segments
    flagged in ``delta`` contribute nothing.
    """
    x = np.asarray(positions, float)
    if len(x) < 2:
        raise ValueError("area spread needs at least two vertices")
    total = 0.0
    for i in range(1, len(x)):
        d = bool(delta[i]) if delta is not None else False
        total += spread_term(float(np.linalg.norm(x[i - 1] - x[i])), float(pdfs[i]),
                             abs(float(cosines[i])), d)
    return total * total


def primary_spread(camera_pos, hit_pos, cos_theta1) -> float:
    """Camera footprint ``|x0 - x1|^2 / (4 pi cos theta_1)``, cosine clamped at 0.01."""
    dist = float(np.linalg.norm(np.asarray(camera_pos, float) - np.asarray(hit_pos, float)))
    return primary_spread_value(dist, abs(float(cos_theta1)))


def trace_path(scene, cache, origin, direction, rng, train: bool = False,
               unbiased: bool | None = None, c: float = 0.01, u: float = 1.0 / 16,
               max_depth: int = 32, rr_start: int = 3, self_train: bool = True) -> TracedPath:
    """Trace one path and resolve its cache queries.

    ``cache`` needs a ``query(RadianceQuery)`` method (or is None, meaning
    zero cached radiance). In training mode the per-vertex targets are
    filled in, seeded by the cache at the tail unless the path is one of
    the unbiased roulette-only ones.
    """
    from .cache import RadianceQuery

    sd = packed(scene)
    if unbiased is None:
        unbiased = bool(train and rng.random() < u)
    vb = np.zeros((max_depth + 2, VERTEX_FIELDS))
    res = np.zeros(7)
    o = np.asarray(origin, float)
    d = _unit(direction)
    n, query, tail, reason = trace_one(sd, *o, *d, bool(train), bool(unbiased), float(c),
                                       int(max_depth), int(rr_start), rng, vb, res)

    def lookup(row):
        if cache is None:
            return np.zeros(3)
        q = RadianceQuery(row[V_POS:V_POS + 3], row[V_OMEGA:V_OMEGA + 3],
                          row[V_NORMAL:V_NORMAL + 3], row[V_ROUGH],
                          row[V_ALPHA:V_ALPHA + 3], row[V_BETA:V_BETA + 3])
        return np.asarray(cache.query(q))[0]

    radiance = res[:3].copy()
    if query >= 0:
        radiance += res[3:6] * lookup(vb[query])
    path = TracedPath(radiance=radiance, termination=REASONS[reason], query_index=query,
                      tail_index=tail, unbiased=bool(unbiased), a0=float(res[6]))
    for i in range(n):
        row = vb[i]
        path.vertices.append(PathVertex(
            position=row[V_POS:V_POS + 3].copy(), normal=row[V_NORMAL:V_NORMAL + 3].copy(),
            omega=row[V_OMEGA:V_OMEGA + 3].copy(),
            material=(row[V_ALPHA:V_ALPHA + 3].copy(), row[V_BETA:V_BETA + 3].copy(), row[V_ROUGH]),
            pdf=float(row[V_PDF]), cos_theta=float(row[V_COS]),
            throughput=row[V_THROUGHPUT:V_THROUGHPUT + 3].copy(),
            segment_length=float(row[V_SEGLEN]), delta=bool(row[V_DELTA]),
        ))
    if train and n > 0:
        m = n if tail < 0 else tail
        tail_value = np.zeros((1, 3))
        if tail >= 0 and self_train:
            tail_value[0] = lookup(vb[tail])
        targets = np.zeros((m, 3))
        backpropagate_targets(np.ascontiguousarray(vb[:m]), np.array([0, m]), tail_value, targets)
        path.targets = targets
    return path
