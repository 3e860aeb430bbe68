"""Input encoding for the radiance cache network.

A query (position, scattered direction, normal, roughness, diffuse and
specular reflectance) is mapped to a 64-wide vector:

    ==========================  ===========================  ====
    position x                  tri-wave frequency encoding   36
    scattered direction omega   one-blob of spherical coords   8
    surface normal n            one-blob of spherical coords   8
    roughness r                 one-blob of 1 - exp(-r)        4
    diffuse reflectance         identity                       3
    specular reflectance        identity                       3
    padding                     constant 1.0                   2
    ==========================  ===========================  ====

The quartic kernel and the triangle wave stand in for the Gaussian and the
sine; both are cheap and need no transcendental functions.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

N_FREQUENCIES = 12
N_BLOBS = 4
INPUT_WIDTH = 64
SEMANTIC_WIDTH = 62

# (name, width) of every encoded block, in output order.
LAYOUT = (
    ("position", 3 * N_FREQUENCIES),
    ("direction", 2 * N_BLOBS),
    ("normal", 2 * N_BLOBS),
    ("roughness", N_BLOBS),
    ("diffuse", 3),
    ("specular", 3),
    ("padding", INPUT_WIDTH - SEMANTIC_WIDTH),
)


def _offsets():
    out, start = {}, 0
    for name, width in LAYOUT:
        out[name] = slice(start, start + width)
        start += width
    return out


SLICES = _offsets()


def tri(x):
    """Triangle wave with period 2: ``2 |x mod 2 - 1| - 1`` (floored mod)."""
    x = np.asarray(x, dtype=np.float64)
    return 2.0 * np.abs(np.mod(x, 2.0) - 1.0) - 1.0


def quartic(x):
    """Compact quartic kernel ``15/16 (1 - x^2)^2`` on [-1, 1], zero outside.

    Integrates to one over its support.
    """
    x = np.asarray(x, dtype=np.float64)
    inside = np.abs(x) <= 1.0
    return np.where(inside, 0.9375 * (1.0 - x * x) ** 2, 0.0)


def one_blob(v, k: int = N_BLOBS):
    """One-blob encode scalars in [0, 1] into ``k`` quartic bins.

    Bin ``i`` is centred at ``(i + 0.5) / k`` with half-width ``1 / k``.
    Inputs outside [0, 1] are clamped. Returns shape ``v.shape + (k,)``.
    """
    if k < 1:
        raise ValueError(f"need at least one blob, got k={k}")
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    centers = (np.arange(k) + 0.5) / k
    return quartic((v[..., None] - centers) * k)


def freq_encode(v, n_frequencies: int = N_FREQUENCIES):
    """Triangle-wave frequency encoding: entry ``d`` is ``tri(2**d * v)``."""
    v = np.asarray(v, dtype=np.float64)
    scales = 2.0 ** np.arange(n_frequencies)
    return tri(v[..., None] * scales)


def sph(direction):
    """Spherical coordinates of unit vectors, normalised to [0, 1]^2.

    Returns ``(theta / pi, (phi + pi) / (2 pi))`` in the last axis with
    ``theta = arccos(z)`` and ``phi = atan2(y, x)``. Non-unit vectors are
    renormalised; a zero vector raises ``ValueError``.
    """
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("cannot convert a zero vector to spherical coordinates")
    d = d / norm
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    return np.stack([theta / np.pi, (phi + np.pi) / (2.0 * np.pi)], axis=-1)


def normalize_positions(x, bounds):
    """Map world positions into [0, 1]^3 using an axis-aligned box ``(lo, hi)``."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    extent = hi - lo
    if np.any(extent <= 0.0):
        raise ValueError(f"degenerate scene bounds {lo} .. {hi}")
    return (np.asarray(x, dtype=np.float64) - lo) / extent


def _safe_unit(v):
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    fallback = np.zeros_like(v)
    fallback[..., 2] = 1.0
    return np.where(norm > 0.0, v / np.where(norm > 0.0, norm, 1.0), fallback)


@nb.njit(cache=True)
def _blob_row(out, row, col, v, k):
    v = min(max(v, 0.0), 1.0)
    for i in range(k):
        t = (v - (i + 0.5) / k) * k
        out[row, col + i] = 0.9375 * (1.0 - t * t) ** 2 if abs(t) <= 1.0 else 0.0


@nb.njit(cache=True)
def _sph_blob_row(out, row, col, x, y, z):
    n = math.sqrt(x * x + y * y + z * z)
    if n > 0.0:
        x, y, z = x / n, y / n, z / n
    else:
        x, y, z = 0.0, 0.0, 1.0
    theta = math.acos(min(max(z, -1.0), 1.0))
    phi = math.atan2(y, x)
    _blob_row(out, row, col, theta / math.pi, N_BLOBS)
    _blob_row(out, row, col + N_BLOBS, (phi + math.pi) / (2.0 * math.pi), N_BLOBS)


@nb.njit(cache=True)
def _encode_kernel(xn, omega, normal, rough, alpha, beta, out):
    for r in range(xn.shape[0]):
        col = 0
        for a in range(3):
            s = xn[r, a]
            for d in range(N_FREQUENCIES):
                m = (s * 2.0**d) % 2.0
                out[r, col] = 2.0 * abs(m - 1.0) - 1.0
                col += 1
        _sph_blob_row(out, r, col, omega[r, 0], omega[r, 1], omega[r, 2])
        col += 2 * N_BLOBS
        _sph_blob_row(out, r, col, normal[r, 0], normal[r, 1], normal[r, 2])
        col += 2 * N_BLOBS
        _blob_row(out, r, col, 1.0 - math.exp(-max(rough[r], 0.0)), N_BLOBS)
        col += N_BLOBS
        for c in range(3):
            out[r, col + c] = alpha[r, c]
            out[r, col + 3 + c] = beta[r, c]
        col += 6
        while col < INPUT_WIDTH:
            out[r, col] = 1.0
            col += 1


def _rows(v, n, width):
    return np.ascontiguousarray(np.asarray(v, dtype=np.float64).reshape(n, width))


def encode_query(q, bounds, dtype=np.float32) -> np.ndarray:
    """Encode a batch of radiance queries into ``(N, 64)`` network inputs.

    ``q`` is anything exposing ``x``, ``omega``, ``normal`` (``(N, 3)``),
    ``roughness`` (``(N,)``), ``alpha`` and ``beta`` (``(N, 3)``), such as
    :class:`nrc.cache.RadianceQuery`. ``bounds`` is the scene's ``(lo, hi)``
    box used to bring positions into [0, 1]^3. Degenerate normals and
    directions fall back to +z instead of raising.

    This is a compiled row-at-a-time version of :func:`encode_query_numpy`.
    """
    x = np.atleast_2d(np.asarray(q.x, dtype=np.float64))
    n = x.shape[0]
    out = np.empty((n, INPUT_WIDTH), dtype=np.float64)
    if n:
        xn = np.ascontiguousarray(normalize_positions(x, bounds))
        _encode_kernel(xn, _rows(q.omega, n, 3), _rows(q.normal, n, 3), _rows(q.roughness, n, 1)[:, 0],
                       _rows(q.alpha, n, 3), _rows(q.beta, n, 3), out)
    return out.astype(dtype, copy=False)


def encode_query_numpy(q, bounds, dtype=np.float32) -> np.ndarray:
    """Vectorised composition of the primitives above; same result as :func:`encode_query`."""
    x = np.atleast_2d(np.asarray(q.x, dtype=np.float64))
    n = x.shape[0]
    out = np.empty((n, INPUT_WIDTH), dtype=np.float64)

    xn = normalize_positions(x, bounds)
    out[:, SLICES["position"]] = freq_encode(xn).reshape(n, -1)
    omega = _safe_unit(np.atleast_2d(q.omega))
    normal = _safe_unit(np.atleast_2d(q.normal))
    out[:, SLICES["direction"]] = one_blob(sph(omega)).reshape(n, -1)
    out[:, SLICES["normal"]] = one_blob(sph(normal)).reshape(n, -1)
    r = np.asarray(q.roughness, dtype=np.float64).reshape(n)
    out[:, SLICES["roughness"]] = one_blob(1.0 - np.exp(-np.maximum(r, 0.0)))
    out[:, SLICES["diffuse"]] = np.atleast_2d(q.alpha)
    out[:, SLICES["specular"]] = np.atleast_2d(q.beta)
    out[:, SLICES["padding"]] = 1.0
    return out.astype(dtype, copy=False)
