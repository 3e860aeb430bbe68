"""Fixed-width fully fused MLP: 64 -> 64 x5 (ReLU) -> 3, no biases.

Batches are row-major ``(N, 64)``; weight matrices follow the usual
``out x in`` convention so that a layer computes ``M @ h`` per element.

:func:`infer` walks the batch in chunks of :data:`CHUNK` rows. Each chunk
streams through all six matrices while its activations stay in two small
cache-resident buffers, so the only large-memory traffic is reading the
inputs and writing the outputs. :func:`naive_infer` is the plain
layer-at-a-time formulation and serves as the oracle for the fused path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numba as nb
import numpy as np

WIDTH = 64
N_OUT = 3
N_HIDDEN = 5
N_MATRICES = N_HIDDEN + 1
CHUNK = 128

SNAPSHOT_MAGIC = 0x4E524357  # "WCRN" little-endian
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4I")

SHAPES = tuple([(WIDTH, WIDTH)] * N_HIDDEN + [(N_OUT, WIDTH)])


@dataclass
class NetworkWeights:
    """The six bias-free weight matrices ``M0..M5``."""

    matrices: list[np.ndarray]

    def __post_init__(self):
        if len(self.matrices) != N_MATRICES:
            raise ValueError(f"expected {N_MATRICES} matrices, got {len(self.matrices)}")
        for i, (m, shape) in enumerate(zip(self.matrices, SHAPES)):
            if m.shape != shape:
                raise ValueError(f"matrix {i} has shape {m.shape}, expected {shape}")

    @classmethod
    def zeros(cls, dtype=np.float32) -> "NetworkWeights":
        return cls([np.zeros(s, dtype=dtype) for s in SHAPES])

    @classmethod
    def glorot(cls, rng: np.random.Generator, dtype=np.float32) -> "NetworkWeights":
        """Uniform init in +-sqrt(6 / (fan_in + fan_out)) per matrix."""
        mats = []
        for rows, cols in SHAPES:
            limit = np.sqrt(6.0 / (rows + cols))
            mats.append(rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype))
        return cls(mats)

    @property
    def dtype(self):
        return self.matrices[0].dtype

    def copy(self) -> "NetworkWeights":
        return NetworkWeights([m.copy() for m in self.matrices])

    def astype(self, dtype) -> "NetworkWeights":
        return NetworkWeights([m.astype(dtype) for m in self.matrices])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(m)) for m in self.matrices)

    def __iter__(self):
        return iter(self.matrices)

    def __getitem__(self, i):
        return self.matrices[i]


@dataclass
class ActivationStash:
    """Post-activation values kept by the forward pass for backprop.

    ``layers[0]`` is the input, ``layers[1..5]`` the hidden ReLU outputs
    (all ``(N, 64)``), and ``output`` the linear ``(N, 3)`` result.
    """

    layers: list[np.ndarray] = field(default_factory=list)
    output: np.ndarray | None = None


@nb.njit(cache=True, fastmath=True)
def _relu_inplace(a, m):
    for i in range(m):
        for j in range(a.shape[1]):
            if a[i, j] < 0.0:
                a[i, j] = 0.0


@nb.njit(cache=True)
def _fused_forward(x, w0, w1, w2, w3, w4, w5, out, chunk):
    # Weights arrive transposed (in x out) so that each layer is chunk @ W.
    n = x.shape[0]
    a = np.empty((chunk, WIDTH), dtype=x.dtype)
    b = np.empty((chunk, WIDTH), dtype=x.dtype)
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        if m == chunk:
            ha, hb = a, b
        else:
            ha, hb = a[:m], b[:m]
        np.dot(x[start:start + m], w0, ha)
        _relu_inplace(ha, m)
        np.dot(ha, w1, hb)
        _relu_inplace(hb, m)
        np.dot(hb, w2, ha)
        _relu_inplace(ha, m)
        np.dot(ha, w3, hb)
        _relu_inplace(hb, m)
        np.dot(hb, w4, ha)
        _relu_inplace(ha, m)
        np.dot(ha, w5, out[start:start + m])
    return out


def _as_batch(inputs, dtype):
    x = np.ascontiguousarray(inputs, dtype=dtype)
    if x.ndim != 2 or x.shape[1] != WIDTH:
        raise ValueError(f"inputs must have shape (N, {WIDTH}), got {x.shape}")
    return x


def infer(w: NetworkWeights, inputs, chunk: int = CHUNK) -> np.ndarray:
    """Fused forward pass over an ``(N, 64)`` batch, returning ``(N, 3)``.

    The output layer is linear. Computation happens in the weights' dtype.
    """
    dtype = w.dtype
    x = _as_batch(inputs, dtype)
    out = np.empty((x.shape[0], N_OUT), dtype=dtype)
    if x.shape[0] == 0:
        return out
    wt = [np.ascontiguousarray(m.T) for m in w.matrices]
    return _fused_forward(x, *wt, out, int(chunk))


def naive_infer(w: NetworkWeights, inputs) -> np.ndarray:
    """Unfused reference: one full-batch matrix product per layer."""
    h = _as_batch(inputs, w.dtype)
    for m in w.matrices[:-1]:
        h = np.maximum(h @ m.T, 0.0)
    return h @ w.matrices[-1].T


def forward(w: NetworkWeights, inputs) -> ActivationStash:
    """Forward pass that keeps every post-activation for :func:`backward`."""
    h = _as_batch(inputs, w.dtype)
    stash = ActivationStash(layers=[h])
    for m in w.matrices[:-1]:
        h = np.maximum(h @ m.T, 0.0)
        stash.layers.append(h)
    stash.output = h @ w.matrices[-1].T
    return stash


def backward(w: NetworkWeights, stash: ActivationStash, dl_dout) -> NetworkWeights:
    """Reverse-mode pass; returns dL/dM_i for all six matrices."""
    delta = np.asarray(dl_dout, dtype=w.dtype)
    grads = [None] * N_MATRICES
    for i in range(N_MATRICES - 1, -1, -1):
        h_in = stash.layers[i]
        grads[i] = delta.T @ h_in
        if i > 0:
            delta = (delta @ w.matrices[i]) * (h_in > 0.0)
    return NetworkWeights(grads)


def train_pass(w: NetworkWeights, inputs, dl_dout) -> NetworkWeights:
    """Weight gradients for a batch given the loss gradient at the output."""
    dl_dout = np.asarray(dl_dout)
    x = _as_batch(inputs, w.dtype)
    if dl_dout.shape != (x.shape[0], N_OUT):
        raise ValueError(f"dl_dout shape {dl_dout.shape} does not match batch {x.shape[0]}")
    return backward(w, forward(w, x), dl_dout)


def write_snapshot(fh, w: NetworkWeights) -> None:
    """Write the binary snapshot: 4 x uint32 header then float32 matrices."""
    fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, WIDTH, N_OUT))
    for m in w.matrices:
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_snapshot(fh) -> NetworkWeights:
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ValueError("truncated weight snapshot header")
    magic, version, width, n_out = _HEADER.unpack(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {magic:#x}")
    if version != SNAPSHOT_VERSION or width != WIDTH or n_out != N_OUT:
        raise ValueError(f"unsupported snapshot (version={version}, width={width}, out={n_out})")
    mats = []
    for shape in SHAPES:
        count = shape[0] * shape[1]
        buf = fh.read(4 * count)
        if len(buf) != 4 * count:
            raise ValueError("truncated weight snapshot body")
        mats.append(np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32))
    return NetworkWeights(mats)


def save_weights(path, w: NetworkWeights) -> None:
    with open(path, "wb") as fh:
        write_snapshot(fh, w)


def load_weights(path) -> NetworkWeights:
    with open(path, "rb") as fh:
        return read_snapshot(fh)
