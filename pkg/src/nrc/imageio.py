"""PFM (float) and PPM (8-bit, gamma 2.2) image files.

Images are ``(height, width, 3)`` arrays with row 0 at the top.
"""

from __future__ import annotations

import numpy as np

GAMMA = 2.2


def _rgb(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


def write_pfm(path, image) -> None:
    """Little-endian colour PFM; scanlines are stored bottom to top."""
    img = _rgb(image)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        tokens = []
        while len(tokens) < 4:
            line = fh.readline()
            if not line:
                raise ValueError("truncated PFM header")
            tokens += line.split()
        kind, w, h, scale = tokens[0], int(tokens[1]), int(tokens[2]), float(tokens[3])
        if kind != b"PF":
            raise ValueError(f"only colour PFM is supported, got {kind!r}")
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h * 3:
        raise ValueError("PFM payload size does not match header")
    return data.reshape(h, w, 3)[::-1].astype(np.float32)


def to_8bit(image) -> np.ndarray:
    img = np.clip(np.nan_to_num(_rgb(image), nan=0.0), 0.0, 1.0)
    return np.round(255.0 * img ** (1.0 / GAMMA)).astype(np.uint8)


def write_ppm(path, image) -> None:
    """Binary P6 with values ``round(255 * clamp(x)^(1/2.2))``."""
    img = to_8bit(image)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        tokens = []
        while len(tokens) < 4:
            line = fh.readline()
            if not line:
                raise ValueError("truncated PPM header")
            tokens += line.split()
        if tokens[0] != b"P6" or int(tokens[3]) != 255:
            raise ValueError("only 8-bit P6 is supported")
        w, h = int(tokens[1]), int(tokens[2])
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    return data.reshape(h, w, 3)
