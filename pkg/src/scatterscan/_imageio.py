"""Float image I/O: PFM for data, PNG for previews."""

from __future__ import annotations

import numpy as np
from PIL import Image


def write_pfm(path, data: np.ndarray) -> None:
    """Write a single-channel float32 PFM (little-endian, bottom-up rows)."""
    a = np.asarray(data, dtype=np.float32)
    if a.ndim != 2:
        raise ValueError("write_pfm expects a 2-D array")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM written by write_pfm (or compatible)."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline())
        count = w * h
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError(f"{path}: truncated PFM payload")
        dtype = "<f4" if scale < 0 else ">f4"
        a = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return np.ascontiguousarray(a[::-1]).astype(np.float32)


def write_png_preview(path, data: np.ndarray, vmax: float) -> None:
    """8-bit linear tone map of a float image: 0..vmax onto 0..255."""
    a = np.asarray(data, dtype=np.float64)
    if vmax <= 0:
        raise ValueError("vmax must be positive")
    b = np.clip(a / vmax, 0.0, 1.0)
    Image.fromarray((b * 255.0 + 0.5).astype(np.uint8), mode="L").save(path)
