"""Portable FloatMap I/O for HDR images.

Only the color variant is supported: header "PF", ASCII width/height,
scale line "-1.0" marking little-endian floats, then rows bottom to top
as float32 RGB triples. Round-trips are bitwise exact.
"""

from __future__ import annotations

import numpy as np

__all__ = ["PfmFormatError", "read_pfm", "write_pfm"]


class PfmFormatError(ValueError):
    """Malformed or unsupported PFM content."""


def write_pfm(image: np.ndarray, path) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise PfmFormatError("expected an HxWx3 image")
    h, w = image.shape[:2]
    data = np.flipud(image.astype("<f4", copy=False))
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(data).tobytes())


def _read_token(f) -> bytes:
    """One whitespace-delimited header token."""
    tok = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise PfmFormatError("truncated header")
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = _read_token(f)
        if kind == b"Pf":
            raise PfmFormatError("grayscale PFM not supported, need color 'PF'")
        if kind != b"PF":
            raise PfmFormatError(f"bad PFM magic {kind!r}")
        try:
            w = int(_read_token(f))
            h = int(_read_token(f))
            scale = float(_read_token(f))
        except ValueError as exc:
            raise PfmFormatError(f"malformed PFM header: {exc}") from exc
        if w <= 0 or h <= 0:
            raise PfmFormatError("nonpositive dimensions")
        if scale >= 0:
            raise PfmFormatError("big-endian PFM (scale >= 0) not supported")
        count = w * h * 3
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise PfmFormatError("truncated pixel data")
        data = np.frombuffer(raw, dtype="<f4").reshape(h, w, 3)
    data = np.flipud(data).copy()
    if scale != -1.0:
        data *= -scale
    return data
