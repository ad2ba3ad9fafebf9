"""Portable graymap (PGM) input/output and field-to-image helpers.

PGM is the debug export format for luminance images, band responses and
importance heatmaps: trivially diffable, viewable everywhere, and
writable without an imaging dependency.  Binary P5 is written; both P5
and P2 are read.
"""

from __future__ import annotations

import numpy as np

from .errors import AssetError


def write_pgm(path: str, image: np.ndarray, maxval: int = 255) -> None:
    """Write a 2D array of values in [0, 1] as a binary PGM file."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise AssetError(f"PGM export needs a 2D array, got shape {arr.shape}")
    if not (1 <= maxval <= 65535):
        raise AssetError(f"PGM maxval out of range: {maxval}")
    quant = np.clip(np.rint(arr * maxval), 0, maxval)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    if maxval < 256:
        payload = quant.astype(np.uint8).tobytes()
    else:
        payload = quant.astype(">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def read_pgm(path: str) -> np.ndarray:
    """Read a P5 or P2 PGM file into a float array scaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    # Header tokens may be separated by arbitrary whitespace and comments.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if pos > start:
            tokens.append(data[start:pos])
    if len(tokens) < 4 or tokens[0] not in (b"P2", b"P5"):
        raise AssetError(f"not a PGM file: {path}")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise AssetError(f"bad PGM header in {path}") from exc
    if width <= 0 or height <= 0 or maxval <= 0:
        raise AssetError(f"bad PGM dimensions in {path}")
    if tokens[0] == b"P2":
        values = np.array(data[pos:].split(), dtype=np.float64)
    else:
        pos += 1  # single whitespace byte after maxval
        if maxval < 256:
            values = np.frombuffer(data, dtype=np.uint8, offset=pos).astype(np.float64)
        else:
            values = np.frombuffer(data, dtype=">u2", offset=pos).astype(np.float64)
    if values.size < width * height:
        raise AssetError(f"truncated PGM payload in {path}")
    values = values[: width * height].reshape(height, width)
    return values / float(maxval)


def normalized(field: np.ndarray) -> np.ndarray:
    """Affinely map an arbitrary finite field to [0, 1] for export.

    A constant field maps to all zeros so "nothing here" renders black.
    """
    arr = np.asarray(field, dtype=np.float64)
    lo = float(arr.min())
    hi = float(arr.max())
    if hi <= lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)
