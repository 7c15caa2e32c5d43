"""Minimal image and artifact I/O.

PGM/PPM (P2, P3, P5, P6) are handled natively; PNG goes through Pillow when
it is installed.  Images are returned as float64 arrays scaled to ``[0, 1]``
(``(m, n)`` gray or ``(m, n, 3)`` RGB).  Writers go through a temp file and
``os.replace`` so an artifact either exists completely or not at all.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "read_image",
    "write_image",
    "read_pnm",
    "write_pnm",
    "atomic_write",
    "write_json",
    "write_csv",
    "CSV_SCHEMA_LINE",
]

CSV_SCHEMA_LINE = "# schema=1"


def atomic_write(path, data, mode="w"):
    """Write ``data`` (str or bytes) to ``path`` via temp-and-rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    """CSV with a leading ``# schema=1`` line."""
    buf = io.StringIO()
    buf.write(CSV_SCHEMA_LINE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    atomic_write(path, buf.getvalue())


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


# ----------------------------------------------------------------------- PNM


def _tokens(data: bytes):
    """Yield header tokens and the byte offset after the last one."""
    pos = 0
    while True:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        yield data[start:pos], pos


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    toks = _tokens(data)
    magic = next(toks)[0]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ValueError(f"unsupported PNM type {magic!r}")
    width = int(next(toks)[0])
    height = int(next(toks)[0])
    maxval, end = next(toks)
    maxval = int(maxval)
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * channels
    if magic in (b"P2", b"P3"):
        vals = np.array(data[end:].split()[:count], dtype=np.float64)
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        vals = np.frombuffer(data, dtype=dtype, count=count, offset=end + 1).astype(np.float64)
    if vals.size != count:
        raise ValueError("PNM pixel data truncated")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return vals.reshape(shape) / maxval


def write_pnm(path, img, maxval=255):
    """Binary PGM (2-D) or PPM (RGB) from an image in ``[0, 1]``."""
    a = np.asarray(img, dtype=np.float64)
    magic = {2: b"P5", 3: b"P6"}[a.ndim]
    q = np.round(np.clip(a, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    header = b"%s\n%d %d\n%d\n" % (magic, a.shape[1], a.shape[0], maxval)
    atomic_write(path, header + q.astype(dtype).tobytes(), mode="wb")


# ---------------------------------------------------------------------- public


def read_image(path) -> np.ndarray:
    """Read PGM/PPM natively, anything else (PNG) through Pillow."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic in (b"P2", b"P3", b"P5", b"P6"):
        return read_pnm(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ValueError(f"{path}: only PGM/PPM are supported without Pillow") from exc
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I"):
            a = np.asarray(im, dtype=np.float64) / 65535.0
        elif mode in ("L", "RGB"):
            a = np.asarray(im, dtype=np.float64) / 255.0
        else:
            a = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return a


def write_image(path, img):
    """Write by extension: ``.png`` via Pillow, otherwise 16-bit PGM/PPM."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        a = np.round(np.clip(np.asarray(img), 0.0, 1.0) * 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(a).save(buf, format="PNG")
        atomic_write(path, buf.getvalue(), mode="wb")
    else:
        write_pnm(path, img, maxval=65535)
