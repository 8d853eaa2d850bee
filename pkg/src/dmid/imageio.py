"""Minimal image file I/O.

PGM (P5, 8- or 16-bit) and a tiny RAW-F64 planar format are the canonical
test formats; both round-trip bit-exactly. PNG (8-bit gray/RGB, via Pillow)
is a convenience import/export. Format is picked by file extension.
"""

from __future__ import annotations

import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .errors import ImageFormatError
from .transform import PixelImage

RAW_MAGIC = b"RAWF64\n"


def read_pgm(path) -> PixelImage:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval <= 0 or maxval >= 65536:
        raise ImageFormatError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    needed = width * height * dtype.itemsize
    if len(raw) - m.end() < needed:
        raise ImageFormatError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(raw, dtype=dtype, count=width * height, offset=m.end())
    data = pixels.astype(np.float64).reshape(1, height, width)
    return PixelImage(data=data, value_range=(0.0, float(maxval)))


def write_pgm(path, image: PixelImage):
    if image.channels != 1:
        raise ImageFormatError("PGM supports a single channel")
    maxval = int(round(image.value_range[1]))
    if maxval <= 0 or maxval >= 65536:
        raise ImageFormatError(f"cannot express range {image.value_range} in PGM")
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    pixels = np.clip(np.rint(image.data[0]), 0, maxval).astype(dtype)
    header = f"P5\n{image.width} {image.height}\n{maxval}\n".encode()
    _atomic_write(path, header + pixels.tobytes())


def read_raw_f64(path) -> PixelImage:
    raw = Path(path).read_bytes()
    if not raw.startswith(RAW_MAGIC):
        raise ImageFormatError(f"{path}: missing RAWF64 magic")
    try:
        head, rest = raw[len(RAW_MAGIC):].split(b"\n", 1)
        c, h, w, lo, hi = head.decode().split()
        c, h, w = int(c), int(h), int(w)
        lo, hi = float(lo), float(hi)
    except ValueError as e:
        raise ImageFormatError(f"{path}: malformed RAWF64 header") from e
    if len(rest) < c * h * w * 8:
        raise ImageFormatError(f"{path}: truncated RAWF64 payload")
    data = np.frombuffer(rest, dtype="<f8", count=c * h * w)
    return PixelImage(data=data.reshape(c, h, w).copy(), value_range=(lo, hi))


def write_raw_f64(path, image: PixelImage):
    lo, hi = image.value_range
    header = (RAW_MAGIC
              + f"{image.channels} {image.height} {image.width} {lo!r} {hi!r}\n".encode())
    payload = np.ascontiguousarray(image.data, dtype="<f8").tobytes()
    _atomic_write(path, header + payload)


def read_png(path) -> PixelImage:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P") else "L")
        arr = np.asarray(im, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, -1, 0)
    return PixelImage(data=arr, value_range=(0.0, 255.0))


def write_png(path, image: PixelImage):
    from PIL import Image

    lo, hi = image.value_range
    scaled = np.clip((image.data - lo) / (hi - lo) * 255.0, 0, 255)
    arr = np.rint(scaled).astype(np.uint8)
    if image.channels == 1:
        im = Image.fromarray(arr[0], mode="L")
    elif image.channels == 3:
        im = Image.fromarray(np.moveaxis(arr, 0, -1), mode="RGB")
    else:
        raise ImageFormatError(f"PNG supports 1 or 3 channels, got {image.channels}")
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    os.close(fd)
    try:
        im.save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


_READERS = {".pgm": read_pgm, ".raw": read_raw_f64, ".f64": read_raw_f64, ".png": read_png}
_WRITERS = {".pgm": write_pgm, ".raw": write_raw_f64, ".f64": write_raw_f64, ".png": write_png}


def load_image(path) -> PixelImage:
    ext = Path(path).suffix.lower()
    if ext not in _READERS:
        raise ImageFormatError(f"unsupported image extension {ext!r}")
    if not os.path.exists(path):
        raise ImageFormatError(f"no such file: {path}")
    return _READERS[ext](path)


def save_image(path, image: PixelImage):
    ext = Path(path).suffix.lower()
    if ext not in _WRITERS:
        raise ImageFormatError(f"unsupported image extension {ext!r}")
    _WRITERS[ext](path, image)


def _atomic_write(path, payload: bytes):
    # write-to-temp-then-rename: no partial files on failure
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory)
    try:
        os.write(fd, payload)
        os.close(fd)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.close(fd)
        except OSError:
            pass
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
