"""Image container, PNG and QPT1 I/O, separable Gaussian filtering.

Rasters are stored as float32 ``(height, width, channels)`` arrays; all
filtering is done in float64 and rounded once on output.
"""
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import kernels
from .errors import ImageIOError, InvalidArgumentError

QPT_MAGIC = b"QPT1"
_QPT_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class ImageF:
    """Row-major, channel-interleaved float raster."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise InvalidArgumentError(f"image data must be 2-D or 3-D, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1 or not 1 <= c <= 6:
            raise InvalidArgumentError(f"bad image shape {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.isfinite(arr).all():
            raise InvalidArgumentError("image contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def as_float64(self):
        return self.data.astype(np.float64)

    def channel(self, i):
        return ImageF(self.data[:, :, i])

    @classmethod
    def constant(cls, height, width, value):
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(np.broadcast_to(value, (height, width, value.shape[0])).copy())


def as_image(img):
    return img if isinstance(img, ImageF) else ImageF(img)


@dataclass(frozen=True)
class Kernel1D:
    taps: np.ndarray
    order: int
    sigma: float

    @property
    def radius(self):
        return (self.taps.shape[0] - 1) // 2


def gaussian_kernel(sigma, order=0):
    """Sampled Gaussian (order 0) or Gaussian first derivative (order 1).

    The radius is ``ceil(3 * sigma)``.  Order-0 taps are renormalized to sum
    to one; order-1 taps are mean-corrected so they sum to exactly zero.
    """
    try:
        sigma = float(sigma)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"sigma must be a number, got {sigma!r}") from None
    if not math.isfinite(sigma) or sigma <= 0:
        raise InvalidArgumentError(f"sigma must be finite and > 0, got {sigma}")
    if order not in (0, 1):
        raise InvalidArgumentError(f"order must be 0 or 1, got {order}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-x * x / (2.0 * sigma * sigma)) / (sigma * math.sqrt(2.0 * math.pi))
    if order == 0:
        taps = g / g.sum()
    else:
        taps = -x / (sigma * sigma) * g
        taps = taps - taps.mean()
    taps.setflags(write=False)
    return Kernel1D(taps=taps, order=order, sigma=sigma)


def filter_axis(arr, taps, axis):
    """Correlate a float64 array with ``taps`` along ``axis`` (edge replication)."""
    arr = np.asarray(arr, dtype=np.float64)
    moved = np.moveaxis(arr, axis, -1)
    shape = moved.shape
    out = kernels.correlate_rows(np.ascontiguousarray(moved).reshape(-1, shape[-1]), taps)
    return np.moveaxis(out.reshape(shape), -1, axis)


def separable_filter(arr, kx, ky):
    """float64 core of :func:`conv_separable` for ``(H, W[, C])`` arrays."""
    tx = kx.taps if isinstance(kx, Kernel1D) else kx
    ty = ky.taps if isinstance(ky, Kernel1D) else ky
    return filter_axis(filter_axis(arr, tx, 1), ty, 0)


def conv_separable(img, kx, ky):
    """Two-pass per-channel filtering: ``kx`` along width, then ``ky`` along height."""
    img = as_image(img)
    return ImageF(separable_filter(img.as_float64(), kx, ky))


def atomic_write_bytes(path, payload):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        # mkstemp creates 0600; give the final file the usual umask-derived mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_MODES = {"L": 1, "LA": 2, "RGB": 3, "RGBA": 4}
_SAVE_MODES = {1: "L", 2: "LA", 3: "RGB", 4: "RGBA"}


def load_png(path):
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
            if im.mode not in _MODES:
                raise ImageIOError(f"{path}: unsupported PNG mode {im.mode!r} (need 8-bit gray or RGB)")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageIOError:
        raise
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"{path}: cannot read PNG ({exc})") from exc
    return ImageF(arr.astype(np.float64) / 255.0)


def quantize(img):
    """float [0, 1] -> uint8, clamped, rounding half away from zero."""
    arr = np.clip(as_image(img).as_float64(), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def png_bytes(img):
    import io

    img = as_image(img)
    if img.channels not in _SAVE_MODES:
        raise InvalidArgumentError(f"cannot save {img.channels}-channel image as PNG")
    q = quantize(img)
    if img.channels == 1:
        q = q[:, :, 0]
    buf = io.BytesIO()
    Image.fromarray(q, mode=_SAVE_MODES[img.channels]).save(buf, format="PNG")
    return buf.getvalue()


def save_png(img, path):
    try:
        atomic_write_bytes(path, png_bytes(img))
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write PNG ({exc})") from exc


def qpt_bytes(arr):
    """Serialize a (H, W, C) / (H, W) array to a QPT1 dump."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InvalidArgumentError(f"QPT1 holds 3-D rasters, got shape {arr.shape}")
    h, w, c = arr.shape
    header = _QPT_HEADER.pack(QPT_MAGIC, w, h, c, 0)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def parse_qpt(payload, source="<bytes>"):
    if len(payload) < _QPT_HEADER.size:
        raise ImageIOError(f"{source}: truncated QPT1 header")
    magic, w, h, c, _ = _QPT_HEADER.unpack_from(payload)
    if magic != QPT_MAGIC:
        raise ImageIOError(f"{source}: bad magic {magic!r}")
    n = w * h * c
    body = payload[_QPT_HEADER.size:]
    if len(body) != 4 * n:
        raise ImageIOError(f"{source}: expected {n} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float32)


def save_qpt(arr, path):
    if isinstance(arr, ImageF):
        arr = arr.data
    try:
        atomic_write_bytes(path, qpt_bytes(arr))
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write QPT1 ({exc})") from exc


def load_qpt(path):
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot read QPT1 ({exc})") from exc
    return parse_qpt(payload, source=str(path))


def write_json(obj, path):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())
