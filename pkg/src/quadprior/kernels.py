"""Hot-kernel dispatch.

The compiled extension ``quadprior._native`` is used when it imports; the
numpy implementations in ``quadprior._fallback`` are used otherwise.  Set
``QUADPRIOR_BACKEND=python`` (or ``native``) to force a choice, or call
:func:`set_backend` at runtime.  Callers must look functions up through this
module (``kernels.im2col(...)``) so a runtime switch takes effect.
"""
import os

from . import _fallback
from .errors import InvalidArgumentError

try:
    from . import _native
except ImportError:  # extension not built
    _native = None

_MASK64 = (1 << 64) - 1

BACKEND = None
correlate_rows = im2col = col2im = counter_uniform = gauss_poisson = None


def available_backends():
    return ["native", "python"] if _native is not None else ["python"]


def set_backend(name):
    """Select ``"native"``, ``"python"`` or ``"auto"``; returns the active name."""
    global BACKEND, correlate_rows, im2col, col2im, counter_uniform, gauss_poisson
    if name == "auto":
        name = "native" if _native is not None else "python"
    if name == "native":
        if _native is None:
            raise InvalidArgumentError("native backend requested but quadprior._native is not built")
        impl = _native
    elif name == "python":
        impl = _fallback
    else:
        raise InvalidArgumentError(f"unknown backend {name!r}")
    correlate_rows = impl.correlate_rows
    im2col = impl.im2col
    col2im = impl.col2im
    counter_uniform = impl.counter_uniform
    gauss_poisson = impl.gauss_poisson
    BACKEND = name
    return name


def mix64(z):
    """splitmix64 finalizer on Python ints."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stream_key(seed, stream):
    """Key for an independent counter stream of ``seed`` labelled by ``stream`` (str)."""
    label = 0
    for ch in stream.encode():
        label = mix64(label * 131 + ch)
    return mix64((int(seed) & _MASK64) ^ mix64(label + 0x9E3779B97F4A7C15))


set_backend(os.environ.get("QUADPRIOR_BACKEND", "auto"))
