"""Checkpoint files: one line of JSON header, then a QPT1 parameter blob.

The blob stores the flat parameter vector as a ``width = n_params``,
``height = 1``, ``channels = 1`` float32 raster.
"""
import json

import numpy as np

from .errors import ImageIOError
from .imagecore import atomic_write_bytes, parse_qpt, qpt_bytes

FORMAT = "quadprior-checkpoint/1"


def checkpoint_bytes(kind, header, params):
    params = np.asarray(params, dtype=np.float64).ravel()
    head = {"format": FORMAT, "kind": kind, "n_params": int(params.shape[0]), **header}
    line = json.dumps(head, sort_keys=True).encode()
    return line + b"\n" + qpt_bytes(params.reshape(1, -1, 1))


def save_checkpoint(path, kind, header, params):
    try:
        atomic_write_bytes(path, checkpoint_bytes(kind, header, params))
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write checkpoint ({exc})") from exc


def load_checkpoint(path, kind=None):
    """Returns ``(header, params)``; params are float64 copies of the stored float32."""
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot read checkpoint ({exc})") from exc
    nl = payload.find(b"\n")
    if nl < 0:
        raise ImageIOError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(payload[:nl])
    except ValueError as exc:
        raise ImageIOError(f"{path}: bad checkpoint header ({exc})") from exc
    if header.get("format") != FORMAT:
        raise ImageIOError(f"{path}: not a {FORMAT} file")
    if kind is not None and header.get("kind") != kind:
        raise ImageIOError(f"{path}: expected a {kind} checkpoint, found {header.get('kind')!r}")
    params = parse_qpt(payload[nl + 1:], source=str(path)).astype(np.float64).ravel()
    if params.shape[0] != header["n_params"]:
        raise ImageIOError(f"{path}: parameter count mismatch")
    return header, params
