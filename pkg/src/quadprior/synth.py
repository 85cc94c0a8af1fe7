"""Procedural normal-light images: smooth color fields with geometric shapes."""
import hashlib

import numpy as np

from .imagecore import ImageF


def derive_seed(master, label):
    """Sub-seed for ``label`` from a master seed (stable across platforms)."""
    digest = hashlib.blake2b(f"{int(master)}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed, label="default"):
    return np.random.Generator(np.random.Philox(derive_seed(seed, label)))


def _soft_step(d, width=0.75):
    # d: signed distance in pixels, positive inside
    return np.clip(0.5 + d / (2.0 * width), 0.0, 1.0)


def synth_image(rng, size=32, lo=0.15, hi=0.95, texture=False):
    """One random RGB image with values in [lo, hi] (before texture)."""
    h, w = (size, size) if np.isscalar(size) else size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u, v = xx / max(w - 1, 1), yy / max(h - 1, 1)
    corners = rng.uniform(lo, hi, size=(4, 3))
    img = (
        corners[0] * ((1 - u) * (1 - v))[..., None]
        + corners[1] * (u * (1 - v))[..., None]
        + corners[2] * ((1 - u) * v)[..., None]
        + corners[3] * (u * v)[..., None]
    )
    for _ in range(int(rng.integers(2, 6))):
        color = rng.uniform(lo, hi, size=3)
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        if rng.random() < 0.5:
            r = rng.uniform(0.1, 0.3) * min(h, w)
            d = r - np.hypot(xx - cx, yy - cy)
        else:
            hw, hh = rng.uniform(0.1, 0.3, size=2) * np.array([w, h])
            d = np.minimum(hw - np.abs(xx - cx), hh - np.abs(yy - cy))
        alpha = _soft_step(d)[..., None]
        img = alpha * color + (1 - alpha) * img
    if texture:
        freq = rng.uniform(0.4, 1.2)
        angle = rng.uniform(0, np.pi)
        phase = xx * np.cos(angle) + yy * np.sin(angle)
        amp = rng.uniform(0.04, 0.1)
        img = img + amp * np.sin(freq * phase)[..., None]
    return ImageF(np.clip(img, 0.0, 1.0))


def synth_batch(seed, count, size=32, texture=False, label="images"):
    rng = make_rng(seed, label)
    return [synth_image(rng, size, texture=texture) for _ in range(count)]
