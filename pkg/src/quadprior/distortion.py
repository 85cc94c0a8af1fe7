"""Illumination jitter and Gaussian-Poisson sensor noise.

Randomness comes from counter-based streams keyed by ``(seed, element
index)``, so results do not depend on evaluation order or backend threading.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import InvalidArgumentError
from .imagecore import ImageF, as_image, gaussian_kernel, separable_filter


def _positive(name, v, allow_zero=False):
    ok = isinstance(v, (int, float)) and math.isfinite(v) and (v >= 0 if allow_zero else v > 0)
    if not ok:
        raise InvalidArgumentError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {v!r}")


def _from_dict(cls, d):
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise InvalidArgumentError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class NoiseSpec:
    gauss_sigma: float = 0.0
    poisson_peak: float = 1e9
    seed: int = 0

    def __post_init__(self):
        _positive("gauss_sigma", self.gauss_sigma, allow_zero=True)
        _positive("poisson_peak", self.poisson_peak)
        if not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidArgumentError(f"seed must be a non-negative int, got {self.seed!r}")

    to_dict = asdict

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass(frozen=True)
class IlluminationSpec:
    gain: float = 1.0
    gamma: float = 1.0
    field_sigma: float = 0.0
    field_range: tuple = (1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        _positive("gain", self.gain)
        _positive("gamma", self.gamma)
        _positive("field_sigma", self.field_sigma, allow_zero=True)
        lo, hi = self.field_range
        _positive("field_range lo", lo)
        _positive("field_range hi", hi)
        if lo > hi:
            raise InvalidArgumentError(f"field_range needs lo <= hi, got {self.field_range}")
        object.__setattr__(self, "field_range", (float(lo), float(hi)))
        if not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidArgumentError(f"seed must be a non-negative int, got {self.seed!r}")

    def to_dict(self):
        d = asdict(self)
        d["field_range"] = list(self.field_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "field_range" in d:
            d["field_range"] = tuple(d["field_range"])
        return _from_dict(cls, d)


@dataclass(frozen=True)
class JitterRanges:
    """Sampling ranges for training-time corruption."""

    gain: tuple = (0.1, 1.0)
    gamma: tuple = (0.6, 1.4)
    gauss_sigma: tuple = (0.0, 0.05)
    poisson_peak: tuple = (50.0, 1000.0)
    field_sigma: float = 4.0
    field_range: tuple = (0.5, 1.0)
    field_prob: float = 0.5

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return _from_dict(cls, d)


def sample_specs(rng, ranges=None):
    """Draw an (IlluminationSpec, NoiseSpec) pair from ``ranges`` using a numpy Generator."""
    r = ranges or JitterRanges()
    use_field = rng.random() < r.field_prob
    ill = IlluminationSpec(
        gain=float(rng.uniform(*r.gain)),
        gamma=float(rng.uniform(*r.gamma)),
        field_sigma=float(r.field_sigma) if use_field else 0.0,
        field_range=tuple(r.field_range) if use_field else (1.0, 1.0),
        seed=int(rng.integers(0, 2**63)),
    )
    noise = NoiseSpec(
        gauss_sigma=float(rng.uniform(*r.gauss_sigma)),
        poisson_peak=float(np.exp(rng.uniform(np.log(r.poisson_peak[0]), np.log(r.poisson_peak[1])))),
        seed=int(rng.integers(0, 2**63)),
    )
    return ill, noise


def illumination_field(height, width, spec):
    """Smooth multiplicative field in [lo, hi]; all ones when ``field_sigma == 0``."""
    if spec.field_sigma == 0:
        return np.ones((height, width))
    lo, hi = spec.field_range
    u = kernels.counter_uniform(height * width, kernels.stream_key(spec.seed, "illumination-field"))
    noise = (lo + (hi - lo) * u).reshape(height, width)
    g = gaussian_kernel(spec.field_sigma, 0)
    return separable_filter(noise, g, g)


def apply_illumination(img, spec):
    img = as_image(img)
    x = img.as_float64()
    field = illumination_field(img.height, img.width, spec)
    y = spec.gain * field[..., None] * x
    if spec.gamma != 1.0:
        y = np.maximum(y, 0.0) ** spec.gamma
    return ImageF(np.clip(y, 0.0, 1.0))


def add_gauss_poisson(img, spec):
    img = as_image(img)
    x = img.as_float64()
    if x.min() < 0.0 or x.max() > 1.0:
        raise InvalidArgumentError("add_gauss_poisson expects values in [0, 1]")
    key = kernels.stream_key(spec.seed, "gauss-poisson")
    y = kernels.gauss_poisson(x.ravel(), float(spec.poisson_peak), float(spec.gauss_sigma), key)
    return ImageF(y.reshape(x.shape))


def distort(img, illumination=None, noise=None):
    """Illumination change followed by sensor noise; either may be ``None``."""
    out = as_image(img)
    if illumination is not None:
        out = apply_illumination(out, illumination)
    if noise is not None:
        out = add_gauss_poisson(out, noise)
    return out
