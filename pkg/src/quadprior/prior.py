"""Physical quadruple prior: the H, C, W and O illumination invariants.

RGB is mapped linearly to spectral energy and its first two wavelength
derivatives (a Gaussian color model), smoothed at scale ``sigma``, and
combined into four maps that cancel a global illumination gain:

* ``H = atan2(E_l, E_ll)``                   hue-like angle
* ``C = log((E_l^2 + E_ll^2) / E^2)``       chroma-like log ratio
* ``W = tan(|grad E| / E)``                  normalized edge strength
* ``O``                                      rank of R, G, B within the pixel
"""
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError, NumericError
from .imagecore import ImageF, as_image, gaussian_kernel, separable_filter

DEFAULT_W = (
    (0.06, 0.63, 0.27),
    (0.30, 0.04, -0.35),
    (0.34, -0.60, 0.17),
)


@dataclass(frozen=True, eq=False)
class ColorModel:
    W: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_W))
    sigma: float = 1.0
    eps: float = 1e-6
    arg_clamp: float = 1.5

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        if W.shape != (3, 3) or not np.isfinite(W).all():
            raise InvalidArgumentError(f"W must be a finite 3x3 matrix, got {W!r}")
        if abs(np.linalg.det(W)) <= 1e-6:
            raise InvalidArgumentError("|det(W)| must exceed 1e-6")
        for name in ("sigma", "eps", "arg_clamp"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"{name} must be finite and > 0, got {v!r}")
        if self.arg_clamp >= math.pi / 2:
            raise InvalidArgumentError("arg_clamp must be < pi/2")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "arg_clamp", float(self.arg_clamp))

    def to_dict(self):
        return {"W": self.W.tolist(), "sigma": self.sigma, "eps": self.eps, "arg_clamp": self.arg_clamp}

    def __eq__(self, other):
        return isinstance(other, ColorModel) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(self.to_json())

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"W", "sigma", "eps", "arg_clamp"}
        if unknown:
            raise InvalidArgumentError(f"unknown ColorModel keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def params(self):
        """The 10 learnable numbers: W row-major, then sigma."""
        return np.concatenate([self.W.ravel(), [self.sigma]])

    def with_params(self, p):
        p = np.asarray(p, dtype=np.float64)
        return replace(self, W=p[:9].reshape(3, 3), sigma=float(p[9]))


@dataclass(frozen=True)
class GaussianColorFields:
    E: np.ndarray
    E_lambda: np.ndarray
    E_lambdalambda: np.ndarray
    Ex: np.ndarray
    Ey: np.ndarray


@dataclass(frozen=True)
class QuadPrior:
    H: np.ndarray
    C: np.ndarray
    Wmap: np.ndarray
    O: np.ndarray

    CHANNELS = ("H", "C", "W", "O_R", "O_G", "O_B")

    def stack(self):
        """6-channel raster in the order H, C, W, O_R, O_G, O_B."""
        return ImageF(np.concatenate([self.H[..., None], self.C[..., None], self.Wmap[..., None], self.O], axis=2))

    @classmethod
    def unstack(cls, img):
        arr = as_image(img).as_float64()
        if arr.shape[2] != 6:
            raise InvalidArgumentError(f"expected 6 channels, got {arr.shape[2]}")
        return cls(H=arr[..., 0], C=arr[..., 1], Wmap=arr[..., 2], O=arr[..., 3:])


def _rgb(img):
    img = as_image(img)
    if img.channels != 3:
        raise InvalidArgumentError(f"expected an RGB image, got {img.channels} channels")
    return img.as_float64()


def apply_color_model(img, cm=None):
    cm = cm or ColorModel()
    rgb = _rgb(img)
    ehat = rgb @ cm.W.T
    g0 = gaussian_kernel(cm.sigma, 0)
    g1 = gaussian_kernel(cm.sigma, 1)
    smooth = separable_filter(ehat, g0, g0)
    e = ehat[..., 0]
    return GaussianColorFields(
        E=smooth[..., 0],
        E_lambda=smooth[..., 1],
        E_lambdalambda=smooth[..., 2],
        Ex=separable_filter(e, g1, g0),
        Ey=separable_filter(e, g0, g1),
    )


def compute_H(f, eps=None):
    # atan2 needs no stabilizer; eps accepted for a uniform signature
    return np.arctan2(f.E_lambda, f.E_lambdalambda)


def compute_C(f, eps=1e-6):
    """Log chroma ratio, guarded on the ratio so a global gain cancels exactly.

    The denominator is floored at ``eps`` and ``eps`` is added to the ratio
    before the log; wherever ``E^2 > eps`` the result is exactly gain-invariant
    and bounded below by ``log(eps)``.
    """
    num = f.E_lambda ** 2 + f.E_lambdalambda ** 2
    den = np.maximum(f.E ** 2, eps)
    return np.log(num / den + eps)


def compute_Wmap(f, eps=1e-6, arg_clamp=1.5):
    grad = np.sqrt(f.Ex ** 2 + f.Ey ** 2)
    a = grad / np.maximum(np.abs(f.E), eps)
    return np.tan(np.minimum(a, arg_clamp))


def compute_O(img):
    """Average rank of R, G, B inside each pixel, mapped from {0, 1, 2} to {-1, 0, 1}."""
    rgb = _rgb(img) if not isinstance(img, np.ndarray) else np.asarray(img, dtype=np.float64)
    v = rgb[..., :, None]
    w = rgb[..., None, :]
    below = (w < v).sum(axis=-1)
    ties = (w == v).sum(axis=-1) - 1
    return below + 0.5 * ties - 1.0


def extract_prior(img, cm=None, noise=None):
    """Full pipeline: optional noise corruption, color model, four invariants."""
    cm = cm or ColorModel()
    img = as_image(img)
    if noise is not None:
        from .distortion import add_gauss_poisson

        img = add_gauss_poisson(img, noise)
    f = apply_color_model(img, cm)
    return QuadPrior(
        H=compute_H(f, cm.eps),
        C=compute_C(f, cm.eps),
        Wmap=compute_Wmap(f, cm.eps, cm.arg_clamp),
        O=compute_O(img.as_float64()),
    )


def valid_mask(img, cm=None, factor=100.0):
    """Pixels where the stabilizers are inactive: ``E^2 > factor * eps``."""
    cm = cm or ColorModel()
    return apply_color_model(img, cm).E ** 2 > factor * cm.eps


def tie_free(img):
    rgb = as_image(img).as_float64() if not isinstance(img, np.ndarray) else img
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    return (r != g) & (g != b) & (r != b)


def colormodel_fd_grad(loss_fn, cm, h=1e-4):
    """Central finite-difference gradient of ``loss_fn(cm)`` over W (row-major) and sigma."""
    if not h > 0:
        raise InvalidArgumentError("h must be > 0")
    p = cm.params()
    grad = np.zeros_like(p)
    for i in range(p.shape[0]):
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        fu = float(loss_fn(cm.with_params(up)))
        fd = float(loss_fn(cm.with_params(dn)))
        if not (math.isfinite(fu) and math.isfinite(fd)):
            raise NumericError(f"loss_fn returned a non-finite value at coordinate {i}")
        grad[i] = (fu - fd) / (2.0 * h)
    return grad
