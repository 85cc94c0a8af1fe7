"""DDPM forward/reverse numerics, independent of any particular denoiser.

Time steps are 1-based: ``t`` in ``1..T`` reads ``alpha_bar[t - 1]``.
"""
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .synth import make_rng


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha_bar: np.ndarray
    beta1: float
    betaT: float

    @property
    def T(self):
        return self.beta.shape[0]

    def __post_init__(self):
        b, ab = self.beta, self.alpha_bar
        if not ((b > 0) & (b < 1)).all():
            raise InvalidArgumentError("beta must lie in (0, 1)")
        if not ((ab > 0) & (ab < 1)).all() or (ab.shape[0] > 1 and not (np.diff(ab) < 0).all()):
            raise InvalidArgumentError("alpha_bar must be strictly decreasing inside (0, 1)")

    def to_dict(self):
        return {"T": self.T, "beta1": self.beta1, "betaT": self.betaT}

    @classmethod
    def from_dict(cls, d):
        return make_linear_schedule(int(d["T"]), float(d["beta1"]), float(d["betaT"]))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def _check_t(self, t):
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer) or t.min() < 1 or t.max() > self.T:
            raise InvalidArgumentError(f"t must be integers in 1..{self.T}, got {t}")
        return t

    def alpha_bar_at(self, t):
        return self.alpha_bar[self._check_t(t) - 1]


def make_linear_schedule(T=1000, beta1=1e-4, betaT=0.02):
    if not (isinstance(T, (int, np.integer)) and T >= 1):
        raise InvalidArgumentError(f"T must be an int >= 1, got {T!r}")
    if not (0 < beta1 <= betaT < 1):
        raise InvalidArgumentError(f"need 0 < beta1 <= betaT < 1, got {beta1}, {betaT}")
    beta = np.linspace(beta1, betaT, int(T)) if T > 1 else np.array([float(beta1)])
    alpha_bar = np.cumprod(1.0 - beta)
    beta.setflags(write=False)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar, beta1=float(beta1), betaT=float(betaT))


# Toy training: T=50, range chosen so alpha_bar[T] ~ 4.5e-3 (the SD v1 schedule ends at 4.7e-3)
TOY_SCHEDULE = {"T": 50, "beta1": 1e-3, "betaT": 0.2}


def toy_schedule():
    return NoiseSchedule.from_dict(TOY_SCHEDULE)


def _batch_coef(coef, ndim):
    coef = np.asarray(coef, dtype=np.float64)
    return coef.reshape(coef.shape + (1,) * (ndim - coef.ndim))


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"shape mismatch: {sorted(shapes)}")


def forward_sample(z0, t, eps, sched):
    """z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps; ``t`` scalar or one per leading item."""
    _same_shape(z0, eps)
    ab = _batch_coef(sched.alpha_bar_at(t), np.ndim(z0))
    return np.sqrt(ab) * np.asarray(z0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


def reconstruct_z0(zt, eps_hat, t, sched):
    _same_shape(zt, eps_hat)
    ab = _batch_coef(sched.alpha_bar_at(t), np.ndim(zt))
    return (np.asarray(zt, dtype=np.float64) - np.sqrt(1.0 - ab) * np.asarray(eps_hat, dtype=np.float64)) / np.sqrt(ab)


def loss_noise(eps, eps_hat):
    _same_shape(eps, eps_hat)
    return float(np.mean((np.asarray(eps, dtype=np.float64) - eps_hat) ** 2))


def loss_z0(z0, z0_hat):
    _same_shape(z0, z0_hat)
    return float(np.mean((np.asarray(z0, dtype=np.float64) - z0_hat) ** 2))


def loss_diff(eps, eps_hat, z0, z0_hat):
    """Unit-weighted sum of the noise and z0 reconstruction losses."""
    return loss_z0(z0, z0_hat) + loss_noise(eps, eps_hat)


def diff_loss_and_grad(z0, zt, eps, eps_hat, t, sched):
    """``(loss_noise, loss_z0, loss_diff, d loss_diff / d eps_hat)`` for a batch."""
    z0_hat = reconstruct_z0(zt, eps_hat, t, sched)
    ab = _batch_coef(sched.alpha_bar_at(t), np.ndim(zt))
    n = np.size(eps)
    ln, lz = loss_noise(eps, eps_hat), loss_z0(z0, z0_hat)
    # d z0_hat / d eps_hat = -sqrt(1 - ab) / sqrt(ab)
    grad = 2.0 * (eps_hat - eps) / n - 2.0 * (z0_hat - z0) * np.sqrt((1.0 - ab) / ab) / n
    return ln, lz, ln + lz, grad


def ddpm_reverse_step(zt, eps_hat, t, sched, noise):
    """One ancestral step z_t -> z_{t-1}; ``noise`` is ignored at t = 1."""
    if not (isinstance(t, (int, np.integer)) and 1 <= t <= sched.T):
        raise InvalidArgumentError(f"t must be an int in 1..{sched.T}, got {t!r}")
    _same_shape(zt, eps_hat)
    beta = sched.beta[t - 1]
    ab = sched.alpha_bar[t - 1]
    mu = (np.asarray(zt, dtype=np.float64) - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta)
    if t == 1:
        return mu
    ab_prev = sched.alpha_bar[t - 2]
    sigma = np.sqrt(beta * (1.0 - ab_prev) / (1.0 - ab))
    return mu + sigma * np.asarray(noise, dtype=np.float64)


def sample_loop(denoiser, condition, sched, seed, shape):
    """Ancestral sampling from pure noise: ``denoiser(zt, t, condition) -> eps_hat``."""
    rng = make_rng(seed, "sample-loop")
    z = rng.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        eps_hat = denoiser(z, t, condition)
        noise = rng.standard_normal(shape) if t > 1 else None
        z = ddpm_reverse_step(z, eps_hat, t, sched, noise)
    return z
