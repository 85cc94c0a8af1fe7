"""Pure numpy implementations of the hot kernels.

Every function here has a twin of the same name in ``_native.pyx``.  The two
are kept operation-for-operation identical (same accumulation order, no fused
multiply-add) so filtering and im2col/col2im agree bit for bit between
backends.  The noise kernel calls exp/log/cos/sin, whose last-ulp behaviour
may differ between numpy and the C math library.
"""
import numpy as np

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 6.283185307179586
POISSON_CROSSOVER = 30.0
POISSON_MAX_ITER = 1000


def correlate_rows(src, taps):
    """Correlate each row of a 2-D array with ``taps``, replicating edges."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    radius = (taps.shape[0] - 1) // 2
    length = src.shape[1]
    padded = np.pad(src, ((0, 0), (radius, radius)), mode="edge")
    acc = np.zeros_like(src)
    for k in range(taps.shape[0]):
        acc += taps[k] * padded[:, k:k + length]
    return acc


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    """(N, C, H, W) -> (N, C*k*k, Ho*Wo) with zero padding."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, ho, wo), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def col2im(cols, shape, k, stride, pad):
    """Adjoint of :func:`im2col`; overlapping taps are summed in (ki, kj) order."""
    n, c, h, w = shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    cols = np.ascontiguousarray(cols, dtype=np.float64).reshape(n, c, k, k, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += cols[:, :, ki, kj]
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _uniform_at(key, counters):
    with np.errstate(over="ignore"):
        z = np.uint64(key) + (counters + np.uint64(1)) * GOLDEN_GAMMA
        bits = _mix64(z) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def counter_uniform(n, key):
    """``n`` uniforms in (0, 1); element ``i`` depends only on (key, i)."""
    return _uniform_at(key, np.arange(n, dtype=np.uint64))


def gauss_poisson(x, peak, gauss_sigma, key):
    """Poisson(x*peak)/peak + N(0, gauss_sigma^2), clamped to [0, 1].

    Element ``e`` consumes counters 3e, 3e+1, 3e+2.  Rates below
    ``POISSON_CROSSOVER`` are sampled by inverse transform, larger rates by a
    rounded normal approximation.
    """
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    base = np.arange(x.shape[0], dtype=np.uint64) * np.uint64(3)
    u0 = _uniform_at(key, base)
    u1 = _uniform_at(key, base + np.uint64(1))
    u2 = _uniform_at(key, base + np.uint64(2))
    r = np.sqrt(-2.0 * np.log(u1))
    theta = _TWO_PI * u2
    zc = r * np.cos(theta)
    zs = r * np.sin(theta)

    lam = np.maximum(x, 0.0) * peak
    counts = np.zeros_like(lam)
    small = lam < POISSON_CROSSOVER
    big = ~small
    counts[big] = np.maximum(np.floor(lam[big] + np.sqrt(lam[big]) * zs[big] + 0.5), 0.0)

    ls, us = lam[small], u0[small]
    ks = np.zeros_like(ls)
    p = np.exp(-ls)
    cdf = p.copy()
    active = us > cdf
    it = 0
    while active.any() and it < POISSON_MAX_ITER:
        ks[active] += 1.0
        p[active] *= ls[active] / ks[active]
        cdf[active] += p[active]
        active &= us > cdf
        it += 1
    counts[small] = ks

    y = counts / peak + gauss_sigma * zc
    return np.minimum(np.maximum(y, 0.0), 1.0)
