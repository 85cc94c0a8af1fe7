"""Minimal layers with explicit forward/backward passes.

Parameters of a model live in one flat float64 vector (``ParamStore.params``)
with a matching gradient vector; layers read and write named views into it.
Layers are stateless: ``forward`` returns ``(output, cache)`` and
``backward(cache, dy)`` returns ``dx`` while accumulating parameter
gradients, so one layer may be applied several times per step.
Tensors are ``(N, C, H, W)`` float64.
"""
import math
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import InvalidArgumentError


class ParamStore:
    def __init__(self):
        self._layout = {}
        self._size = 0
        self.params = np.zeros(0)
        self.grads = np.zeros(0)

    def allocate(self, name, shape):
        if name in self._layout:
            raise InvalidArgumentError(f"duplicate parameter {name!r}")
        n = int(np.prod(shape))
        self._layout[name] = (self._size, tuple(shape))
        self._size += n

    def finalize(self):
        self.params = np.zeros(self._size)
        self.grads = np.zeros(self._size)

    def p(self, name):
        off, shape = self._layout[name]
        return self.params[off:off + int(np.prod(shape))].reshape(shape)

    def g(self, name):
        off, shape = self._layout[name]
        return self.grads[off:off + int(np.prod(shape))].reshape(shape)

    def names(self):
        return list(self._layout)

    def layout(self):
        return {k: [off, list(shape)] for k, (off, shape) in self._layout.items()}

    def zero_grad(self):
        self.grads[:] = 0.0

    def load(self, flat):
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.shape[0] != self.params.shape[0]:
            raise InvalidArgumentError(f"expected {self.params.shape[0]} parameters, got {flat.shape[0]}")
        self.params[:] = flat

    def __len__(self):
        return self.params.shape[0]


class Conv2d:
    def __init__(self, store, name, cin, cout, k=3, stride=1, pad=None, bias=True):
        self.name, self.cin, self.cout, self.k, self.stride = name, cin, cout, k, stride
        self.pad = (k - 1) // 2 if pad is None else pad
        self.bias = bias
        self.store = store
        store.allocate(name + ".w", (cout, cin, k, k))
        if bias:
            store.allocate(name + ".b", (cout,))

    def init(self, rng, mode="he", slope=0.2):
        w = self.store.p(self.name + ".w")
        if mode == "zero":
            w[...] = 0.0
        elif mode == "he":
            fan_in = self.cin * self.k * self.k
            w[...] = rng.standard_normal(w.shape) * math.sqrt(2.0 / ((1.0 + slope ** 2) * fan_in))
        else:
            raise InvalidArgumentError(f"unknown init mode {mode!r}")
        if self.bias:
            self.store.p(self.name + ".b")[...] = 0.0

    def spec(self):
        return {"name": self.name, "cin": self.cin, "cout": self.cout, "k": self.k,
                "stride": self.stride, "pad": self.pad, "bias": self.bias}

    def forward(self, x):
        if x.shape[1] != self.cin:
            raise InvalidArgumentError(f"{self.name}: expected {self.cin} channels, got {x.shape[1]}")
        n, _, h, w = x.shape
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        cols = kernels.im2col(x, self.k, self.stride, self.pad)
        w2 = self.store.p(self.name + ".w").reshape(self.cout, -1)
        y = np.matmul(w2, cols)
        if self.bias:
            y += self.store.p(self.name + ".b")[:, None]
        return y.reshape(n, self.cout, ho, wo), (cols, x.shape)

    def backward(self, cache, dy, need_dx=True):
        cols, xshape = cache
        n = dy.shape[0]
        dy2 = dy.reshape(n, self.cout, -1)
        gw = self.store.g(self.name + ".w")
        gw += np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(gw.shape)
        if self.bias:
            self.store.g(self.name + ".b")[...] += dy2.sum(axis=(0, 2))
        if not need_dx:
            return None
        w2 = self.store.p(self.name + ".w").reshape(self.cout, -1)
        dcols = np.matmul(w2.T, dy2)
        return kernels.col2im(dcols, xshape, self.k, self.stride, self.pad)


_recorder = None


@contextmanager
def record_activations():
    """Collect the sign pattern of every LeakyReLU evaluated inside the block."""
    global _recorder
    outer, _recorder = _recorder, []
    try:
        yield _recorder
    finally:
        _recorder = outer


class LeakyReLU:
    def __init__(self, slope=0.2):
        self.slope = slope

    def forward(self, x):
        pos = x > 0
        if _recorder is not None:
            _recorder.append(pos)
        return np.where(pos, x, self.slope * x), pos

    def backward(self, pos, dy):
        return np.where(pos, dy, self.slope * dy)


def upsample2x(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2x_backward(dy):
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def clip_grad_norm(grads, max_norm):
    """Scale ``grads`` in place so its L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = float(np.sqrt(np.dot(grads, grads)))
    if norm > max_norm:
        grads *= max_norm / norm
    return norm


def sgd_step(store, lr, max_norm=1.0, mask=None):
    """Plain SGD with global-norm clipping; ``mask`` selects trainable entries."""
    g = store.grads if mask is None else store.grads * mask
    norm = clip_grad_norm(g, max_norm)
    store.params -= lr * g
    return norm


def fd_check(loss_fn, store, h=1e-3, indices=None, floor=1e-6, kink_aware=True, min_h=1e-7):
    """Compare ``store.grads`` with central finite differences of ``loss_fn()``.

    ``loss_fn`` evaluates the loss from ``store.params``; ``store.grads`` must
    already hold the analytic gradient.  Piecewise-linear activations make a
    central difference meaningless when ``theta +- h`` straddles a kink, so
    with ``kink_aware`` the step for such a coordinate is divided by 10 until
    every LeakyReLU keeps its sign pattern across the interval (or ``min_h``
    is reached).  Returns ``(rel_errors, steps)`` where the relative error is
    ``|g - fd| / max(|g|, |fd|, floor)``.
    """
    analytic = store.grads.copy()
    idx = np.arange(len(store)) if indices is None else np.asarray(indices)

    def evaluate():
        if not kink_aware:
            return float(loss_fn()), None
        with record_activations() as rec:
            f = float(loss_fn())
        return f, np.concatenate([r.ravel() for r in rec]) if rec else np.zeros(0, bool)

    _, base = evaluate()
    errs = np.empty(idx.shape[0])
    steps = np.empty(idx.shape[0])
    for j, i in enumerate(idx):
        old = store.params[i]
        step = h
        while True:
            store.params[i] = old + step
            fp, pp = evaluate()
            store.params[i] = old - step
            fm, pm = evaluate()
            store.params[i] = old
            if not kink_aware or step <= min_h or (np.array_equal(pp, base) and np.array_equal(pm, base)):
                break
            step /= 10.0
        fd = (fp - fm) / (2.0 * step)
        errs[j] = abs(analytic[i] - fd) / max(abs(analytic[i]), abs(fd), floor)
        steps[j] = step
    return errs, steps
