"""Tiny prior-conditioned noise predictor, trained on normal-light images only.

Input channels: noisy image z_t (3), quadruple prior (6), t/T (1).  Images
live in diffusion space ``z = 2 x - 1``.
"""
import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .diffmath import (
    TOY_SCHEDULE,
    NoiseSchedule,
    diff_loss_and_grad,
    forward_sample,
    sample_loop,
)
from .distortion import JitterRanges, apply_illumination, sample_specs
from .errors import InvalidArgumentError, NumericError, StateError
from .imagecore import ImageF, as_image, atomic_write_bytes
from .nn import Conv2d, LeakyReLU, ParamStore, sgd_step
from .prior import ColorModel, extract_prior
from .synth import make_rng, synth_image

# fixed input conditioning for H (radians), C (log ratio), W (tan), O
PRIOR_SCALE = np.array([1.0 / math.pi, 0.2, 0.2, 1.0, 1.0, 1.0])


def to_nchw(img):
    return as_image(img).as_float64().transpose(2, 0, 1)[None]


def from_nchw(arr):
    return ImageF(np.asarray(arr)[0].transpose(1, 2, 0))


def prior_tensor(prior):
    return prior.stack().as_float64().transpose(2, 0, 1)[None]


class ConvNet:
    """3x3 conv stack with leaky-rectified hidden layers; last layer predicts eps."""

    def __init__(self, widths=(32, 32, 32), T=50, slope=0.2, seed=0, zero_final=True,
                 image_channels=3, prior_channels=6):
        self.widths = tuple(int(w) for w in widths)
        self.T = int(T)
        self.slope = slope
        self.seed = seed
        self.zero_final = zero_final
        self.image_channels = image_channels
        self.prior_channels = prior_channels
        self.store = ParamStore()
        chans = [image_channels + prior_channels + 1, *self.widths, image_channels]
        self.convs = [Conv2d(self.store, f"conv{i}", chans[i], chans[i + 1]) for i in range(len(chans) - 1)]
        self.act = LeakyReLU(slope)
        self.store.finalize()
        rng = make_rng(seed, "convnet-init")
        for i, conv in enumerate(self.convs):
            last = i == len(self.convs) - 1
            conv.init(rng, "zero" if (last and zero_final) else "he", slope)
        self._cache = None

    @property
    def params(self):
        return self.store.params

    @property
    def grads(self):
        return self.store.grads

    def arch(self):
        return {"widths": list(self.widths), "T": self.T, "slope": self.slope, "seed": self.seed,
                "zero_final": self.zero_final, "image_channels": self.image_channels,
                "prior_channels": self.prior_channels, "layers": [c.spec() for c in self.convs]}

    def _inputs(self, zt, prior, t):
        zt = np.asarray(zt, dtype=np.float64)
        prior = np.asarray(prior, dtype=np.float64)
        n, _, h, w = zt.shape
        if prior.shape != (n, self.prior_channels, h, w):
            raise InvalidArgumentError(f"prior shape {prior.shape} does not match z_t {zt.shape}")
        tt = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (n,)) / self.T
        tmap = np.broadcast_to(tt[:, None, None, None], (n, 1, h, w))
        return np.concatenate([zt, prior * PRIOR_SCALE[:, None, None], tmap], axis=1)

    def forward(self, zt, prior, t, cache=True):
        x = self._inputs(zt, prior, t)
        caches = []
        for i, conv in enumerate(self.convs):
            x, cc = conv.forward(x)
            ca = None
            if i < len(self.convs) - 1:
                x, ca = self.act.forward(x)
            caches.append((cc, ca))
        self._cache = caches if cache else None
        return x

    def backward(self, upstream):
        if self._cache is None:
            raise StateError("backward() needs a preceding forward(cache=True)")
        dy = upstream
        for i in range(len(self.convs) - 1, -1, -1):
            cc, ca = self._cache[i]
            if ca is not None:
                dy = self.act.backward(ca, dy)
            dy = self.convs[i].backward(cc, dy, need_dx=i > 0)
        self._cache = None
        return self.store.grads

    def denoiser(self, condition):
        def fn(z, t, cond=condition):
            return self.forward(z, cond, np.full(z.shape[0], t), cache=False)
        return fn


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 8
    lr: float = 0.05
    seed: int = 0
    size: int = 32
    widths: tuple = (32, 32, 32)
    max_grad_norm: float = 1.0
    prior_noise: bool = True
    schedule: dict = field(default_factory=lambda: dict(TOY_SCHEDULE))
    color_model: dict = field(default_factory=lambda: ColorModel().to_dict())
    jitter: dict = field(default_factory=lambda: JitterRanges().to_dict())

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.size < 4:
            raise InvalidArgumentError("steps >= 0, batch >= 1 and size >= 4 required")
        if not (self.lr >= 0 and math.isfinite(self.lr)) or not self.max_grad_norm > 0:
            raise InvalidArgumentError("lr must be finite and >= 0, max_grad_norm > 0")
        self.widths = tuple(int(w) for w in self.widths)

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


def make_example(rng, cfg, cm, ranges, sched, clean=None):
    """One training tuple ``(z0, prior, t, eps)`` built only from a normal-light image."""
    img = clean if clean is not None else synth_image(rng, cfg.size)
    ill, noise = sample_specs(rng, ranges)
    dark = apply_illumination(img, ill)
    prior = extract_prior(dark, cm, noise=noise if cfg.prior_noise else None)
    z0 = 2.0 * to_nchw(img) - 1.0
    t = int(rng.integers(1, sched.T + 1))
    eps = rng.standard_normal(z0.shape)
    return z0, prior_tensor(prior), t, eps


def make_batch(rng, cfg, cm, ranges, sched, n):
    items = [make_example(rng, cfg, cm, ranges, sched) for _ in range(n)]
    z0 = np.concatenate([it[0] for it in items])
    prior = np.concatenate([it[1] for it in items])
    t = np.array([it[2] for it in items])
    eps = np.concatenate([it[3] for it in items])
    return z0, prior, t, eps


@dataclass
class TrainResult:
    net: ConvNet
    trace: list  # (step, loss_noise, loss_z0, loss_diff)
    config: TrainConfig

    def trace_csv(self):
        return trace_to_csv(self.trace)


def trace_to_csv(trace):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss_noise", "loss_z0", "loss_diff"])
    for step, ln, lz, ld in trace:
        w.writerow([step, repr(ln), repr(lz), repr(ld)])
    return buf.getvalue()


def read_trace_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows[1:]]


def train_toy(cfg=None, net=None, progress=None):
    cfg = cfg or TrainConfig()
    sched = NoiseSchedule.from_dict(cfg.schedule)
    cm = ColorModel.from_dict(cfg.color_model)
    ranges = JitterRanges.from_dict(cfg.jitter)
    if net is None:
        net = ConvNet(widths=cfg.widths, T=sched.T, seed=cfg.seed)
    rng = make_rng(cfg.seed, "train-toy")
    trace = []
    for step in range(cfg.steps):
        z0, prior, t, eps = make_batch(rng, cfg, cm, ranges, sched, cfg.batch)
        zt = forward_sample(z0, t, eps, sched)
        eps_hat = net.forward(zt, prior, t)
        ln, lz, ld, grad = diff_loss_and_grad(z0, zt, eps, eps_hat, t, sched)
        if not math.isfinite(ld):
            raise NumericError(f"training diverged at step {step}: loss_diff={ld}", step=step)
        net.store.zero_grad()
        net.backward(grad)
        sgd_step(net.store, cfg.lr, cfg.max_grad_norm)
        if not np.isfinite(net.params).all():
            raise NumericError(f"non-finite parameters after step {step}", step=step)
        trace.append((step, ln, lz, ld))
        if progress is not None:
            progress(step, ld)
    return TrainResult(net=net, trace=trace, config=cfg)


def validation_set(seed, n, cfg, label="toy-validation"):
    """Held-out training-style tuples drawn from a stream disjoint from training."""
    sched = NoiseSchedule.from_dict(cfg.schedule)
    cm = ColorModel.from_dict(cfg.color_model)
    ranges = JitterRanges.from_dict(cfg.jitter)
    rng = make_rng(seed, label)
    return make_batch(rng, cfg, cm, ranges, sched, n)


def validation_loss(net, data, sched, shuffle_prior_seed=None):
    """Mean loss_diff on fixed tuples; optionally with the prior spatially shuffled."""
    z0, prior, t, eps = data
    if shuffle_prior_seed is not None:
        rng = make_rng(shuffle_prior_seed, "shuffle-prior")
        n, c, h, w = prior.shape
        flat = prior.reshape(n, c, h * w)
        prior = np.stack([flat[i][:, rng.permutation(h * w)] for i in range(n)]).reshape(prior.shape)
    zt = forward_sample(z0, t, eps, sched)
    eps_hat = net.forward(zt, prior, t, cache=False)
    return diff_loss_and_grad(z0, zt, eps, eps_hat, t, sched)[2]


def enhance_toy(net, low_img, cm=None, sched=None, seed=0):
    """Extract the prior from a low-light image and sample a clean image from it."""
    cm = cm or ColorModel()
    sched = sched or NoiseSchedule.from_dict(TOY_SCHEDULE)
    if sched.T != net.T:
        raise InvalidArgumentError(f"schedule T={sched.T} differs from the net's T={net.T}")
    low = as_image(low_img)
    cond = prior_tensor(extract_prior(low, cm))
    shape = (1, net.image_channels, low.height, low.width)
    z = sample_loop(net.denoiser(cond), cond, sched, seed, shape)
    return from_nchw(np.clip((z + 1.0) / 2.0, 0.0, 1.0))


def heldout_lowlight(seed=123, n=50, size=32, gain=(0.1, 0.3), gauss_sigma=0.01, poisson_peak=500.0):
    """``n`` pairs ``(clean, dark)`` of unseen synthetic images, darkened by a global gain plus noise."""
    from .distortion import IlluminationSpec, NoiseSpec, distort

    rng = make_rng(seed, "heldout-lowlight")
    pairs = []
    for i in range(n):
        clean = synth_image(rng, size)
        ill = IlluminationSpec(gain=float(rng.uniform(*gain)), seed=i)
        pairs.append((clean, distort(clean, ill, NoiseSpec(gauss_sigma=gauss_sigma, poisson_peak=poisson_peak, seed=i))))
    return pairs


def enhancement_gains(net, pairs, cfg=None, seed=0):
    """Per-image ``(psnr_dark, psnr_enhanced)`` against the clean image."""
    from .metrics import psnr

    cm = ColorModel.from_dict(cfg.color_model) if cfg else None
    sched = NoiseSchedule.from_dict(cfg.schedule) if cfg else None
    rows = []
    for i, (clean, dark) in enumerate(pairs):
        out = enhance_toy(net, dark, cm, sched, seed=seed + i)
        rows.append((psnr(dark, clean), psnr(out, clean)))
    return rows


def save_convnet(path, net, config=None):
    header = {"arch": net.arch(), "seed": net.seed, "config": config.to_dict() if config else None}
    save_checkpoint(path, "convnet", header, net.params)


def load_convnet(path):
    header, params = load_checkpoint(path, kind="convnet")
    a = header["arch"]
    net = ConvNet(widths=a["widths"], T=a["T"], slope=a["slope"], seed=a["seed"],
                  zero_final=a["zero_final"], image_channels=a["image_channels"],
                  prior_channels=a["prior_channels"])
    net.store.load(params)
    cfg = TrainConfig.from_dict(header["config"]) if header.get("config") else None
    return net, cfg


def write_trace(path, trace):
    atomic_write_bytes(path, trace_to_csv(trace).encode())
