"""Toy autoencoder with a bypass decoder.

The encoder emits skip features ``z1`` (full resolution), ``z2`` (1/2),
``z3`` (1/4) and the latent ``z`` (1/8).  The plain decoder upsamples ``z``
back to an image.  The bypass decoder additionally adds a 1x1 fusion of each
skip before the next upsampling and finishes with a residual block.  Fusion
convs have no bias and start at zero, and the residual block's last conv
starts at zero, so before fine-tuning the bypass decoder reproduces the plain
decoder bit for bit.

Training has two phases: plain reconstruction I -> I, then fine-tuning of the
fusion and post layers so that ``decode_bypass(encode(I).z, encode(I~).skips)``
reconstructs I, where I~ is an illumination-jittered, noisy copy of I.
"""
import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .distortion import JitterRanges, distort, sample_specs
from .errors import InvalidArgumentError, NumericError
from .imagecore import ImageF, as_image
from .nn import Conv2d, LeakyReLU, ParamStore, sgd_step, upsample2x, upsample2x_backward
from .synth import make_rng, synth_image

LUMA = np.array([0.299, 0.587, 0.114])


class ToyAE:
    def __init__(self, widths=(16, 32, 64), latent=64, slope=0.2, seed=0, channels=3):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) != 3:
            raise InvalidArgumentError("ToyAE needs exactly three stage widths")
        self.latent, self.slope, self.seed, self.channels = int(latent), slope, seed, channels
        w0, w1, w2 = self.widths
        s = self.store = ParamStore()
        self.enc = [
            Conv2d(s, "enc0", channels, w0),
            Conv2d(s, "enc1", w0, w1, stride=2),
            Conv2d(s, "enc2", w1, w2, stride=2),
            Conv2d(s, "enc3", w2, self.latent, stride=2),
        ]
        self.dec = [
            Conv2d(s, "dec3", self.latent, w2),
            Conv2d(s, "dec2", w2, w1),
            Conv2d(s, "dec1", w1, w0),
        ]
        self.out = Conv2d(s, "out", w0, channels)
        # fusion for skips z3, z2, z1 (aligned with dec3, dec2, dec1)
        self.fuse = [
            Conv2d(s, "fuse3", w2, w2, k=1, bias=False),
            Conv2d(s, "fuse2", w1, w1, k=1, bias=False),
            Conv2d(s, "fuse1", w0, w0, k=1, bias=False),
        ]
        self.post = [Conv2d(s, "post1", channels, channels), Conv2d(s, "post2", channels, channels)]
        self.act = LeakyReLU(slope)
        s.finalize()
        rng = make_rng(seed, "toyae-init")
        for conv in self.enc + self.dec + [self.out, self.post[0]]:
            conv.init(rng, "he", slope)
        for conv in self.fuse + [self.post[1]]:
            conv.init(rng, "zero")

    def arch(self):
        return {"widths": list(self.widths), "latent": self.latent, "slope": self.slope,
                "seed": self.seed, "channels": self.channels}

    def bypass_mask(self, include_decoder=False):
        """1.0 on parameters that the fusion phase trains."""
        mask = np.zeros(len(self.store))
        prefixes = ("fuse", "post") + (("dec", "out") if include_decoder else ())
        for name in self.store.names():
            if name.startswith(prefixes):
                mask[self._slice(name)] = 1.0
        return mask

    def _slice(self, name):
        off, shape = self.store._layout[name]
        return slice(off, off + int(np.prod(shape)))

    def init_bypass_random(self, scale=0.1, seed=1):
        """Give fusion and post layers random weights (used for gradient audits)."""
        rng = make_rng(seed, "toyae-bypass-random")
        for name in ("fuse3.w", "fuse2.w", "fuse1.w", "post2.w", "post2.b"):
            p = self.store.p(name)
            p[...] = scale * rng.standard_normal(p.shape)

    # ---- encoder -------------------------------------------------------
    def encode_arrays(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[2] % 8 or x.shape[3] % 8:
            raise InvalidArgumentError(f"spatial dims must be multiples of 8, got {x.shape[2:]}")
        caches, feats = [], []
        h = x
        for i, conv in enumerate(self.enc):
            h, cc = conv.forward(h)
            ca = None
            if i < 3:
                h, ca = self.act.forward(h)
                feats.append(h)
            caches.append((cc, ca))
        return h, tuple(feats), caches

    def encode_backward(self, caches, dz, dskips=(None, None, None)):
        # dskips[i] is the gradient w.r.t. the activated output of enc[i]
        dh = dz
        for i in range(3, -1, -1):
            cc, ca = caches[i]
            if i < 3 and dskips[i] is not None:
                dh = dskips[i] if dh is None else dh + dskips[i]
            if dh is None:
                continue
            if i < 3:
                dh = self.act.backward(ca, dh)
            dh = self.enc[i].backward(cc, dh, need_dx=i > 0)
        return dh

    # ---- decoder -------------------------------------------------------
    def decode_arrays(self, z, skips=None):
        """Plain decoding when ``skips`` is None, bypass decoding otherwise."""
        z = np.asarray(z, dtype=np.float64)
        if skips is not None:
            self._check_skips(z, skips)
        caches = []
        h = z
        for i, conv in enumerate(self.dec):
            h = upsample2x(h)
            h, cc = conv.forward(h)
            h, ca = self.act.forward(h)
            cf = None
            if skips is not None:
                f, cf = self.fuse[i].forward(skips[2 - i])
                h = h + f
            caches.append((cc, ca, cf))
        y, co = self.out.forward(h)
        cp = None
        if skips is not None:
            r, c1 = self.post[0].forward(y)
            r, ca = self.act.forward(r)
            r, c2 = self.post[1].forward(r)
            cp = (c1, ca, c2)
            y = y + r
        return y, (caches, co, cp)

    def decode_backward(self, cache, dy, need_dz=True):
        """Returns ``(dz, dskips)`` with dskips ordered (z1, z2, z3)."""
        caches, co, cp = cache
        if cp is not None:
            c1, ca, c2 = cp
            dr = self.post[1].backward(c2, dy)
            dr = self.act.backward(ca, dr)
            dy = dy + self.post[0].backward(c1, dr)
        dh = self.out.backward(co, dy)
        dskips = [None, None, None]
        for i in range(2, -1, -1):
            cc, ca, cf = caches[i]
            if cf is not None:
                dskips[2 - i] = self.fuse[i].backward(cf, dh)
            dh = self.act.backward(ca, dh)
            dh = self.dec[i].backward(cc, dh, need_dx=need_dz or i > 0)
            if dh is not None:
                dh = upsample2x_backward(dh)
        return dh, tuple(dskips)

    def _check_skips(self, z, skips):
        n, _, h, w = z.shape
        expect = [(n, self.widths[0], 8 * h, 8 * w), (n, self.widths[1], 4 * h, 4 * w), (n, self.widths[2], 2 * h, 2 * w)]
        if len(skips) != 3 or any(np.shape(s) != e for s, e in zip(skips, expect)):
            raise InvalidArgumentError(f"skip shapes {[np.shape(s) for s in skips]} do not match {expect}")


def _nchw(img):
    return as_image(img).as_float64().transpose(2, 0, 1)[None]


def _image(arr):
    return ImageF(np.asarray(arr)[0].transpose(1, 2, 0))


def encode(ae, img):
    """``(z, z1, z2, z3)`` as ``(1, C, H, W)`` arrays."""
    z, skips, _ = ae.encode_arrays(_nchw(img))
    return (z, *skips)


def decode_plain(ae, z):
    return _image(ae.decode_arrays(z)[0])


def decode_bypass(ae, z, skips):
    return _image(ae.decode_arrays(z, skips)[0])


@dataclass
class BypassConfig:
    size: int = 64
    widths: tuple = (16, 32, 64)
    latent: int = 64
    batch: int = 4
    pretrain_steps: int = 1000
    pretrain_lr: float = 0.5
    steps: int = 500
    lr: float = 0.5
    max_grad_norm: float = 1.0
    seed: int = 0
    texture: bool = True
    train_decoder: bool = False
    jitter: dict = field(default_factory=lambda: JitterRanges().to_dict())

    def __post_init__(self):
        if self.size % 8 or self.size < 8:
            raise InvalidArgumentError("size must be a positive multiple of 8")
        if self.batch < 1 or self.steps < 0 or self.pretrain_steps < 0:
            raise InvalidArgumentError("batch >= 1, steps >= 0 required")
        if not (self.lr >= 0 and self.pretrain_lr >= 0 and math.isfinite(self.lr + self.pretrain_lr)):
            raise InvalidArgumentError("learning rates must be finite and >= 0")
        self.widths = tuple(int(w) for w in self.widths)

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown BypassConfig keys: {sorted(unknown)}")
        return cls(**d)


def _mse_and_grad(y, target):
    diff = y - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def make_pair(rng, cfg, ranges):
    """``(I, I~)`` as NCHW arrays."""
    img = synth_image(rng, cfg.size, texture=cfg.texture)
    ill, noise = sample_specs(rng, ranges)
    return _nchw(img), _nchw(distort(img, ill, noise))


def pair_batch(rng, cfg, ranges, n):
    pairs = [make_pair(rng, cfg, ranges) for _ in range(n)]
    return np.concatenate([p[0] for p in pairs]), np.concatenate([p[1] for p in pairs])


def plain_step(ae, x):
    z, _, ec = ae.encode_arrays(x)
    y, dc = ae.decode_arrays(z)
    loss, dy = _mse_and_grad(y, x)
    ae.store.zero_grad()
    dz, _ = ae.decode_backward(dc, dy)
    ae.encode_backward(ec, dz)
    return loss


def bypass_loss(ae, clean, distorted):
    z, _, _ = ae.encode_arrays(clean)
    _, skips, _ = ae.encode_arrays(distorted)
    y, _ = ae.decode_arrays(z, skips)
    return _mse_and_grad(y, clean)[0]


def bypass_step(ae, clean, distorted, through_encoder=False):
    """Loss and gradients of the bypass objective; the encoder is frozen unless asked."""
    z, _, ec_clean = ae.encode_arrays(clean)
    _, skips, ec_dist = ae.encode_arrays(distorted)
    y, dc = ae.decode_arrays(z, skips)
    loss, dy = _mse_and_grad(y, clean)
    ae.store.zero_grad()
    dz, dskips = ae.decode_backward(dc, dy, need_dz=through_encoder)
    if through_encoder:
        ae.encode_backward(ec_clean, dz)
        ae.encode_backward(ec_dist, None, dskips)
    return loss


@dataclass
class BypassResult:
    ae: ToyAE
    trace: list  # (step, phase, loss)
    config: BypassConfig

    def trace_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "phase", "loss"])
        for step, phase, loss in self.trace:
            w.writerow([step, phase, repr(loss)])
        return buf.getvalue()


def train_bypass(cfg=None, ae=None, progress=None):
    """Plain pretraining (skipped if ``pretrain_steps == 0``), then fusion training."""
    cfg = cfg or BypassConfig()
    ranges = JitterRanges.from_dict(cfg.jitter)
    if ae is None:
        ae = ToyAE(widths=cfg.widths, latent=cfg.latent, seed=cfg.seed)
    rng = make_rng(cfg.seed, "train-bypass")
    trace = []

    def check(loss, step):
        if not (math.isfinite(loss) and np.isfinite(ae.store.params).all()):
            raise NumericError(f"bypass training diverged at step {step}", step=step)

    for step in range(cfg.pretrain_steps):
        x = np.concatenate([_nchw(synth_image(rng, cfg.size, texture=cfg.texture)) for _ in range(cfg.batch)])
        loss = plain_step(ae, x)
        sgd_step(ae.store, cfg.pretrain_lr, cfg.max_grad_norm, mask=None)
        check(loss, step)
        trace.append((step, "plain", loss))
        if progress:
            progress("plain", step, loss)

    mask = ae.bypass_mask(include_decoder=cfg.train_decoder)
    for step in range(cfg.steps):
        clean, dist = pair_batch(rng, cfg, ranges, cfg.batch)
        loss = bypass_step(ae, clean, dist)
        sgd_step(ae.store, cfg.lr, cfg.max_grad_norm, mask=mask)
        check(loss, step)
        trace.append((step, "bypass", loss))
        if progress:
            progress("bypass", step, loss)
    return BypassResult(ae=ae, trace=trace, config=cfg)


def evaluate_bypass(ae, cfg, seed=12345, n=16, label="bypass-heldout"):
    """Held-out comparison of plain vs bypass decoding.

    Returns a dict with mean MSEs and the mean absolute luminance gap of the
    bypass output to the clean image and to the distorted image.
    """
    rng = make_rng(seed, label)
    ranges = JitterRanges.from_dict(cfg.jitter)
    mse_b, mse_p, lum_clean, lum_dist = [], [], [], []
    for _ in range(n):
        clean, dist = make_pair(rng, cfg, ranges)
        z, _, _ = ae.encode_arrays(clean)
        _, skips, _ = ae.encode_arrays(dist)
        yb = ae.decode_arrays(z, skips)[0]
        yp = ae.decode_arrays(z)[0]
        mse_b.append(float(np.mean((yb - clean) ** 2)))
        mse_p.append(float(np.mean((yp - clean) ** 2)))
        lb = float(np.mean(np.tensordot(LUMA, np.clip(yb[0], 0, 1), axes=1)))
        lum_clean.append(abs(lb - float(np.mean(np.tensordot(LUMA, clean[0], axes=1)))))
        lum_dist.append(abs(lb - float(np.mean(np.tensordot(LUMA, dist[0], axes=1)))))
    return {"mse_bypass": float(np.mean(mse_b)), "mse_plain": float(np.mean(mse_p)),
            "lum_gap_clean": float(np.mean(lum_clean)), "lum_gap_distorted": float(np.mean(lum_dist)),
            "frac_bypass_better": float(np.mean(np.array(mse_b) < np.array(mse_p)))}


def save_toyae(path, ae, config=None):
    header = {"arch": ae.arch(), "seed": ae.seed, "config": config.to_dict() if config else None}
    save_checkpoint(path, "toyae", header, ae.store.params)


def load_toyae(path):
    header, params = load_checkpoint(path, kind="toyae")
    a = header["arch"]
    ae = ToyAE(widths=a["widths"], latent=a["latent"], slope=a["slope"], seed=a["seed"], channels=a["channels"])
    ae.store.load(params)
    cfg = BypassConfig.from_dict(header["config"]) if header.get("config") else None
    return ae, cfg
