"""Built-in verification suites used by ``quadprior selftest``.

Each suite returns a :class:`SuiteResult`; sizes are kept small so the whole
run takes seconds.  The test-suite runs larger versions of the same checks.
"""
from dataclasses import dataclass, field

import numpy as np

from .bypassdec import BypassConfig, ToyAE, bypass_loss, bypass_step, pair_batch
from .diffmath import diff_loss_and_grad, forward_sample, make_linear_schedule, reconstruct_z0, toy_schedule
from .distortion import IlluminationSpec, JitterRanges, apply_illumination
from .imagecore import parse_qpt, qpt_bytes
from .nn import fd_check
from .prior import ColorModel, extract_prior, tie_free, valid_mask
from .synth import make_rng, synth_image
from .toymodel import ConvNet, TrainConfig, validation_set

GAINS = (0.1, 0.25, 0.5, 0.75)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def line(self):
        info = ", ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.details.items())
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {info}"


def _rms(a, b, mask):
    d = (a - b)[mask]
    return float(np.sqrt(np.mean(d * d))) if d.size else 0.0


def invariance_suite(n_images=4, size=32, gains=GAINS, tol=1e-4, seed=0, cm=None):
    """RMS change of H, C, W under global gain on the valid mask; O on tie-free pixels."""
    cm = cm or ColorModel()
    rng = make_rng(seed, "selftest-invariance")
    worst = {"H": 0.0, "C": 0.0, "W": 0.0}
    o_changed = 0
    for _ in range(n_images):
        img = synth_image(rng, size)
        ref = extract_prior(img, cm)
        for k in gains:
            dim = apply_illumination(img, IlluminationSpec(gain=k))
            p = extract_prior(dim, cm)
            mask = valid_mask(dim, cm)
            worst["H"] = max(worst["H"], _rms(p.H, ref.H, mask))
            worst["C"] = max(worst["C"], _rms(p.C, ref.C, mask))
            worst["W"] = max(worst["W"], _rms(p.Wmap, ref.Wmap, mask))
            tf = tie_free(dim.as_float64())
            o_changed += int(np.count_nonzero((p.O != ref.O)[tf]))
    ok = max(worst.values()) < tol and o_changed == 0
    return SuiteResult("invariance", ok, {"rms_H": worst["H"], "rms_C": worst["C"], "rms_W": worst["W"],
                                          "O_changed": o_changed})


def roundtrip_suite(n_tensors=10, shape=(3, 8, 8), tol=1e-5, seed=0):
    """reconstruct_z0(forward_sample(z0, t, eps), eps) == z0 for every t of a T=1000 schedule."""
    sched = make_linear_schedule(1000)
    rng = make_rng(seed, "selftest-roundtrip")
    t = np.arange(1, sched.T + 1)
    worst = 0.0
    for _ in range(n_tensors):
        z0 = np.broadcast_to(rng.standard_normal(shape), (sched.T, *shape))
        eps = rng.standard_normal((sched.T, *shape))
        zt = forward_sample(z0, t, eps, sched)
        worst = max(worst, float(np.abs(reconstruct_z0(zt, eps, t, sched) - z0).max()))
    # file round trip of a prior dump
    img = synth_image(rng, 16)
    stack = extract_prior(img).stack().data
    qpt_ok = np.array_equal(parse_qpt(qpt_bytes(stack)), stack)
    return SuiteResult("roundtrip", worst < tol and qpt_ok, {"max_abs": worst, "qpt_identical": qpt_ok})


def convnet_gradcheck(widths=(16, 16, 16), size=8, batch=2, seed=1, h=1e-3, indices=None):
    """Kink-aware FD audit of the full toy denoiser under loss_diff."""
    net = ConvNet(widths=widths, seed=seed, zero_final=False)
    sched = toy_schedule()
    z0, prior, t, eps = validation_set(seed, batch, TrainConfig(size=size, widths=widths))
    zt = forward_sample(z0, t, eps, sched)
    eps_hat = net.forward(zt, prior, t)
    grad = diff_loss_and_grad(z0, zt, eps, eps_hat, t, sched)[3]
    net.store.zero_grad()
    net.backward(grad)

    def loss():
        return diff_loss_and_grad(z0, zt, eps, net.forward(zt, prior, t, cache=False), t, sched)[2]

    errs, _ = fd_check(loss, net.store, h=h, indices=indices)
    return errs, len(net.store)


def toyae_gradcheck(widths=(4, 4, 4), latent=4, size=16, batch=2, seed=3, h=1e-3, indices=None):
    """Kink-aware FD audit of a reduced bypass autoencoder, encoder included."""
    ae = ToyAE(widths=widths, latent=latent, seed=seed)
    ae.init_bypass_random(0.3, seed=seed)
    clean, dist = pair_batch(make_rng(seed, "gradcheck-pairs"), BypassConfig(size=size, widths=widths, latent=latent),
                             JitterRanges(), batch)
    bypass_step(ae, clean, dist, through_encoder=True)
    errs, _ = fd_check(lambda: bypass_loss(ae, clean, dist), ae.store, h=h, indices=indices)
    return errs, len(ae.store)


def gradient_suite(tol=1e-3, n_coords=400, seed=0):
    """Spot-check a random subset of coordinates of both models."""
    rng = make_rng(seed, "selftest-gradient")
    net_n = len(ConvNet(widths=(8, 8, 8), zero_final=False).store)
    ae_n = len(ToyAE(widths=(4, 4, 4), latent=4).store)
    e1, _ = convnet_gradcheck(widths=(8, 8, 8), indices=rng.choice(net_n, min(n_coords, net_n), replace=False))
    e2, _ = toyae_gradcheck(indices=rng.choice(ae_n, min(n_coords, ae_n), replace=False))
    worst_net, worst_ae = float(e1.max()), float(e2.max())
    return SuiteResult("gradient", max(worst_net, worst_ae) < tol, {"convnet": worst_net, "toyae": worst_ae})


def zero_init_suite(seed=0):
    ae = ToyAE(seed=seed)
    x = np.stack([synth_image(make_rng(seed, "selftest-zero-init"), 32).as_float64().transpose(2, 0, 1)])
    z, skips, _ = ae.encode_arrays(x)
    same = np.array_equal(ae.decode_arrays(z)[0], ae.decode_arrays(z, skips)[0])
    return SuiteResult("zero-init", bool(same), {"identical": bool(same)})


def run_all():
    return [invariance_suite(), roundtrip_suite(), gradient_suite(), zero_init_suite()]


__all__ = ["SuiteResult", "invariance_suite", "roundtrip_suite", "gradient_suite", "zero_init_suite",
           "convnet_gradcheck", "toyae_gradcheck", "run_all"]
