"""Regenerate the frozen reference outputs in this directory.

    python3 tests/golden/generate.py [--skip-training]

The toy training run takes a few minutes; ``--skip-training`` refreshes only
the cheap fixtures.  Goldens are recorded with whichever kernel backend is
active and the backend name is stored in ``manifest.json``.
"""
import argparse
import json
import os
import platform

import numpy as np

from quadprior import kernels
from quadprior.bypassdec import BypassConfig, save_toyae, train_bypass
from quadprior.distortion import IlluminationSpec, apply_illumination
from quadprior.imagecore import ImageF, save_qpt, write_json
from quadprior.prior import extract_prior
from quadprior.synth import make_rng, synth_image
from quadprior.toymodel import TrainConfig, enhancement_gains, heldout_lowlight, save_convnet, train_toy, write_trace

HERE = os.path.dirname(os.path.abspath(__file__))

FIELD_SPEC = IlluminationSpec(field_sigma=4.0, field_range=(0.3, 1.0), seed=7)
BYPASS_SMALL = BypassConfig(size=32, widths=(8, 8, 8), latent=8, batch=2, pretrain_steps=100, steps=50, seed=4)


def prior_fixture():
    return synth_image(make_rng(2024, "golden-prior"), 16)


def bypass_fixture():
    rng = make_rng(2024, "golden-bypass")
    return synth_image(rng, 32, texture=True), synth_image(rng, 32, texture=True)


def bypass_output(ae, clean, dist):
    from quadprior.bypassdec import decode_bypass, encode

    z = encode(ae, clean)[0]
    return decode_bypass(ae, z, encode(ae, dist)[1:])


def path(name):
    return os.path.join(HERE, name)


def cheap():
    img = prior_fixture()
    save_qpt(img, path("prior_fixture.qpt"))
    save_qpt(extract_prior(img).stack(), path("prior_16x16.qpt"))

    save_qpt(apply_illumination(ImageF.constant(32, 32, 1.0), FIELD_SPEC), path("illumination_field.qpt"))

    res = train_bypass(BYPASS_SMALL)
    save_toyae(path("bypass_small.qpc"), res.ae, BYPASS_SMALL)
    clean, dist = bypass_fixture()
    # the checkpoint stores float32, so the dump comes from the reloaded model
    from quadprior.bypassdec import load_toyae

    ae, _ = load_toyae(path("bypass_small.qpc"))
    save_qpt(bypass_output(ae, clean, dist), path("bypass_output.qpt"))


def training():
    cfg = TrainConfig()
    res = train_toy(cfg)
    write_trace(path("toy_trace.csv"), res.trace)
    save_convnet(path("toy_convnet.qpc"), res.net, cfg)
    rows = np.array(enhancement_gains(res.net, heldout_lowlight(), cfg))
    tr = np.array(res.trace)
    return {
        "toy_first100_loss_diff": float(tr[:100, 3].mean()),
        "toy_last100_loss_diff": float(tr[-100:, 3].mean()),
        "toy_mean_psnr_gain": float((rows[:, 1] - rows[:, 0]).mean()),
        "toy_frac_improved": float((rows[:, 1] > rows[:, 0]).mean()),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--skip-training", action="store_true")
    args = ap.parse_args()
    manifest_path = path("manifest.json")
    manifest = json.load(open(manifest_path)) if os.path.exists(manifest_path) else {}
    cheap()
    if not args.skip_training:
        manifest.update(training())
    manifest.update({"backend": kernels.BACKEND, "numpy": np.__version__, "machine": platform.machine()})
    write_json(manifest, manifest_path)
    print(json.dumps(manifest, indent=2))


if __name__ == "__main__":
    main()
