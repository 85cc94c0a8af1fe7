"""``quadprior`` command-line tool.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 numeric failure, 4 selftest failure.

Config files are JSON; command-line flags override them.  ``--seed`` is a
master seed: every random stream below it is derived by labeled hashing, so a
command is reproducible from its inputs, config and seed alone.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import kernels
from .errors import ImageIOError, InvalidArgumentError, NumericError, QuadPriorError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_SELFTEST = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for I/O here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_json(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot read config ({exc})") from exc
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"{path}: config must be a JSON object")
    return data


def _require_file(path):
    if not os.path.isfile(path):
        raise ImageIOError(f"{path}: no such file")


def _require_out_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d):
        raise ImageIOError(f"{d}: output directory does not exist")


def _override(d, **flags):
    out = dict(d)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _sub_seed(master, label):
    from .synth import derive_seed

    # spec dataclasses take non-negative ints below 2**63
    return derive_seed(master, label) >> 1


# ---- prior ----------------------------------------------------------------
def _color_model(cfg, args):
    from .prior import ColorModel

    d = _override(ColorModel().to_dict(), **cfg.get("color_model", {}))
    d = _override(d, sigma=args.sigma, eps=args.eps, arg_clamp=args.arg_clamp)
    return ColorModel.from_dict(d)


def _viz(prior, directory):
    from .imagecore import ImageF, save_png
    from .prior import QuadPrior

    os.makedirs(directory, exist_ok=True)
    stack = prior.stack().as_float64()
    for i, name in enumerate(QuadPrior.CHANNELS):
        ch = stack[..., i]
        lo, hi = float(ch.min()), float(ch.max())
        norm = (ch - lo) / (hi - lo) if hi > lo else np.full_like(ch, 0.5)
        save_png(ImageF(norm[..., None]), os.path.join(directory, f"prior_{name}.png"))


def cmd_prior(args):
    from .imagecore import load_png, save_qpt
    from .prior import extract_prior

    cfg = _load_json(args.config)
    cm = _color_model(cfg, args)
    _require_file(args.input)
    _require_out_dir(args.output)
    img = load_png(args.input)
    if img.channels != 3:
        raise InvalidArgumentError(f"{args.input}: need an RGB image, got {img.channels} channels")
    prior = extract_prior(img, cm)
    stack = prior.stack()
    if not np.isfinite(stack.data).all():
        raise NumericError("prior contains non-finite values")
    save_qpt(stack, args.output)
    if args.viz:
        _viz(prior, args.viz)
    return EXIT_OK


# ---- distort --------------------------------------------------------------
def distort_specs(spec, args):
    """Merge a JSON spec with flags into ``(IlluminationSpec or None, NoiseSpec or None)``."""
    from .distortion import IlluminationSpec, NoiseSpec

    unknown = set(spec) - {"illumination", "noise"}
    if unknown:
        raise InvalidArgumentError(f"unknown distortion spec keys: {sorted(unknown)}")
    ill_d = dict(spec.get("illumination", {}))
    noise_d = dict(spec.get("noise", {}))
    field = None
    if args.field_lo is not None or args.field_hi is not None:
        lo, hi = ill_d.get("field_range", (1.0, 1.0))
        field = (args.field_lo if args.field_lo is not None else lo, args.field_hi if args.field_hi is not None else hi)
    ill_d = _override(ill_d, gain=args.gain, gamma=args.gamma, field_sigma=args.field_sigma, field_range=field)
    noise_d = _override(noise_d, gauss_sigma=args.gauss_sigma, poisson_peak=args.poisson_peak)
    master = args.seed if args.seed is not None else 0
    if args.seed is not None or "seed" not in ill_d:
        ill_d["seed"] = _sub_seed(master, "distort/illumination")
    if args.seed is not None or "seed" not in noise_d:
        noise_d["seed"] = _sub_seed(master, "distort/noise")
    use_ill = "illumination" in spec or any(
        v is not None for v in (args.gain, args.gamma, args.field_sigma, args.field_lo, args.field_hi))
    use_noise = "noise" in spec or args.gauss_sigma is not None or args.poisson_peak is not None
    ill = IlluminationSpec.from_dict(ill_d) if use_ill else None
    noise = NoiseSpec.from_dict(noise_d) if use_noise else None
    return ill, noise


def cmd_distort(args):
    from .distortion import distort
    from .imagecore import load_png, save_png

    ill, noise = distort_specs(_load_json(args.spec), args)
    _require_file(args.input)
    _require_out_dir(args.output)
    save_png(distort(load_png(args.input), ill, noise), args.output)
    return EXIT_OK


# ---- training -------------------------------------------------------------
def _progress(enabled, every=100):
    if not enabled:
        return None

    def report(*fields):
        step = fields[-2]
        if step % every == 0:
            print(" ".join(str(f) if not isinstance(f, float) else f"{f:.6g}" for f in fields), file=sys.stderr)
    return report


def _write_text(path, text):
    from .imagecore import atomic_write_bytes

    try:
        atomic_write_bytes(path, text.encode())
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write ({exc})") from exc


def cmd_train_toy(args):
    from .toymodel import TrainConfig, save_convnet, train_toy

    cfg = _override(_load_json(args.config), steps=args.steps, batch=args.batch, lr=args.lr, size=args.size,
                    seed=args.seed)
    cfg = TrainConfig.from_dict(cfg)
    _require_out_dir(args.out)
    if args.trace:
        _require_out_dir(args.trace)
    result = train_toy(cfg, progress=_progress(args.verbose))
    save_convnet(args.out, result.net, cfg)
    if args.trace:
        _write_text(args.trace, result.trace_csv())
    return EXIT_OK


def cmd_train_bypass(args):
    from .bypassdec import BypassConfig, save_toyae, train_bypass

    cfg = _override(_load_json(args.config), steps=args.steps, pretrain_steps=args.pretrain_steps,
                    batch=args.batch, lr=args.lr, size=args.size, seed=args.seed)
    cfg = BypassConfig.from_dict(cfg)
    _require_out_dir(args.out)
    if args.trace:
        _require_out_dir(args.trace)
    result = train_bypass(cfg, progress=_progress(args.verbose))
    save_toyae(args.out, result.ae, cfg)
    if args.trace:
        _write_text(args.trace, result.trace_csv())
    return EXIT_OK


# ---- enhance ---------------------------------------------------------------
def enhance(low, net, cfg, seed, ae=None):
    """Toy enhancement; with ``ae`` the sample is re-decoded with skips from ``low``."""
    from .bypassdec import decode_bypass, encode
    from .diffmath import NoiseSchedule
    from .prior import ColorModel
    from .toymodel import enhance_toy

    sched = NoiseSchedule.from_dict(cfg.schedule) if cfg else None
    cm = ColorModel.from_dict(cfg.color_model) if cfg else None
    out = enhance_toy(net, low, cm, sched, seed=_sub_seed(seed, "enhance"))
    if ae is not None:
        z = encode(ae, out)[0]
        skips = encode(ae, low)[1:]
        out = decode_bypass(ae, z, skips)
        out = type(out)(np.clip(out.as_float64(), 0.0, 1.0))
    return out


def cmd_enhance(args):
    from .bypassdec import load_toyae
    from .imagecore import load_png, save_png
    from .toymodel import load_convnet

    for p in (args.input, args.checkpoint) + ((args.bypass,) if args.bypass else ()):
        _require_file(p)
    _require_out_dir(args.output)
    net, cfg = load_convnet(args.checkpoint)
    ae = load_toyae(args.bypass)[0] if args.bypass else None
    low = load_png(args.input)
    if low.channels != 3:
        raise InvalidArgumentError(f"{args.input}: need an RGB image, got {low.channels} channels")
    if ae is not None and (low.height % 8 or low.width % 8):
        raise InvalidArgumentError("--bypass needs image sides that are multiples of 8")
    out = enhance(low, net, cfg, args.seed if args.seed is not None else 0, ae)
    if not np.isfinite(out.data).all():
        raise NumericError("enhanced image contains non-finite values")
    save_png(out, args.output)
    return EXIT_OK


# ---- eval / selftest -------------------------------------------------------
def cmd_eval(args):
    from .metrics import evaluate_dirs, report_csv

    for d in (args.enhanced, args.reference):
        if not os.path.isdir(d):
            raise ImageIOError(f"{d}: not a directory")
    _require_out_dir(args.output)
    _write_text(args.output, report_csv(evaluate_dirs(args.enhanced, args.reference)))
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_all

    results = run_all()
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


# ---- parser ----------------------------------------------------------------
def build_parser():
    p = _Parser(prog="quadprior", description="Illumination-invariant priors and toy enhancement tools.")
    p.add_argument("--backend", choices=["auto", "native", "python"], default=None,
                   help="kernel backend (default: QUADPRIOR_BACKEND or auto)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prior", help="extract the quadruple prior as a 6-channel QPT1 dump")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--config", help="JSON with a 'color_model' object")
    s.add_argument("--sigma", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--arg-clamp", type=float)
    s.add_argument("--viz", metavar="DIR", help="also write each channel as a normalized PNG")
    s.set_defaults(func=cmd_prior)

    s = sub.add_parser("distort", help="apply illumination change and sensor noise")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--spec", help="JSON with optional 'illumination' and 'noise' objects")
    s.add_argument("--seed", type=int)
    s.add_argument("--gain", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--field-sigma", type=float)
    s.add_argument("--field-lo", type=float)
    s.add_argument("--field-hi", type=float)
    s.add_argument("--gauss-sigma", type=float)
    s.add_argument("--poisson-peak", type=float)
    s.set_defaults(func=cmd_distort)

    for name, func, extra in (("train-toy", cmd_train_toy, False), ("train-bypass", cmd_train_bypass, True)):
        s = sub.add_parser(name, help=f"run the {name[6:]} training loop")
        s.add_argument("--out", required=True, help="checkpoint path")
        s.add_argument("--trace", help="CSV loss trace path")
        s.add_argument("--config", help="JSON training config")
        s.add_argument("--seed", type=int)
        s.add_argument("--steps", type=int)
        s.add_argument("--batch", type=int)
        s.add_argument("--lr", type=float)
        s.add_argument("--size", type=int)
        if extra:
            s.add_argument("--pretrain-steps", type=int)
        s.add_argument("-v", "--verbose", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("enhance", help="enhance a low-light PNG with a trained toy model")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--bypass", help="toy autoencoder checkpoint for bypass decoding")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("eval", help="PSNR/SSIM/LOE report for matching PNG names")
    s.add_argument("enhanced")
    s.add_argument("reference")
    s.add_argument("output")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", help="run the quick built-in verification suites")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"{exc}\n{parser.format_usage()}", end="", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.backend:
            kernels.set_backend(args.backend)
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ImageIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidArgumentError, QuadPriorError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
