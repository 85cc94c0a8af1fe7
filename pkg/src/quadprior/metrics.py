"""Full-reference quality metrics: PSNR, SSIM and lightness-order error (LOE)."""
import csv
import io
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .imagecore import ImageF, filter_axis

PSNR_CAP = 99.0


def _arr(x):
    if isinstance(x, ImageF):
        return x.as_float64()
    a = np.asarray(x, dtype=np.float64)
    return a[..., None] if a.ndim == 2 else a


def _pair(a, b):
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """10 log10(1 / MSE) for [0, 1] images, capped at 99 dB."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


@dataclass(frozen=True)
class SSIMConfig:
    window: int = 11
    sigma: float = 1.5
    K1: float = 0.01
    K2: float = 0.03
    L: float = 1.0

    def taps(self):
        r = self.window // 2
        x = np.arange(-r, r + 1, dtype=np.float64)
        g = np.exp(-x * x / (2.0 * self.sigma ** 2))
        return g / g.sum()


def _valid_blur(x, taps):
    r = taps.shape[0] // 2
    y = filter_axis(filter_axis(x, taps, 1), taps, 0)
    return y[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim_map(a, b, cfg=SSIMConfig()):
    """Local SSIM of two single-channel arrays over the valid window positions."""
    if a.shape[0] < cfg.window or a.shape[1] < cfg.window:
        raise InvalidArgumentError(f"image {a.shape} is smaller than the {cfg.window}x{cfg.window} window")
    taps = cfg.taps()
    c1 = (cfg.K1 * cfg.L) ** 2
    c2 = (cfg.K2 * cfg.L) ** 2
    mu_a = _valid_blur(a, taps)
    mu_b = _valid_blur(b, taps)
    var_a = _valid_blur(a * a, taps) - mu_a * mu_a
    var_b = _valid_blur(b * b, taps) - mu_b * mu_b
    cov = _valid_blur(a * b, taps) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, cfg=SSIMConfig()):
    """Mean local SSIM; multi-channel images average the per-channel scores."""
    a, b = _pair(a, b)
    scores = [float(np.mean(ssim_map(a[..., c], b[..., c], cfg))) for c in range(a.shape[2])]
    return float(np.mean(scores))


def area_resize(x, out_h, out_w):
    """Resample a 2-D array by exact area averaging (works for up- and down-sampling)."""
    def weights(n_in, n_out):
        edges_out = np.arange(n_out + 1) * (n_in / n_out)
        lo = np.minimum.outer(edges_out[1:], np.arange(1, n_in + 1))
        hi = np.maximum.outer(edges_out[:-1], np.arange(n_in))
        return np.clip(lo - hi, 0.0, None) / (n_in / n_out)

    return weights(x.shape[0], out_h) @ x @ weights(x.shape[1], out_w).T


LOE_GRID = 50


def lightness(img):
    return _arr(img).max(axis=2)


def loe(enhanced, reference, grid=LOE_GRID):
    """Fraction of pixel pairs whose lightness order differs between the two images.

    Lightness is the per-pixel max over channels; each image is independently
    area-resampled to ``grid x grid`` and all ordered pairs are compared.
    """
    le = area_resize(lightness(enhanced), grid, grid).ravel()
    lr = area_resize(lightness(reference), grid, grid).ravel()
    ge_e = le[:, None] >= le[None, :]
    ge_r = lr[:, None] >= lr[None, :]
    return float(np.count_nonzero(ge_e != ge_r)) / ge_e.size


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    loe: float


def evaluate(enhanced, reference, ssim_cfg=SSIMConfig()):
    return MetricReport(psnr(enhanced, reference), ssim(enhanced, reference, ssim_cfg), loe(enhanced, reference))


def evaluate_dirs(dir_enhanced, dir_reference, ssim_cfg=SSIMConfig()):
    """Rows ``(filename, MetricReport)`` for every PNG name present in ``dir_enhanced``."""
    from .imagecore import load_png

    names = sorted(n for n in os.listdir(dir_enhanced) if n.lower().endswith(".png"))
    rows = []
    for name in names:
        ref_path = os.path.join(dir_reference, name)
        if not os.path.exists(ref_path):
            raise InvalidArgumentError(f"no reference image for {name} in {dir_reference}")
        enh = load_png(os.path.join(dir_enhanced, name))
        ref = load_png(ref_path)
        rows.append((name, evaluate(enh, ref, ssim_cfg)))
    return rows


def report_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["filename", "psnr", "ssim", "loe"])
    for name, r in rows:
        w.writerow([name, f"{r.psnr:.6f}", f"{r.ssim:.6f}", f"{r.loe:.6f}"])
    return buf.getvalue()
