import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadprior.errors import InvalidArgumentError
from quadprior.imagecore import ImageF, save_png
from quadprior.metrics import (
    LOE_GRID,
    SSIMConfig,
    area_resize,
    evaluate,
    evaluate_dirs,
    loe,
    psnr,
    report_csv,
    ssim,
)
from quadprior.synth import make_rng, synth_image


def img(seed, size=32):
    return synth_image(make_rng(seed, "metrics"), size, texture=True)


# ---- PSNR --------------------------------------------------------------------
def test_psnr_cap():
    a = img(0)
    assert psnr(a, a) == 99.0


def test_psnr_20db():
    a = np.zeros((10, 10, 3))
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-6


def test_psnr_0db():
    assert abs(psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3)))) < 1e-6


def test_psnr_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


# ---- SSIM --------------------------------------------------------------------
def test_ssim_identity():
    a = img(1)
    assert ssim(a, a) == 1.0


def test_ssim_constant_contrast():
    cfg = SSIMConfig()
    c1 = (cfg.K1 * cfg.L) ** 2
    got = ssim(np.zeros((16, 16, 1)), np.ones((16, 16, 1)))
    assert abs(got - c1 / (1 + c1)) < 1e-6
    assert abs(got - 9.999e-5) < 1e-7


def test_ssim_offset_between_extremes():
    a = np.full((16, 16, 1), 0.5)
    s = ssim(a, a + 0.01)
    assert ssim(np.zeros((16, 16, 1)), np.ones((16, 16, 1))) < s < 1.0


def test_ssim_small_image():
    with pytest.raises(InvalidArgumentError):
        ssim(np.zeros((8, 8, 1)), np.zeros((8, 8, 1)))


def test_ssim_window_taps():
    t = SSIMConfig().taps()
    assert t.shape == (11,) and abs(t.sum() - 1.0) < 1e-12


def test_ssim_channel_average():
    a, b = img(2).as_float64(), img(3).as_float64()
    per = [ssim(a[..., c:c + 1], b[..., c:c + 1]) for c in range(3)]
    assert abs(ssim(a, b) - np.mean(per)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(s1=st.integers(0, 1000), s2=st.integers(0, 1000))
def test_symmetry(s1, s2):
    a, b = img(s1, 16), img(s2, 16)
    assert psnr(a, b) == psnr(b, a)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


# ---- LOE ---------------------------------------------------------------------
def test_area_resize_mean_and_identity(rng):
    x = rng.random((37, 23))
    y = area_resize(x, 50, 50)
    assert abs(y.mean() - x.mean()) < 1e-12
    np.testing.assert_allclose(area_resize(x, 37, 23), x, atol=1e-12)


def test_loe_identity():
    a = img(4)
    assert loe(a, a) == 0.0


@pytest.mark.parametrize("gamma", [0.5, 2.0])
def test_loe_monotone_remap(gamma):
    # stay in float64: rounding the remap back to float32 can create ties
    a = img(5, 50).as_float64()
    assert loe(a ** gamma, a) == 0.0
    assert loe(a, 0.2 + 0.5 * a) == 0.0


def test_loe_inverted_brute_force():
    n = LOE_GRID * LOE_GRID
    vals = (np.arange(n) + 0.5) / n
    gray = np.random.default_rng(0).permutation(vals).reshape(LOE_GRID, LOE_GRID)
    ref = ImageF(np.repeat(gray[..., None], 3, axis=2))
    enh = ImageF(1.0 - ref.as_float64())
    le = [float(v) for v in enh.as_float64().max(axis=2).ravel()]
    lr = [float(v) for v in ref.as_float64().max(axis=2).ravel()]
    mismatched = 0
    for i in range(n):
        ei, ri = le[i], lr[i]
        for j in range(n):
            if (ei >= le[j]) != (ri >= lr[j]):
                mismatched += 1
    expected = mismatched / (n * n)
    assert loe(enh, ref) == pytest.approx(expected, abs=1e-12)
    assert abs(expected - (1 - 1 / n)) < 1e-12


def test_loe_range():
    v = loe(img(6), img(7))
    assert 0.0 <= v <= 1.0


# ---- reports -----------------------------------------------------------------
def test_evaluate_and_dirs(tmp_path):
    (tmp_path / "e").mkdir()
    (tmp_path / "r").mkdir()
    for i in range(2):
        save_png(img(10 + i), tmp_path / "e" / f"{i}.png")
        save_png(img(10 + i), tmp_path / "r" / f"{i}.png")
    rows = evaluate_dirs(tmp_path / "e", tmp_path / "r")
    assert [r[0] for r in rows] == ["0.png", "1.png"]
    text = report_csv(rows)
    assert text.splitlines() == ["filename,psnr,ssim,loe", "0.png,99.000000,1.000000,0.000000",
                                 "1.png,99.000000,1.000000,0.000000"]
    (tmp_path / "e" / "extra.png").write_bytes((tmp_path / "e" / "0.png").read_bytes())
    with pytest.raises(InvalidArgumentError):
        evaluate_dirs(tmp_path / "e", tmp_path / "r")


def test_evaluate_report_fields():
    a, b = img(12), img(13)
    r = evaluate(a, b)
    assert r.psnr == psnr(a, b) and r.ssim == ssim(a, b) and r.loe == loe(a, b)
    assert math.isfinite(r.psnr)
