import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from quadprior.diffmath import (
    NoiseSchedule,
    ddpm_reverse_step,
    diff_loss_and_grad,
    forward_sample,
    loss_diff,
    loss_noise,
    loss_z0,
    make_linear_schedule,
    reconstruct_z0,
    sample_loop,
    toy_schedule,
)
from quadprior.errors import InvalidArgumentError
from quadprior.synth import make_rng

SCHED = make_linear_schedule(1000, 1e-4, 0.02)


# ---- schedule ----------------------------------------------------------------
def test_single_step_schedule():
    s = make_linear_schedule(1, 0.5, 0.5)
    assert s.alpha_bar.tolist() == [0.5]


def test_two_step_schedule():
    s = make_linear_schedule(2, 0.1, 0.2)
    np.testing.assert_allclose(s.alpha_bar, [0.9, 0.72], rtol=1e-15)


def test_alpha_bar_extended_precision():
    getcontext().prec = 50
    prod = Decimal(1)
    for b in SCHED.beta:
        prod *= Decimal(1) - Decimal(float(b))
    assert abs(SCHED.alpha_bar[999] - float(prod)) <= 1e-12 * float(prod)


def test_schedule_monotone_and_dict():
    assert np.all(np.diff(SCHED.alpha_bar) < 0)
    assert NoiseSchedule.from_dict(SCHED.to_dict()).alpha_bar.tolist() == SCHED.alpha_bar.tolist()
    t = toy_schedule()
    assert t.T == 50 and 1e-3 < t.alpha_bar[-1] < 1e-2


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0), (2.5, 0.1, 0.2)])
def test_schedule_validation(args):
    with pytest.raises(InvalidArgumentError):
        make_linear_schedule(*args)


def test_schedule_rejects_non_monotone():
    with pytest.raises(InvalidArgumentError):
        NoiseSchedule(beta=np.array([0.1, 0.1]), alpha_bar=np.array([0.5, 0.6]), beta1=0.1, betaT=0.1)


@pytest.mark.parametrize("t", [0, 1001, 1.5])
def test_bad_t(t):
    with pytest.raises(InvalidArgumentError):
        SCHED.alpha_bar_at(np.asarray(t))


# ---- forward / reconstruct -------------------------------------------------
def test_forward_limit_no_noise():
    s = make_linear_schedule(3, 1e-12, 1e-12)
    z0 = np.arange(4.0)
    np.testing.assert_allclose(forward_sample(z0, 3, np.ones(4), s), z0, atol=1e-5)


def test_forward_scalar_case():
    # alpha_bar = 0.25 at t=1 needs beta1 = 0.75
    s = make_linear_schedule(1, 0.75, 0.75)
    assert abs(float(forward_sample(np.array(2.0), 1, np.array(1.0), s)) - (0.5 * 2 + math.sqrt(0.75))) < 1e-12


def test_forward_from_zero():
    eps = np.random.default_rng(0).standard_normal((2, 3))
    for t in (1, 500, 1000):
        got = forward_sample(np.zeros((2, 3)), t, eps, SCHED)
        assert np.array_equal(got, np.sqrt(1.0 - SCHED.alpha_bar[t - 1]) * eps)


def test_reconstruct_true_eps_all_t():
    rng = np.random.default_rng(1)
    z0, eps = rng.standard_normal((1000, 4)), rng.standard_normal((1000, 4))
    t = np.arange(1, 1001)
    zt = forward_sample(z0, t, eps, SCHED)
    assert np.abs(reconstruct_z0(zt, eps, t, SCHED) - z0).max() < 1e-6


def test_reconstruct_zero_eps():
    zt = np.random.default_rng(2).standard_normal(5)
    np.testing.assert_allclose(reconstruct_z0(zt, np.zeros(5), 10, SCHED), zt / math.sqrt(SCHED.alpha_bar[9]))


def test_reconstruct_scalar_loop_oracle():
    rng = np.random.default_rng(3)
    zt, eh = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 3, 4))
    t = SCHED.T // 2
    ab = float(SCHED.alpha_bar[t - 1])
    got = reconstruct_z0(zt, eh, t, SCHED)
    for idx in np.ndindex(zt.shape):
        ref = (float(zt[idx]) - math.sqrt(1 - ab) * float(eh[idx])) / math.sqrt(ab)
        assert abs(got[idx] - ref) < 1e-12


def test_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        forward_sample(np.zeros(3), 1, np.zeros(4), SCHED)


# ---- losses ----------------------------------------------------------------
def test_loss_examples():
    e = np.random.default_rng(0).standard_normal(7)
    assert loss_noise(e, e) == 0.0
    assert loss_noise(np.zeros(13), np.full(13, 0.5)) == 0.25
    assert loss_diff(np.zeros(3), np.full(3, 0.5), np.zeros(3), np.full(3, 0.5)) == 0.5


@settings(max_examples=50, deadline=None)
@given(arrs=hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(-100, 100), unique=False).flatmap(
    lambda a: st.tuples(st.just(a), hnp.arrays(np.float64, a.shape, elements=st.floats(-100, 100)))))
def test_loss_diff_dominates(arrs):
    a, b = arrs
    ld = loss_diff(a, b, b, a)
    assert ld >= max(loss_z0(b, a), loss_noise(a, b)) >= 0.0


def test_diff_grad_finite_difference():
    rng = np.random.default_rng(4)
    sched = toy_schedule()
    z0, eps, eh = rng.standard_normal((3, 2, 2, 3, 3))
    t = np.array([5, 40])
    zt = forward_sample(z0, t, eps, sched)
    _, _, ld, g = diff_loss_and_grad(z0, zt, eps, eh, t, sched)
    assert ld == pytest.approx(loss_diff(eps, eh, z0, reconstruct_z0(zt, eh, t, sched)))
    h = 1e-6
    for idx in [(0, 0, 0, 0), (1, 1, 2, 2), (0, 1, 1, 2)]:
        up, dn = eh.copy(), eh.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (diff_loss_and_grad(z0, zt, eps, up, t, sched)[2] - diff_loss_and_grad(z0, zt, eps, dn, t, sched)[2]) / (2 * h)
        assert abs(fd - g[idx]) < 1e-6 * max(1.0, abs(fd))


# ---- reverse step ----------------------------------------------------------
def test_reverse_t1_is_mean():
    zt, eh = np.array([0.3, -0.2]), np.array([0.1, 0.4])
    b = SCHED.beta[0]
    mu = (zt - b / math.sqrt(1 - SCHED.alpha_bar[0]) * eh) / math.sqrt(1 - b)
    np.testing.assert_allclose(ddpm_reverse_step(zt, eh, 1, SCHED, np.full(2, 100.0)), mu, rtol=1e-15)


def test_reverse_identity_limit():
    s = make_linear_schedule(5, 1e-14, 1e-14)
    zt = np.array([1.0, -2.0])
    np.testing.assert_allclose(ddpm_reverse_step(zt, np.zeros(2), 3, s, np.zeros(2)), zt, atol=1e-12)


def test_reverse_scalar_oracle():
    s = make_linear_schedule(2, 0.1, 0.2)
    # hand computation: beta_2 = 0.2, alpha_bar_2 = 0.72
    mu = (1.0 - 0.2 / math.sqrt(1 - 0.72) * 0.5) / math.sqrt(0.8)
    assert abs(float(ddpm_reverse_step(np.array(1.0), np.array(0.5), 2, s, np.array(0.0))) - mu) < 1e-12
    sigma = math.sqrt(0.2 * (1 - 0.9) / (1 - 0.72))
    assert abs(float(ddpm_reverse_step(np.array(1.0), np.array(0.5), 2, s, np.array(1.0))) - (mu + sigma)) < 1e-12


def test_reverse_bad_t():
    with pytest.raises(InvalidArgumentError):
        ddpm_reverse_step(np.zeros(2), np.zeros(2), 0, SCHED, np.zeros(2))


# ---- sampling loop ---------------------------------------------------------
def zero_denoiser(z, t, cond):
    return np.zeros_like(z)


def test_sample_loop_replay_oracle():
    s = make_linear_schedule(6, 0.05, 0.3)
    shape = (2, 3)
    got = sample_loop(zero_denoiser, None, s, 17, shape)
    rng = make_rng(17, "sample-loop")
    z = rng.standard_normal(shape)
    out = np.empty(shape)
    noises = [rng.standard_normal(shape) for _ in range(s.T - 1)]
    for idx in np.ndindex(shape):
        v = float(z[idx])
        for j, t in enumerate(range(s.T, 0, -1)):
            b = float(s.beta[t - 1])
            v = v / math.sqrt(1 - b)
            if t > 1:
                ab, abp = float(s.alpha_bar[t - 1]), float(s.alpha_bar[t - 2])
                v += math.sqrt(b * (1 - abp) / (1 - ab)) * float(noises[j][idx])
        out[idx] = v
    np.testing.assert_allclose(got, out, rtol=1e-12, atol=1e-12)


def test_sample_loop_deterministic():
    a = sample_loop(zero_denoiser, None, SCHED, 5, (3,))
    b = sample_loop(zero_denoiser, None, SCHED, 5, (3,))
    assert np.array_equal(a, b)


def test_sample_loop_single_step():
    s = make_linear_schedule(1, 0.1, 0.1)
    z = make_rng(2, "sample-loop").standard_normal((4,))
    np.testing.assert_allclose(sample_loop(zero_denoiser, None, s, 2, (4,)), z / math.sqrt(0.9), rtol=1e-15)
