import numpy as np
import pytest

from conftest import golden, golden_manifest
from quadprior import kernels
from quadprior.diffmath import make_linear_schedule, toy_schedule
from quadprior.errors import ImageIOError, InvalidArgumentError, NumericError, StateError
from quadprior.imagecore import ImageF
from quadprior.selftest import convnet_gradcheck
from quadprior.synth import make_rng, synth_image
from quadprior.toymodel import (
    ConvNet,
    TrainConfig,
    enhance_toy,
    heldout_lowlight,
    load_convnet,
    read_trace_csv,
    save_convnet,
    train_toy,
    trace_to_csv,
    validation_loss,
    validation_set,
)

SMALL = dict(batch=2, size=16, widths=(8, 8, 8))


def test_architecture():
    net = ConvNet()
    assert [(c.cin, c.cout) for c in net.convs] == [(10, 32), (32, 32), (32, 32), (32, 3)]
    assert len(net.store) == 10 * 32 * 9 + 32 + 2 * (32 * 32 * 9 + 32) + 32 * 3 * 9 + 3


def test_zero_final_layer_predicts_zero():
    net = ConvNet(widths=(8, 8, 8))
    rng = np.random.default_rng(0)
    out = net.forward(rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((2, 6, 8, 8)), np.array([1, 50]))
    assert out.shape == (2, 3, 8, 8) and not out.any()


def test_forward_shape_check():
    net = ConvNet(widths=(4, 4, 4))
    with pytest.raises(InvalidArgumentError):
        net.forward(np.zeros((1, 3, 8, 8)), np.zeros((1, 6, 4, 4)), 1)


def test_backward_needs_cache():
    net = ConvNet(widths=(4, 4, 4))
    with pytest.raises(StateError):
        net.backward(np.zeros((1, 3, 4, 4)))
    net.forward(np.zeros((1, 3, 4, 4)), np.zeros((1, 6, 4, 4)), 1, cache=False)
    with pytest.raises(StateError):
        net.backward(np.zeros((1, 3, 4, 4)))


def test_gradcheck_subset():
    net_n = len(ConvNet(widths=(16, 16, 16)).store)
    idx = make_rng(0, "subset").choice(net_n, 600, replace=False)
    errs, n = convnet_gradcheck(indices=idx)
    assert n <= 10_000 and errs.max() < 1e-3


def test_config_round_trip_and_validation():
    cfg = TrainConfig(**SMALL)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidArgumentError):
        TrainConfig.from_dict({"learning_rate": 1})
    for bad in ({"steps": -1}, {"batch": 0}, {"lr": float("nan")}, {"max_grad_norm": 0.0}):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(**bad)


def test_zero_lr_keeps_params():
    net = ConvNet(widths=SMALL["widths"], seed=0)
    init = net.params.copy()
    train_toy(TrainConfig(steps=5, lr=0.0, **SMALL), net=net)
    assert np.array_equal(net.params, init)


def test_training_deterministic():
    a = train_toy(TrainConfig(steps=50, seed=3, **SMALL))
    b = train_toy(TrainConfig(steps=50, seed=3, **SMALL))
    assert trace_to_csv(a.trace) == trace_to_csv(b.trace)
    assert np.array_equal(a.net.params, b.net.params)
    c = train_toy(TrainConfig(steps=5, seed=4, **SMALL))
    assert c.trace[0] != a.trace[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    with pytest.raises(NumericError) as exc:
        train_toy(TrainConfig(steps=5, lr=1e308, **SMALL))
    assert exc.value.step is not None


def test_trace_csv_round_trip():
    trace = [(0, 1.5, 2.25, 3.75), (1, 0.1, 0.2, 0.30000000000000004)]
    text = trace_to_csv(trace)
    assert text.splitlines()[0] == "step,loss_noise,loss_z0,loss_diff"
    assert read_trace_csv(text) == trace


def test_checkpoint_round_trip(tmp_path):
    net = ConvNet(widths=(4, 4, 4), seed=2, zero_final=False)
    cfg = TrainConfig(widths=(4, 4, 4))
    save_convnet(tmp_path / "n.qpc", net, cfg)
    back, cfg2 = load_convnet(tmp_path / "n.qpc")
    assert back.arch() == net.arch() and cfg2 == cfg
    assert np.array_equal(back.params, net.params.astype(np.float32).astype(np.float64))
    with open(tmp_path / "n.qpc", "rb") as fh:
        assert fh.readline().startswith(b"{")


def test_checkpoint_kind_and_corruption(tmp_path):
    from quadprior.bypassdec import load_toyae

    save_convnet(tmp_path / "n.qpc", ConvNet(widths=(4, 4, 4)))
    with pytest.raises(ImageIOError):
        load_toyae(tmp_path / "n.qpc")
    (tmp_path / "bad.qpc").write_bytes(b"garbage")
    with pytest.raises(ImageIOError):
        load_convnet(tmp_path / "bad.qpc")


def test_enhance_untrained_shape_and_determinism():
    net = ConvNet(widths=(4, 4, 4))
    low = synth_image(make_rng(0, "e"), 12)
    a = enhance_toy(net, low, seed=3)
    b = enhance_toy(net, low, seed=3)
    assert a.shape == (12, 12, 3) and np.array_equal(a.data, b.data)
    assert 0.0 <= a.data.min() and a.data.max() <= 1.0


def test_enhance_schedule_mismatch():
    with pytest.raises(InvalidArgumentError):
        enhance_toy(ConvNet(widths=(4, 4, 4)), ImageF.constant(8, 8, [0.1] * 3), sched=make_linear_schedule(10))


def test_heldout_set_deterministic():
    a, b = heldout_lowlight(n=3, size=8), heldout_lowlight(n=3, size=8)
    for (c1, d1), (c2, d2) in zip(a, b):
        assert np.array_equal(c1.data, c2.data) and np.array_equal(d1.data, d2.data)
    assert np.mean([d.as_float64().mean() / c.as_float64().mean() for c, d in a]) < 0.4


# ---- properties of the pinned training run ----------------------------------
def test_trained_loss_decreases(trained_toy):
    tr = np.array(trained_toy.trace)
    assert tr[-100:, 3].mean() < tr[:100, 3].mean()


def test_trained_trace_matches_golden(trained_toy):
    with open(golden("toy_trace.csv")) as fh:
        ref = np.array(read_trace_csv(fh.read()))
    tr = np.array(trained_toy.trace)
    assert tr.shape == ref.shape
    if kernels.BACKEND == golden_manifest()["backend"]:
        np.testing.assert_allclose(tr, ref, rtol=1e-9, atol=1e-12)
    else:
        # the noise kernel may differ in the last ulp across backends
        for sl in (slice(0, 100), slice(-100, None)):
            assert abs(tr[sl, 3].mean() - ref[sl, 3].mean()) < 0.05 * ref[sl, 3].mean()


def test_trained_net_uses_prior(trained_toy):
    cfg = trained_toy.config
    data = validation_set(77, 32, cfg)
    sched = toy_schedule()
    base = validation_loss(trained_toy.net, data, sched)
    shuffled = validation_loss(trained_toy.net, data, sched, shuffle_prior_seed=5)
    assert shuffled > base


def test_trained_enhance_beats_dark(trained_toy):
    from quadprior.metrics import psnr

    clean, dark = heldout_lowlight(seed=999, n=1)[0]
    out = enhance_toy(trained_toy.net, dark, seed=0)
    assert psnr(out, clean) > psnr(dark, clean)
    assert np.array_equal(out.data, enhance_toy(trained_toy.net, dark, seed=0).data)
