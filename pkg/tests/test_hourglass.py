"""Hourglass encoder/decoder shape contracts and identity properties."""
import numpy as np
import pytest

from dsat import tensor as T
from dsat.attention import CcaConfig
from dsat.errors import ConfigError
from dsat.hourglass import Dss
from dsat.nn import RunContext, initialize
from dsat.tensor import Tensor


def eval_ctx():
    return RunContext.eval()


def build_dss(c=16, grid=(32, 32), with_cca=True, **cca_kw):
    cca = CcaConfig(**{"heads": 4, "depth": 2, "dropout": 0.0, **cca_kw}) if with_cca else None
    dss = Dss(c, grid, cca)
    initialize(dss, seed=0)
    return dss


def test_encode_pyramid_shapes():
    dss = build_dss()
    x = Tensor(np.random.default_rng(0).normal(size=(1, 16, 32, 32)))
    pyramid = dss.encode(x, eval_ctx())
    assert [y.shape for y in pyramid] == [
        (1, 16, 32, 32), (1, 16, 16, 16), (1, 16, 8, 8), (1, 16, 4, 4)]


def test_encode_rectangular_pyramid():
    dss = build_dss(grid=(16, 32))
    x = Tensor(np.random.default_rng(1).normal(size=(2, 16, 16, 32)))
    pyramid = dss.encode(x, eval_ctx())
    assert [y.shape for y in pyramid] == [
        (2, 16, 16, 32), (2, 16, 8, 16), (2, 16, 4, 8), (2, 16, 2, 4)]


def test_encode_zero_input_gives_zero_pyramid():
    dss = build_dss()
    pyramid = dss.encode(Tensor(np.zeros((1, 16, 32, 32))), eval_ctx())
    for y in pyramid:
        np.testing.assert_array_equal(y.data, 0.0)


def test_encode_is_deterministic():
    dss = build_dss()
    x = np.random.default_rng(2).normal(size=(1, 16, 32, 32))
    a = dss.encode(Tensor(x), eval_ctx())
    b = dss.encode(Tensor(x), eval_ctx())
    for ya, yb in zip(a, b):
        np.testing.assert_array_equal(ya.data, yb.data)


def test_encode_rejects_indivisible_grid():
    dss = build_dss()
    with pytest.raises(ConfigError):
        dss.encode(Tensor(np.zeros((1, 16, 20, 20))), eval_ctx())
    with pytest.raises(ConfigError):
        Dss(16, (20, 20), None)


def test_decode_zero_maps_and_zero_blocks():
    dss = build_dss(with_cca=False)
    zeros = [Tensor(np.zeros((1, 16, 32 // 2 ** t, 32 // 2 ** t))) for t in range(4)]
    out = dss.decode(zeros, eval_ctx())
    np.testing.assert_array_equal(out.data, 0.0)


def test_decode_output_matches_input_grid():
    dss = build_dss(with_cca=False)
    x = Tensor(np.random.default_rng(3).normal(size=(2, 16, 32, 32)))
    out = dss(x, eval_ctx())
    assert out.shape == (2, 16, 32, 32)


def test_single_pixel_support_with_identity_blocks():
    """With zeroed block convs the decoder is nearest-upsample + adds, so a
    single coarse pixel covers exactly an 8x8 block of the output."""
    dss = build_dss(with_cca=False)
    for _, p in dss.named_parameters():
        if p.init == "he":
            p.data[...] = 0.0
    maps = [Tensor(np.zeros((1, 16, 32 // 2 ** t, 32 // 2 ** t))) for t in range(4)]
    maps[3].data[0, 0, 1, 2] = 1.0
    out = dss.decode(maps, eval_ctx())
    support = np.argwhere(out.data[0, 0] != 0)
    assert support.min(axis=0).tolist() == [8, 16]
    assert support.max(axis=0).tolist() == [15, 23]
    assert len(support) == 64


@pytest.mark.parametrize("wh", [(16, 16), (16, 32), (32, 32), (64, 32), (64, 64)])
def test_forward_preserves_shape(wh):
    h, w = wh
    dss = build_dss(c=8, grid=(h, w), heads=2, depth=1)
    x = Tensor(np.random.default_rng(4).normal(size=(1, 8, h, w)))
    out = dss(x, eval_ctx())
    assert out.shape == (1, 8, h, w)


def test_identity_reset_cca_equals_plain_hourglass_bitwise():
    """Zeroed attention adapters leave the hourglass exactly untouched."""
    with_cca = build_dss(c=8, grid=(16, 16), heads=2, depth=2)
    with_cca.cca.reset_to_identity()
    without = Dss(8, (16, 16), None)
    initialize(without, seed=0)
    x = np.random.default_rng(5).normal(size=(2, 8, 16, 16))
    a = with_cca(Tensor(x), eval_ctx())
    b = without(Tensor(x), eval_ctx())
    assert (a.data == b.data).all()


def test_stacked_dss_composes():
    dss1 = build_dss(c=8, grid=(16, 16), heads=2, depth=1)
    dss2 = build_dss(c=8, grid=(16, 16), heads=2, depth=1)
    x = Tensor(np.random.default_rng(6).normal(size=(1, 8, 16, 16)))
    out = dss2(dss1(x, eval_ctx()), eval_ctx())
    assert out.shape == (1, 8, 16, 16)


def test_gradient_reaches_every_parameter():
    dss = build_dss(c=4, grid=(16, 16), heads=2, depth=1)
    initialize(dss, seed=1, randomize_zero_init=True)
    x = Tensor(np.random.default_rng(7).normal(size=(2, 4, 16, 16)))
    ctx = RunContext(training=True, rng=None, use_dropout=False)
    out = dss(x, ctx)
    T.sum_(T.mul(out, out)).backward()
    dead = [name for name, p in dss.named_parameters()
            if p.grad is None or np.abs(p.grad).max() == 0]
    assert dead == []
