"""Module registration, name-seeded initialization, residual blocks."""
import numpy as np
import pytest

from dsat import tensor as T
from dsat.errors import ConfigError
from dsat.nn import (BatchNorm2d, Conv2d, Dropout, LayerNorm, Linear, Module,
                     ModuleList, ResidualBlock, RunContext, initialize)
from dsat.tensor import Tensor


class Toy(Module):
    def __init__(self):
        super().__init__()
        self.conv = Conv2d(2, 3, 3, padding=1)
        self.bn = BatchNorm2d(3)
        self.blocks = ModuleList([ResidualBlock(3, convs=1) for _ in range(2)])

    def forward(self, x, ctx):
        h = T.relu(self.bn(self.conv(x), ctx))
        for b in self.blocks:
            h = b(h, ctx)
        return h


def test_named_parameters_are_dotted_paths():
    model = Toy()
    names = [n for n, _ in model.named_parameters()]
    assert "conv.weight" in names
    assert "bn.gamma" in names
    assert "blocks.0.units.0.conv.weight" in names
    assert len(names) == len(set(names))


def test_named_buffers_cover_running_stats():
    model = Toy()
    buffers = dict(model.named_buffers())
    assert "bn.running_mean" in buffers
    assert "blocks.1.units.0.bn.running_var" in buffers


def test_initialize_is_a_pure_function_of_seed_and_name():
    a, b = Toy(), Toy()
    initialize(a, seed=5)
    initialize(b, seed=5)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)
    c = Toy()
    initialize(c, seed=6)
    diffs = [not np.array_equal(pa.data, pc.data)
             for (_, pa), (_, pc) in zip(a.named_parameters(), c.named_parameters())
             if pa.init in ("he", "xavier")]
    assert any(diffs)


def test_shared_names_share_values_across_layouts():
    """A submodule keeps its init values when unrelated modules appear."""
    class Small(Module):
        def __init__(self):
            super().__init__()
            self.core = Conv2d(2, 2, 3)

    class Big(Module):
        def __init__(self):
            super().__init__()
            self.core = Conv2d(2, 2, 3)
            self.extra = Linear(4, 4)

    small, big = Small(), Big()
    initialize(small, seed=0)
    initialize(big, seed=0)
    np.testing.assert_array_equal(small.core.weight.data, big.core.weight.data)


def test_residual_block_zero_weights_is_identity():
    block = ResidualBlock(3, convs=2)
    initialize(block, seed=0)
    for _, p in block.named_parameters():
        if p.init == "he":
            p.data[...] = 0.0
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 4, 4))
    out = block(Tensor(x), RunContext(training=True))
    np.testing.assert_array_equal(out.data, x)


def test_linear_rank3_matches_rank2():
    rng = np.random.default_rng(1)
    layer = Linear(4, 5)
    initialize(layer, seed=2)
    x = rng.normal(size=(2, 3, 4))
    out = layer(Tensor(x))
    assert out.shape == (2, 3, 5)
    flat = layer(Tensor(x.reshape(6, 4)))
    np.testing.assert_allclose(out.data.reshape(6, 5), flat.data, atol=1e-12)


def test_dropout_module_respects_context():
    layer = Dropout(0.5)
    x = np.ones((4, 100))
    out = layer(Tensor(x), RunContext.eval())
    np.testing.assert_array_equal(out.data, x)
    ctx = RunContext(training=True, rng=np.random.default_rng(0), use_dropout=False)
    np.testing.assert_array_equal(layer(Tensor(x), ctx).data, x)
    ctx = RunContext(training=True, rng=np.random.default_rng(0))
    assert (layer(Tensor(x), ctx).data == 0).any()


def test_layernorm_module_shapes():
    layer = LayerNorm(6)
    initialize(layer, seed=0)
    out = layer(Tensor(np.random.default_rng(2).normal(size=(2, 5, 6))))
    assert out.shape == (2, 5, 6)


def test_residual_block_rejects_zero_convs():
    with pytest.raises(ConfigError):
        ResidualBlock(3, convs=0)


def test_initialize_rejects_duplicate_names():
    from dsat.tensor import Parameter

    class Holder(Module):
        def __init__(self):
            super().__init__()
            self.a = Conv2d(1, 1, 1)               # registers "a.weight"
            self._params["a.weight"] = Parameter((1,), init="zeros")  # collision

    h = Holder()
    names = [n for n, _ in h.named_parameters()]
    assert len(names) != len(set(names))
    with pytest.raises(ConfigError):
        initialize(h, seed=0)
