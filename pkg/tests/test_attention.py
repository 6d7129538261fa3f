"""Cross-channel attention: tokenization, attention oracle, reconstruction."""
import math

import numpy as np
import pytest

from dsat import tensor as T
from dsat.attention import (CcaBlock, CcaConfig, CrossScaleAttention,
                            concat_scales)
from dsat.errors import ShapeError
from dsat.nn import RunContext, initialize
from dsat.tensor import Tensor


def make_pyramid(rng, n=1, c=16, grid=32):
    return [Tensor(rng.normal(size=(n, c, grid // 2 ** t, grid // 2 ** t)))
            for t in range(4)]


def eval_ctx():
    return RunContext.eval()


def build_cca(c=16, grid=(32, 32), **kw):
    cfg = CcaConfig(**{"heads": 4, "depth": 2, "dropout": 0.0, **kw})
    cca = CrossScaleAttention(c, grid, cfg)
    initialize(cca, seed=0)
    return cca


# ---------------------------------------------------------------------------
# tokenize
# ---------------------------------------------------------------------------

def test_tokenize_shapes_at_32():
    rng = np.random.default_rng(0)
    cca = build_cca()
    tokens = cca.tokenize(make_pyramid(rng), eval_ctx())
    assert len(tokens) == 4
    for z in tokens:
        assert z.shape == (1, 16, 16)  # s = (32/8)^2 = 16 tokens, C = 16


def test_tokenize_finest_scale_uses_stride_one():
    cca = build_cca()
    assert cca.tokenizers[3].stride == 1
    assert cca.tokenizers[0].stride == 8


def test_tokenize_zero_input_zero_embedding_gives_zero_tokens():
    cca = build_cca()
    pyramid = [Tensor(np.zeros((1, 16, 32 // 2 ** t, 32 // 2 ** t))) for t in range(4)]
    tokens = cca.tokenize(pyramid, eval_ctx())
    for z in tokens:
        np.testing.assert_array_equal(z.data, 0.0)


# ---------------------------------------------------------------------------
# concat_scales
# ---------------------------------------------------------------------------

def test_concat_gives_four_c_channels():
    rng = np.random.default_rng(1)
    tokens = [Tensor(rng.normal(size=(2, 9, 8))) for _ in range(4)]
    cat = concat_scales(tokens)
    assert cat.shape == (2, 9, 32)


def test_concat_slices_recover_inputs():
    rng = np.random.default_rng(2)
    tokens = [Tensor(rng.normal(size=(1, 4, 6))) for _ in range(4)]
    cat = concat_scales(tokens)
    for t in range(4):
        np.testing.assert_array_equal(cat.data[:, :, 6 * t:6 * (t + 1)],
                                      tokens[t].data)


def test_concat_identical_inputs_repeat():
    z = Tensor(np.random.default_rng(3).normal(size=(1, 4, 5)))
    cat = concat_scales([z, z, z, z])
    for t in range(4):
        np.testing.assert_array_equal(cat.data[:, :, 5 * t:5 * (t + 1)], z.data)


def test_concat_token_count_mismatch():
    z = Tensor(np.zeros((1, 4, 5)))
    bad = Tensor(np.zeros((1, 3, 5)))
    with pytest.raises(ShapeError):
        concat_scales([z, z, z, bad])


# ---------------------------------------------------------------------------
# project_qkv
# ---------------------------------------------------------------------------

def test_qkv_zero_weights_give_zero_projections():
    block = CcaBlock(channels=8, heads=2, head_dim=4)
    initialize(block, seed=0)
    for wq in block.wq:
        wq.weight.data[...] = 0.0
    block.wk.weight.data[...] = 0.0
    block.wv.weight.data[...] = 0.0
    rng = np.random.default_rng(4)
    z = Tensor(rng.normal(size=(1, 5, 8)))
    z_all = Tensor(rng.normal(size=(1, 5, 32)))
    q, k, v = block.project_qkv(z, 0, z_all)
    for t in (q, k, v):
        np.testing.assert_array_equal(t.data, 0.0)


def test_qkv_matches_dense_oracle_with_pinned_norms():
    block = CcaBlock(channels=6, heads=2, head_dim=3)
    initialize(block, seed=1)
    rng = np.random.default_rng(5)
    z = rng.normal(size=(1, 4, 6))
    z_all = rng.normal(size=(1, 4, 24))
    q, k, v = block.project_qkv(Tensor(z), 2, Tensor(z_all))

    def ln(x, eps=1e-5):
        mu = x.mean(-1, keepdims=True)
        var = x.var(-1, keepdims=True)
        return (x - mu) / np.sqrt(var + eps)

    np.testing.assert_allclose(q.data[0], ln(z[0]) @ block.wq[2].weight.data, atol=1e-12)
    np.testing.assert_allclose(k.data[0], ln(z_all[0]) @ block.wk.weight.data, atol=1e-12)
    np.testing.assert_allclose(v.data[0], ln(z_all[0]) @ block.wv.weight.data, atol=1e-12)


def test_queries_differ_per_scale_for_shared_concat():
    block = CcaBlock(channels=6, heads=2, head_dim=3)
    initialize(block, seed=2)
    rng = np.random.default_rng(6)
    z = Tensor(rng.normal(size=(1, 4, 6)))
    z_all = Tensor(rng.normal(size=(1, 4, 24)))
    q0, _, _ = block.project_qkv(z, 0, z_all)
    q1, _, _ = block.project_qkv(z, 1, z_all)
    assert not np.allclose(q0.data, q1.data)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def attention_oracle(q, k, v, heads, head_dim, channels):
    """Dense per-head reference for one sample."""
    temp = 2.0 * math.sqrt(channels)
    acc = None
    for h in range(heads):
        sl = slice(h * head_dim, (h + 1) * head_dim)
        logits = q[:, sl].T @ k[:, sl] / temp
        weights = 1.0 / (1.0 + np.exp(-logits))
        contrib = weights @ v[:, sl].T
        acc = contrib if acc is None else acc + contrib
    return acc / heads


def test_attention_matches_dense_oracle():
    block = CcaBlock(channels=8, heads=2, head_dim=4)
    initialize(block, seed=3)
    rng = np.random.default_rng(7)
    q = rng.normal(size=(2, 5, 8))
    k = rng.normal(size=(2, 5, 8))
    v = rng.normal(size=(2, 5, 8))
    out = block.attention(Tensor(q), Tensor(k), Tensor(v))
    assert out.shape == (2, 4, 5)
    for n in range(2):
        np.testing.assert_allclose(out.data[n],
                                   attention_oracle(q[n], k[n], v[n], 2, 4, 8),
                                   atol=1e-12)


def test_attention_zero_query_gives_half_weights():
    block = CcaBlock(channels=4, heads=1, head_dim=4)
    initialize(block, seed=4)
    rng = np.random.default_rng(8)
    v = rng.normal(size=(1, 6, 4))
    out = block.attention(Tensor(np.zeros((1, 6, 4))),
                          Tensor(rng.normal(size=(1, 6, 4))), Tensor(v))
    # all logits are 0 -> every weight is sigmoid(0) = 1/2
    expected = 0.5 * np.ones((4, 4)) @ v[0].T
    np.testing.assert_allclose(out.data[0], expected, atol=1e-12)


def test_attention_zero_values_give_zero_output():
    block = CcaBlock(channels=4, heads=2, head_dim=2)
    initialize(block, seed=5)
    rng = np.random.default_rng(9)
    out = block.attention(Tensor(rng.normal(size=(1, 6, 4))),
                          Tensor(rng.normal(size=(1, 6, 4))),
                          Tensor(np.zeros((1, 6, 4))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_single_head_equals_mean_of_one():
    block1 = CcaBlock(channels=4, heads=1, head_dim=4)
    rng = np.random.default_rng(10)
    q = rng.normal(size=(1, 3, 4))
    k = rng.normal(size=(1, 3, 4))
    v = rng.normal(size=(1, 3, 4))
    out = block1.attention(Tensor(q), Tensor(k), Tensor(v))
    np.testing.assert_allclose(out.data[0],
                               attention_oracle(q[0], k[0], v[0], 1, 4, 4),
                               atol=1e-12)


def test_attention_weights_strictly_inside_unit_interval():
    block = CcaBlock(channels=8, heads=2, head_dim=4)
    rng = np.random.default_rng(11)
    q = Tensor(rng.normal(size=(1, 5, 8)))
    k = Tensor(rng.normal(size=(1, 5, 8)))
    temp = 2.0 * math.sqrt(8)
    logits = T.bmm(T.transpose(T.narrow(q, 2, 0, 4), (0, 2, 1)), T.narrow(k, 2, 0, 4))
    weights = T.sigmoid(T.mul(logits, 1.0 / temp)).data
    assert (weights > 0.0).all() and (weights < 1.0).all()


# ---------------------------------------------------------------------------
# mlp_residual
# ---------------------------------------------------------------------------

def test_mlp_zero_final_layer_is_identity():
    block = CcaBlock(channels=6, heads=2, head_dim=3)
    initialize(block, seed=6)
    block.fc2.weight.data[...] = 0.0
    block.fc2.bias.data[...] = 0.0
    rng = np.random.default_rng(12)
    z = rng.normal(size=(1, 4, 6))
    out = block.mlp_residual(Tensor(z), Tensor(rng.normal(size=(1, 4, 6))))
    np.testing.assert_array_equal(out.data, z)


def test_mlp_zero_everything_stays_zero():
    block = CcaBlock(channels=6, heads=2, head_dim=3)
    initialize(block, seed=7)
    block.fc2.weight.data[...] = 0.0
    block.fc2.bias.data[...] = 0.0
    zero = Tensor(np.zeros((1, 4, 6)))
    out = block.mlp_residual(zero, zero)
    np.testing.assert_array_equal(out.data, 0.0)


def test_mlp_residual_matches_composed_oracle():
    block = CcaBlock(channels=4, heads=2, head_dim=2)
    initialize(block, seed=8)
    block.fc2.weight.data[...] = np.random.default_rng(13).normal(size=(8, 4)) * 0.3
    rng = np.random.default_rng(14)
    z = rng.normal(size=(1, 3, 4))
    q = rng.normal(size=(1, 3, 4))
    out = block.mlp_residual(Tensor(z), Tensor(q))

    def ln(x, eps=1e-5):
        mu = x.mean(-1, keepdims=True)
        var = x.var(-1, keepdims=True)
        return (x - mu) / np.sqrt(var + eps)

    h = ln(z[0] + q[0])
    h = np.maximum(h @ block.fc1.weight.data + block.fc1.bias.data, 0.0)
    h = h @ block.fc2.weight.data + block.fc2.bias.data
    np.testing.assert_allclose(out.data[0], z[0] + h, atol=1e-12)


# ---------------------------------------------------------------------------
# reconstruct / whole module
# ---------------------------------------------------------------------------

def test_reconstruct_zero_convs_returns_pyramid():
    rng = np.random.default_rng(15)
    cca = build_cca()
    cca.reset_to_identity()
    pyramid = make_pyramid(rng)
    tokens = cca.tokenize(pyramid, eval_ctx())
    out = cca.reconstruct(tokens, pyramid, eval_ctx())
    for y, d in zip(pyramid, out):
        np.testing.assert_array_equal(d.data, y.data)


def test_reconstruct_upsample_factors():
    rng = np.random.default_rng(16)
    cca = build_cca()
    pyramid = make_pyramid(rng, grid=32)
    out = cca(pyramid, eval_ctx())
    assert out[0].shape == (1, 16, 32, 32)
    assert out[2].shape == (1, 16, 8, 8)
    assert out[3].shape == (1, 16, 4, 4)


def test_identity_reset_makes_the_block_an_exact_identity():
    """With the three adapter groups zeroed, refinement vanishes exactly."""
    rng = np.random.default_rng(17)
    cca = build_cca(depth=3)
    cca.reset_to_identity()
    pyramid = make_pyramid(rng)
    out = cca(pyramid, eval_ctx())
    for y, d in zip(pyramid, out):
        np.testing.assert_array_equal(d.data, y.data)


def test_default_init_is_not_an_identity():
    rng = np.random.default_rng(20)
    cca = build_cca(depth=1)
    pyramid = make_pyramid(rng)
    out = cca(pyramid, eval_ctx())
    assert any(not np.array_equal(d.data, y.data) for y, d in zip(pyramid, out))


def test_permutation_consistency():
    """Permuting token order (with embeddings) permutes outputs identically."""
    c, grid = 8, 32
    cca = build_cca(c=c, grid=(grid, grid), depth=1, heads=2)
    rng = np.random.default_rng(18)
    initialize(cca, seed=9, randomize_zero_init=True)  # nonzero embeddings too
    pyramid = make_pyramid(rng, c=c, grid=grid)
    tokens = cca.tokenize(pyramid, eval_ctx())
    out = cca.blocks[0](tokens)

    perm = rng.permutation(tokens[0].shape[1])
    tokens_p = [Tensor(z.data[:, perm]) for z in tokens]
    out_p = cca.blocks[0](tokens_p)
    for o, op in zip(out, out_p):
        np.testing.assert_allclose(o.data[:, perm], op.data, atol=1e-10)


def test_gradient_flows_through_all_cca_parameters():
    cca = build_cca(c=4, grid=(16, 16), depth=1, heads=2)
    initialize(cca, seed=10, randomize_zero_init=True)
    rng = np.random.default_rng(19)
    pyramid = [Tensor(rng.normal(size=(1, 4, 16 // 2 ** t, 16 // 2 ** t)))
               for t in range(4)]
    ctx = RunContext(training=True, rng=None, use_dropout=False)
    out = cca(pyramid, ctx)
    total = None
    for d in out:
        s = T.sum_(T.mul(d, d))
        total = s if total is None else T.add(total, s)
    total.backward()
    dead = [name for name, p in cca.named_parameters()
            if p.grad is None or np.abs(p.grad).max() == 0]
    assert dead == []
