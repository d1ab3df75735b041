import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinnpe import tensor as T
from swinnpe.nn import Module
from swinnpe.swin import (
    MASK_VALUE,
    AttentionConfig,
    BaselineSwinBlock,
    ConvSwinBlock,
    cyclic_shift,
    default_heads,
    relative_position_index,
    shift_mask,
    window_attention,
    window_partition,
    window_reverse,
)
from swinnpe.tensor import Tensor

from conftest import numeric_grad, rel_err


def test_window_partition_shapes():
    x = np.arange(16.0).reshape(4, 4, 1)
    assert window_partition(x, 2).shape == (4, 4, 1)
    single = window_partition(x, 4)
    assert single.shape == (1, 16, 1)
    np.testing.assert_array_equal(single.data[0, :, 0], np.arange(16.0))
    np.testing.assert_array_equal(window_partition(x, 2).data[1, :, 0], [2, 3, 6, 7])
    with pytest.raises(ValueError):
        window_partition(np.zeros((6, 4, 1)), 4)


@given(
    nh=st.integers(1, 3),
    nw=st.integers(1, 3),
    w=st.integers(1, 4),
    c=st.integers(1, 3),
    n=st.integers(1, 2),
    seed=st.integers(0, 2**16),
)
@settings(max_examples=40, deadline=None)
def test_window_roundtrip(nh, nw, w, c, n, seed):
    x = np.random.default_rng(seed).standard_normal((n, nh * w, nw * w, c))
    back = window_reverse(window_partition(x, w), w, nh * w, nw * w, (n,))
    assert back.data.tobytes() == x.tobytes()


def test_cyclic_shift_examples():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    x = np.array([[a, b], [c, d]])[..., None]
    np.testing.assert_array_equal(cyclic_shift(x, -1, -1).data[..., 0], [[d, c], [b, a]])
    y = np.random.default_rng(0).standard_normal((5, 6, 2))
    np.testing.assert_array_equal(cyclic_shift(y, 0, 0).data, y)
    np.testing.assert_array_equal(cyclic_shift(y, 5, 6).data, y)
    np.testing.assert_array_equal(cyclic_shift(cyclic_shift(y, 2, -3), -2, 3).data, y)


def _identity_projections(block):
    C = block.cfg.channels
    for proj in (block.q_proj, block.k_proj, block.v_proj):
        proj.depthwise.data = np.zeros_like(proj.depthwise.data)
        proj.depthwise.data[block.cfg.kernel // 2, block.cfg.kernel // 2] = 1.0
        proj.pointwise.data = np.eye(C)
        proj.bias.data = np.zeros(C)


def test_conv_projection_identity_kernels(rng):
    block = ConvSwinBlock(AttentionConfig(channels=6, window=4), rng)
    _identity_projections(block)
    x = rng.standard_normal((1, 8, 8, 6))
    q, k, v = block.qkv(Tensor(x))
    for t in (q, k, v):
        np.testing.assert_array_equal(t.data, x)


def test_conv_projection_equivariance(rng):
    block = ConvSwinBlock(AttentionConfig(channels=4, window=4, padding="circular"), rng)
    x = rng.standard_normal((1, 8, 8, 4))
    base = block.qkv(Tensor(x))
    shifted = block.qkv(Tensor(np.roll(x, (3, -1), (1, 2))))
    for a, b in zip(base, shifted):
        assert a.shape == x.shape
        np.testing.assert_allclose(b.data, np.roll(a.data, (3, -1), (1, 2)), atol=1e-12)


def test_window_attention_single_token(rng):
    q, k, v = (rng.standard_normal((5, 1, 4)) for _ in range(3))
    np.testing.assert_array_equal(window_attention(q, k, v, heads=2).data, v)


def test_window_attention_identical_keys(rng):
    q = rng.standard_normal((1, 2, 4))
    k = np.tile(rng.standard_normal((1, 1, 4)), (1, 2, 1))
    v = rng.standard_normal((1, 2, 4))
    out, weights = window_attention(q, k, v, heads=1, return_weights=True)
    np.testing.assert_allclose(weights.data, 0.5, atol=1e-15)
    np.testing.assert_allclose(out.data[0], np.tile(v[0].mean(axis=0), (2, 1)), atol=1e-15)


def test_window_attention_weights_normalized(rng):
    q, k, v = (rng.standard_normal((3, 16, 8)) for _ in range(3))
    _, weights = window_attention(q, k, v, heads=2, return_weights=True)
    assert np.abs(weights.data.sum(axis=-1) - 1.0).max() < 1e-12


def test_window_attention_rejects_bad_mask(rng):
    q = rng.standard_normal((4, 4, 2))
    with pytest.raises(ValueError):
        window_attention(q, q, q, heads=1, mask=np.zeros((3, 4, 4)))


def test_shift_mask_separates_regions():
    m = shift_mask(8, 8, 4, 2)
    assert m.shape == (4, 16, 16)
    assert np.all(m[0] == 0)  # top-left window lies in one region
    assert np.all(np.diag(m[3]) == 0)
    assert np.any(m[3] == MASK_VALUE)


def test_shifted_mask_blocks_non_adjacent_tokens(rng):
    H = W = 8
    w, s = 4, 2
    x = rng.standard_normal((1, H, W, 4))
    q, k, v = (cyclic_shift(Tensor(x + rng.standard_normal(x.shape)), -s, -s) for _ in range(3))
    mask = shift_mask(H, W, w, s)
    _, weights = window_attention(
        window_partition(q, w), window_partition(k, w), window_partition(v, w), 1, mask=mask, return_weights=True
    )
    blocked = np.broadcast_to(mask[:, None] == MASK_VALUE, weights.shape)
    assert blocked.any()
    assert weights.data[blocked].max() < 1e-12


def _zero_residual_branches(block):
    block.proj.weight.data[:] = 0.0
    block.proj.bias.data[:] = 0.0
    block.mlp.fc2.weight.data[:] = 0.0
    block.mlp.fc2.bias.data[:] = 0.0


@pytest.mark.parametrize("shifted", [False, True])
def test_block_zero_residual_is_identity(rng, shifted):
    block = ConvSwinBlock(AttentionConfig(channels=8, window=4, shifted=shifted), rng)
    _zero_residual_branches(block)
    x = rng.standard_normal((8, 8, 8))
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


@pytest.mark.parametrize("cls", [ConvSwinBlock, BaselineSwinBlock])
@pytest.mark.parametrize("shifted", [False, True])
def test_block_shape_preserved(rng, cls, shifted):
    block = cls(AttentionConfig(channels=8, heads=2, window=4, shifted=shifted), rng)
    x = rng.standard_normal((2, 8, 12, 8))
    assert block(Tensor(x)).shape == x.shape


@pytest.mark.parametrize("shifted", [False, True])
def test_conv_block_gradient(rng, shifted):
    block = ConvSwinBlock(AttentionConfig(channels=4, heads=2, window=2, shifted=shifted), rng)
    x = rng.standard_normal((1, 4, 4, 4))
    w = rng.standard_normal(x.shape)

    def f():
        with T.no_grad():
            return float((block(Tensor(x)).data * w).sum())

    block.zero_grad()
    T.tsum(block(Tensor(x)) * w).backward()
    # key bias has an exactly-zero gradient (softmax shift invariance), so compare jointly
    params = block.parameters()
    analytic = np.concatenate([p.grad.ravel() for p in params])
    numeric = np.concatenate([numeric_grad(f, p.data).ravel() for p in params])
    assert rel_err(analytic, numeric) < 1e-5


def test_baseline_matches_conv_block_construction(rng):
    cfg = AttentionConfig(channels=6, heads=2, window=4, shifted=True)
    conv = ConvSwinBlock(cfg, rng)
    base = BaselineSwinBlock(AttentionConfig(channels=6, heads=2, window=4, shifted=True, projection="linear-rpe"), rng)
    for proj in (conv.q_proj, conv.k_proj, conv.v_proj):
        proj.depthwise.data[:] = 0.0
        proj.depthwise.data[1, 1] = 1.0
    for src, dst in ((conv.q_proj, base.q_proj), (conv.k_proj, base.k_proj), (conv.v_proj, base.v_proj)):
        dst.weight.data = src.pointwise.data.copy()
        dst.bias.data = src.bias.data.copy()
    base.rpe_table.data[:] = 0.0
    for part in ("norm1", "proj", "norm2", "mlp"):
        src = dict(getattr(conv, part).named_parameters())
        for name, p in getattr(base, part).named_parameters():
            p.data = src[name].data.copy()
    x = rng.standard_normal((1, 8, 8, 6))
    np.testing.assert_allclose(base(Tensor(x)).data, conv(Tensor(x)).data, atol=1e-12)


def _count(module):
    return sum(p.size for p in module.parameters())


def test_qkv_parameter_counts(rng):
    C, k, w = 16, 3, 4
    conv = ConvSwinBlock(AttentionConfig(channels=C, window=w, kernel=k), rng)
    base = BaselineSwinBlock(AttentionConfig(channels=C, window=w, kernel=k, projection="linear-rpe"), rng)
    lin_qkv = sum(_count(m) for m in (base.q_proj, base.k_proj, base.v_proj))
    conv_qkv = sum(_count(m) for m in (conv.q_proj, conv.k_proj, conv.v_proj))
    assert lin_qkv == 3 * C * C + 3 * C
    assert conv_qkv == 3 * (k * k * C + C * C) + 3 * C
    heads = default_heads(C)
    assert base.rpe_table.size == (2 * w - 1) ** 2 * heads
    assert _count(conv) - _count(base) == 3 * k * k * C - (2 * w - 1) ** 2 * heads


def test_relative_position_index_depends_on_offsets_only():
    w = 3
    idx = relative_position_index(w)
    coords = [(i, j) for i in range(w) for j in range(w)]
    for a, (ya, xa) in enumerate(coords):
        for b, (yb, xb) in enumerate(coords):
            for c, (yc, xc) in enumerate(coords):
                for d, (yd, xd) in enumerate(coords):
                    if (ya - yb, xa - xb) == (yc - yd, xc - xd):
                        assert idx[a, b] == idx[c, d]
    assert len(np.unique(idx)) == (2 * w - 1) ** 2


def test_conv_block_translation_equivariance(rng):
    w = 4
    block = ConvSwinBlock(AttentionConfig(channels=8, heads=2, window=w, padding="circular"), rng)
    for _ in range(3):
        x = rng.standard_normal((1, 16, 8, 8))
        ref = np.roll(block(Tensor(x)).data, (w, -w), (1, 2))
        out = block(Tensor(np.roll(x, (w, -w), (1, 2)))).data
        assert np.abs(out - ref).max() < 1e-9


def test_rpe_table_changes_baseline_output(rng):
    block = BaselineSwinBlock(AttentionConfig(channels=8, window=4, projection="linear-rpe"), rng)
    x = Tensor(rng.standard_normal((1, 8, 8, 8)))
    before = block(x).data
    block.rpe_table.data = rng.standard_normal(block.rpe_table.shape)
    assert np.abs(block(x).data - before).max() > 1e-6


def test_conv_block_has_no_position_indexed_parameters(rng):
    block = ConvSwinBlock(AttentionConfig(channels=8, window=4), rng)
    names = [n for n, _ in block.named_parameters()]
    assert not any("rpe" in n or "position" in n for n in names)


def test_attention_config_validation():
    with pytest.raises(ValueError):
        AttentionConfig(channels=10, heads=3)
    with pytest.raises(ValueError):
        AttentionConfig(channels=8, kernel=4)
    assert AttentionConfig(channels=320).heads == 10
    assert AttentionConfig(channels=16).heads == 1
    assert AttentionConfig(channels=8, window=7, shifted=True).shift == 3


def test_block_parameter_names(rng):
    class Holder(Module):
        def __init__(self):
            self.block1 = ConvSwinBlock(AttentionConfig(channels=4, window=2), rng)

    names = [n for n, _ in Holder().named_parameters()]
    assert "block1.q_proj.depthwise" in names
    assert len(names) == len(set(names))
