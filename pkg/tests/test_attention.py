import math

import numpy as np
import pytest

import oracles
from hopmatting.attention import (
    BG,
    FG,
    UNKNOWN,
    HopBlockParams,
    LocalRelativePe,
    SiPositionalEncoding,
    global_attention,
    global_logits,
    global_hop_forward,
    local_attention_weights,
    local_hop_forward,
    self_attention_forward,
    si_encoding,
    sinusoidal_code,
    trimap_code,
)
from hopmatting.attention import kernels
from hopmatting.autodiff import ShapeError, Tensor, finite_diff_check


def _block(rng, c, out_scale=1.0):
    return HopBlockParams(Tensor(rng.standard_normal((c, c))), Tensor(rng.standard_normal((c, c)) * out_scale))


def _maps(rng, h, w, c):
    return rng.standard_normal((h, w, c)), rng.standard_normal((h, w, c))


@pytest.mark.parametrize("size", [(2, 2), (3, 3), (2, 3)])
@pytest.mark.parametrize("seed", range(4))
def test_global_matches_pairwise_loop(size, seed):
    rng = np.random.default_rng(seed)
    fa, fo = _maps(rng, *size, 2)
    p = _block(rng, 2)
    ref = oracles.global_hop_loop(fa, fo, p.w_qk.data.tolist(), p.w_out.data.tolist())
    np.testing.assert_allclose(global_hop_forward(fa, fo, p).data, ref, atol=1e-10, rtol=0)


@pytest.mark.parametrize("seed", range(4))
def test_global_with_position_and_trimap_matches_loop(seed):
    rng = np.random.default_rng(seed)
    c = 4
    fa, fo = _maps(rng, 3, 3, c)
    p = _block(rng, c)
    w_pe, w_t = rng.standard_normal((c, c)), rng.standard_normal((c, 3))
    tri = rng.choice(np.array([BG, UNKNOWN, FG], dtype=np.uint8), size=(3, 3))
    pe = SiPositionalEncoding(Tensor(w_pe), radius=1, trimap_w=Tensor(w_t))
    ref = oracles.global_hop_loop(fa, fo, p.w_qk.data.tolist(), p.w_out.data.tolist(), w_pe.tolist(), 1, tri, w_t.tolist())
    np.testing.assert_allclose(global_hop_forward(fa, fo, p, pe, tri).data, ref, atol=1e-10, rtol=0)
    # without a trimap the embedding term drops out
    ref = oracles.global_hop_loop(fa, fo, p.w_qk.data.tolist(), p.w_out.data.tolist(), w_pe.tolist(), 1)
    np.testing.assert_allclose(global_hop_forward(fa, fo, p, pe).data, ref, atol=1e-10, rtol=0)


@pytest.mark.parametrize("k", [1, 3, 5])
@pytest.mark.parametrize("with_pe", [False, True])
def test_local_matches_window_loop(k, with_pe):
    rng = np.random.default_rng(k)
    c = 3
    fa, fo = _maps(rng, 3, 4, c)
    p = _block(rng, c)
    pe = LocalRelativePe.init(c, k, rng, scale=1.0) if with_pe else None
    ref = oracles.local_hop_loop(fa, fo, p.w_qk.data.tolist(), p.w_out.data.tolist(), k,
                                 None if pe is None else pe.table.data.tolist())
    np.testing.assert_allclose(local_hop_forward(fa, fo, p, k, pe).data, ref, atol=1e-10, rtol=0)


@pytest.mark.parametrize("c", [2, 4, 8])
def test_full_window_equals_global(c):
    for seed in range(10):
        rng = np.random.default_rng([seed, c])
        h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        fa, fo = _maps(rng, h, w, c)
        p = _block(rng, c)
        k = 2 * max(h, w) - 1
        np.testing.assert_allclose(local_hop_forward(fa, fo, p, k).data, global_hop_forward(fa, fo, p).data,
                                   atol=1e-12, rtol=0)


def test_zero_output_projection_is_identity():
    rng = np.random.default_rng(0)
    fa, fo = _maps(rng, 4, 5, 3)
    p = HopBlockParams(Tensor(rng.standard_normal((3, 3))), Tensor(np.zeros((3, 3))))
    assert global_hop_forward(fa, fo, p).data.tobytes() == fo.tobytes()
    assert local_hop_forward(fa, fo, p, 3).data.tobytes() == fo.tobytes()


def test_constant_appearance_gives_uniform_attention():
    rng = np.random.default_rng(1)
    fa = np.broadcast_to(rng.standard_normal(3), (4, 4, 3)).copy()
    fo = rng.standard_normal((4, 4, 3))
    p = _block(rng, 3)
    a = global_attention(fa, p).data
    np.testing.assert_allclose(a, 1.0 / 16, atol=1e-15)
    expected = fo.mean(axis=(0, 1)) @ p.w_out.data.T + fo
    np.testing.assert_allclose(global_hop_forward(fa, fo, p).data, expected, atol=1e-12)


def test_window_one_is_pointwise():
    rng = np.random.default_rng(2)
    fa, fo = _maps(rng, 3, 5, 4)
    p = _block(rng, 4)
    np.testing.assert_allclose(local_hop_forward(fa, fo, p, 1).data, fo @ p.w_out.data.T + fo, atol=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_attention_rows_are_stochastic(seed):
    rng = np.random.default_rng(seed)
    fa, _ = _maps(rng, 4, 3, 4)
    p = _block(rng, 4)
    pe = SiPositionalEncoding.init(4, rng, radius=2, trimap=True, scale=1.0)
    tri = rng.choice(np.array([BG, UNKNOWN, FG], dtype=np.uint8), size=(4, 3))
    a = global_attention(fa, p, pe, tri).data
    assert np.all(a >= 0)
    np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-10)
    w = local_attention_weights(fa, p, 3, LocalRelativePe.init(4, 3, rng))
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-10)


def test_local_weights_zero_outside_image():
    rng = np.random.default_rng(3)
    fa, _ = _maps(rng, 3, 3, 2)
    w = local_attention_weights(fa, _block(rng, 2), 3)[0]
    # corner (0, 0): only offsets with dr >= 0 and dc >= 0 are valid
    slots = w[0, 0].reshape(3, 3)
    assert not slots[0].any() and not slots[:, 0].any()
    assert np.all(slots[1:, 1:] > 0)


def test_global_is_permutation_equivariant():
    rng = np.random.default_rng(4)
    fa, fo = _maps(rng, 1, 12, 3)
    p = _block(rng, 3)
    perm = rng.permutation(12)
    out = global_hop_forward(fa, fo, p).data
    out_perm = global_hop_forward(fa[:, perm], fo[:, perm], p).data
    np.testing.assert_allclose(out_perm, out[:, perm], atol=1e-12)


@pytest.mark.parametrize("k", [3, 5])
@pytest.mark.parametrize("axis", [0, 1])
def test_local_flip_equivariance(k, axis):
    for seed in range(10):
        rng = np.random.default_rng([seed, k, axis])
        fa, fo = _maps(rng, 5, 6, 4)
        p = _block(rng, 4)
        pe = LocalRelativePe.init(4, k, rng, scale=1.0)
        out = local_hop_forward(fa, fo, p, k, pe).data
        flipped = local_hop_forward(np.flip(fa, axis), np.flip(fo, axis), p, k, pe).data
        assert np.abs(flipped - np.flip(out, axis)).max() <= 1e-12


def test_sinusoidal_code_example():
    expected = [math.sin(1), math.cos(1), math.sin(1e-2), math.cos(1e-2)]
    np.testing.assert_allclose(sinusoidal_code(1, 4), expected, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        sinusoidal_code(1, 3)


def test_si_encoding_clamps_bitwise():
    rng = np.random.default_rng(0)
    pe = SiPositionalEncoding.init(8, rng, radius=7, scale=1.0)
    e7 = si_encoding(pe, 7)
    for d in range(8, 31):
        assert si_encoding(pe, d).tobytes() == e7.tobytes()
    assert not np.array_equal(si_encoding(pe, 3), si_encoding(pe, 4))


def test_positional_logits_clamp_on_large_maps():
    rng = np.random.default_rng(1)
    c = 4
    # constant appearance: every cosine term is the same number, so any
    # difference between logits comes from the positional term alone
    fa = np.broadcast_to(rng.standard_normal(c), (1, 31, c)).copy()
    p = _block(rng, c)
    pe = SiPositionalEncoding.init(c, rng, radius=7, scale=1.0)
    row = global_logits(fa, p, pe).data[0, 0]
    assert len({row[d].tobytes() for d in range(8, 31)}) == 1
    assert row[7].tobytes() == row[8].tobytes()
    assert row[6] != row[7]


def test_lr_pe_lookup_symmetric_exhaustive():
    rng = np.random.default_rng(0)
    for k in (1, 3, 5, 7, 9):
        pe = LocalRelativePe.init(3, k, rng)
        r = k // 2
        for dr in range(-r, r + 1):
            for dc in range(-r, r + 1):
                base = pe.lookup(dr, dc)
                assert pe.lookup(-dr, dc).tobytes() == base.tobytes()
                assert pe.lookup(dr, -dc).tobytes() == base.tobytes()
        with pytest.raises(IndexError):
            pe.lookup(r + 1, 0)


def test_trimap_code_order():
    np.testing.assert_array_equal(trimap_code(FG), [1, 0, 0])
    np.testing.assert_array_equal(trimap_code(BG), [0, 1, 0])
    np.testing.assert_array_equal(trimap_code(UNKNOWN), [0, 0, 1])
    with pytest.raises(ValueError):
        trimap_code(7)


def test_trimap_term_changes_only_with_embedding():
    rng = np.random.default_rng(5)
    fa, fo = _maps(rng, 3, 3, 4)
    p = _block(rng, 4)
    tri = np.full((3, 3), UNKNOWN, dtype=np.uint8)
    tri[0, 0] = FG
    plain = SiPositionalEncoding.init(4, rng, radius=2, scale=1.0)
    a = global_hop_forward(fa, fo, p, plain, tri).data
    b = global_hop_forward(fa, fo, p, plain).data
    assert a.tobytes() == b.tobytes()
    emb = SiPositionalEncoding(plain.w_pe, 2, Tensor(rng.standard_normal((4, 3))))
    assert not np.allclose(global_hop_forward(fa, fo, p, emb, tri).data, b)


def test_trimap_resized_to_feature_grid():
    rng = np.random.default_rng(6)
    fa, fo = _maps(rng, 2, 2, 2)
    p = _block(rng, 2)
    pe = SiPositionalEncoding.init(2, rng, radius=2, trimap=True, scale=1.0)
    small = np.array([[FG, BG], [UNKNOWN, UNKNOWN]], dtype=np.uint8)
    big = np.kron(small, np.ones((4, 4), dtype=np.uint8))
    np.testing.assert_array_equal(global_hop_forward(fa, fo, p, pe, big).data, global_hop_forward(fa, fo, p, pe, small).data)


def test_self_attention_constant_input():
    rng = np.random.default_rng(7)
    f = np.broadcast_to(rng.standard_normal(3), (3, 3, 3)).copy()
    p = _block(rng, 3)
    expected = f.mean(axis=(0, 1)) @ p.w_out.data.T + f
    np.testing.assert_allclose(self_attention_forward(f, p).data, expected, atol=1e-12)
    np.testing.assert_allclose(self_attention_forward(f, p, "local", 3).data, expected, atol=1e-12)
    with pytest.raises(ValueError):
        self_attention_forward(f, p, "local")


def test_block_shape_errors():
    rng = np.random.default_rng(8)
    p = _block(rng, 3)
    with pytest.raises(ShapeError):
        global_hop_forward(rng.standard_normal((2, 2, 4)), rng.standard_normal((2, 2, 4)), p)
    with pytest.raises(ShapeError):
        global_hop_forward(rng.standard_normal((2, 2, 3)), rng.standard_normal((3, 2, 3)), p)
    with pytest.raises(ValueError):
        local_hop_forward(rng.standard_normal((2, 2, 3)), rng.standard_normal((2, 2, 3)), p, 4)


def test_batched_equals_per_image():
    rng = np.random.default_rng(9)
    fa, fo = rng.standard_normal((3, 4, 4, 2)), rng.standard_normal((3, 4, 4, 2))
    p = _block(rng, 2)
    pe = LocalRelativePe.init(2, 3, rng)
    batched = local_hop_forward(fa, fo, p, 3, pe).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], local_hop_forward(fa[i], fo[i], p, 3, pe).data, atol=1e-14)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
def test_backends_agree(k):
    if len(kernels.BACKENDS) < 2:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(k)
    q = rng.standard_normal((2, 6, 7, 3))
    v = rng.standard_normal((2, 6, 7, 3))
    pe = rng.standard_normal((k // 2 + 1, k // 2 + 1, 3))
    g = rng.standard_normal((2, 6, 7, 3))
    for table in (None, pe):
        out_c, attn_c = kernels.local_forward(q, v, table, k, "compiled")
        out_p, attn_p = kernels.local_forward(q, v, table, k, "python")
        np.testing.assert_allclose(out_c, out_p, atol=1e-13)
        np.testing.assert_allclose(attn_c, attn_p, atol=1e-13)
        for a, b in zip(kernels.local_backward(q, v, table, k, attn_c, g, "compiled"),
                        kernels.local_backward(q, v, table, k, attn_p, g, "python")):
            if a is None:
                assert b is None
            else:
                np.testing.assert_allclose(a, b, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("gpu")


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_local_gradients_each_backend(backend):
    rng = np.random.default_rng(11)
    fa, fo = _maps(rng, 4, 4, 3)
    p = _block(rng, 3)
    table = rng.standard_normal((2, 2, 3)) * 0.5

    def f(a, o, wq, wo, t):
        return local_hop_forward(a, o, HopBlockParams(wq, wo), 3, LocalRelativePe(t, 3), backend=backend)

    rep = finite_diff_check(f, [fa, fo, p.w_qk.data, p.w_out.data, table])
    assert rep.passed, rep.max_rel_error


@pytest.mark.parametrize("seed", range(10))
def test_global_gradients_with_position_and_trimap(seed):
    rng = np.random.default_rng(seed)
    fa, fo = _maps(rng, 3, 3, 2)
    w_qk, w_out = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
    w_pe, w_t = rng.standard_normal((2, 2)) * 0.5, rng.standard_normal((2, 3)) * 0.5
    tri = rng.choice(np.array([BG, UNKNOWN, FG], dtype=np.uint8), size=(3, 3))

    def f(a, o, wq, wo, wp, wt):
        return global_hop_forward(a, o, HopBlockParams(wq, wo), SiPositionalEncoding(wp, 2, wt), tri)

    rep = finite_diff_check(f, [fa, fo, w_qk, w_out, w_pe, w_t])
    assert rep.passed, rep.max_rel_error
