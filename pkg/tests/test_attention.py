import numpy as np
import pytest

from cohft import tensor as T
from cohft.attention import (AttentionConfig, basic_attention, init_attention_weights,
                             inter_head_correlation, intra_head_correlation, mix_heads,
                             renew_values, tokenize)
from cohft.tensor import ShapeError, Tape, Tensor, backward

# frozen correlation values for hand-checkable token configurations
SINGLE_PAIR_WEIGHT = 0.669761549326657      # softmax of logits [1/sqrt(2), 0]
TWO_HEAD_ROW = (0.7310585786300049, 0.2689414213699951)  # softmax of logits [1, 0]


def test_intra_head_rows_stochastic():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = Tensor(rng.standard_normal((6, 4)))
        k = Tensor(rng.standard_normal((6, 4)))
        s = intra_head_correlation(q, k)
        assert s.shape == (6, 6)
        assert np.all(np.abs(s.data.sum(-1) - 1.0) <= 1e-6)
        assert np.all(s.data >= 0)


def test_inter_head_rows_stochastic():
    rng = np.random.default_rng(1)
    for _ in range(50):
        vhats = [Tensor(rng.standard_normal((5, 3))) for _ in range(4)]
        a = inter_head_correlation(vhats)
        assert a.shape == (5, 4, 4)
        assert np.all(np.abs(a.data.sum(-1) - 1.0) <= 1e-6)


def test_single_pair_correlation_value():
    # two keys, d' = 2: logits are 1/sqrt(2) and 0 after scaling
    q = Tensor(np.array([[1.0, 0.0]]))
    k = Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]))
    s = intra_head_correlation(q, k)
    assert abs(s.data[0, 0] - SINGLE_PAIR_WEIGHT) <= 1e-4
    assert abs(s.data[0, 1] - (1.0 - SINGLE_PAIR_WEIGHT)) <= 1e-4


def test_two_head_correlation_value():
    # orthonormal heads: self dot 1, cross dot 0, unscaled logits
    v1 = Tensor(np.array([[1.0, 0.0]]))
    v2 = Tensor(np.array([[0.0, 1.0]]))
    a = inter_head_correlation([v1, v2])
    assert abs(a.data[0, 0, 0] - TWO_HEAD_ROW[0]) <= 1e-4
    assert abs(a.data[0, 0, 1] - TWO_HEAD_ROW[1]) <= 1e-4
    assert abs(a.data[0, 1, 1] - TWO_HEAD_ROW[0]) <= 1e-4


def test_renew_values_weighted_combination():
    s = Tensor(np.array([[0.25, 0.75], [1.0, 0.0]]))
    v = Tensor(np.array([[2.0, 0.0], [0.0, 4.0]]))
    out = renew_values(s, v)
    assert np.allclose(out.data, [[0.5, 3.0], [2.0, 0.0]])


def test_single_head_mixing_doubles():
    # with one head the correlation matrix is exactly 1, so u = 2 vhat
    rng = np.random.default_rng(2)
    v = Tensor(rng.standard_normal((7, 3)))
    a = inter_head_correlation([v])
    assert np.array_equal(a.data, np.ones((7, 1, 1)))
    (u,) = mix_heads([v], a)
    assert np.allclose(u.data, 2.0 * v.data, atol=1e-12)


def test_equal_heads_mixing():
    # M identical heads: uniform correlation, u = (M + 1) vhat for every head
    rng = np.random.default_rng(3)
    base = Tensor(rng.standard_normal((4, 5)))
    for m in (2, 3, 4):
        vhats = [base] * m
        a = inter_head_correlation(vhats)
        for u in mix_heads(vhats, a):
            assert np.allclose(u.data, (m + 1) * base.data, atol=1e-10)


def test_tokenize_shapes():
    rng = np.random.default_rng(4)
    cfg = AttentionConfig(d=4, M=2, p=2, rho=2)
    w = init_attention_weights(cfg, rng)
    x1 = Tensor(rng.standard_normal((6, 6, 4)))
    x2 = Tensor(rng.standard_normal((12, 12, 4)))
    t1 = tokenize(x1, w, cfg, "input")
    t2 = tokenize(x2, w, cfg, "reference")
    assert t1.shape == (9, 16)
    assert t2.shape == (9, 16)
    with pytest.raises(ShapeError):
        tokenize(Tensor(rng.standard_normal((7, 7, 4))), w, cfg, "reference")
    with pytest.raises(ValueError):
        tokenize(x1, w, cfg, "bogus")


def test_config_validation():
    with pytest.raises(ShapeError):
        AttentionConfig(d=5, M=2, p=1)
    cfg = AttentionConfig(d=6, M=3, p=2)
    assert cfg.d_prime == 8


def test_safe_start_is_identity():
    rng = np.random.default_rng(5)
    cfg = AttentionConfig(d=4, M=2, p=1, rho=1)
    w = init_attention_weights(cfg, rng)  # safe start: zero output conv
    x = Tensor(rng.standard_normal((6, 6, 4)))
    out = basic_attention(x, x, w, cfg)
    assert np.array_equal(out.data, x.data)


def test_output_shape_follows_x1():
    rng = np.random.default_rng(6)
    cfg = AttentionConfig(d=4, M=2, p=2, rho=2)
    w = init_attention_weights(cfg, rng, safe_start=False)
    x1 = Tensor(rng.standard_normal((6, 6, 4)))
    x2 = Tensor(rng.standard_normal((12, 12, 4)))
    assert basic_attention(x1, x2, w, cfg).shape == (6, 6, 4)


def test_reference_patch_permutation_invariance():
    rng = np.random.default_rng(7)
    cfg = AttentionConfig(d=4, M=2, p=2, rho=1)
    w = init_attention_weights(cfg, rng, safe_start=False)
    x1 = Tensor(rng.standard_normal((4, 4, 4)))
    x2 = rng.standard_normal((4, 4, 4))
    out = basic_attention(x1, Tensor(x2), w, cfg)
    flipped = x2.reshape(2, 2, 4, 4)[::-1].reshape(4, 4, 4)
    out_p = basic_attention(x1, Tensor(flipped), w, cfg)
    assert np.allclose(out.data, out_p.data, atol=1e-10)


def test_batched_equals_loop():
    rng = np.random.default_rng(8)
    cfg = AttentionConfig(d=4, M=2, p=1, rho=1)
    w = init_attention_weights(cfg, rng, safe_start=False)
    xs = rng.standard_normal((3, 5, 5, 4))
    batched = basic_attention(Tensor(xs), Tensor(xs), w, cfg).data
    for i in range(3):
        single = basic_attention(Tensor(xs[i]), Tensor(xs[i]), w, cfg).data
        assert np.allclose(batched[i], single, atol=1e-12)


def test_inter_head_switch_changes_output():
    rng = np.random.default_rng(9)
    cfg = AttentionConfig(d=4, M=2, p=1, rho=1)
    w = init_attention_weights(cfg, rng, safe_start=False)
    x = Tensor(rng.standard_normal((6, 6, 4)))
    on = basic_attention(x, x, w, cfg, use_inter_head=True).data
    off = basic_attention(x, x, w, cfg, use_inter_head=False).data
    assert np.abs(on - off).max() > 1e-6


def test_attention_weight_gradients():
    rng = np.random.default_rng(10)
    cfg = AttentionConfig(d=4, M=2, p=1, rho=1)
    w = init_attention_weights(cfg, rng, safe_start=False)
    x = Tensor(rng.standard_normal((6, 6, 4)))

    def loss():
        return T.tsum(T.square(basic_attention(x, x, w, cfg)))

    with Tape() as tape:
        l0 = loss()
    grads = backward(l0, tape)
    for p in (w.wq, w.wk, w.wv, w.out_w, w.embed1.conv_w, w.embed2.conv_w):
        g = grads[p]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        h = 1e-6
        orig = p.data[idx]
        p.data[idx] = orig + h
        lp = loss().item()
        p.data[idx] = orig - h
        lm = loss().item()
        p.data[idx] = orig
        want = (lp - lm) / (2 * h)
        assert abs(want - g[idx]) <= 1e-5 * max(abs(want), abs(g[idx]), 1.0)
