import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.errors import (DetachedNode, DivisibilityError, EvenKernel, KernelTooLarge, NotScalar,
                             ShapeMismatch)
from artifact.gradcheck import check
from artifact.numcore import layers, ops
from artifact.numcore.rng import RngState
from artifact.numcore.tensor import Tape, Var, backward

seeds = st.integers(0, 2**32 - 1)


def loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def loop_dwsep(x, wd, wp):
    t, n, d = x.shape
    k = wd.shape[1]
    half = k // 2
    y = np.zeros_like(x)
    for tt in range(t):
        for nn in range(n):
            for c in range(d):
                for j in range(k):
                    src = tt + j - half
                    if 0 <= src < t:
                        y[tt, nn, c] += wd[c, j] * x[src, nn, c]
    out = np.zeros_like(x)
    for tt in range(t):
        for nn in range(n):
            for c_out in range(d):
                for c in range(d):
                    out[tt, nn, c_out] += y[tt, nn, c] * wp[c, c_out]
    return out


# matmul -----------------------------------------------------------------------

def test_matmul_identity_and_zero():
    a = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(ops.matmul(np.eye(2), a).data, a)
    assert np.array_equal(ops.matmul([[1.0, 2.0], [3.0, 4.0]], [[0.0], [0.0]]).data, np.zeros((2, 1)))


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.max(np.abs(ops.matmul(a, b).data - loop_matmul(a, b))) <= 1e-12


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeMismatch):
        ops.matmul(np.ones((2, 3)), np.ones((2, 3)))


# attention --------------------------------------------------------------------

def test_attention_single_token_returns_v():
    rng = np.random.default_rng(2)
    q, k, v = (rng.normal(size=(1, 8)) for _ in range(3))
    assert np.allclose(layers.softmax_attention(q, k, v, heads=2).data, v, atol=1e-15)


def test_attention_zero_queries_average_values():
    v = np.random.default_rng(3).normal(size=(5, 4))
    out = layers.softmax_attention(np.zeros((5, 4)), np.zeros((5, 4)), v, heads=2).data
    assert np.allclose(out, np.broadcast_to(v.mean(axis=0), v.shape), atol=1e-14)


@given(seeds)
def test_attention_rows_are_stochastic(seed):
    rng = np.random.default_rng(seed)
    q, k, v = (rng.normal(size=(4, 8)) * 3 for _ in range(3))
    _, w = layers.softmax_attention(q, k, v, heads=2, return_weights=True)
    assert w.shape == (2, 4, 4)
    assert np.max(np.abs(w.sum(axis=-1) - 1.0)) <= 1e-12


def test_attention_errors():
    with pytest.raises(DivisibilityError):
        layers.softmax_attention(np.ones((3, 6)), np.ones((3, 6)), np.ones((3, 6)), heads=4)
    with pytest.raises(ShapeMismatch):
        layers.softmax_attention(np.ones((3, 4)), np.ones((2, 4)), np.ones((3, 4)), heads=2)


# depth-wise separable convolution ---------------------------------------------

def test_dwsep_identity_configuration():
    x = np.random.default_rng(4).normal(size=(4, 2, 3))
    out = layers.dwsep_conv(x, 1, np.ones((3, 1)), np.eye(3)).data
    assert np.array_equal(out, x)


def test_dwsep_zero_pointwise():
    x = np.random.default_rng(5).normal(size=(4, 2, 3))
    assert np.array_equal(layers.dwsep_conv(x, 3, np.ones((3, 3)), np.zeros((3, 3))).data, np.zeros_like(x))


def test_dwsep_matches_nested_loops():
    rng = np.random.default_rng(6)
    x, wd, wp = rng.normal(size=(4, 2, 3)), rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    assert np.max(np.abs(layers.dwsep_conv(x, 3, wd, wp).data - loop_dwsep(x, wd, wp))) <= 1e-12


@given(seeds, st.floats(-3, 3), st.floats(-3, 3))
def test_dwsep_is_linear(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(5, 2, 4)), rng.normal(size=(5, 2, 4))
    wd, wp = rng.normal(size=(4, 3)), rng.normal(size=(4, 4))
    f = lambda z: layers.dwsep_conv(z, 3, wd, wp).data  # noqa: E731
    assert np.max(np.abs(f(alpha * x + beta * y) - (alpha * f(x) + beta * f(y)))) <= 1e-10


def test_dwsep_sequence_axis_matches_flat_loop():
    rng = np.random.default_rng(7)
    x, wd, wp = rng.normal(size=(3, 2, 2)), rng.normal(size=(2, 3)), rng.normal(size=(2, 2))
    flat = x.reshape(6, 1, 2)
    want = loop_dwsep(flat, wd, wp).reshape(x.shape)
    assert np.allclose(layers.dwsep_conv(x, 3, wd, wp, axis="sequence").data, want, atol=1e-12)


def test_dwsep_errors():
    x = np.ones((2, 1, 3))
    with pytest.raises(KernelTooLarge):
        layers.dwsep_conv(x, 3, np.ones((3, 3)), np.eye(3))
    with pytest.raises(EvenKernel):
        ops.depthwise_conv(np.ones((4, 1, 3)), np.ones((3, 2)))


# backward ---------------------------------------------------------------------

def test_grad_of_sum_is_ones():
    tape = Tape()
    x = tape.leaf(np.random.default_rng(8).normal(size=(2, 3, 4)), "x")
    g = backward(tape, ops.sum(x))
    assert np.array_equal(g["x"], np.ones((2, 3, 4)))


def test_zero_times_anything_gives_zero_gradients():
    tape = Tape()
    x = tape.leaf(np.random.default_rng(9).normal(size=(3,)), "x")
    untouched = tape.leaf(np.ones(2), "u")
    g = backward(tape, ops.mul(0.0, ops.sum(ops.exp(x))))
    assert np.array_equal(g["x"], np.zeros(3))
    assert np.array_equal(g["u"], np.zeros(2))


def test_backward_errors():
    tape = Tape()
    x = tape.leaf(np.ones(3), "x")
    with pytest.raises(NotScalar):
        backward(tape, ops.mul(x, 2.0))
    with pytest.raises(DetachedNode):
        backward(Tape(), ops.sum(x))
    with pytest.raises(DetachedNode):
        backward(tape, Var(np.ones(())))


def test_backward_is_deterministic():
    def run():
        tape = Tape()
        a = tape.leaf(np.random.default_rng(10).normal(size=(4, 4)), "a")
        loss = ops.sum(ops.tanh(ops.matmul(a, a)))
        return backward(tape, loss)["a"].tobytes()
    assert run() == run()


@pytest.mark.parametrize("name,fn", [
    ("exp", ops.exp), ("tanh", ops.tanh), ("gelu", ops.gelu),
    ("softmax", lambda x: ops.softmax(x, axis=-1)),
    ("log_softmax", lambda x: ops.log_softmax(x, axis=0)),
    ("max", lambda x: ops.max(x, axis=1)),
    ("mean", lambda x: ops.mean(x, axis=(0, 1))),
    ("power", lambda x: ops.power(ops.add(ops.mul(x, x), 1.0), 1.5)),
    ("div", lambda x: ops.div(x, ops.add(ops.mul(x, x), 2.0))),
    ("sqrt", lambda x: ops.sqrt(ops.add(ops.mul(x, x), 0.5))),
    ("log", lambda x: ops.log(ops.add(ops.mul(x, x), 0.5))),
    ("take", lambda x: ops.take(x, (slice(None), [0, 2, 2]))),
    ("concat", lambda x: ops.concat([x, ops.mul(x, 2.0)], axis=1)),
])
def test_elementary_ops_match_finite_differences(name, fn):
    x = np.random.default_rng(11).normal(size=(3, 4))
    err, _ = check(lambda v: fn(v["x"]), {"x": x})
    assert err <= 1e-4, name


# layer norm, dropout, rng -----------------------------------------------------

def test_layer_norm_is_per_token():
    x = np.random.default_rng(12).normal(3.0, 2.0, size=(5, 8))
    y = layers.layer_norm(x, np.ones(8), np.zeros(8)).data
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=-1), 1.0 / (1.0 + 1e-5 / x.var(axis=-1)), atol=1e-9)


def test_dropout_inverted_scaling():
    x = np.ones((200, 50))
    assert np.array_equal(layers.dropout(x, 0.5, RngState(0), training=False).data, x)
    y = layers.dropout(x, 0.5, RngState(0), training=True).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05


def test_dropout_masks_are_reproducible():
    x = np.ones((6, 7))
    a = layers.dropout(x, 0.3, RngState(42).child("dropout", 1), training=True).data
    b = layers.dropout(x, 0.3, RngState(42).child("dropout", 1), training=True).data
    c = layers.dropout(x, 0.3, RngState(42).child("dropout", 2), training=True).data
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


@given(st.integers(0, 2**64 - 1))
def test_rng_streams_repeat(seed):
    a, b = RngState(seed), RngState(seed)
    assert a.normal(size=5).tobytes() == b.normal(size=5).tobytes()
    assert np.array_equal(RngState(seed).child("x", 3).choice(50, 10), RngState(seed).child("x", 3).choice(50, 10))


def test_rng_string_keys_are_stable():
    # crc32 keys do not depend on the interpreter's hash randomisation
    assert RngState(0).child("stage1").key == (zlib.crc32(b"stage1"),)
    assert RngState(5).child("a", 7).key == (zlib.crc32(b"a"), 7)


def test_rng_rejects_out_of_range_seed():
    with pytest.raises(ValueError):
        RngState(2**64)
    with pytest.raises(ValueError):
        RngState(-1)
