"""Tape engine: forward values, reverse-mode gradients vs the
finite-difference oracle, determinism, and error contracts."""

import numpy as np
import pytest

from adacoef.autodiff import Tape, TapeError, finite_diff_gradient


def rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def test_silu_and_tanh_at_zero():
    tape = Tape()
    x = tape.leaf(np.zeros(3))
    assert np.all(tape.silu(x).value == 0.0)
    assert np.all(tape.tanh(x).value == 0.0)


def test_matmul_matches_scalar_dot_products():
    a = rand((2, 3), 0)
    b = rand((3, 1), 1)
    tape = Tape()
    out = tape.matmul(tape.leaf(a), tape.leaf(b)).value
    for i in range(2):
        for j in range(1):
            dot = sum(a[i, k] * b[k, j] for k in range(3))
            assert out[i, j] == pytest.approx(dot, rel=1e-15)


def test_square_gradient():
    tape = Tape()
    x = tape.leaf(np.asarray(3.0))
    y = x * x
    grads = tape.backward(y)
    assert grads[x.index] == pytest.approx(6.0)


def test_sum_sin_gradient_at_zero_is_ones():
    tape = Tape()
    x = tape.leaf(np.zeros(5))
    y = tape.sum(tape.sin(x))
    grads = tape.backward(y)
    assert np.allclose(grads[x.index], 1.0, atol=0)


def _mlp_loss(tape, w1, b1, w2, b2, x):
    h = tape.silu(tape.linear(x, w1, b1))
    out = tape.linear(h, w2, b2)
    return tape.mean(tape.sum(tape.square(out), axis=1))


def test_two_layer_mlp_gradient_matches_finite_differences():
    x0 = rand((6, 4), 2)
    w1v, b1v = rand((4, 8), 3), rand(8, 4)
    w2v, b2v = rand((8, 2), 5), rand(2, 6)
    tape = Tape()
    w1 = tape.leaf(w1v)
    b1 = tape.leaf(b1v)
    w2 = tape.leaf(w2v)
    b2 = tape.leaf(b2v)
    loss = _mlp_loss(tape, w1, b1, w2, b2, tape.constant(x0))
    grads = tape.backward(loss)
    for var, val in ((w1, w1v), (b1, b1v), (w2, w2v), (b2, b2v)):
        def f(v, _var=var):
            t2 = Tape()
            vals = {w1: w1v, b1: b1v, w2: w2v, b2: b2v}
            vals[_var] = v
            leafs = {k: t2.leaf(v2) for k, v2 in vals.items()}
            loss2 = _mlp_loss(
                t2, leafs[w1], leafs[b1], leafs[w2], leafs[b2], t2.constant(x0)
            )
            return float(loss2.value)

        fd = finite_diff_gradient(f, val.copy(), h=1e-5)
        scale = max(np.abs(fd).max(), 1e-12)
        assert np.abs(grads[var.index] - fd).max() / scale < 1e-4


UNARY_OPS = [
    "square", "sqrt", "exp", "log", "sin", "cos", "tanh", "silu", "abs",
    "max0", "leaky_relu",
]
BINARY_OPS = ["add", "sub", "mul", "div"]


@pytest.mark.parametrize("op", UNARY_OPS)
def test_unary_gradients_match_finite_differences(op):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        shape = tuple(rng.integers(1, 9, size=rng.integers(1, 3)))
        x0 = rng.standard_normal(shape)
        if op in ("sqrt", "log"):
            x0 = np.abs(x0) + 0.5
        if op in ("abs", "max0", "leaky_relu"):
            x0 = x0 + np.sign(x0) * 0.05  # stay away from the kink

        def f(v):
            t = Tape()
            out = getattr(t, op)(t.leaf(v))
            return float(t.sum(out).value)

        tape = Tape()
        x = tape.leaf(x0)
        grads = tape.backward(tape.sum(getattr(tape, op)(x)))
        fd = finite_diff_gradient(f, x0.copy(), h=1e-6)
        scale = max(np.abs(fd).max(), 1e-9)
        worst = max(worst, np.abs(grads[x.index] - fd).max() / scale)
    assert worst < 1e-4


@pytest.mark.parametrize("op", BINARY_OPS)
def test_binary_gradients_match_finite_differences(op):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        shape = tuple(rng.integers(1, 9, size=2))
        a0 = rng.standard_normal(shape)
        b0 = rng.standard_normal(shape) + 2.0  # keep divisors away from 0

        def f_a(v):
            t = Tape()
            out = t._binary(op, t.leaf(v), t.constant(b0))
            return float(t.sum(out).value)

        def f_b(v):
            t = Tape()
            out = t._binary(op, t.constant(a0), t.leaf(v))
            return float(t.sum(out).value)

        tape = Tape()
        a = tape.leaf(a0)
        b = tape.leaf(b0)
        grads = tape.backward(tape.sum(tape._binary(op, a, b)))
        for var, f, v0 in ((a, f_a, a0), (b, f_b, b0)):
            fd = finite_diff_gradient(f, v0.copy(), h=1e-6)
            scale = max(np.abs(fd).max(), 1e-9)
            worst = max(worst, np.abs(grads[var.index] - fd).max() / scale)
    assert worst < 1e-4


def test_matmul_gradients_match_finite_differences():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        m, k, n = rng.integers(1, 9, size=3)
        a0 = rng.standard_normal((m, k))
        b0 = rng.standard_normal((k, n))

        def f_a(v):
            t = Tape()
            return float(t.sum(t.matmul(t.leaf(v), t.constant(b0))).value)

        def f_b(v):
            t = Tape()
            return float(t.sum(t.matmul(t.constant(a0), t.leaf(v))).value)

        tape = Tape()
        a = tape.leaf(a0)
        b = tape.leaf(b0)
        grads = tape.backward(tape.sum(tape.matmul(a, b)))
        for var, f, v0 in ((a, f_a, a0), (b, f_b, b0)):
            fd = finite_diff_gradient(f, v0.copy(), h=1e-6)
            scale = max(np.abs(fd).max(), 1e-9)
            worst = max(worst, np.abs(grads[var.index] - fd).max() / scale)
    assert worst < 1e-4


def test_reduction_and_shape_op_gradients():
    rng = np.random.default_rng(9)
    x0 = rng.standard_normal((5, 4))

    def build(tape, x):
        part = tape.slice_cols(x, 1, 3)
        flat = tape.reshape(part, (10,))
        piece = tape.slice1d(flat, 2, 9)
        back = tape.reshape(piece, (7, 1))
        joined = tape.concat_cols([back, back])
        return tape.mean(tape.sum(joined, axis=1))

    tape = Tape()
    x = tape.leaf(x0)
    grads = tape.backward(build(tape, x))

    def f(v):
        t = Tape()
        return float(build(t, t.leaf(v)).value)

    fd = finite_diff_gradient(f, x0.copy(), h=1e-6)
    assert np.abs(grads[x.index] - fd).max() < 1e-8


def test_backward_is_deterministic():
    rng = np.random.default_rng(11)
    tape = Tape()
    x = tape.leaf(rng.standard_normal((8, 8)))
    y = tape.leaf(rng.standard_normal((8, 8)))
    z = tape.sum(tape.square(tape.tanh(x * y + x)))
    g1 = tape.backward(z)
    g2 = tape.backward(z)
    assert np.array_equal(g1[x.index], g2[x.index])
    assert np.array_equal(g1[y.index], g2[y.index])


def test_gradient_linearity_is_exact():
    rng = np.random.default_rng(21)
    x0 = rng.standard_normal(6)
    a, b = 2.5, -1.25

    tape = Tape()
    x = tape.leaf(x0)
    f = tape.sum(tape.sin(x))
    g = tape.sum(tape.square(x))
    combined = f * a + g * b
    grads = tape.backward(combined)
    gf = tape.backward(f)[x.index]
    gg = tape.backward(g)[x.index]
    assert np.array_equal(grads[x.index], a * gf + b * gg)


def test_shape_mismatch_names_primitive():
    tape = Tape()
    x = tape.leaf(np.zeros((2, 3)))
    y = tape.leaf(np.zeros((3, 3)))
    with pytest.raises(TapeError, match="add"):
        x + y
    with pytest.raises(TapeError, match="matmul"):
        tape.matmul(x, x)
    with pytest.raises(TapeError, match="linear"):
        tape.linear(x, y, y)


def test_non_scalar_backward_root_rejected():
    tape = Tape()
    x = tape.leaf(np.zeros(3))
    with pytest.raises(TapeError, match="scalar"):
        tape.backward(x)


def test_non_finite_output_reports_node_index():
    tape = Tape()
    x = tape.leaf(np.asarray([1e308]))
    with pytest.raises(TapeError, match="node"):
        tape.exp(x)


def test_domain_errors():
    tape = Tape()
    x = tape.leaf(np.asarray([-1.0]))
    with pytest.raises(TapeError, match="sqrt"):
        tape.sqrt(x)
    with pytest.raises(TapeError, match="log"):
        tape.log(x)


def test_tape_reuse_after_backward():
    tape = Tape()
    x = tape.leaf(np.asarray(2.0))
    y = x * x
    tape.backward(y)
    z = y * x  # extending the same tape still works
    grads = tape.backward(z)
    assert grads[x.index] == pytest.approx(12.0)


def test_finite_diff_oracle_basics():
    assert finite_diff_gradient(
        lambda v: float(v**2), np.asarray(2.0), 1e-5
    ) == pytest.approx(4.0, abs=1e-8)
    x = np.asarray([1.0, -2.0, 3.5])
    grad = finite_diff_gradient(lambda v: float(v.sum()), x, 1e-5)
    assert np.allclose(grad, 1.0, atol=1e-10)
    with pytest.raises(ValueError):
        finite_diff_gradient(lambda v: 0.0, x, h=0.0)


def test_constants_receive_no_gradient_entry():
    tape = Tape()
    x = tape.leaf(np.asarray(2.0))
    c = tape.constant(np.asarray(3.0))
    grads = tape.backward(x * c)
    assert x.index in grads
    assert c.index not in grads


def test_reachable_leaves():
    tape = Tape()
    x = tape.leaf(np.asarray(1.0))
    y = tape.leaf(np.asarray(2.0))
    z = x * 2.0
    assert tape.reachable_leaves(z) == {x.index}
    w = z + y
    assert tape.reachable_leaves(w) == {x.index, y.index}
