"""Exact assignment and empirical Wasserstein-2: brute-force cross-checks,
metric axioms, and the fixed-assignment gradient."""

import numpy as np
import pytest

from adacoef import _kernels as K
from adacoef.autodiff import Tape, finite_diff_gradient
from adacoef.transport import (
    TransportError,
    bruteforce_assignment,
    ot_pair,
    wasserstein2,
    wasserstein2_loss,
)

METHODS = ["scipy"] + (["auction"] if K.auction_assignment is not None else [])


def rand_points(n, seed, d=2):
    return np.random.default_rng(seed).standard_normal((n, d))


def test_identity_assignment():
    a = rand_points(6, 0)
    result = ot_pair(a, a.copy())
    assert np.array_equal(result.permutation, np.arange(6))
    assert result.cost == 0.0


def test_swap_assignment():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[1.0, 0.0], [0.0, 0.0]])
    result = ot_pair(a, b)
    assert np.array_equal(result.permutation, [1, 0])
    assert result.cost == 0.0


@pytest.mark.parametrize("method", METHODS)
def test_matches_bruteforce_on_200_random_instances(method):
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        a = rng.standard_normal((n, 2))
        b = rng.standard_normal((n, 2))
        fast = ot_pair(a, b, method=method)
        brute = bruteforce_assignment(a, b)
        assert fast.cost == pytest.approx(brute.cost, abs=1e-10)
        # permutations agree whenever the optimum is unique
        if not np.array_equal(fast.permutation, brute.permutation):
            alt = float(((a - b[fast.permutation]) ** 2).sum())
            assert alt == pytest.approx(brute.cost, abs=1e-10)


def test_bruteforce_crafted_three_point_instance():
    # hand enumeration: optimum pairs each a_i with the b directly right of it
    a = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]])
    b = np.array([[21.0, 0.0], [1.0, 0.0], [11.0, 0.0]])
    brute = bruteforce_assignment(a, b)
    assert np.array_equal(brute.permutation, [1, 2, 0])
    assert brute.cost == pytest.approx(3.0)


def test_bruteforce_limits():
    a = rand_points(1, 1)
    assert np.array_equal(bruteforce_assignment(a, a).permutation, [0])
    big = rand_points(10, 2)
    with pytest.raises(TransportError, match="n <= 9"):
        bruteforce_assignment(big, big)


def test_assignment_cost_matches_recomputation():
    rng = np.random.default_rng(11)
    for n in (5, 64, 257):
        a = rng.standard_normal((n, 2))
        b = rng.standard_normal((n, 2))
        result = ot_pair(a, b)
        recomputed = ((a - b[result.permutation]) ** 2).sum()
        assert abs(result.cost - recomputed) < 1e-10
        assert sorted(result.permutation) == list(range(n))


def test_mismatched_counts_rejected():
    with pytest.raises(TransportError):
        ot_pair(rand_points(4, 0), rand_points(5, 1))
    with pytest.raises(TransportError):
        wasserstein2(rand_points(4, 0), rand_points(5, 1))


def test_w2_identical_sets_zero():
    a = rand_points(32, 3)
    assert wasserstein2(a, a.copy()) == 0.0


def test_w2_rigid_shift_identity():
    # for a pure shift the identity assignment is optimal and W2 == |c|
    rng = np.random.default_rng(5)
    for c in (0.25, 1.0, 3.75):
        a = rng.standard_normal((64, 2))
        b = a + np.array([c, 0.0])
        assert abs(wasserstein2(a, b) - c) < 1e-9
        small = rng.standard_normal((6, 2))
        brute = bruteforce_assignment(small, small + np.array([c, 0.0]))
        assert np.array_equal(brute.permutation, np.arange(6))


def test_w2_metric_axioms():
    rng = np.random.default_rng(9)
    for _ in range(100):
        n = int(rng.integers(2, 12))
        a = rng.standard_normal((n, 2))
        b = rng.standard_normal((n, 2))
        c = rng.standard_normal((n, 2))
        dab = wasserstein2(a, b)
        dba = wasserstein2(b, a)
        assert abs(dab - dba) < 1e-9
        assert wasserstein2(a, a) == 0.0
        assert dab <= wasserstein2(a, c) + wasserstein2(c, b) + 1e-9


def test_w2_scale_equivariance():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((24, 2))
    b = rng.standard_normal((24, 2))
    base = wasserstein2(a, b)
    for c in (0.5, 2.0, -3.0):
        assert abs(wasserstein2(c * a, c * b) - abs(c) * base) < 1e-9


def _unique_assignment_instance(seed):
    """Instance whose optimal assignment is stable under small perturbation."""
    rng = np.random.default_rng(seed)
    while True:
        a = rng.standard_normal((8, 2))
        b = rng.standard_normal((8, 2))
        base = ot_pair(a, b)
        wiggle = ot_pair(a, b + 1e-6 * rng.standard_normal((8, 2)))
        if np.array_equal(base.permutation, wiggle.permutation):
            return a, b


def test_w2_loss_gradient_matches_finite_differences():
    a, b0 = _unique_assignment_instance(17)

    tape = Tape()
    b = tape.leaf(b0)
    loss = wasserstein2_loss(a, b)
    grads = tape.backward(loss)

    def f(v):
        t2 = Tape()
        return float(wasserstein2_loss(a, t2.leaf(v)).value)

    fd = finite_diff_gradient(f, b0.copy(), h=1e-6)
    scale = max(np.abs(fd).max(), 1e-9)
    assert np.abs(grads[b.index] - fd).max() / scale < 1e-4


def test_w2_loss_value_matches_plain_w2():
    a = rand_points(32, 19)
    b0 = rand_points(32, 23)
    tape = Tape()
    loss = wasserstein2_loss(a, tape.leaf(b0))
    assert float(loss.value) == pytest.approx(wasserstein2(a, b0), abs=1e-12)


def test_duplicate_points_well_defined():
    a = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    b = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    result = ot_pair(a, b)
    assert result.cost == pytest.approx(0.0, abs=1e-12)
    brute = bruteforce_assignment(a, b)
    assert brute.cost == pytest.approx(0.0, abs=1e-12)
