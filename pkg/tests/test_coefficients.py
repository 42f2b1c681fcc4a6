"""Per-dimension coefficient machinery: basis functions, weight sampling,
low-pass filtering, boundary conditions, derivatives and displacements."""

import numpy as np
import pytest

from adacoef.coefficients import (
    CoefficientError,
    CoeffWeights,
    LpfKernel,
    SinusoidalBasis,
    basis_deriv,
    basis_eval,
    coeff_deriv_batch,
    coeff_displacement,
    coeff_eval,
    coeff_eval_batch,
    coeff_mean,
    coeff_time_derivative,
    lpf_convolve,
    lpf_smooth,
    sample_random_weights,
    sample_random_weights_batch,
)
from adacoef.seeding import make_rng

BASIS = SinusoidalBasis(m_count=10, root_exponent=1.0, horizon=1.0)


def test_basis_vanishes_at_both_ends():
    for basis in (BASIS, SinusoidalBasis(5, 7.0, 80.0)):
        assert np.all(basis_eval(basis, 0.0) == 0.0)
        assert np.abs(basis_eval(basis, basis.horizon)).max() < 1e-12


def test_basis_single_mode_midpoint():
    basis = SinusoidalBasis(m_count=1, root_exponent=1.0, horizon=1.0)
    assert basis_eval(basis, 0.5)[0] == pytest.approx(1.0, abs=1e-15)


def test_basis_rejects_out_of_domain():
    with pytest.raises(CoefficientError):
        basis_eval(BASIS, -0.01)
    with pytest.raises(CoefficientError):
        basis_eval(BASIS, 1.01)


def test_basis_deriv_known_values():
    basis = SinusoidalBasis(m_count=2, root_exponent=1.0, horizon=1.0)
    d = basis_deriv(basis, 0.0)
    assert d[0] == pytest.approx(np.pi, rel=1e-14)
    d = basis_deriv(basis, 0.5)
    assert d[1] == pytest.approx(-2.0 * np.pi, rel=1e-12)


def test_basis_deriv_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-7
    for _ in range(25):
        m = int(rng.integers(1, 8))
        q = float(rng.uniform(1.0, 8.0))
        basis = SinusoidalBasis(m, q, 1.0)
        t = float(rng.uniform(0.05, 0.95))
        analytic = basis_deriv(basis, t)
        numeric = (basis_eval(basis, t + h) - basis_eval(basis, t - h)) / (2 * h)
        assert np.abs(analytic - numeric).max() < 1e-6


def test_basis_deriv_singular_at_origin_for_q_above_one():
    basis = SinusoidalBasis(3, 7.0, 80.0)
    with pytest.raises(CoefficientError, match="singular"):
        basis_deriv(basis, 0.0)
    basis_deriv(SinusoidalBasis(3, 1.0, 1.0), 0.0)  # q == 1 is fine


def test_random_weights_scale_zero_collapses():
    w = sample_random_weights(make_rng(0), 2, BASIS, 0.0)
    assert np.all(w.w == 0.0)
    values = coeff_eval(w, BASIS, 0.3)
    assert np.all(values.c0 == 0.7) and np.all(values.c1 == 0.3)


def test_random_weights_reproducible_and_bounded():
    w1 = sample_random_weights(make_rng(42), 3, BASIS, 0.1)
    w2 = sample_random_weights(make_rng(42), 3, BASIS, 0.1)
    assert np.array_equal(w1.w, w2.w)
    assert np.abs(w1.w).max() <= 0.1
    assert w1.w.shape == (3, 10, 2)


def test_lpf_kernel_validation():
    k = LpfKernel.gaussian(3, 1.0)
    assert len(k.taps) == 3 and abs(k.taps.sum() - 1.0) < 1e-12
    assert np.allclose(k.taps, k.taps[::-1])
    with pytest.raises(CoefficientError):
        LpfKernel.gaussian(4, 1.0)
    with pytest.raises(CoefficientError):
        LpfKernel(taps=np.array([0.5, 0.2]), sigma=1.0)


def test_lpf_constant_slice_unchanged():
    k = LpfKernel.gaussian(3, 1.0)
    w = np.full((6, 2, 2), 0.7)
    assert np.array_equal(lpf_smooth(w, k), w)


def test_lpf_identity_kernel():
    k = LpfKernel(taps=np.array([1.0]), sigma=1e-9)
    w = make_rng(0).uniform(-1, 1, size=(5, 3, 2))
    assert np.allclose(lpf_smooth(w, k), w, atol=1e-15)


def test_lpf_delta_smoothed_and_rescaled_by_hand():
    # d=5, taps length 3: convolution of a delta is the kernel itself;
    # rescaling stretches its max back to 1 and min back to 0
    k = LpfKernel.gaussian(3, 1.0)
    w = np.zeros((5, 1, 2))
    w[2, 0, 0] = 1.0
    filtered = lpf_convolve(w, k)
    expected = np.zeros(5)
    expected[1:4] = k.taps
    assert np.allclose(filtered[:, 0, 0], expected, atol=1e-15)
    smoothed = lpf_smooth(w, k)
    assert smoothed[:, 0, 0].max() == pytest.approx(1.0)
    assert smoothed[:, 0, 0].min() == pytest.approx(0.0)
    # untouched slice stays identically zero
    assert np.all(smoothed[:, 0, 1] == 0.0)


def test_lpf_kernel_longer_than_dims_rejected():
    k = LpfKernel.gaussian(5, 1.0)
    with pytest.raises(CoefficientError, match="length"):
        lpf_convolve(np.zeros((3, 2, 2)), k)


def test_lpf_reduces_high_frequency_energy():
    # direct DFT oracle along the dimension axis, top half of the spectrum
    k = LpfKernel.gaussian(3, 1.0)
    rng = make_rng(5)
    d = 8
    freqs = np.arange(d)
    dft = np.exp(-2j * np.pi * np.outer(freqs, freqs) / d)
    for _ in range(50):
        w = rng.uniform(-1, 1, size=(d, 4, 2))
        filtered = lpf_convolve(w, k)
        for col in range(4):
            for comp in range(2):
                pre = np.abs(dft @ w[:, col, comp])
                post = np.abs(dft @ filtered[:, col, comp])
                high = slice(d // 4 + 1, 3 * d // 4 + 1)  # top half band
                assert post[high].sum() <= pre[high].sum() + 1e-9


def test_boundary_conditions_thousand_draws():
    # c0(0) = 1, c1(0) = 0, c1(T) = T for every weight draw; the normalized
    # variant pairs with T = 1 frameworks, the pinned-c0 variant with T = 80
    rng = make_rng(123)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 5))
        horizon = float(rng.choice([1.0, 80.0]))
        variant = "normalized" if horizon == 1.0 else "edm"
        basis = SinusoidalBasis(
            int(rng.integers(1, 12)), float(rng.uniform(1, 8)), horizon
        )
        w = sample_random_weights(rng, d, basis, float(rng.uniform(0, 1.0)))
        v0 = coeff_eval(w, basis, 0.0, variant)
        vT = coeff_eval(w, basis, basis.horizon, variant)
        worst = max(
            worst,
            np.abs(v0.c0 - 1.0).max(),
            np.abs(v0.c1).max(),
            np.abs(vT.c1 - basis.horizon).max() / basis.horizon,
        )
    assert worst < 1e-9


def test_scale_zero_matches_linear_schedule_exactly():
    w = CoeffWeights.zero(2, 10)
    for t in np.linspace(0.0, 1.0, 100):
        v = coeff_eval(w, BASIS, float(t))
        assert np.all(v.c0 == 1.0 - t)
        assert np.all(v.c1 == t)


def test_normalization_sum_and_floor():
    rng = make_rng(7)
    for _ in range(100):
        w = sample_random_weights(rng, 3, BASIS, 0.5)
        t = float(rng.uniform(0, 1))
        v = coeff_eval(w, BASIS, t)
        assert np.abs(v.c0 + v.c1 - 1.0).max() < 1e-9  # simplex normalization
        sf = w.w[:, :, 0] @ basis_eval(BASIS, t)
        sg = w.w[:, :, 1] @ basis_eval(BASIS, t)
        assert np.all(1.0 + sf * sf + sg * sg >= 1.0)  # no singular division


def test_edm_variant_pins_first_component():
    basis = SinusoidalBasis(5, 7.0, 80.0)
    w = sample_random_weights(make_rng(1), 2, basis, 0.3)
    v = coeff_eval(w, basis, 3.7, variant="edm")
    assert np.all(v.c0 == 1.0)
    d0, d1 = coeff_time_derivative(w, basis, 3.7, variant="edm")
    assert np.all(d0 == 0.0)


def test_time_derivative_linear_case():
    w = CoeffWeights.zero(2, 10)
    d0, d1 = coeff_time_derivative(w, BASIS, 0.4)
    assert np.all(d0 == -1.0) and np.all(d1 == 1.0)


def test_time_derivative_matches_finite_differences():
    rng = make_rng(11)
    h = 1e-7
    for _ in range(30):
        w = sample_random_weights(rng, 2, BASIS, 0.4)
        t = float(rng.uniform(0.05, 0.95))
        d0, d1 = coeff_time_derivative(w, BASIS, t)
        a = coeff_eval(w, BASIS, t - h)
        b = coeff_eval(w, BASIS, t + h)
        assert np.abs(d0 - (b.c0 - a.c0) / (2 * h)).max() < 1e-6
        assert np.abs(d1 - (b.c1 - a.c1) / (2 * h)).max() < 1e-6


def test_derivatives_sum_to_zero_for_normalized_variant():
    rng = make_rng(13)
    for _ in range(20):
        w = sample_random_weights(rng, 3, BASIS, 0.5)
        d0, d1 = coeff_time_derivative(w, BASIS, float(rng.uniform(0.01, 0.99)))
        assert np.abs(d0 + d1).max() < 1e-12


def test_continuity_on_dense_grid():
    # refinement check: halving the grid spacing halves the max step for a
    # continuous function (a jump would keep the max step constant)
    w = sample_random_weights(make_rng(17), 2, BASIS, 0.5)

    def max_steps(n_points):
        ts = np.linspace(0.001, 0.999, n_points)
        stacked = np.repeat(w.w[None], len(ts), axis=0)
        c0, _ = coeff_eval_batch(stacked, BASIS, ts)
        d0, _ = coeff_deriv_batch(stacked, BASIS, ts)
        return np.abs(np.diff(c0, axis=0)).max(), np.abs(np.diff(d0, axis=0)).max()

    coarse = max_steps(2000)
    fine = max_steps(4000)
    for c, f in zip(coarse, fine):
        assert 1.5 < c / f < 2.5


def test_displacement_zero_and_linear():
    w = CoeffWeights.zero(2, 10)
    d0, d1 = coeff_displacement(w, BASIS, 0.25, 0.25)
    assert np.all(d0 == 0.0) and np.all(d1 == 0.0)
    d0, d1 = coeff_displacement(w, BASIS, 1.0, 0.5)
    assert np.all(d0 == 0.5) and np.all(d1 == -0.5)


def test_displacement_telescopes_exactly():
    rng = make_rng(19)
    for _ in range(20):
        w = sample_random_weights(rng, 2, BASIS, 0.4)
        grid = np.linspace(1.0, 0.0, 11)
        total0 = np.zeros(2)
        total1 = np.zeros(2)
        for i in range(10):
            d0, d1 = coeff_displacement(w, BASIS, grid[i], grid[i + 1])
            total0 += d0
            total1 += d1
        end = coeff_eval(w, BASIS, 0.0)
        start = coeff_eval(w, BASIS, 1.0)
        assert np.abs(total0 - (end.c0 - start.c0)).max() < 1e-14
        assert np.abs(total1 - (end.c1 - start.c1)).max() < 1e-14


def test_coeff_mean():
    values = coeff_eval(CoeffWeights.zero(2, 10), BASIS, 0.3)
    values.c1 = np.array([0.2, 0.4])
    m0, m1 = coeff_mean(values)
    assert m1 == pytest.approx(0.3)
    # independent scalar-loop recomputation
    rng = make_rng(23)
    v = coeff_eval(sample_random_weights(rng, 4, BASIS, 0.5), BASIS, 0.6)
    hand0 = sum(float(x) for x in v.c0) / 4
    hand1 = sum(float(x) for x in v.c1) / 4
    m0, m1 = coeff_mean(v)
    assert m0 == pytest.approx(hand0, rel=1e-15)
    assert m1 == pytest.approx(hand1, rel=1e-15)


def test_batch_matches_scalar_path():
    rng = make_rng(29)
    n = 16
    w = sample_random_weights_batch(rng, n, 3, BASIS, 0.4)
    ts = rng.uniform(0.01, 0.99, size=n)
    c0, c1 = coeff_eval_batch(w, BASIS, ts)
    d0, d1 = coeff_deriv_batch(w, BASIS, ts)
    for i in range(n):
        single = CoeffWeights(w=w[i], scale=0.4)
        v = coeff_eval(single, BASIS, float(ts[i]))
        sd0, sd1 = coeff_time_derivative(single, BASIS, float(ts[i]))
        assert np.array_equal(c0[i], v.c0) and np.array_equal(c1[i], v.c1)
        assert np.allclose(d0[i], sd0, atol=1e-15)
        assert np.allclose(d1[i], sd1, atol=1e-15)
