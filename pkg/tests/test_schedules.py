"""Scalar schedules and time grids: framework formulas, endpoint
conventions, grid construction, and telescoping."""

import math

import numpy as np
import pytest

from adacoef.schedules import (
    AlphaSchedule,
    ScheduleError,
    alpha_deriv_batch,
    alpha_eval,
    alpha_eval_batch,
    alpha_time_derivative,
    edm_time_grid,
    make_grid,
    uniform_time_grid,
)

# extended-precision evaluation of the power-grid formula at N=10, i=5
# (mpmath, 60 digits): 1.501741979068007765563289...
EDM_GRID_T5 = 1.5017419790680078


def test_fm_endpoints():
    sched = AlphaSchedule.for_framework("fm", sigma_min=0.0)
    assert alpha_eval(sched, 1.0) == (0.0, 1.0)
    assert alpha_eval(sched, 0.0) == (1.0, 0.0)


def test_si_midpoint():
    sched = AlphaSchedule.for_framework("si")
    assert alpha_eval(sched, 0.5) == (0.5, 0.5)


def test_ddpm_endpoints_via_closed_form_integral():
    sched = AlphaSchedule.for_framework("ddpm")
    # b_0 = exp(0) = 1 -> pure data; b_1 = exp(-(0.1 + 19.9/2)/2) ~ 0.0066
    assert alpha_eval(sched, 0.0) == (1.0, 0.0)
    a0, a1 = alpha_eval(sched, 1.0)
    b1 = math.exp(-0.5 * (0.1 + 19.9 / 2.0))
    assert a0 == pytest.approx(b1, rel=1e-14)
    assert a1 == pytest.approx(math.sqrt(1 - b1 * b1), rel=1e-14)


def test_ddpm_variance_preserving_identity():
    sched = AlphaSchedule.for_framework("ddpm")
    for t in np.linspace(0.0, 1.0, 101):
        a0, a1 = alpha_eval(sched, float(t))
        assert abs(a0 * a0 + a1 * a1 - 1.0) < 1e-12


def test_pure_data_and_pure_noise_endpoints():
    # t=0 recovers the target sample; t=T is the source side
    for name in ("si", "fm", "ddpm"):
        sched = AlphaSchedule.for_framework(name)
        assert alpha_eval(sched, 0.0) == (1.0, 0.0)
        a0_T, a1_T = alpha_eval(sched, sched.horizon)
        assert a0_T <= 0.01 and a1_T >= 0.99
    edm = AlphaSchedule.for_framework("edm")
    assert alpha_eval(edm, 0.0) == (1.0, 0.0)
    assert alpha_eval(edm, 80.0) == (1.0, 80.0)  # noise dominates at sigma=T


def test_si_edm_source_normalization():
    assert alpha_eval(AlphaSchedule.for_framework("si"), 1.0)[1] == 1.0
    assert alpha_eval(AlphaSchedule.for_framework("edm"), 80.0)[1] == 80.0


def test_alpha_eval_out_of_range():
    sched = AlphaSchedule.for_framework("si")
    with pytest.raises(ScheduleError):
        alpha_eval(sched, -0.1)
    with pytest.raises(ScheduleError):
        alpha_eval(sched, 1.1)


def test_alpha_batch_matches_scalar():
    for name in ("si", "fm", "ddpm", "edm"):
        sched = AlphaSchedule.for_framework(name)
        ts = np.linspace(0, sched.horizon, 17)
        a0, a1 = alpha_eval_batch(sched, ts)
        d0, d1 = alpha_deriv_batch(sched, ts[1:-1])
        for i, t in enumerate(ts):
            s0, s1 = alpha_eval(sched, float(t))
            assert a0[i] == s0 and a1[i] == s1
        for i, t in enumerate(ts[1:-1]):
            s0, s1 = alpha_time_derivative(sched, float(t))
            assert d0[i] == pytest.approx(s0, rel=1e-14)
            assert d1[i] == pytest.approx(s1, rel=1e-14)


def test_ddpm_derivative_matches_finite_differences():
    sched = AlphaSchedule.for_framework("ddpm")
    h = 1e-7
    for t in (0.1, 0.37, 0.8):
        d0, d1 = alpha_time_derivative(sched, t)
        f0p, f1p = alpha_eval(sched, t + h)
        f0m, f1m = alpha_eval(sched, t - h)
        assert d0 == pytest.approx((f0p - f0m) / (2 * h), rel=1e-6)
        assert d1 == pytest.approx((f1p - f1m) / (2 * h), rel=1e-6)


def test_uniform_grid_values():
    grid = uniform_time_grid(1.0, 2)
    assert np.array_equal(grid.times, [1.0, 0.5, 0.0])
    grid = uniform_time_grid(1.0, 5)
    assert grid.times[0] == 1.0 and grid.times[-1] == 0.0
    grid = uniform_time_grid(1.0, 10)
    assert grid.times[3] == pytest.approx(0.7, abs=1e-15)


def test_edm_grid_exact_endpoints_and_golden_midpoint():
    grid = edm_time_grid(10)
    assert grid.times[0] == 80.0
    assert grid.times[9] == 0.002
    assert grid.times[10] == 0.0
    assert abs(grid.times[5] - EDM_GRID_T5) <= 5e-16


def test_grids_strictly_decreasing():
    for grid in (uniform_time_grid(1.0, 7), edm_time_grid(12)):
        assert np.all(np.diff(grid.times) < 0)


def test_uniform_grid_telescoping_exact():
    for n in range(1, 33):
        grid = uniform_time_grid(1.0, n)
        assert grid.total_displacement() == grid.times[-1] - grid.times[0]


def test_edm_grid_telescoping_within_ulp():
    # raw float differences can drift by ~1 ulp of t_max on this grid
    for n in (5, 10, 18, 35):
        grid = edm_time_grid(n)
        drift = grid.total_displacement() - (grid.times[-1] - grid.times[0])
        assert abs(drift) <= 4 * np.spacing(80.0)


def test_grid_validation():
    with pytest.raises(ScheduleError):
        uniform_time_grid(1.0, 0)
    with pytest.raises(ScheduleError):
        edm_time_grid(1)
    with pytest.raises(ScheduleError):
        edm_time_grid(5, t_min=2.0, t_max=1.0)
    with pytest.raises(ScheduleError):
        make_grid("nope", "si", 5)


def test_make_grid_selection():
    assert make_grid("uniform", "si", 4).times[0] == 1.0
    assert make_grid("uniform", "edm", 4).times[0] == 80.0
    assert make_grid("edm", "edm", 6).times[0] == 80.0


def test_unknown_framework_rejected():
    with pytest.raises(ScheduleError):
        AlphaSchedule.for_framework("vp-sde")
