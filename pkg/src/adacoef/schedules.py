"""Scalar schedule coefficients for the DDPM/FM/EDM/SI frameworks and the
inference time grids.

All frameworks are normalized to one solver convention: the grid runs from
t_0 = T (source side, x_T ~ rho_T) down to t_N = 0 (target side, x_0 ~ rho_0),
and the interpolation is x(t) = a0(t) x_0 + a1(t) x_1 with x_0 the target
sample. Endpoint mapping per framework:

    framework  T    a0(t)                  a1(t)                  rho_T
    ---------  ---  ---------------------  ---------------------  ------------
    si         1    1 - t                  t                      rho_1
    fm         1    1 - (1-sigma_min) t    t                      N(0, I)
    ddpm       1    b_t                    sqrt(1 - b_t^2)        ~N(0, I)
    edm        80   1                      t                      N(0, T^2 I)

with b_t = exp(-(c_min t + (c_max - c_min) t^2 / 2) / 2) for DDPM (the
variance-preserving integral in closed form).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FRAMEWORKS = ("ddpm", "fm", "edm", "si")

EDM_T_MIN = 0.002
EDM_T_MAX = 80.0
EDM_GRID_EXPONENT = 7.0


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class AlphaSchedule:
    """Unidimensional coefficient schedule (a0, a1) on [0, T]."""

    framework: str
    horizon: float
    sigma_min: float = 0.0  # fm only
    c_min: float = 0.1  # ddpm only
    c_max: float = 20.0  # ddpm only
    sigma_data: float = 0.5  # edm preconditioner

    @classmethod
    def for_framework(cls, framework: str, **kw) -> "AlphaSchedule":
        framework = framework.lower()
        if framework not in FRAMEWORKS:
            raise ScheduleError(
                f"unknown framework '{framework}', expected one of {FRAMEWORKS}"
            )
        horizon = EDM_T_MAX if framework == "edm" else 1.0
        return cls(framework=framework, horizon=horizon, **kw)


def ddpm_decay(sched: AlphaSchedule, t: float) -> float:
    """b_t = exp(-0.5 * integral_0^t (c_min + s (c_max - c_min)) ds).

    Evaluated with the same ufunc as the batch path so scalar and batch
    results are bit-identical."""
    integral = sched.c_min * t + (sched.c_max - sched.c_min) * t * t / 2.0
    return float(np.exp(-0.5 * integral))


def alpha_eval(sched: AlphaSchedule, t: float) -> tuple[float, float]:
    """Coefficients (a0, a1) at time t; raises outside [0, T]."""
    if not 0.0 <= t <= sched.horizon:
        raise ScheduleError(
            f"t={t} outside [0, {sched.horizon}] for {sched.framework}"
        )
    f = sched.framework
    if f == "si":
        return 1.0 - t, t
    if f == "fm":
        return 1.0 - (1.0 - sched.sigma_min) * t, t
    if f == "edm":
        return 1.0, t
    if f == "ddpm":
        b = ddpm_decay(sched, t)
        return b, float(np.sqrt(max(0.0, 1.0 - b * b)))
    raise ScheduleError(f"unknown framework '{f}'")  # pragma: no cover


def alpha_eval_batch(sched: AlphaSchedule, ts: np.ndarray):
    """Vectorized alpha_eval; returns (a0, a1) arrays of shape ts.shape."""
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts < 0.0) or np.any(ts > sched.horizon):
        raise ScheduleError(f"times outside [0, {sched.horizon}]")
    f = sched.framework
    if f == "si":
        return 1.0 - ts, ts.copy()
    if f == "fm":
        return 1.0 - (1.0 - sched.sigma_min) * ts, ts.copy()
    if f == "edm":
        return np.ones_like(ts), ts.copy()
    integral = sched.c_min * ts + (sched.c_max - sched.c_min) * ts * ts / 2.0
    b = np.exp(-0.5 * integral)
    return b, np.sqrt(np.maximum(0.0, 1.0 - b * b))


def alpha_deriv_batch(sched: AlphaSchedule, ts: np.ndarray):
    """Vectorized alpha_time_derivative."""
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts < 0.0) or np.any(ts > sched.horizon):
        raise ScheduleError(f"times outside [0, {sched.horizon}]")
    f = sched.framework
    if f == "si":
        return -np.ones_like(ts), np.ones_like(ts)
    if f == "fm":
        return np.full_like(ts, -(1.0 - sched.sigma_min)), np.ones_like(ts)
    if f == "edm":
        return np.zeros_like(ts), np.ones_like(ts)
    integral = sched.c_min * ts + (sched.c_max - sched.c_min) * ts * ts / 2.0
    b = np.exp(-0.5 * integral)
    c_t = sched.c_min + ts * (sched.c_max - sched.c_min)
    db = -0.5 * c_t * b
    a1 = np.sqrt(np.maximum(1e-300, 1.0 - b * b))
    return db, -b * db / a1


def alpha_time_derivative(sched: AlphaSchedule, t: float) -> tuple[float, float]:
    """Analytic (da0/dt, da1/dt); used by the exact-derivative debug solver."""
    if not 0.0 <= t <= sched.horizon:
        raise ScheduleError(
            f"t={t} outside [0, {sched.horizon}] for {sched.framework}"
        )
    f = sched.framework
    if f == "si":
        return -1.0, 1.0
    if f == "fm":
        return -(1.0 - sched.sigma_min), 1.0
    if f == "edm":
        return 0.0, 1.0
    if f == "ddpm":
        b = ddpm_decay(sched, t)
        c_t = sched.c_min + t * (sched.c_max - sched.c_min)
        db = -0.5 * c_t * b
        a1 = float(np.sqrt(max(1e-300, 1.0 - b * b)))
        return db, -b * db / a1
    raise ScheduleError(f"unknown framework '{f}'")  # pragma: no cover


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing inference schedule t_0 > ... > t_N."""

    times: np.ndarray
    q: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or len(t) < 2:
            raise ScheduleError("a grid needs at least two time points")
        if not np.all(np.diff(t) < 0):
            raise ScheduleError("grid times must be strictly decreasing")

    @property
    def n_steps(self) -> int:
        """Step count N (solver NFE)."""
        return len(self.times) - 1

    def deltas(self) -> np.ndarray:
        """Signed step displacements t_{i+1} - t_i (all negative)."""
        return np.diff(self.times)

    def total_displacement(self) -> float:
        """Left-to-right sum of deltas (fixed associativity)."""
        total = 0.0
        for d in self.deltas():
            total += d
        return total


def uniform_time_grid(horizon: float, n_steps: int) -> TimeGrid:
    """t_i = T (1 - i/N) for i = 0..N."""
    if n_steps < 1:
        raise ScheduleError("uniform grid needs n_steps >= 1")
    i = np.arange(n_steps + 1, dtype=np.float64)
    return TimeGrid(times=horizon * (1.0 - i / n_steps), q=1.0)


def edm_time_grid(
    n_steps: int,
    t_min: float = EDM_T_MIN,
    t_max: float = EDM_T_MAX,
    q: float = EDM_GRID_EXPONENT,
) -> TimeGrid:
    """Power-spaced grid t_i = (t_max^(1/q) + i/(N-1) (t_min^(1/q) -
    t_max^(1/q)))^q for i = 0..N-1, with a final t_N = 0 appended."""
    if n_steps < 2:
        raise ScheduleError("edm grid needs n_steps >= 2")
    if not 0.0 < t_min < t_max:
        raise ScheduleError("edm grid needs 0 < t_min < t_max")
    i = np.arange(n_steps, dtype=np.float64)
    root = t_max ** (1.0 / q) + i / (n_steps - 1) * (
        t_min ** (1.0 / q) - t_max ** (1.0 / q)
    )
    times = np.append(root**q, 0.0)
    # the formula gives the boundaries analytically; pin them so float
    # round-trip error cannot perturb the exact endpoints
    times[0] = t_max
    times[n_steps - 1] = t_min
    return TimeGrid(times=times, q=q)


def make_grid(kind: str, framework: str, n_steps: int, **kw) -> TimeGrid:
    """Grid selected by config keys grid / framework / nfe."""
    if kind == "uniform":
        horizon = EDM_T_MAX if framework == "edm" else 1.0
        return uniform_time_grid(horizon, n_steps)
    if kind == "edm":
        return edm_time_grid(n_steps, **kw)
    raise ScheduleError(f"unknown grid kind '{kind}', expected uniform|edm")
