"""Euler integration of the learned transport with coefficient-displacement
steps, differentiable end-to-end through the unrolled trajectory.

One step from t_i to t_{i+1} uses exact coefficient differences
dC_k = c_k(t_{i+1}) - c_k(t_i) instead of dt * (dc_k/dt), which keeps the
telescoped endpoint exact for constant predictions:

    pair head (si, ddpm):  x += dC0 * x0_hat + dC1 * x1_hat
    denoiser head (edm):   x += (dC1 / c1(t_i)) * (x - x0_hat)
    velocity head (fm):    x += dt * v_hat

The adaptive-coefficient network runs exactly once per solve (at the
trajectory start); the vector-field model runs exactly once per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, TapeError, Var
from .coefficients import (
    CoefficientError,
    LpfKernel,
    SinusoidalBasis,
    basis_eval,
    coeff_eval_batch,
    variant_for_framework,
)
from .models import (
    BoundMlp,
    EdmPreconditioner,
    ModelError,
    adaptive_weights,
    edm_denoise,
    vector_field_predict,
)
from .schedules import AlphaSchedule, TimeGrid, alpha_eval, alpha_time_derivative

COEFF_MODES = ("alpha", "gamma-random", "gamma-mac")

DDPM_C1_FLOOR = 1e-6


class SolverError(RuntimeError):
    pass


def si_step(x, x0_hat, x1_hat, delta_c0, delta_c1):
    """Pair-head displacement: x + dC0 * x0_hat + dC1 * x1_hat.

    Operands may be tape Vars or plain arrays of matching shapes."""
    return x + delta_c0 * x0_hat + delta_c1 * x1_hat


def edm_step(x, x0_hat, c1, delta_c1):
    """Denoiser-head displacement: x + (dC1 / c1) * (x - x0_hat).

    c1 is the coefficient at the step start and must be positive
    elementwise (guaranteed on grids with t_i >= t_min > 0)."""
    c1_values = c1.value if hasattr(c1, "value") else np.asarray(c1)
    if np.any(c1_values <= 0.0):
        raise SolverError("EDM step at singular scale")
    return x + (delta_c1 / c1) * (x - x0_hat)


@dataclass
class SolverConfig:
    grid: TimeGrid
    framework: str
    coeff_mode: str = "alpha"
    cond_mode: str = "none"
    basis: SinusoidalBasis | None = None  # gamma modes
    mac_scale: float = 0.1  # s for gamma-mac
    lpf: LpfKernel | None = None
    exact_derivative: bool = False  # debug: integrate dt * dc/dt instead of dC
    schedule: AlphaSchedule = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.coeff_mode not in COEFF_MODES:
            raise SolverError(
                f"unknown coefficient mode '{self.coeff_mode}', expected {COEFF_MODES}"
            )
        if self.schedule is None:
            self.schedule = AlphaSchedule.for_framework(self.framework)
        if self.coeff_mode != "alpha" and self.basis is None:
            raise SolverError("gamma modes need a sinusoidal basis")


@dataclass
class Trajectory:
    """States x(t_0) .. x(t_N) kept on the tape for backprop."""

    states: list[Var]
    times: np.ndarray
    field_evals: int = 0
    coeff_evals: int = 0

    @property
    def endpoint(self) -> Var:
        return self.states[-1]

    def values(self) -> np.ndarray:
        """(N+1, n, d) snapshot of the state values."""
        return np.stack([s.value for s in self.states])


class _CoeffProvider:
    """Coefficient values for every grid time, on the tape.

    alpha        -> schedule floats broadcast as constants
    gamma-random -> externally sampled per-sample weights, constants
    gamma-mac    -> network weights, differentiable tape subgraph
    """

    def __init__(self, cfg, tape, n, dims, x_start, coeff_bound,
                 random_weights, label_onehot):
        self.evals = 0
        self.variant = variant_for_framework(cfg.framework)
        times = cfg.grid.times
        horizon = cfg.schedule.horizon
        if cfg.coeff_mode == "alpha":
            pairs = [alpha_eval(cfg.schedule, float(t)) for t in times]
            self.c0 = [
                tape.constant(np.full((n, dims), a0)) for a0, _ in pairs
            ]
            self.c1 = [
                tape.constant(np.full((n, dims), a1)) for _, a1 in pairs
            ]
            if cfg.exact_derivative:
                derivs = [
                    alpha_time_derivative(cfg.schedule, float(t)) for t in times
                ]
                self.dc0 = [tape.constant(np.full((n, dims), d0)) for d0, _ in derivs]
                self.dc1 = [tape.constant(np.full((n, dims), d1)) for _, d1 in derivs]
            return
        basis = cfg.basis
        if cfg.coeff_mode == "gamma-random":
            if random_weights is None:
                raise SolverError("gamma-random mode needs sampled weights")
            w = np.asarray(random_weights, dtype=np.float64)
            self.c0, self.c1 = [], []
            for t in times:
                ts = np.full(n, float(t))
                c0, c1 = coeff_eval_batch(w, basis, ts, self.variant)
                self.c0.append(tape.constant(c0))
                self.c1.append(tape.constant(c1))
            if cfg.exact_derivative:
                from .coefficients import coeff_deriv_batch

                self.dc0, self.dc1 = [], []
                for t in times:
                    ts = np.full(n, float(t))
                    d0, d1 = coeff_deriv_batch(w, basis, ts, self.variant)
                    self.dc0.append(tape.constant(d0))
                    self.dc1.append(tape.constant(d1))
            return
        # gamma-mac: weights from the network, evaluated once at x_T
        if coeff_bound is None:
            raise SolverError("gamma-mac mode needs the coefficient network")
        m = basis.m_count
        w = adaptive_weights(
            coeff_bound,
            x_start,
            cfg.mac_scale,
            dims,
            m,
            lpf=cfg.lpf,
            label_onehot=label_onehot,
        )
        self.evals = 1
        self._build_mac_values(cfg, tape, w, n, dims, m, times, horizon)

    def _build_mac_values(self, cfg, tape, w, n, dims, m, times, horizon):
        basis = cfg.basis
        dm = dims * m
        w_f = tape.slice_cols(w, 0, dm)
        w_g = tape.slice_cols(w, dm, 2 * dm)
        self.c0, self.c1 = [], []
        if cfg.exact_derivative:
            self.dc0, self.dc1 = [], []
        for t in times:
            t = float(t)
            block = _basis_block(basis, t, dims)
            sf = tape.matmul(w_f, tape.constant(block))
            sg = tape.matmul(w_g, tape.constant(block))
            sf2 = tape.square(sf)
            sg2 = tape.square(sg)
            den = sf2 + sg2 + 1.0
            c1 = (sg2 * horizon + t) / den
            if self.variant == "edm":
                c0 = tape.constant(np.ones((n, dims)))
            else:
                c0 = (sf2 * horizon + (horizon - t)) / den
            self.c0.append(c0)
            self.c1.append(c1)
            if cfg.exact_derivative:
                dblock = _basis_deriv_block(basis, t, dims)
                dsf = tape.matmul(w_f, tape.constant(dblock))
                dsg = tape.matmul(w_g, tape.constant(dblock))
                dden = (sf * dsf + sg * dsg) * 2.0
                dn1 = sg * dsg * (2.0 * horizon) + 1.0
                n1 = sg2 * horizon + t
                dc1 = (dn1 * den - n1 * dden) / tape.square(den)
                if self.variant == "edm":
                    dc0 = tape.constant(np.zeros((n, dims)))
                else:
                    dn0 = sf * dsf * (2.0 * horizon) - 1.0
                    n0 = sf2 * horizon + (horizon - t)
                    dc0 = (dn0 * den - n0 * dden) / tape.square(den)
                self.dc0.append(dc0)
                self.dc1.append(dc1)


def _basis_block(basis, t, dims) -> np.ndarray:
    """(dM, d) block-diagonal basis operator so that the flat per-dimension
    weight layout (dim-major, m fastest) contracts to per-dimension sums."""
    b = basis_eval(basis, t)
    out = np.zeros((dims * basis.m_count, dims))
    for dim in range(dims):
        out[dim * basis.m_count:(dim + 1) * basis.m_count, dim] = b
    return out


def _basis_deriv_block(basis, t, dims) -> np.ndarray:
    from .coefficients import basis_deriv

    db = basis_deriv(basis, t)
    out = np.zeros((dims * basis.m_count, dims))
    for dim in range(dims):
        out[dim * basis.m_count:(dim + 1) * basis.m_count, dim] = db
    return out


def _cond_features(tape, cfg, c0: Var, c1: Var, precond) -> Var | None:
    if cfg.cond_mode == "none":
        return None
    if cfg.framework == "edm":
        feat = precond.c_coeff(c1)
        return feat if cfg.cond_mode == "full" else tape.mean(feat, axis=1)
    if cfg.cond_mode == "full":
        return tape.concat_cols([c0, c1])
    return tape.concat_cols([tape.mean(c0, axis=1), tape.mean(c1, axis=1)])


def solve(
    cfg: SolverConfig,
    tape: Tape,
    field_bound: BoundMlp,
    x_source: np.ndarray,
    coeff_bound: BoundMlp | None = None,
    random_weights: np.ndarray | None = None,
    label_onehot: np.ndarray | None = None,
) -> Trajectory:
    """Integrate the batch x_source (n, d) from t_0 = T down to t_N."""
    x_source = np.asarray(x_source, dtype=np.float64)
    if x_source.ndim != 2:
        raise SolverError(f"x_source must be (n, d), got {x_source.shape}")
    n, dims = x_source.shape
    model_cond = field_bound.params.meta.get("cond_mode", "none")
    if model_cond != cfg.cond_mode:
        raise ModelError(
            f"conditioning mismatch: model trained with '{model_cond}', "
            f"solver configured for '{cfg.cond_mode}'"
        )
    head = field_bound.params.meta.get("head", "pair")
    x_start = tape.constant(x_source)
    label_var = (
        tape.constant(label_onehot) if label_onehot is not None else None
    )

    provider = _CoeffProvider(
        cfg, tape, n, dims, x_start, coeff_bound, random_weights, label_var
    )

    precond = EdmPreconditioner(sigma_data=cfg.schedule.sigma_data)
    times = cfg.grid.times
    horizon = cfg.schedule.horizon
    traj = Trajectory(states=[x_start], times=times, coeff_evals=provider.evals)
    x = x_start
    for i in range(cfg.grid.n_steps):
        t_i, t_next = float(times[i]), float(times[i + 1])
        c0_i, c1_i = provider.c0[i], provider.c1[i]
        try:
            if cfg.framework == "edm":
                x0_hat = edm_denoise(field_bound, precond, x, t_i, c1_i)
                traj.field_evals += 1
                if cfg.exact_derivative:
                    dt = t_next - t_i
                    x = x + (provider.dc1[i] / c1_i) * (x - x0_hat) * dt
                else:
                    x = edm_step(x, x0_hat, c1_i, provider.c1[i + 1] - c1_i)
            else:
                t_feat = tape.constant(np.full((n, 1), t_i / horizon))
                cond = _cond_features(tape, cfg, c0_i, c1_i, precond)
                preds = vector_field_predict(field_bound, x, t_feat, cond)
                traj.field_evals += 1
                if head == "velocity":
                    x = x + preds * (t_next - t_i)
                else:
                    if head == "pair":
                        x0_hat, x1_hat = preds
                    else:  # denoised head (ddpm): recover the pair from the
                        # interpolation identity, skipping dims where c1 ~ 0
                        x0_hat = preds
                        mask = (np.abs(c1_i.value) >= DDPM_C1_FLOOR).astype(
                            np.float64
                        )
                        safe = c1_i + tape.constant(1.0 - mask)
                        x1_hat = (x - c0_i * x0_hat) / safe * tape.constant(mask)
                    if cfg.exact_derivative:
                        dt = t_next - t_i
                        x = x + (provider.dc0[i] * x0_hat + provider.dc1[i] * x1_hat) * dt
                    else:
                        d0 = provider.c0[i + 1] - c0_i
                        d1 = provider.c1[i + 1] - c1_i
                        x = si_step(x, x0_hat, x1_hat, d0, d1)
        except TapeError as exc:
            raise SolverError(f"numeric failure at step {i}: {exc}") from exc
        except SolverError as exc:
            raise SolverError(f"{exc} (step {i})") from exc
        if not np.all(np.isfinite(x.value)):
            raise SolverError(f"non-finite state at step {i}")
        traj.states.append(x)
    return traj
