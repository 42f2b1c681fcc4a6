"""Training loops: vector-field pre-training under sampled coefficients,
Wasserstein optimization of the coefficient network against a frozen field,
alternating adversarial refinement, and seeded evaluation.

Endpoint wiring for the 2-D tasks: x_0 ~ target, x_1 ~ source (the solver
starts at x_T ~ source). EDM is the exception: its interpolation is
x + t * noise, so x_1 is always unit white noise and the start point is
horizon-scaled noise; edm runs therefore require a gaussian-source task.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import (
    ExperimentConfig,
    build_basis,
    build_grid,
    build_lpf,
    build_schedule,
    build_task_distributions,
    config_to_dict,
)
from .coefficients import (
    coeff_deriv_batch,
    coeff_eval_batch,
    sample_random_weights_batch,
)
from .datasets import sample
from .losses import (
    AdversarialLosses,
    LossError,
    PretrainBatch,
    adversarial_losses,
    phi_w2_loss,
    pretrain_loss,
)
from .models import (
    BoundMlp,
    ModelParams,
    coeff_net_spec,
    discriminator_spec,
    field_spec,
    init_params,
    param_count,
    save_checkpoint,
)
from .optim import AdamState, EmaState, LrSchedule, OptimError
from .autodiff import Tape, TapeError
from .schedules import alpha_deriv_batch, alpha_eval_batch
from .seeding import STREAM_DATA, STREAM_EVAL, STREAM_TRAIN, make_rng
from .solver import SolverConfig, solve
from .transport import ot_pair, wasserstein2

DIMS = 2

HEAD_FOR = {"si": "pair", "fm": "velocity", "ddpm": "denoised", "edm": "denoised"}

SNAPSHOT_EVERY = 500  # iterations between divergence-recovery snapshots


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MetricsWriter:
    path: Path

    def __post_init__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")

    def write(self, **row):
        self._fh.write(json.dumps(row) + "\n")

    def close(self):
        self._fh.close()


def _write_curve(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def build_solver_config(cfg: ExperimentConfig, exact_derivative=False) -> SolverConfig:
    return SolverConfig(
        grid=build_grid(cfg),
        framework=cfg.framework,
        coeff_mode=cfg.coeff_mode,
        cond_mode=cfg.resolved_cond_mode(),
        basis=build_basis(cfg) if cfg.coeff_mode != "alpha" else None,
        mac_scale=cfg.mac.s,
        lpf=build_lpf(cfg, DIMS),
        exact_derivative=exact_derivative,
        schedule=build_schedule(cfg),
    )


def _sample_endpoints(cfg, target, source, rng, n):
    """(x0, x1, x_start) draws in the solver convention."""
    x0 = sample(target, rng, n)
    if cfg.framework == "edm":
        x1 = rng.standard_normal((n, DIMS))
        x_start = build_schedule(cfg).horizon * rng.standard_normal((n, DIMS))
        return x0, x1, x_start
    x1 = sample(source, rng, n)
    return x0, x1, x1


def _sample_times(cfg, rng, n, gamma_mode: bool):
    """Framework-native time sampling; EDM uses the log-normal draw, clipped
    into the schedule domain (negligible mass sits above the horizon)."""
    horizon = build_schedule(cfg).horizon
    if cfg.framework == "edm":
        ts = np.exp(rng.normal(-1.2, 1.2, size=n))
        return np.clip(ts, 1e-12, horizon)
    return rng.uniform(0.0, horizon, size=n)


def _pretrain_coefficients(cfg, sched, basis, lpf, rng, ts, n, need_deriv):
    """(c0, c1, dc0, dc1) arrays of shape (n, d) for one minibatch."""
    if cfg.coeff_mode == "alpha":
        a0, a1 = alpha_eval_batch(sched, ts)
        c0 = np.repeat(a0[:, None], DIMS, axis=1)
        c1 = np.repeat(a1[:, None], DIMS, axis=1)
        if not need_deriv:
            return c0, c1, None, None
        d0, d1 = alpha_deriv_batch(sched, ts)
        return (
            c0,
            c1,
            np.repeat(d0[:, None], DIMS, axis=1),
            np.repeat(d1[:, None], DIMS, axis=1),
        )
    variant = "edm" if cfg.framework == "edm" else "normalized"
    w = sample_random_weights_batch(rng, n, DIMS, basis, cfg.mac.s, lpf)
    c0, c1 = coeff_eval_batch(w, basis, ts, variant)
    if not need_deriv:
        return c0, c1, None, None
    dc0, dc1 = coeff_deriv_batch(w, basis, ts, variant)
    return c0, c1, dc0, dc1


def _cond_features_np(cfg, c0, c1):
    """Conditioning features as plain arrays (pre-training path)."""
    mode = cfg.resolved_cond_mode()
    if mode == "none":
        return None
    if cfg.framework == "edm":
        feat = 0.25 * np.log(c1)
        return feat if mode == "full" else feat.mean(axis=1, keepdims=True)
    if mode == "full":
        return np.concatenate([c0, c1], axis=1)
    return np.concatenate(
        [c0.mean(axis=1, keepdims=True), c1.mean(axis=1, keepdims=True)], axis=1
    )


def run_pretraining(cfg: ExperimentConfig, out_dir=None) -> ModelParams:
    """Train the vector-field model; returns (and saves) the EMA weights."""
    out_dir = Path(out_dir) if out_dir is not None else cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    target, source = build_task_distributions(cfg)
    sched = build_schedule(cfg)
    basis = build_basis(cfg)
    lpf = build_lpf(cfg, DIMS)
    cond_mode = cfg.resolved_cond_mode()
    head = HEAD_FOR[cfg.framework]
    spec = field_spec(DIMS, head, cond_mode, cfg.framework)
    params = init_params(
        spec,
        cfg.seed,
        "vector_field",
        meta={"head": head, "cond_mode": cond_mode, "framework": cfg.framework},
    )
    tr = cfg.train
    adam = AdamState.for_params(
        param_count(spec),
        LrSchedule(tr.lr, tr.warmup, tr.iters, tr.decay_power),
        beta1=tr.beta1,
        beta2=tr.beta2,
        eps=tr.eps,
    )
    ema = EmaState.from_params(params.values, tr.ema)
    rng_data = make_rng(cfg.dataset.seed, STREAM_DATA, cfg.seed)
    rng_train = make_rng(cfg.seed, STREAM_TRAIN)
    metrics = MetricsWriter(out_dir / "metrics.jsonl")
    curve = []
    snapshot = ema.shadow.copy()
    status = "ok"
    t_start = time.monotonic()
    gamma_mode = cfg.coeff_mode != "alpha"
    need_deriv = cfg.framework == "fm"
    try:
        for it in range(tr.iters):
            x0, x1, _ = _sample_endpoints(cfg, target, source, rng_data, tr.batch)
            if tr.pairing == "ot":
                x1 = x1[ot_pair(x0, x1).permutation]
            ts = _sample_times(cfg, rng_train, tr.batch, gamma_mode)
            c0, c1, dc0, dc1 = _pretrain_coefficients(
                cfg, sched, basis, lpf, rng_train, ts, tr.batch, need_deriv
            )
            batch = PretrainBatch(
                x0=x0, x1=x1, ts=ts, c0=c0, c1=c1, dc0=dc0, dc1=dc1,
                cond=_cond_features_np(cfg, c0, c1),
            )
            tape = Tape()
            bound = BoundMlp(tape, params, trainable=True)
            loss = pretrain_loss(
                tape, bound, cfg.framework, batch,
                horizon=sched.horizon, sigma_data=sched.sigma_data,
            )
            grads = tape.backward(loss)
            adam.apply(params.values, grads[bound.leaf_id], "vector_field")
            ema.update(params.values)
            loss_val = float(loss.value)
            curve.append((it, loss_val))
            if it % 100 == 0 or it == tr.iters - 1:
                metrics.write(
                    iter=it, loss=loss_val,
                    wall_ms=int(1000 * (time.monotonic() - t_start)),
                )
            if it % SNAPSHOT_EVERY == 0:
                snapshot = ema.shadow.copy()
    except (TapeError, LossError, OptimError) as exc:
        status = f"diverged: {exc}"
        ema.shadow = snapshot
    finally:
        metrics.write(status=status)
        metrics.close()
    final = params.copy()
    final.values = ema.shadow.copy()
    save_checkpoint(out_dir / "field.ckpt", final, config_to_dict(cfg))
    _write_curve(out_dir / "loss_curve.csv", ["iter", "loss"], curve)
    if status != "ok":
        raise TrainingDiverged(f"{status}; last good checkpoint saved")
    return final


def run_phi_optimization(
    cfg: ExperimentConfig, field_params: ModelParams, out_dir=None
) -> ModelParams:
    """Optimize the coefficient network against the frozen field using the
    exact batch Wasserstein objective; returns (and saves) EMA weights."""
    out_dir = Path(out_dir) if out_dir is not None else cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.coeff_mode != "gamma-mac":
        raise LossError("coefficient optimization needs coeff_mode='gamma-mac'")
    target, source = build_task_distributions(cfg)
    basis = build_basis(cfg)
    spec = coeff_net_spec(DIMS, basis.m_count)
    coeff = init_params(spec, cfg.seed, "mac", meta={"m_count": basis.m_count})
    ph = cfg.phi
    adam = AdamState.for_params(
        param_count(spec),
        LrSchedule(ph.lr, ph.warmup, ph.iters, ph.decay_power),
        beta1=ph.beta1,
        beta2=ph.beta2,
        eps=ph.eps,
    )
    ema = EmaState.from_params(coeff.values, ph.ema)
    solver_cfg = build_solver_config(cfg)
    rng_data = make_rng(cfg.dataset.seed, STREAM_DATA, cfg.seed, 1)
    metrics = MetricsWriter(out_dir / "metrics.jsonl")
    rows = []
    t_start = time.monotonic()
    status = "ok"
    snapshot = ema.shadow.copy()
    try:
        for it in range(ph.iters):
            x0, _, x_start = _sample_endpoints(
                cfg, target, source, rng_data, ph.batch
            )
            tape = Tape()
            field_bound = BoundMlp(tape, field_params, trainable=False)
            coeff_bound = BoundMlp(tape, coeff, trainable=True)
            loss, _ = phi_w2_loss(
                solver_cfg, tape, field_bound, coeff_bound, x0, x_start
            )
            grads = tape.backward(loss)
            adam.apply(coeff.values, grads[coeff_bound.leaf_id], "mac")
            ema.update(coeff.values)
            loss_val = float(loss.value)
            rows.append((it, loss_val))
            if it % 50 == 0 or it == ph.iters - 1:
                metrics.write(
                    iter=it, w2=loss_val,
                    wall_ms=int(1000 * (time.monotonic() - t_start)),
                )
            if it % SNAPSHOT_EVERY == 0:
                snapshot = ema.shadow.copy()
        # final row: post-update loss on a fresh batch (rows = iters + 1)
        final_w2 = _phi_eval_once(cfg, solver_cfg, field_params, coeff, ema,
                                  target, source, rng_data)
        rows.append((ph.iters, final_w2))
    except (TapeError, LossError, OptimError) as exc:
        status = f"diverged: {exc}"
        ema.shadow = snapshot
    finally:
        metrics.write(status=status)
        metrics.close()
    final = coeff.copy()
    final.values = ema.shadow.copy()
    save_checkpoint(out_dir / "coeff.ckpt", final, config_to_dict(cfg))
    _write_curve(out_dir / "w2_curve.csv", ["iter", "w2"], rows)
    if status != "ok":
        raise TrainingDiverged(f"{status}; last good checkpoint saved")
    return final


def _phi_eval_once(cfg, solver_cfg, field_params, coeff, ema, target, source,
                   rng):
    shadow = coeff.copy()
    shadow.values = ema.shadow.copy()
    x0, _, x_start = _sample_endpoints(cfg, target, source, rng, cfg.phi.batch)
    tape = Tape()
    field_bound = BoundMlp(tape, field_params, trainable=False)
    coeff_bound = BoundMlp(tape, shadow, trainable=False)
    traj = solve(solver_cfg, tape, field_bound, x_start, coeff_bound=coeff_bound)
    return wasserstein2(x0, traj.endpoint.value)


def run_adversarial(
    cfg: ExperimentConfig, field_params: ModelParams, out_dir=None
) -> tuple[ModelParams, ModelParams, ModelParams]:
    """Alternating hinge-loss refinement (experimental at 2-D scale): the
    critic updates every iteration; the coefficient network and/or the field
    update after the critic warmup, per cfg.adv.mode."""
    out_dir = Path(out_dir) if out_dir is not None else cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.coeff_mode != "gamma-mac":
        raise LossError("adversarial refinement needs coeff_mode='gamma-mac'")
    target, source = build_task_distributions(cfg)
    basis = build_basis(cfg)
    adv = cfg.adv
    field = field_params.copy()
    coeff = init_params(
        coeff_net_spec(DIMS, basis.m_count), cfg.seed, "mac",
        meta={"m_count": basis.m_count},
    )
    critic = init_params(discriminator_spec(DIMS), cfg.seed, "discriminator")
    opt_kw = dict(beta1=adv.beta1, beta2=adv.beta2, eps=adv.eps)
    adam_field = AdamState.for_params(field.values.size, adv.lr_field, **opt_kw)
    adam_coeff = AdamState.for_params(coeff.values.size, adv.lr_coeff, **opt_kw)
    adam_critic = AdamState.for_params(critic.values.size, adv.lr_critic, **opt_kw)
    ema_field = EmaState.from_params(field.values, adv.ema)
    ema_coeff = EmaState.from_params(coeff.values, adv.ema)
    solver_cfg = build_solver_config(cfg)
    grid_starts = solver_cfg.grid.times[:-1]
    rng_data = make_rng(cfg.dataset.seed, STREAM_DATA, cfg.seed, 2)
    rng_train = make_rng(cfg.seed, STREAM_TRAIN, 1)
    metrics = MetricsWriter(out_dir / "metrics.jsonl")
    train_theta = adv.mode in ("theta", "both")
    train_phi = adv.mode in ("phi", "both")
    t_start = time.monotonic()
    for it in range(adv.iters):
        x0, x1, x_start = _sample_endpoints(cfg, target, source, rng_data, adv.batch)
        _, _, z = _sample_endpoints(cfg, target, source, rng_data, adv.batch)
        raw_ts = _sample_times(cfg, rng_train, adv.batch, True)
        ts = grid_starts[
            np.argmin(np.abs(raw_ts[:, None] - grid_starts[None, :]), axis=1)
        ]
        losses = adversarial_losses(
            solver_cfg, field, coeff, critic,
            x0, x1, x_start, z, ts,
            vanilla=adv.vanilla, train_theta=train_theta,
        )
        g_psi = losses.tape_psi.backward(losses.loss_psi)[losses.psi_leaf]
        adam_critic.apply(critic.values, g_psi, "discriminator")
        warmed = it >= adv.d_warmup
        if train_phi and warmed:
            g_phi = losses.tape_phi.backward(losses.loss_phi)[losses.phi_leaf]
            adam_coeff.apply(coeff.values, g_phi, "mac")
            ema_coeff.update(coeff.values)
        if train_theta and warmed:
            g_theta = losses.tape_theta.backward(losses.loss_theta)[
                losses.theta_leaf
            ]
            adam_field.apply(field.values, g_theta, "vector_field")
            ema_field.update(field.values)
        if it % 50 == 0 or it == adv.iters - 1:
            metrics.write(
                iter=it,
                loss=float(losses.loss_psi.value),
                loss_phi=float(losses.loss_phi.value),
                loss_theta=(
                    float(losses.loss_theta.value) if losses.loss_theta else None
                ),
                logit_lo=losses.logit_range[0],
                logit_hi=losses.logit_range[1],
                wall_ms=int(1000 * (time.monotonic() - t_start)),
            )
    metrics.write(status="ok")
    metrics.close()
    field_out = field.copy()
    field_out.values = ema_field.shadow.copy()
    coeff_out = coeff.copy()
    coeff_out.values = ema_coeff.shadow.copy()
    save_checkpoint(out_dir / "field_adv.ckpt", field_out, config_to_dict(cfg))
    save_checkpoint(out_dir / "coeff_adv.ckpt", coeff_out, config_to_dict(cfg))
    save_checkpoint(out_dir / "critic.ckpt", critic, config_to_dict(cfg))
    return field_out, coeff_out, critic


def evaluate_w2(
    cfg: ExperimentConfig,
    field_params: ModelParams,
    coeff_params: ModelParams | None = None,
    eval_seed: int | None = None,
    n_points: int | None = None,
    return_trajectory: bool = False,
):
    """Seeded W2 between fresh target draws and solver endpoints."""
    target, source = build_task_distributions(cfg)
    n = n_points or cfg.eval.n_points
    seed = cfg.seed if eval_seed is None else eval_seed
    rng = make_rng(cfg.dataset.seed, STREAM_EVAL, seed)
    x0, _, x_start = _sample_endpoints(cfg, target, source, rng, n)
    solver_cfg = build_solver_config(cfg)
    tape = Tape()
    field_bound = BoundMlp(tape, field_params, trainable=False)
    coeff_bound = (
        BoundMlp(tape, coeff_params, trainable=False)
        if coeff_params is not None
        else None
    )
    random_weights = None
    if solver_cfg.coeff_mode == "gamma-random":
        random_weights = sample_random_weights_batch(
            make_rng(seed, STREAM_EVAL, 1), n, DIMS, solver_cfg.basis,
            cfg.mac.s, build_lpf(cfg, DIMS),
        )
    traj = solve(
        solver_cfg, tape, field_bound, x_start,
        coeff_bound=coeff_bound, random_weights=random_weights,
    )
    w2 = wasserstein2(x0, traj.endpoint.value)
    if return_trajectory:
        return w2, traj
    return w2
