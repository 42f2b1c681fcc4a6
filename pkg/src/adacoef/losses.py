"""Training objectives: per-framework pre-training losses on interpolated
states, the Wasserstein objective for coefficient-network optimization, and
the adversarial hinge/vanilla objectives with strict gradient routing.

Each loss builds its own subgraph; parameters that must not receive
gradients enter the tape as constants, so isolation is structural (checked
by tape inspection in the tests, not by masking)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var
from .models import (
    BoundMlp,
    EdmPreconditioner,
    ModelError,
    discriminator_score,
    vector_field_predict,
)
from .solver import SolverConfig, Trajectory, solve
from .transport import wasserstein2_loss


class LossError(RuntimeError):
    pass


@dataclass
class PretrainBatch:
    """One pre-training minibatch with its interpolation coefficients.

    c0/c1 hold the per-sample coefficients (broadcast scalars in alpha mode,
    sampled per-dimension values in gamma mode); dc0/dc1 their time
    derivatives (velocity target only); cond the conditioning features in
    the layout the model was trained with, or None."""

    x0: np.ndarray  # (n, d) target-side endpoints
    x1: np.ndarray  # (n, d) source-side endpoints
    ts: np.ndarray  # (n,)
    c0: np.ndarray  # (n, d)
    c1: np.ndarray  # (n, d)
    dc0: np.ndarray | None = None
    dc1: np.ndarray | None = None
    cond: np.ndarray | None = None

    def interpolate(self) -> np.ndarray:
        return self.c0 * self.x0 + self.c1 * self.x1


def pretrain_loss(
    tape: Tape,
    bound: BoundMlp,
    framework: str,
    batch: PretrainBatch,
    horizon: float = 1.0,
    sigma_data: float = 0.5,
) -> Var:
    """Framework loss at x(t) = c0*x0 + c1*x1, scalar on the tape."""
    head = bound.params.meta.get("head")
    expected = {"si": "pair", "fm": "velocity", "ddpm": "denoised", "edm": "denoised"}
    if expected[framework] != head:
        raise LossError(
            f"model head '{head}' does not match framework '{framework}'"
        )
    n = len(batch.x0)
    x_t = batch.interpolate()
    if framework == "edm":
        return _edm_pretrain_loss(tape, bound, batch, x_t, sigma_data)
    t_feat = tape.constant((batch.ts / horizon).reshape(-1, 1))
    cond = tape.constant(batch.cond) if batch.cond is not None else None
    preds = vector_field_predict(bound, tape.constant(x_t), t_feat, cond)
    if framework == "si":
        h0, h1 = preds
        x0c, x1c = tape.constant(batch.x0), tape.constant(batch.x1)
        per = (
            tape.square(h0) - x0c * h0 * 2.0 + tape.square(h1) - x1c * h1 * 2.0
        )
        return tape.mean(tape.sum(per, axis=1))
    if framework == "ddpm":
        err = preds - tape.constant(batch.x0)
        return tape.mean(tape.sum(tape.square(err), axis=1))
    if framework == "fm":
        if batch.dc0 is None or batch.dc1 is None:
            raise LossError("velocity target needs coefficient derivatives")
        target = batch.dc0 * batch.x0 + batch.dc1 * batch.x1
        err = preds - tape.constant(target)
        return tape.mean(tape.sum(tape.square(err), axis=1))
    raise LossError(f"unknown framework '{framework}'")  # pragma: no cover


def _edm_pretrain_loss(tape, bound, batch, x_t, sigma_data):
    """Preconditioned denoising loss with per-dimension scalings."""
    pre = EdmPreconditioner(sigma_data=sigma_data)
    c1 = batch.c1
    c_in, c_out, c_skip = pre.c_in(c1), pre.c_out(c1), pre.c_skip(c1)
    weight = pre.lam(c1) * c_out**2  # == 1 elementwise, kept for clarity
    cond_mode = bound.params.meta.get("cond_mode", "none")
    parts = [c_in * x_t, 0.25 * np.log(batch.ts).reshape(-1, 1)]
    if cond_mode == "full":
        parts.append(pre.c_coeff(c1))
    elif cond_mode == "scalar":
        parts.append(pre.c_coeff(c1).mean(axis=1, keepdims=True))
    raw = bound.apply(tape.constant(np.concatenate(parts, axis=1)))
    target = (batch.x0 - c_skip * x_t) / c_out
    err = raw - tape.constant(target)
    per = tape.square(err) * tape.constant(weight)
    return tape.mean(tape.sum(per, axis=1))


# -- Wasserstein objective for the coefficient network ------------------------


def phi_w2_loss(
    cfg: SolverConfig,
    tape: Tape,
    field_bound: BoundMlp,
    coeff_bound: BoundMlp,
    x_target: np.ndarray,
    x_source: np.ndarray,
) -> tuple[Var, Trajectory]:
    """W2 between targets and solver endpoints; gradients reach only the
    coefficient network (the vector field must be bound as constants)."""
    if field_bound.trainable:
        raise LossError("the vector field must be frozen in this objective")
    traj = solve(cfg, tape, field_bound, x_source, coeff_bound=coeff_bound)
    endpoint = traj.endpoint
    if not np.all(np.isfinite(endpoint.value)):
        raise LossError("non-finite solver endpoint")
    return wasserstein2_loss(x_target, endpoint), traj


# -- adversarial objectives -----------------------------------------------------


def _softplus(tape, s):
    # stable log(1 + exp(s)) = max0(s) + log(1 + exp(-|s|))
    return tape.max0(s) + tape.log(tape.exp(-tape.abs(s)) + 1.0)


@dataclass
class AdversarialLosses:
    """Three scalars on three tapes, one trainable block each."""

    loss_phi: Var
    loss_theta: Var | None
    loss_psi: Var
    tape_phi: Tape
    tape_theta: Tape | None
    tape_psi: Tape
    phi_leaf: int
    theta_leaf: int | None
    psi_leaf: int
    fake_endpoints: np.ndarray
    logit_range: tuple[float, float]


def adversarial_losses(
    cfg: SolverConfig,
    field_params,
    coeff_params,
    critic_params,
    x0: np.ndarray,
    x1: np.ndarray,
    x_source: np.ndarray,
    z_source: np.ndarray,
    ts_quantized: np.ndarray,
    vanilla: bool = False,
    train_theta: bool = True,
) -> AdversarialLosses:
    """L_phi (simulation-based), L_theta (simulation-free) and L_psi from one
    shared batch, each on its own tape with exactly one trainable block.

    z_source is a fresh source draw used only for the theta-loss
    interpolation; it never enters the solver. ts_quantized are step-start
    times from the inference grid."""
    # phi tape: theta and psi constant, phi trainable
    tape_phi = Tape()
    field_c = BoundMlp(tape_phi, field_params, trainable=False)
    coeff_t = BoundMlp(tape_phi, coeff_params, trainable=True)
    critic_c = BoundMlp(tape_phi, critic_params, trainable=False)
    traj = solve(cfg, tape_phi, field_c, x_source, coeff_bound=coeff_t)
    fake_scores = discriminator_score(critic_c, traj.endpoint)
    if vanilla:
        loss_phi = tape_phi.mean(-_softplus(tape_phi, fake_scores))
    else:
        loss_phi = -tape_phi.mean(fake_scores)
    fakes = traj.endpoint.value.copy()

    # psi tape: generator branch detached (fakes enter as constants)
    tape_psi = Tape()
    critic_t = BoundMlp(tape_psi, critic_params, trainable=True)
    s_real = discriminator_score(critic_t, tape_psi.constant(x0))
    s_fake = discriminator_score(critic_t, tape_psi.constant(fakes))
    if vanilla:
        loss_psi = tape_psi.mean(_softplus(tape_psi, -s_real)) + tape_psi.mean(
            _softplus(tape_psi, s_fake)
        )
    else:
        loss_psi = tape_psi.mean(tape_psi.max0(1.0 - s_real)) + tape_psi.mean(
            tape_psi.max0(1.0 + s_fake)
        )
    lo = float(min(s_real.value.min(), s_fake.value.min()))
    hi = float(max(s_real.value.max(), s_fake.value.max()))

    # theta tape: interpolate with the coefficient network held constant
    loss_theta = None
    tape_theta = None
    theta_leaf = None
    if train_theta:
        tape_theta = Tape()
        field_t = BoundMlp(tape_theta, field_params, trainable=True)
        coeff_c = BoundMlp(tape_theta, coeff_params, trainable=False)
        critic_c2 = BoundMlp(tape_theta, critic_params, trainable=False)
        x0_hat = _theta_denoised(
            cfg, tape_theta, field_t, coeff_c, x0, x1, z_source, ts_quantized
        )
        scores = discriminator_score(critic_c2, x0_hat)
        if vanilla:
            loss_theta = tape_theta.mean(-_softplus(tape_theta, scores))
        else:
            loss_theta = -tape_theta.mean(scores)
        theta_leaf = field_t.leaf_id

    return AdversarialLosses(
        loss_phi=loss_phi,
        loss_theta=loss_theta,
        loss_psi=loss_psi,
        tape_phi=tape_phi,
        tape_theta=tape_theta,
        tape_psi=tape_psi,
        phi_leaf=coeff_t.leaf_id,
        theta_leaf=theta_leaf,
        psi_leaf=critic_t.leaf_id,
        fake_endpoints=fakes,
        logit_range=(lo, hi),
    )


def _theta_denoised(cfg, tape, field_bound, coeff_bound, x0, x1, z, ts):
    """Denoised estimate at coefficient-interpolated states for the theta
    loss; needs a head that exposes a target-side estimate."""
    from .models import adaptive_weights, edm_denoise
    from .solver import _basis_block

    head = field_bound.params.meta.get("head")
    if head == "velocity":
        raise LossError(
            "the adversarial field loss needs a pair or denoised head"
        )
    n, dims = x0.shape
    basis = cfg.basis
    w = adaptive_weights(
        coeff_bound, tape.constant(z), cfg.mac_scale, dims, basis.m_count,
        lpf=cfg.lpf,
    )
    dm = dims * basis.m_count
    w_f = tape.slice_cols(w, 0, dm)
    w_g = tape.slice_cols(w, dm, 2 * dm)
    horizon = cfg.schedule.horizon
    # states at per-sample quantized times: build per-unique-time blocks
    pieces_c0, pieces_c1 = {}, {}
    precond = EdmPreconditioner(sigma_data=cfg.schedule.sigma_data)
    out_rows = [None] * n
    for t in np.unique(ts):
        idx = np.flatnonzero(ts == t)
        block = tape.constant(_basis_block(basis, float(t), dims))
        sf = tape.matmul(w_f, block)
        sg = tape.matmul(w_g, block)
        sf2, sg2 = tape.square(sf), tape.square(sg)
        den = sf2 + sg2 + 1.0
        c1 = (sg2 * horizon + float(t)) / den
        if cfg.framework == "edm":
            c0 = tape.constant(np.ones((n, dims)))
        else:
            c0 = (sf2 * horizon + (horizon - float(t))) / den
        pieces_c0[float(t)] = (c0, idx)
        pieces_c1[float(t)] = (c1, idx)
    # evaluate the model per unique time on the matching row subsets;
    # rows are re-assembled in batch order through constant row masks
    outputs = []
    for t in np.unique(ts):
        t = float(t)
        c0_full, idx = pieces_c0[t]
        c1_full, _ = pieces_c1[t]
        row_mask = np.zeros((n, 1))
        row_mask[idx] = 1.0
        mask_var = tape.constant(row_mask)
        x_t = c0_full * tape.constant(x0) + c1_full * tape.constant(x1)
        if cfg.framework == "edm":
            x0_hat = edm_denoise(field_bound, precond, x_t, t, c1_full)
        else:
            t_feat = tape.constant(np.full((n, 1), t / horizon))
            from .solver import _cond_features

            cond = _cond_features(tape, cfg, c0_full, c1_full, precond)
            preds = vector_field_predict(field_bound, x_t, t_feat, cond)
            x0_hat = preds[0] if head == "pair" else preds
        outputs.append(x0_hat * mask_var)
    total = outputs[0]
    for piece in outputs[1:]:
        total = total + piece
    return total
