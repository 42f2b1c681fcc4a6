"""MLP models on the autodiff tape: the vector-field model, the adaptive
coefficient network, and a small discriminator, plus the EDM preconditioner
and checkpoint serialization.

Parameters live in one flat float64 vector per model; binding a model to a
tape unpacks layer views via differentiable slices so optimizers see a
single contiguous gradient.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .coefficients import LpfKernel
from .seeding import STREAM_INIT, make_rng

ROLES = ("vector_field", "mac", "discriminator")
HEADS = ("pair", "velocity", "denoised")
COND_MODES = ("none", "scalar", "full")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    """Fully-connected stack; hidden activations only, identity output."""

    widths: tuple[int, ...]
    activation: str = "silu"  # "silu" | "leaky_relu"
    leaky_slope: float = 0.2

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ModelError("an MLP needs at least input and output widths")
        if self.activation not in ("silu", "leaky_relu"):
            raise ModelError(f"unknown activation '{self.activation}'")


def param_count(spec: MlpSpec) -> int:
    """sum over layers of (fan_in + 1) * fan_out."""
    return sum(
        (i + 1) * o for i, o in zip(spec.widths[:-1], spec.widths[1:])
    )


def layer_slices(spec: MlpSpec):
    """(start, stop, shape) triples for each W and b in the flat vector."""
    out = []
    offset = 0
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        out.append((offset, offset + fan_in * fan_out, (fan_in, fan_out)))
        offset += fan_in * fan_out
        out.append((offset, offset + fan_out, (fan_out,)))
        offset += fan_out
    return out


@dataclass
class ModelParams:
    """Flat parameter vector with its architecture and provenance."""

    role: str
    spec: MlpSpec
    values: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ModelError(f"unknown role '{self.role}', expected {ROLES}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        expected = param_count(self.spec)
        if self.values.shape != (expected,):
            raise ModelError(
                f"parameter vector has {self.values.shape}, expected ({expected},)"
            )

    def copy(self) -> "ModelParams":
        return ModelParams(
            role=self.role,
            spec=self.spec,
            values=self.values.copy(),
            seed=self.seed,
            meta=dict(self.meta),
        )


def init_params(spec: MlpSpec, seed: int, role: str, meta=None) -> ModelParams:
    """Fan-in scaled uniform weights (+-sqrt(6/fan_in)), zero biases.

    Each role draws from its own substream, so the three models of one
    experiment seed are independently initialized."""
    rng = make_rng(seed, STREAM_INIT, ROLES.index(role))
    values = np.zeros(param_count(spec))
    for (wo, wstop, wshape), (bo, bstop, _) in zip(
        layer_slices(spec)[0::2], layer_slices(spec)[1::2]
    ):
        bound = np.sqrt(6.0 / wshape[0])
        values[wo:wstop] = rng.uniform(-bound, bound, size=wshape).ravel()
        values[bo:bstop] = 0.0
    return ModelParams(
        role=role, spec=spec, values=values, seed=seed, meta=dict(meta or {})
    )


class BoundMlp:
    """A model's layers unpacked as Vars on one tape.

    trainable=True registers the flat vector as a leaf (its id is
    `.leaf_id`); otherwise the parameters enter as constants and the tape
    contains no path from them to any loss.
    """

    def __init__(self, tape: Tape, params: ModelParams, trainable: bool):
        self.tape = tape
        self.params = params
        self.trainable = trainable
        flat = tape.leaf(params.values) if trainable else tape.constant(params.values)
        self.flat = flat
        self.leaf_id = flat.index if trainable else None
        self.layers = []
        slices = layer_slices(params.spec)
        for (wo, wstop, wshape), (bo, bstop, _) in zip(slices[0::2], slices[1::2]):
            w = tape.reshape(tape.slice1d(flat, wo, wstop), wshape)
            b = tape.slice1d(flat, bo, bstop)
            self.layers.append((w, b))

    def apply(self, x: Var) -> Var:
        spec = self.params.spec
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = self.tape.linear(h, w, b)
            if i != last:
                if spec.activation == "silu":
                    h = self.tape.silu(h)
                else:
                    h = self.tape.leaky_relu(h, spec.leaky_slope)
        return h


# -- architecture helpers -------------------------------------------------------


def cond_width(dims: int, cond_mode: str, framework: str) -> int:
    """Width of the coefficient-conditioning features.

    SI-like frameworks feed the coefficient pair (full: both d-vectors,
    scalar: the two dimension averages); EDM feeds the log-scale feature
    (1/4) ln c1 only, since c0 is identically one there.
    """
    if cond_mode == "none":
        return 0
    if framework == "edm":
        return dims if cond_mode == "full" else 1
    return 2 * dims if cond_mode == "full" else 2


def field_spec(
    dims: int,
    head: str,
    cond_mode: str,
    framework: str,
    hidden: int = 64,
    n_hidden_layers: int = 3,
) -> MlpSpec:
    """Vector-field model: 4 linear layers, 64 hidden units, SiLU."""
    if head not in HEADS:
        raise ModelError(f"unknown head '{head}', expected {HEADS}")
    if cond_mode not in COND_MODES:
        raise ModelError(f"unknown cond mode '{cond_mode}', expected {COND_MODES}")
    in_width = dims + 1 + cond_width(dims, cond_mode, framework)
    out_width = 2 * dims if head == "pair" else dims
    widths = (in_width,) + (hidden,) * n_hidden_layers + (out_width,)
    return MlpSpec(widths=widths, activation="silu")


def coeff_net_spec(
    dims: int, m_count: int, n_classes: int = 0, hidden: int = 64,
    n_hidden_layers: int = 3,
) -> MlpSpec:
    """Adaptive-coefficient network: x_T (+ one-hot label) -> d*M*2 weights."""
    widths = (dims + n_classes,) + (hidden,) * n_hidden_layers + (dims * m_count * 2,)
    return MlpSpec(widths=widths, activation="silu")


def discriminator_spec(dims: int, hidden: int = 128, n_hidden_layers: int = 3) -> MlpSpec:
    """Scalar-logit critic: 4 layers, 128 hidden, leaky ReLU (slope 0.2)."""
    widths = (dims,) + (hidden,) * n_hidden_layers + (1,)
    return MlpSpec(widths=widths, activation="leaky_relu")


# -- forward wrappers ------------------------------------------------------------


def vector_field_predict(bound: BoundMlp, x_t: Var, t_feat: Var, cond: Var | None):
    """Model forward on [x_t, t_feat, cond]; pair head splits the output.

    Raises if the conditioning argument disagrees with the mode the model
    was trained with (prevents silently feeding coefficients to a model that
    never saw them)."""
    meta = bound.params.meta
    head = meta.get("head", "pair")
    cond_mode = meta.get("cond_mode", "none")
    if (cond is None) != (cond_mode == "none"):
        raise ModelError(
            f"conditioning mismatch: model expects '{cond_mode}' "
            f"but got {'no' if cond is None else 'a'} conditioning input"
        )
    tape = bound.tape
    parts = [x_t, t_feat] if cond is None else [x_t, t_feat, cond]
    out = bound.apply(tape.concat_cols(parts))
    if head == "pair":
        dims = out.value.shape[1] // 2
        return tape.slice_cols(out, 0, dims), tape.slice_cols(out, dims, 2 * dims)
    return out


def discriminator_score(bound: BoundMlp, x: Var) -> Var:
    """Raw logit column (n, 1); hinge losses consume logits directly."""
    return bound.apply(x)


# -- adaptive weights on the tape -------------------------------------------------


def weight_column_layout(dims: int, m_count: int):
    """Column index of weight (component k, dim, m) in the flat (n, 2dM)
    weight matrix: k * d * M + dim * M + m."""
    return lambda k, dim, m: (k * dims + dim) * m_count + m


def adaptive_weights(
    bound: BoundMlp,
    x_source: Var,
    scale: float,
    dims: int,
    m_count: int,
    lpf: LpfKernel | None = None,
    label_onehot: Var | None = None,
) -> Var:
    """w = s * (LPF o) tanh(net(x_T [, label])), flat (n, 2dM) on the tape.

    Evaluated once per trajectory at t = T and reused for the whole
    schedule. For the LPF range-rescale, the per-slice affine factors are
    computed from the forward values and treated as constants for gradients
    (the smoothing convolution itself is exactly differentiated).
    """
    tape = bound.tape
    net_in = x_source if label_onehot is None else tape.concat_cols(
        [x_source, label_onehot]
    )
    raw = tape.tanh(bound.apply(net_in))
    w = raw * scale
    if lpf is None:
        return w
    if len(lpf.taps) > dims:
        raise ModelError(
            f"kernel length {len(lpf.taps)} exceeds dimension count {dims}"
        )
    w = _lpf_on_tape(w, lpf, dims, m_count)
    return w


def _lpf_conv_matrix(lpf: LpfKernel, dims: int, m_count: int) -> np.ndarray:
    """(dM, dM) operator applying the zero-padded taps along the dim index
    independently for each m (layout: column (dim, m) = dim * M + m)."""
    half = (len(lpf.taps) - 1) // 2
    op = np.zeros((dims * m_count, dims * m_count))
    for dim_out in range(dims):
        for j, tap in enumerate(lpf.taps):
            dim_in = dim_out + (j - half)
            if 0 <= dim_in < dims:
                for m in range(m_count):
                    op[dim_in * m_count + m, dim_out * m_count + m] = tap
    return op


def _lpf_on_tape(w: Var, lpf: LpfKernel, dims: int, m_count: int) -> Var:
    tape = w.tape
    op = tape.constant(_lpf_conv_matrix(lpf, dims, m_count))
    blocks = []
    for k in (0, 1):
        blocks.append(
            tape.matmul(
                tape.slice_cols(w, k * dims * m_count, (k + 1) * dims * m_count), op
            )
        )
    filtered = tape.concat_cols(blocks)
    # per (sample, component, m) slice over dims: rescale to pre-filter range
    pre = w.value.reshape(-1, 2, dims, m_count)
    post = filtered.value.reshape(-1, 2, dims, m_count)
    lo0, hi0 = pre.min(axis=2), pre.max(axis=2)  # (n, 2, M)
    lof, hif = post.min(axis=2), post.max(axis=2)
    flat = hi0 == lo0
    flat |= hif == lof
    span0 = hi0 - lo0
    spanf = np.where(flat, 1.0, hif - lof)
    gain = np.where(flat, 0.0, span0 / spanf)
    shift = np.where(flat, 0.0, lo0 - lof * gain)
    keep = flat.astype(np.float64)
    expand = lambda a: np.repeat(a, dims, axis=1).reshape(len(a), 2 * dims * m_count)
    rescaled = filtered * tape.constant(expand(gain)) + tape.constant(expand(shift))
    return w * tape.constant(expand(keep)) + rescaled * tape.constant(
        expand(1.0 - keep)
    )


# -- EDM preconditioner ------------------------------------------------------------


@dataclass(frozen=True)
class EdmPreconditioner:
    """Scalings wrapping the raw network F into the denoiser:
    denoised = c_skip * x + c_out * F([c_in * x, c_noise, c_coeff]).

    The functions accept tape Vars or plain arrays; identities
    c_in^2 (c1^2 + sigma_data^2) == 1 and lam * c_out^2 == 1 hold
    elementwise by construction."""

    sigma_data: float = 0.5

    def c_in(self, c1):
        return 1.0 / ad.sqrt(ad.square(c1) + self.sigma_data**2)

    def c_out(self, c1):
        return c1 * self.sigma_data / ad.sqrt(ad.square(c1) + self.sigma_data**2)

    def c_skip(self, c1):
        return self.sigma_data**2 / (ad.square(c1) + self.sigma_data**2)

    def c_noise(self, t):
        return 0.25 * ad.log(t)

    def c_coeff(self, c1):
        return 0.25 * ad.log(c1)

    def lam(self, c1):
        return (ad.square(c1) + self.sigma_data**2) / ad.square(
            c1 * self.sigma_data
        )


def edm_denoise(
    bound: BoundMlp,
    precond: EdmPreconditioner,
    x_t: Var,
    t: float,
    c1: Var,
) -> Var:
    """Denoised estimate from the preconditioned network at scale c1 (n, d).

    The conditioning mode decides what reaches the network beyond
    [c_in * x, c_noise]: the per-dimension log-scale feature (full), its
    dimension average (scalar), or nothing (none, the plain EDM form)."""
    tape = bound.tape
    cond_mode = bound.params.meta.get("cond_mode", "none")
    n = x_t.value.shape[0]
    x_in = precond.c_in(c1) * x_t
    noise_col = tape.constant(
        np.full((n, 1), 0.25 * np.log(float(t)))
    )
    parts = [x_in, noise_col]
    if cond_mode == "full":
        parts.append(precond.c_coeff(c1))
    elif cond_mode == "scalar":
        parts.append(tape.mean(precond.c_coeff(c1), axis=1))
    raw = bound.apply(tape.concat_cols(parts))
    return precond.c_skip(c1) * x_t + precond.c_out(c1) * raw


# -- checkpoint serialization -------------------------------------------------------

_MAGIC = b"ACOEF1"


def save_checkpoint(path, params: ModelParams, config: dict | None = None):
    """Portable binary: header {role, layer widths, seed} then raw
    little-endian float64 parameters, plus a JSON sidecar with the config."""
    path = Path(path)
    role_b = params.role.encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(role_b)))
        fh.write(role_b)
        fh.write(struct.pack("<I", len(params.spec.widths)))
        fh.write(struct.pack(f"<{len(params.spec.widths)}I", *params.spec.widths))
        fh.write(struct.pack("<q", params.seed))
        fh.write(struct.pack("<Q", params.values.size))
        fh.write(params.values.astype("<f8").tobytes())
    sidecar = {
        "role": params.role,
        "widths": list(params.spec.widths),
        "activation": params.spec.activation,
        "leaky_slope": params.spec.leaky_slope,
        "seed": params.seed,
        "meta": params.meta,
        "config": config or {},
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ModelError(f"{path} is not a model checkpoint")
        (role_len,) = struct.unpack("<I", fh.read(4))
        role = fh.read(role_len).decode()
        (n_widths,) = struct.unpack("<I", fh.read(4))
        widths = struct.unpack(f"<{n_widths}I", fh.read(4 * n_widths))
        (seed,) = struct.unpack("<q", fh.read(8))
        (n_params,) = struct.unpack("<Q", fh.read(8))
        values = np.frombuffer(fh.read(8 * n_params), dtype="<f8").copy()
    sidecar_path = Path(str(path) + ".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    spec = MlpSpec(
        widths=tuple(widths),
        activation=sidecar.get("activation", "silu"),
        leaky_slope=sidecar.get("leaky_slope", 0.2),
    )
    params = ModelParams(
        role=role, spec=spec, values=values, seed=seed,
        meta=sidecar.get("meta", {}),
    )
    return params, sidecar
