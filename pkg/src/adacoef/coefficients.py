"""Per-dimension schedule coefficients built from weighted sinusoidal bases.

A coefficient pair (c0(t), c1(t)) in R^d generalizes the scalar schedule
(a0, a1): each data dimension gets its own time profile. The construction is

    S_f(t) = sum_m w_f[:, m] b_m(t),     S_g(t) = sum_m w_g[:, m] b_m(t)
    b_m(t) = sin(pi m (t/T)^(1/q))

    c0(t) = ((T - t) + T S_f(t)^2) / (1 + S_f(t)^2 + S_g(t)^2)
    c1(t) = (t + T S_g(t)^2) / (1 + S_f(t)^2 + S_g(t)^2)

which is algebraically T f/(f+g) and T g/(f+g) with f = 1 - t/T + S_f^2 and
g = t/T + S_g^2, arranged so that zero weights reproduce the linear schedule
bit-for-bit (denominator exactly 1.0). Boundary values c0(0) = 1, c1(0) = 0
and c1(T) = T hold for every weight choice because b_m vanishes at both ends.

The "edm" variant pins c0(t) = 1 identically and keeps c1 as above.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("normalized", "edm")


class CoefficientError(ValueError):
    pass


def variant_for_framework(framework: str) -> str:
    return "edm" if framework == "edm" else "normalized"


@dataclass(frozen=True)
class SinusoidalBasis:
    """b_m(t) = sin(pi m (t/T)^(1/q)), m = 1..m_count."""

    m_count: int
    root_exponent: float = 1.0  # q
    horizon: float = 1.0  # T

    def __post_init__(self):
        if self.m_count < 1:
            raise CoefficientError("basis needs m_count >= 1")
        if self.root_exponent <= 0:
            raise CoefficientError("basis needs root_exponent > 0")


def basis_eval(basis: SinusoidalBasis, t: float) -> np.ndarray:
    """Basis values at a single time, shape (M,)."""
    return basis_eval_batch(basis, np.asarray([t], dtype=np.float64))[0]


def basis_eval_batch(basis: SinusoidalBasis, ts: np.ndarray) -> np.ndarray:
    """Basis values at each time, shape (len(ts), M)."""
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts < 0.0) or np.any(ts > basis.horizon):
        raise CoefficientError(
            f"basis time outside [0, {basis.horizon}]"
        )
    u = (ts / basis.horizon) ** (1.0 / basis.root_exponent)
    m = np.arange(1, basis.m_count + 1, dtype=np.float64)
    return np.sin(np.pi * u[:, None] * m[None, :])


def basis_deriv(basis: SinusoidalBasis, t: float) -> np.ndarray:
    """d/dt of each basis function, shape (M,)."""
    return basis_deriv_batch(basis, np.asarray([t], dtype=np.float64))[0]


def basis_deriv_batch(basis: SinusoidalBasis, ts: np.ndarray) -> np.ndarray:
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts < 0.0) or np.any(ts > basis.horizon):
        raise CoefficientError(f"basis time outside [0, {basis.horizon}]")
    q, T = basis.root_exponent, basis.horizon
    if q > 1.0 and np.any(ts == 0.0):
        raise CoefficientError("derivative singular at origin")
    u = ts / T
    m = np.arange(1, basis.m_count + 1, dtype=np.float64)
    # (pi m / (q T)) (t/T)^(1/q - 1) cos(pi m (t/T)^(1/q))
    power = u ** (1.0 / q - 1.0) if q != 1.0 else np.ones_like(u)
    root = u ** (1.0 / q)
    return (
        (np.pi * m[None, :] / (q * T))
        * power[:, None]
        * np.cos(np.pi * m[None, :] * root[:, None])
    )


@dataclass(frozen=True)
class LpfKernel:
    """Odd-length Gaussian taps normalized to sum 1, in dimension-index units."""

    taps: np.ndarray
    sigma: float

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.float64)
        object.__setattr__(self, "taps", t)
        if t.ndim != 1 or len(t) % 2 == 0:
            raise CoefficientError("kernel taps must be 1-D with odd length")
        if abs(t.sum() - 1.0) > 1e-12:
            raise CoefficientError("kernel taps must sum to 1")
        if not np.allclose(t, t[::-1]):
            raise CoefficientError("kernel taps must be symmetric")

    @classmethod
    def gaussian(cls, n_taps: int = 3, sigma: float = 1.0) -> "LpfKernel":
        if n_taps % 2 == 0 or n_taps < 1:
            raise CoefficientError("gaussian kernel needs odd n_taps >= 1")
        j = np.arange(n_taps, dtype=np.float64) - (n_taps - 1) / 2.0
        raw = np.exp(-(j**2) / (2.0 * sigma**2))
        return cls(taps=raw / raw.sum(), sigma=sigma)


@dataclass
class CoeffWeights:
    """Sinusoidal weights, shape (d, M, 2); slice [..., 0] weights S_f and
    [..., 1] weights S_g. Entries are bounded by the scale s."""

    w: np.ndarray
    scale: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 3 or self.w.shape[2] != 2:
            raise CoefficientError(
                f"weights must have shape (d, M, 2), got {self.w.shape}"
            )

    @property
    def dims(self) -> int:
        return self.w.shape[0]

    @property
    def m_count(self) -> int:
        return self.w.shape[1]

    @classmethod
    def zero(cls, dims: int, m_count: int) -> "CoeffWeights":
        return cls(w=np.zeros((dims, m_count, 2)), scale=0.0)


@dataclass
class CoeffValues:
    """Diagonal coefficient values at one time."""

    c0: np.ndarray  # (d,)
    c1: np.ndarray  # (d,)
    t: float


def lpf_convolve(w: np.ndarray, kernel: LpfKernel) -> np.ndarray:
    """Zero-padded convolution along the leading dimension axis, no rescale."""
    taps = kernel.taps
    d = w.shape[0]
    if len(taps) > d:
        raise CoefficientError(
            f"kernel length {len(taps)} exceeds dimension count {d}"
        )
    pad = (len(taps) + 1) // 2
    padded = np.zeros((d + 2 * pad,) + w.shape[1:])
    padded[pad:pad + d] = w
    half = (len(taps) - 1) // 2
    out = np.zeros_like(w)
    for j, tap in enumerate(taps):
        shift = j - half
        out += tap * padded[pad + shift:pad + shift + d]
    return out


def lpf_smooth(w: np.ndarray, kernel: LpfKernel) -> np.ndarray:
    """Smooth along the dimension axis per (m, f/g) slice, then rescale each
    slice's (min, max) back to its pre-filter range. Flat slices (and slices
    the filter leaves flat) are returned unchanged."""
    filtered = lpf_convolve(w, kernel)
    flat_w = w.reshape(w.shape[0], -1)
    flat_f = filtered.reshape(w.shape[0], -1)
    out = flat_f.copy()
    for col in range(flat_w.shape[1]):
        lo0, hi0 = flat_w[:, col].min(), flat_w[:, col].max()
        lof, hif = flat_f[:, col].min(), flat_f[:, col].max()
        if hi0 == lo0 or hif == lof:
            out[:, col] = flat_w[:, col]
            continue
        out[:, col] = (flat_f[:, col] - lof) / (hif - lof) * (hi0 - lo0) + lo0
    return out.reshape(w.shape)


def sample_random_weights(
    rng: np.random.Generator,
    dims: int,
    basis: SinusoidalBasis,
    scale: float,
    lpf: LpfKernel | None = None,
) -> CoeffWeights:
    """w(u) = s (LPF o u) with u ~ U(-1, 1)^(d x M x 2)."""
    if scale < 0:
        raise CoefficientError("scale must be >= 0")
    u = rng.uniform(-1.0, 1.0, size=(dims, basis.m_count, 2))
    if lpf is not None:
        u = lpf_smooth(u, lpf)
    return CoeffWeights(w=scale * u, scale=scale)


def _sums(weights: CoeffWeights, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # S_f, S_g of shape (d,) for basis values b of shape (M,)
    return weights.w[:, :, 0] @ b, weights.w[:, :, 1] @ b


def coeff_eval(
    weights: CoeffWeights,
    basis: SinusoidalBasis,
    t: float,
    variant: str = "normalized",
) -> CoeffValues:
    """Coefficient values at time t (see module docstring for the formula)."""
    if variant not in VARIANTS:
        raise CoefficientError(f"unknown variant '{variant}'")
    T = basis.horizon
    sf, sg = _sums(weights, basis_eval(basis, t))
    den = 1.0 + sf * sf + sg * sg
    c1 = (t + T * (sg * sg)) / den
    if variant == "edm":
        c0 = np.ones_like(c1)
    else:
        c0 = ((T - t) + T * (sf * sf)) / den
    return CoeffValues(c0=c0, c1=c1, t=t)


def coeff_time_derivative(
    weights: CoeffWeights,
    basis: SinusoidalBasis,
    t: float,
    variant: str = "normalized",
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic d/dt of coeff_eval via the quotient rule."""
    if variant not in VARIANTS:
        raise CoefficientError(f"unknown variant '{variant}'")
    T = basis.horizon
    sf, sg = _sums(weights, basis_eval(basis, t))
    dsf, dsg = _sums(weights, basis_deriv(basis, t))
    den = 1.0 + sf * sf + sg * sg
    dden = 2.0 * (sf * dsf + sg * dsg)
    n1 = t + T * (sg * sg)
    dn1 = 1.0 + 2.0 * T * sg * dsg
    dc1 = (dn1 * den - n1 * dden) / (den * den)
    if variant == "edm":
        return np.zeros_like(dc1), dc1
    n0 = (T - t) + T * (sf * sf)
    dn0 = -1.0 + 2.0 * T * sf * dsf
    dc0 = (dn0 * den - n0 * dden) / (den * den)
    return dc0, dc1


def coeff_displacement(
    weights: CoeffWeights,
    basis: SinusoidalBasis,
    t_from: float,
    t_to: float,
    variant: str = "normalized",
) -> tuple[np.ndarray, np.ndarray]:
    """Exact coefficient differences c_k(t_to) - c_k(t_from)."""
    a = coeff_eval(weights, basis, t_from, variant)
    b = coeff_eval(weights, basis, t_to, variant)
    return b.c0 - a.c0, b.c1 - a.c1


def coeff_mean(values: CoeffValues) -> tuple[float, float]:
    """Scalar averages over the d dimensions."""
    return float(values.c0.mean()), float(values.c1.mean())


# -- batched forms used by the training loops ---------------------------------


def coeff_eval_batch(
    w: np.ndarray,
    basis: SinusoidalBasis,
    ts: np.ndarray,
    variant: str = "normalized",
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample coefficients: w of shape (n, d, M, 2), ts of shape (n,);
    returns (c0, c1) each of shape (n, d)."""
    if variant not in VARIANTS:
        raise CoefficientError(f"unknown variant '{variant}'")
    T = basis.horizon
    b = basis_eval_batch(basis, ts)  # (n, M)
    sf = np.einsum("ndm,nm->nd", w[..., 0], b)
    sg = np.einsum("ndm,nm->nd", w[..., 1], b)
    den = 1.0 + sf * sf + sg * sg
    c1 = (ts[:, None] + T * (sg * sg)) / den
    if variant == "edm":
        return np.ones_like(c1), c1
    c0 = ((T - ts[:, None]) + T * (sf * sf)) / den
    return c0, c1


def coeff_deriv_batch(
    w: np.ndarray,
    basis: SinusoidalBasis,
    ts: np.ndarray,
    variant: str = "normalized",
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample time derivatives, shapes as coeff_eval_batch."""
    if variant not in VARIANTS:
        raise CoefficientError(f"unknown variant '{variant}'")
    T = basis.horizon
    b = basis_eval_batch(basis, ts)
    db = basis_deriv_batch(basis, ts)
    sf = np.einsum("ndm,nm->nd", w[..., 0], b)
    sg = np.einsum("ndm,nm->nd", w[..., 1], b)
    dsf = np.einsum("ndm,nm->nd", w[..., 0], db)
    dsg = np.einsum("ndm,nm->nd", w[..., 1], db)
    den = 1.0 + sf * sf + sg * sg
    dden = 2.0 * (sf * dsf + sg * dsg)
    n1 = ts[:, None] + T * (sg * sg)
    dn1 = 1.0 + 2.0 * T * sg * dsg
    dc1 = (dn1 * den - n1 * dden) / (den * den)
    if variant == "edm":
        return np.zeros_like(dc1), dc1
    n0 = (T - ts[:, None]) + T * (sf * sf)
    dn0 = -1.0 + 2.0 * T * sf * dsf
    dc0 = (dn0 * den - n0 * dden) / (den * den)
    return dc0, dc1


def sample_random_weights_batch(
    rng: np.random.Generator,
    n: int,
    dims: int,
    basis: SinusoidalBasis,
    scale: float,
    lpf: LpfKernel | None = None,
) -> np.ndarray:
    """Independent weight draws for a batch, shape (n, d, M, 2)."""
    u = rng.uniform(-1.0, 1.0, size=(n, dims, basis.m_count, 2))
    if lpf is not None:
        for i in range(n):
            u[i] = lpf_smooth(u[i], lpf)
    return scale * u
