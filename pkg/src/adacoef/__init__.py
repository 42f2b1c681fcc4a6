"""adacoef: flow/diffusion transport between low-dimensional distributions
with per-dimension adaptive schedule coefficients, trained and evaluated
under exact optimal-transport metrics."""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
