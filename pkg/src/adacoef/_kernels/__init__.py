"""Kernel backend selection.

The compiled Cython core is preferred; the NumPy fallback is used when the
extension is missing or when ADACOEF_PURE_PYTHON=1 is set. Both backends
expose the same functions with identical formulas.
"""

import os

if os.environ.get("ADACOEF_PURE_PYTHON"):
    from . import _fallback as impl
else:
    try:
        from . import _core as impl  # type: ignore[no-redef]
    except ImportError:
        from . import _fallback as impl  # type: ignore[no-redef]

BACKEND = impl.BACKEND

matmul = impl.matmul
linear_fwd = impl.linear_fwd
linear_bwd = impl.linear_bwd
silu_fwd = impl.silu_fwd
silu_bwd = impl.silu_bwd
tanh_fwd = impl.tanh_fwd
tanh_bwd = impl.tanh_bwd
leaky_relu_fwd = impl.leaky_relu_fwd
leaky_relu_bwd = impl.leaky_relu_bwd
adam_step = impl.adam_step
auction_assignment = getattr(impl, "auction_assignment", None)


def available_backends():
    """Names of importable backends (used by the benchmark script)."""
    names = ["fallback"]
    try:
        from . import _core  # noqa: F401

        names.insert(0, "compiled")
    except ImportError:
        pass
    return names
