"""Adam with bias correction, warmup + polynomial-decay learning rate, and
an exponential moving average of parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K


class OptimError(RuntimeError):
    pass


@dataclass
class LrSchedule:
    """Linear warmup to `peak`, then polynomial decay toward zero."""

    peak: float
    warmup_steps: int = 0
    total_steps: int = 0  # 0 disables decay
    power: float = 1.0

    def at(self, step: int) -> float:
        """Learning rate for a 1-based step count."""
        if self.warmup_steps > 0 and step <= self.warmup_steps:
            return self.peak * step / self.warmup_steps
        if self.total_steps > self.warmup_steps:
            span = self.total_steps - self.warmup_steps
            progress = min(1.0, (step - self.warmup_steps) / span)
            return self.peak * (1.0 - progress) ** self.power
        return self.peak


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    lr: LrSchedule
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def for_params(cls, n_params: int, lr: float | LrSchedule, **kw) -> "AdamState":
        if not isinstance(lr, LrSchedule):
            lr = LrSchedule(peak=float(lr))
        return cls(lr=lr, m=np.zeros(n_params), v=np.zeros(n_params), **kw)

    def apply(self, values: np.ndarray, grad: np.ndarray, name: str = "params"):
        """One in-place update; raises on non-finite gradients."""
        if grad.shape != values.shape or values.shape != self.m.shape:
            raise OptimError(
                f"shape mismatch updating '{name}': {values.shape} vs {grad.shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise OptimError(f"non-finite gradient for '{name}'")
        self.step_count += 1
        K.adam_step(
            values,
            self.m,
            self.v,
            np.ascontiguousarray(grad),
            self.step_count,
            self.lr.at(self.step_count),
            self.beta1,
            self.beta2,
            self.eps,
        )


@dataclass
class EmaState:
    """shadow <- decay * shadow + (1 - decay) * params after each update."""

    shadow: np.ndarray
    decay: float = 0.999

    @classmethod
    def from_params(cls, values: np.ndarray, decay: float = 0.999) -> "EmaState":
        return cls(shadow=values.copy(), decay=decay)

    def update(self, values: np.ndarray):
        self.shadow *= self.decay
        self.shadow += (1.0 - self.decay) * values
